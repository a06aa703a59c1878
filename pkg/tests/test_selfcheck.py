import pytest

from uexpand.selfcheck import selfcheck


@pytest.fixture(scope="module")
def default_summary():
    return selfcheck(seed=7)


def test_every_module_is_covered(default_summary):
    names = {c.name for c in default_summary.checks}
    for expected in ("compound_multiplicativity", "transport_additivity", "area_preservation", "trace_zero",
                     "stream_divergence", "field_divergence", "flow_volume", "flow_plateau", "flow_support",
                     "flow_jacobian", "chain_rule", "walk_reproducible", "lyapunov_cat", "lyapunov_sum",
                     "rank_check", "identity_calibration"):
        assert expected in names


def test_default_build_passes_all_but_the_volume_bound(default_summary):
    # the 1e-8 volume bound needs more than 64 RK4 steps; see test_volume_check_passes_with_finer_steps
    failed = {c.name for c in default_summary.checks if not c.passed}
    assert failed <= {"flow_volume"}
    assert default_summary.get("flow_volume").value < 1e-4


def test_volume_check_passes_with_finer_steps():
    summary = selfcheck(seed=7, steps=512)
    assert summary.get("flow_volume").passed
    assert summary.passed


def test_wrong_stream_coefficient_fails_divergence():
    summary = selfcheck(seed=7, coeffs=lambda d: (1.0 / (d + 1), 1.0 / (d - 1)))
    assert not summary.get("stream_divergence").passed
    assert not summary.get("field_divergence").passed


def test_two_integrator_steps_fail_the_determinant_check():
    summary = selfcheck(seed=7, steps=2)
    assert not summary.get("flow_volume").passed
    assert summary.n_failed > 0 and not summary.passed


def test_summary_serializes(default_summary):
    d = default_summary.to_dict()
    assert d["seed"] == 7 and d["n_failed"] == default_summary.n_failed
    assert len(d["checks"]) == len(default_summary.checks)
