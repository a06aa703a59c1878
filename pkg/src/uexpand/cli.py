"""Command line runner.

    uexpand <command> [--config FILE] [inline flags]

Commands: certify, discretize-certify, lyapunov, orbit, rankcheck, selfcheck.
Exit codes: 0 success, 1 certification (or check) failure, 2 configuration
error, 3 numerical failure.
"""
import argparse
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from .certify import (
    DEFAULT_N_SCHEDULE,
    CertifyBudget,
    certify_all_dimensions,
    certify_uniform_expansion,
    equidistribution_test,
    transitivity_rank_check,
)
from .errors import BudgetError, ConfigError, NumericalError, ParameterError
from .exterior import random_grassmann
from .fields import BumpProfile, ChartSpec, chart_back
from .flow import AffineTorusMap
from .lyapunov import lyapunov_spectrum
from .report import ReportRecord, dumps, to_jsonable, write_csv
from .seeding import derive_rng
from .selfcheck import selfcheck
from .walk import build_measure, containment_check, discretize

SEED_ENV = "UEXPAND_SEED"
COMMANDS = ("certify", "discretize-certify", "lyapunov", "orbit", "rankcheck", "selfcheck")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
CAT_MATRIX = [[2, 1], [1, 1]]


@dataclass
class Budgets:
    sweep_size: int = 512
    mc_samples: int = 256
    refine_iters: int = 6
    refine_fraction: float = 0.1
    max_evaluations: int = None
    recheck_factor: int = 4
    n_steps: int = 10_000
    discard: int = 100
    boxes_per_axis: int = 16
    rank_samples: int = 20


@dataclass
class RunConfig:
    d: int = 2
    f0: object = "identity"
    epsilon: float = 0.4
    chart_scale: float = 0.2
    bump: dict = field(default_factory=lambda: {"r_in": 1.25, "r_out": 2.0})
    integrator_steps: int = 64
    weights: dict = field(default_factory=lambda: {"p0": None})
    discretize: dict = None
    budgets: Budgets = field(default_factory=Budgets)
    N_schedule: list = field(default_factory=lambda: list(DEFAULT_N_SCHEDULE))
    seed: int = 0
    x0: list = None
    out_path: str = None

    def to_dict(self) -> dict:
        return to_jsonable(asdict(self))


CONFIG_KEYS = {f.name for f in fields(RunConfig)}
BUDGET_KEYS = {f.name for f in fields(Budgets)}


def _int(name, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{name} must be >= {lo}, got {v}")
    return int(v)


def _real(name, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    return float(v)


def _keys(name, d, allowed):
    if not isinstance(d, dict):
        raise ConfigError(f"{name} must be a mapping")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(sorted(extra))}")


def parse_f0(spec, d: int) -> AffineTorusMap:
    """f0 is 'identity', 'cat' (d=2 only) or {type: toral_automorphism, matrix, translation}."""
    if spec == "identity":
        return AffineTorusMap.identity(d)
    if spec == "cat":
        if d != 2:
            raise ConfigError("f0 = cat needs d = 2")
        return AffineTorusMap(np.array(CAT_MATRIX))
    if isinstance(spec, dict):
        _keys("f0", spec, {"type", "matrix", "translation"})
        if spec.get("type") != "toral_automorphism":
            raise ConfigError("f0.type must be toral_automorphism")
        try:
            L = np.array(spec["matrix"], dtype=float)
            t = spec.get("translation")
            f0 = AffineTorusMap(L, None if t is None else np.array(t, dtype=float))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"invalid f0: {exc}") from exc
        if f0.d != d:
            raise ConfigError(f"f0 matrix is {f0.d}x{f0.d} but d = {d}")
        return f0
    raise ConfigError(f"f0 must be identity, cat or a toral_automorphism mapping, got {spec!r}")


def config_from_dict(data: dict) -> RunConfig:
    """Validate a raw mapping into a RunConfig; every range check happens here."""
    _keys("config", data, CONFIG_KEYS)
    cfg = RunConfig()
    for k, v in data.items():
        if k == "budgets":
            _keys("budgets", v, BUDGET_KEYS)
            cfg.budgets = replace(cfg.budgets, **v)
        elif k == "bump":
            _keys("bump", v, {"r_in", "r_out"})
            cfg.bump = {**cfg.bump, **v}
        elif k == "weights":
            _keys("weights", v, {"p0"})
            cfg.weights = {**cfg.weights, **v}
        elif k == "discretize":
            if v is not None:
                _keys("discretize", v, {"grid_per_axis", "max_atoms"})
            cfg.discretize = v
        else:
            setattr(cfg, k, v)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    cfg.d = _int("d", cfg.d, 2)
    cfg.epsilon = _real("epsilon", cfg.epsilon)
    if not 0 < cfg.epsilon < 0.5:
        raise ConfigError(f"epsilon = {cfg.epsilon} violates 0 < epsilon < 1/2")
    cfg.chart_scale = _real("chart_scale", cfg.chart_scale)
    cfg.integrator_steps = _int("integrator_steps", cfg.integrator_steps, 1)
    cfg.seed = _int("seed", cfg.seed, 0)
    cfg.bump = {k: _real(f"bump.{k}", v) for k, v in cfg.bump.items()}
    if cfg.weights.get("p0") is not None:
        cfg.weights["p0"] = _real("weights.p0", cfg.weights["p0"])
    if not isinstance(cfg.N_schedule, (list, tuple)) or not cfg.N_schedule:
        raise ConfigError("N_schedule must be a non-empty list of integers")
    cfg.N_schedule = [_int("N_schedule entry", n, 1) for n in cfg.N_schedule]
    b = cfg.budgets
    for name in ("sweep_size", "recheck_factor", "n_steps", "rank_samples"):
        setattr(b, name, _int(f"budgets.{name}", getattr(b, name), 1))
    b.mc_samples = _int("budgets.mc_samples", b.mc_samples, 2)
    b.boxes_per_axis = _int("budgets.boxes_per_axis", b.boxes_per_axis, 2)
    b.refine_iters = _int("budgets.refine_iters", b.refine_iters, 0)
    b.discard = _int("budgets.discard", b.discard, 0)
    if b.discard >= b.n_steps:
        raise ConfigError("budgets.discard must be below budgets.n_steps")
    b.refine_fraction = _real("budgets.refine_fraction", b.refine_fraction)
    if b.max_evaluations is not None:
        b.max_evaluations = _int("budgets.max_evaluations", b.max_evaluations, 1)
    if cfg.discretize is not None:
        cfg.discretize["grid_per_axis"] = _int("discretize.grid_per_axis", cfg.discretize.get("grid_per_axis"), 1)
    if cfg.x0 is None:
        cfg.x0 = [[round(0.1 * (i + 1) % 1.0, 12) for i in range(cfg.d)]]
    x0 = np.array(cfg.x0, dtype=float)
    if x0.ndim == 1:
        x0 = x0[None]
    if x0.ndim != 2 or x0.shape[1] != cfg.d or not np.all(np.isfinite(x0)):
        raise ConfigError(f"x0 must be a point or list of points in dimension {cfg.d}")
    cfg.x0 = x0.tolist()
    if cfg.out_path is not None and not isinstance(cfg.out_path, str):
        raise ConfigError("out_path must be a string")
    if isinstance(cfg.f0, (list, tuple)):
        raise ConfigError("f0 must be identity, cat or a toral_automorphism mapping")
    # range checks that live with the objects themselves
    try:
        build_run_measure(cfg, apply_discretize=True)
        CertifyBudget(b.sweep_size, b.mc_samples, b.refine_iters, b.refine_fraction, b.max_evaluations,
                      b.recheck_factor)
    except (ParameterError, BudgetError) as exc:
        raise ConfigError(str(exc)) from exc


def build_run_measure(cfg: RunConfig, apply_discretize: bool = False):
    f0 = parse_f0(cfg.f0, cfg.d)
    mu = build_measure(cfg.d, epsilon=cfg.epsilon, chart_scale=cfg.chart_scale, f0=f0,
                       p0=cfg.weights.get("p0"), bump=BumpProfile(**cfg.bump), steps=cfg.integrator_steps)
    if apply_discretize and cfg.discretize is not None:
        kw = {"max_atoms": cfg.discretize["max_atoms"]} if cfg.discretize.get("max_atoms") else {}
        mu = discretize(mu, cfg.discretize["grid_per_axis"], **kw)
    return mu


def certify_budget(cfg: RunConfig) -> CertifyBudget:
    b = cfg.budgets
    return CertifyBudget(b.sweep_size, b.mc_samples, b.refine_iters, b.refine_fraction, b.max_evaluations,
                         b.recheck_factor)


def load_config_file(path) -> dict:
    """YAML or JSON (JSON is valid YAML)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uexpand", description="Uniform expansion experiments on the flat torus.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--d", type=int)
    p.add_argument("--f0", choices=("identity", "cat"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--chart-scale", type=float)
    p.add_argument("--steps", type=int, dest="integrator_steps", help="RK4 steps per unit time")
    p.add_argument("--p0", type=float, help="weight of the bare f0 branch")
    p.add_argument("--grid-per-axis", type=int, help="discretize the parameter cube")
    p.add_argument("--sweep-size", type=int)
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--refine-iters", type=int)
    p.add_argument("--n-steps", type=int)
    p.add_argument("--discard", type=int)
    p.add_argument("--boxes", type=int, dest="boxes_per_axis")
    p.add_argument("--rank-samples", type=int)
    p.add_argument("--N", dest="N_schedule", help="comma separated N schedule, e.g. 1,2,4")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_path", help="report path; CSV series are written next to it")
    p.add_argument("--workers", type=int, default=1, help="threads (results do not depend on this)")
    p.add_argument("--timestamps", action="store_true", help="record wall-clock start/finish in the report")
    return p


def resolve_config(args, environ=None) -> RunConfig:
    """File, then inline flags; the seed comes from flag, else env, else file."""
    environ = os.environ if environ is None else environ
    data = load_config_file(args.config) if args.config else {}
    data = dict(data)
    for key in ("d", "f0", "epsilon", "chart_scale", "integrator_steps", "out_path"):
        v = getattr(args, key)
        if v is not None:
            data[key] = v
    if args.p0 is not None:
        data["weights"] = {**data.get("weights", {}), "p0": args.p0}
    if args.grid_per_axis is not None:
        data["discretize"] = {**(data.get("discretize") or {}), "grid_per_axis": args.grid_per_axis}
    budgets = dict(data.get("budgets") or {})
    for key in ("sweep_size", "mc_samples", "refine_iters", "n_steps", "discard", "boxes_per_axis", "rank_samples"):
        v = getattr(args, key)
        if v is not None:
            budgets[key] = v
    if budgets:
        data["budgets"] = budgets
    if args.N_schedule is not None:
        try:
            data["N_schedule"] = [int(s) for s in args.N_schedule.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"--N must be a comma separated list of integers: {exc}") from exc
    if args.seed is not None:
        data["seed"] = args.seed
    elif environ.get(SEED_ENV):
        try:
            data["seed"] = int(environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    return config_from_dict(data)


# commands -----------------------------------------------------------------

def _diagnostics(cfg, mu):
    worst, frac = containment_check(mu, derive_rng(cfg.seed, "containment"))
    return {"containment_max": worst, "containment_violating_fraction": frac,
            "containment_radius": mu.outer_radius}


def _scan_rows(reports, label=""):
    rows = []
    for r in reports:
        for s in r.scan or [{"N": r.N, "C_estimate": r.C_estimate, "std_error": r.std_error,
                             "certified": r.certified}]:
            rows.append([label, r.k, s["N"], s["C_estimate"], s["std_error"], int(s["certified"])])
    return rows


def cmd_certify(cfg, workers):
    mu = build_run_measure(cfg, apply_discretize=True)
    reports = certify_all_dimensions(mu, cfg.N_schedule, certify_budget(cfg), cfg.seed, workers)
    ok = all(r.certified for r in reports)
    payload = {"reports": [r.to_dict() for r in reports], "certified": ok, "diagnostics": _diagnostics(cfg, mu)}
    series = {"scan": (["measure", "k", "N", "C_estimate", "std_error", "certified"], _scan_rows(reports))}
    return payload, series, ok


def cmd_discretize_certify(cfg, workers):
    """Certify the continuous measure, then its discretization at the N found for each k."""
    grid = (cfg.discretize or {}).get("grid_per_axis", 3)
    mu = build_run_measure(cfg, apply_discretize=False)
    cont = certify_all_dimensions(mu, cfg.N_schedule, certify_budget(cfg), cfg.seed, workers)
    kw = {"max_atoms": cfg.discretize["max_atoms"]} if cfg.discretize and cfg.discretize.get("max_atoms") else {}
    mu_d = discretize(mu, grid, **kw)
    disc = [certify_uniform_expansion(mu_d, r.k, r.N, certify_budget(cfg), cfg.seed, workers) for r in cont]
    ok = all(r.certified for r in cont) and all(r.certified for r in disc)
    payload = {"continuous": [r.to_dict() for r in cont], "discretized": [r.to_dict() for r in disc],
               "grid_per_axis": grid, "atoms": mu_d.atom_count(), "certified": ok,
               "diagnostics": _diagnostics(cfg, mu)}
    rows = _scan_rows(cont, "continuous") + _scan_rows(disc, f"grid{grid}")
    series = {"scan": (["measure", "k", "N", "C_estimate", "std_error", "certified"], rows)}
    return payload, series, ok


def cmd_lyapunov(cfg, workers):
    mu = build_run_measure(cfg, apply_discretize=True)
    b = cfg.budgets
    ests = [lyapunov_spectrum(mu, x0, b.n_steps, b.discard, rng=derive_rng(cfg.seed, "lyapunov", i), seed=cfg.seed)
            for i, x0 in enumerate(cfg.x0)]
    spectra = np.array([e.spectrum for e in ests])
    payload = {
        "estimates": [{"x0": e.x0, "spectrum": e.spectrum, "sum": e.total, "n_steps": e.n_steps,
                       "transient_discard": e.transient_discard} for e in ests],
        "x0_spread": spectra.max(axis=0) - spectra.min(axis=0),
        "diagnostics": _diagnostics(cfg, mu),
    }
    cols = ["x0_index", "step"] + [f"lambda_{i + 1}" for i in range(cfg.d)]
    rows = [[i, int(r[0]), *r[1:]] for i, e in enumerate(ests) for r in e.running]
    return payload, {"running": (cols, rows)}, True


def cmd_orbit(cfg, workers):
    mu = build_run_measure(cfg, apply_discretize=True)
    b = cfg.budgets
    reps = [equidistribution_test(mu, x0, b.n_steps, b.boxes_per_axis, derive_rng(cfg.seed, "orbit", i))
            for i, x0 in enumerate(cfg.x0)]
    payload = {"reports": [asdict(r) for r in reps]}
    rows = [[i, c["n"], c["max_deviation"], c["mean_deviation"]] for i, r in enumerate(reps) for c in r.checkpoints]
    return payload, {"discrepancy": (["x0_index", "n", "max_deviation", "mean_deviation"], rows)}, True


def cmd_rankcheck(cfg, workers):
    d = cfg.d
    bump = BumpProfile(**cfg.bump)
    reps = []
    for k in range(1, d):
        rng = derive_rng(cfg.seed, "rankcheck", k)
        for _ in range(cfg.budgets.rank_samples):
            chart = ChartSpec(rng.random(d), cfg.chart_scale)
            u = rng.standard_normal(d)
            z = u / np.linalg.norm(u) * 0.45 * rng.random() ** (1.0 / d)
            rep = transitivity_rank_check(chart, chart_back(chart, z), random_grassmann(rng, d, k), bump=bump,
                                          steps=cfg.integrator_steps)
            reps.append({"k": k, **asdict(rep), "full_rank": rep.full_rank})
    ok = all(r["full_rank"] for r in reps)
    return {"reports": reps, "all_full_rank": ok}, {}, ok


def cmd_selfcheck(cfg, workers):
    summary = selfcheck(cfg.seed, cfg.integrator_steps)
    rows = [[c.name, int(c.passed), c.value, c.tolerance] for c in summary.checks]
    return summary.to_dict(), {"checks": (["name", "passed", "value", "tolerance"], rows)}, summary.passed


HANDLERS = {
    "certify": cmd_certify,
    "discretize-certify": cmd_discretize_certify,
    "lyapunov": cmd_lyapunov,
    "orbit": cmd_orbit,
    "rankcheck": cmd_rankcheck,
    "selfcheck": cmd_selfcheck,
}


def _stamp():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run(argv=None, environ=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args, environ)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    started = _stamp() if args.timestamps else None
    try:
        payload, series, ok = HANDLERS[args.command](cfg, max(1, args.workers))
    except (ConfigError, ParameterError, BudgetError) as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=stderr)
        return EXIT_NUMERIC
    timestamps = {"started": started, "finished": _stamp()} if args.timestamps else None
    record = ReportRecord(args.command, cfg.to_dict(), to_jsonable(payload), cfg.seed, timestamps=timestamps)
    text = dumps(record)
    if cfg.out_path:
        out = Path(cfg.out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        for name, (cols, rows) in series.items():
            write_csv(out.with_name(f"{out.stem}_{name}.csv"), cols, rows)
    else:
        stdout.write(text)
    if not ok:
        print(f"{args.command}: failed (see report)", file=stderr)
        return EXIT_FAIL
    return EXIT_OK


def main() -> None:
    sys.exit(run())
