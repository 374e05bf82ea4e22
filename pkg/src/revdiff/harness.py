"""Experiment presets, config handling and the command-line interface.

Every run is a pure function of (config, seed, worker count): output files
carry no timestamps, floats are printed at full precision, and Monte Carlo
work is split over deterministic derived streams.  Presets reproduce the
scaling behaviors of the corrected scheme: linearity of the error in the
data's intrinsic dimension, flatness in the ambient dimension, the O(1/K)
decay of the discretization budget, and the lemma-level structure checks.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import _svg, metrics
from .measures import (
    GaussianLaw,
    PointCloudMeasure,
    gaussian_oracle,
    make_manifold_cloud,
    point_cloud_oracle,
    point_mass_oracle,
    spawn_rng,
)
from .sampler import ReverseRunConfig, ScorePerturbation, run_reverse, save_batch
from .schedule import (
    build_schedule,
    schedule_from_text,
    schedule_to_text,
    validate_schedule,
)

__all__ = ["ExperimentConfig", "run_experiment", "build_measure", "main", "cli"]

PRESETS = ("d-sweep", "D-sweep", "K-sweep", "eps-sweep", "lemma-suite")


# ---------------------------------------------------------------------------
# Config and measure construction
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Fully resolved description of one experiment run."""

    name: str
    seed: int = 0
    out_dir: str = "runs"
    workers: int = 1
    schedule: dict = field(default_factory=dict)
    measure: dict = field(default_factory=dict)
    perturbation: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def echo(self) -> dict:
        out = {"name": self.name, "seed": self.seed, "workers": self.workers}
        for section in ("schedule", "measure", "perturbation", "options"):
            for key, val in sorted(getattr(self, section).items()):
                out[f"{section}.{key}"] = val
        return out


def load_config(path: str) -> ExperimentConfig:
    """Read the sectioned key-value config format.

    Sections: [experiment] (name, seed, out_dir, workers), [schedule],
    [measure], [perturbation], [options].  Schedule fields are never
    defaulted: kappa, and either (L, K) or (horizon, delta), must be given
    explicitly whenever a schedule is needed.
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValueError(f"cannot read config file {path!r}")
    exp = dict(parser["experiment"]) if "experiment" in parser else {}
    cfg = ExperimentConfig(
        name=exp.get("name", ""),
        seed=int(exp.get("seed", 0)),
        out_dir=exp.get("out_dir", "runs"),
        workers=int(exp.get("workers", 1)),
    )
    for section in ("schedule", "measure", "perturbation", "options"):
        if section in parser:
            getattr(cfg, section).update(dict(parser[section]))
    return cfg


def resolve_schedule(fields: dict):
    """Build a schedule from explicit (kappa, L, K) or (kappa, horizon, delta).

    Keys are case-insensitive to accommodate configparser's lowercasing.
    There are no fallback values: missing parameters are an error.
    """
    low = {str(k).lower(): v for k, v in fields.items()}
    if "kappa" not in low:
        raise ValueError("schedule requires an explicit kappa")
    kappa = float(low["kappa"])
    if "l" in low or "k" in low:
        if "l" not in low or "k" not in low:
            raise ValueError("schedule requires both L and K when either is given")
        return build_schedule(kappa, int(low["l"]), int(low["k"]))
    if "horizon" in low and "delta" in low:
        horizon = float(low["horizon"])
        delta = float(low["delta"])
        if horizon <= 1.0 or not (0.0 < delta < 1.0):
            raise ValueError("need horizon > 1 and delta in (0, 1)")
        L = max(1, round((horizon - 1.0) / kappa))
        extra = max(1, round(math.log(1.0 / delta) / math.log1p(kappa)))
        return build_schedule(kappa, L, L + extra)
    raise ValueError("schedule requires kappa plus either (L, K) or (horizon, delta)")


def _parse_kv_spec(spec: str) -> dict:
    kind, _, rest = spec.partition(":")
    out = {"kind": kind.strip()}
    if rest.strip():
        for item in rest.split(","):
            key, _, value = item.partition("=")
            if not value:
                raise ValueError(f"malformed measure parameter {item!r}")
            out[key.strip()] = value.strip()
    return out


def _rank_d_law(D: int, rank: int, var: float, seed: int, rotate: bool = True) -> GaussianLaw:
    fac = np.zeros((D, rank))
    fac[:rank, :] = math.sqrt(var) * np.eye(rank)
    if rotate:
        rng = spawn_rng(seed, 104729)
        q, r = np.linalg.qr(rng.standard_normal((D, D)))
        fac = (q * np.sign(np.diag(r))) @ fac
    return GaussianLaw(mean=np.zeros(D), factor=fac, diag_floor=0.0)


def build_measure(spec, seed: int = 0):
    """Construct a score oracle from a measure spec dict or spec string.

    Kinds: gaussian (D, rank, var, floor), point-mass (D, value), two-point
    (D, sep), circle / torus / hilbert (cloud size n plus kind parameters).
    """
    if isinstance(spec, str):
        spec = _parse_kv_spec(spec)
    kind = spec.get("kind", "")
    D = int(spec.get("d_ambient", spec.get("D", spec.get("dim", 2))))
    rng = spawn_rng(seed, 9973)
    if kind == "gaussian":
        law = _rank_d_law(
            D,
            int(spec.get("rank", 1)),
            float(spec.get("var", 0.25)),
            seed,
            rotate=spec.get("rotate", "1") not in ("0", "false"),
        )
        if float(spec.get("floor", 0.0)) > 0:
            law = GaussianLaw(law.mean, law.factor, float(spec["floor"]))
        return gaussian_oracle(law)
    if kind == "point-mass":
        point = np.zeros(D)
        point[0] = float(spec.get("value", 1.0))
        return point_mass_oracle(point)
    if kind == "two-point":
        sep = float(spec.get("sep", 1.0))
        pts = np.zeros((2, D))
        pts[0, 0] = -sep / 2.0
        pts[1, 0] = sep / 2.0
        return point_cloud_oracle(PointCloudMeasure.uniform(pts))
    if kind in ("circle", "torus", "hilbert"):
        n = int(spec.get("n", 2048))
        kwargs = {}
        if kind == "torus":
            kwargs["intrinsic_dim"] = int(spec.get("d", 2))
        if kind == "hilbert":
            kwargs["order"] = int(spec.get("order", 3))
        cloud, mspec = make_manifold_cloud(kind, D, n, rng, **kwargs)
        return point_cloud_oracle(cloud).with_manifold(mspec)
    raise ValueError(f"unknown measure kind {kind!r}")


# ---------------------------------------------------------------------------
# Deterministic output files
# ---------------------------------------------------------------------------


def _fmt_val(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _write_outputs(out_dir, name, columns, rows, meta, footer=(), plot=None):
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, name)
    csv_lines = [",".join(columns)]
    csv_lines += [",".join(_fmt_val(v) for v in row) for row in rows]
    csv_lines += [f"# {k} = {_fmt_val(v)}" for k, v in sorted(footer)]
    with open(base + ".csv", "w") as fh:
        fh.write("\n".join(csv_lines) + "\n")
    payload = {
        "columns": list(columns),
        "rows": [[v for v in row] for row in rows],
        "meta": {k: v for k, v in sorted(meta.items())},
        "summary": {k: v for k, v in sorted(footer)},
    }
    with open(base + ".json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(base + ".meta", "w") as fh:
        for key, val in sorted(meta.items()):
            fh.write(f"{key} = {_fmt_val(val)}\n")
    if plot is not None:
        _svg.line_plot(base + ".svg", **plot)
    return base


def _linear_fit(xs, ys):
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _preset_d_sweep(cfg: ExperimentConfig):
    sched = resolve_schedule(cfg.schedule)
    opts = cfg.options
    D = int(opts.get("D", 32))
    dims = [int(v) for v in str(opts.get("dims", "1 2 4 8")).split()]
    var = float(opts.get("var", 0.25))
    rows = []
    for d in dims:
        law = _rank_d_law(D, d, var, cfg.seed)
        kl_total = metrics.kl_experiment(law, ReverseRunConfig(schedule=sched, seed=cfg.seed)).value
        kl_disc = metrics.kl_experiment(
            law, ReverseRunConfig(schedule=sched, seed=cfg.seed, init="data_pT")
        ).value
        disc_sum = metrics.discretization_error_meter(
            gaussian_oracle(law), sched, 0, None, mode="exact"
        ).value
        rows.append((d, kl_total, kl_disc, disc_sum))
    slope, intercept, r2 = _linear_fit([r[0] for r in rows], [r[2] for r in rows])
    footer = [("fit_slope", slope), ("fit_intercept", intercept), ("fit_r2", r2)]
    plot = {
        "series": [("terminal", dims, [r[2] for r in rows]), ("budget", dims, [r[3] for r in rows])],
        "title": "discretization error vs intrinsic dimension",
        "xlabel": "intrinsic dimension",
        "ylabel": "exact value",
    }
    return ["d", "kl_total", "kl_discretization", "discretization_budget"], rows, footer, plot


def _preset_D_sweep(cfg: ExperimentConfig):
    sched = resolve_schedule(cfg.schedule)
    opts = cfg.options
    dims = [int(v) for v in str(opts.get("dims", "4 16 64 256")).split()]
    d = int(opts.get("d", 2))
    var = float(opts.get("var", 0.25))
    rows = []
    for D in dims:
        law = _rank_d_law(D, d, var, cfg.seed)
        kl_total = metrics.kl_experiment(law, ReverseRunConfig(schedule=sched, seed=cfg.seed)).value
        kl_disc = metrics.kl_experiment(
            law, ReverseRunConfig(schedule=sched, seed=cfg.seed, init="data_pT")
        ).value
        kl_init = metrics.gaussian_kl(
            metrics.marginal_law(law, sched.horizon), GaussianLaw.isotropic(D)
        )
        rows.append((D, kl_total, kl_disc, kl_init))
    totals = [r[1] for r in rows]
    inits = [r[3] for r in rows]
    footer = [
        ("kl_spread", max(totals) - min(totals)),
        ("init_kl_spread", max(inits) - min(inits)),
        ("spread_bound", 1e-6 + max(inits) - min(inits)),
    ]
    plot = {
        "series": [("terminal KL", dims, totals)],
        "title": "terminal KL vs ambient dimension",
        "xlabel": "ambient dimension",
        "ylabel": "KL",
        "log_x": True,
    }
    return ["D", "kl_total", "kl_discretization", "kl_init"], rows, footer, plot


def _preset_K_sweep(cfg: ExperimentConfig):
    opts = cfg.options
    for key in ("kappa", "horizon", "delta"):
        if key not in cfg.schedule:
            raise ValueError(f"K-sweep requires explicit schedule.{key}")
    kappa0 = float(cfg.schedule["kappa"])
    horizon = float(cfg.schedule["horizon"])
    delta = float(cfg.schedule["delta"])
    doublings = int(opts.get("doublings", 3))
    D = int(opts.get("D", 8))
    d = int(opts.get("d", 2))
    var = float(opts.get("var", 0.25))
    law = _rank_d_law(D, d, var, cfg.seed)
    oracle = gaussian_oracle(law)
    rows = []
    for i in range(doublings + 1):
        kappa = kappa0 / 2**i
        sched = resolve_schedule({"kappa": kappa, "horizon": horizon, "delta": delta})
        budget = metrics.discretization_error_meter(oracle, sched, 0, None, mode="exact").value
        kl_disc = metrics.kl_experiment(
            law, ReverseRunConfig(schedule=sched, seed=cfg.seed, init="data_pT")
        ).value
        rows.append((kappa, sched.n_uniform, sched.n_steps, budget, kl_disc))
    footer = []
    for i in range(1, len(rows)):
        footer.append((f"budget_factor_{i}", rows[i - 1][3] / rows[i][3]))
        footer.append((f"kl_factor_{i}", rows[i - 1][4] / rows[i][4]))
    plot = {
        "series": [
            ("budget", [r[2] for r in rows], [r[3] for r in rows]),
            ("terminal KL", [r[2] for r in rows], [r[4] for r in rows]),
        ],
        "title": "discretization error vs step count",
        "xlabel": "K",
        "ylabel": "exact value",
        "log_x": True,
        "log_y": True,
    }
    return ["kappa", "L", "K", "discretization_budget", "kl_discretization"], rows, footer, plot


def _preset_eps_sweep(cfg: ExperimentConfig):
    sched = resolve_schedule(cfg.schedule)
    opts = cfg.options
    D = int(opts.get("D", 4))
    d = int(opts.get("d", 1))
    var = float(opts.get("var", 0.25))
    eps_values = [float(v) for v in str(opts.get("eps", "0.01 0.02 0.04 0.08")).split()]
    direction = np.zeros(D)
    if "constant" in cfg.perturbation:
        vals = [float(v) for v in str(cfg.perturbation["constant"]).split()]
        direction[: len(vals)] = vals
    else:
        direction[0] = 1.0
    law = _rank_d_law(D, d, var, cfg.seed)
    rows = []
    for eps in eps_values:
        bias = ScorePerturbation(epsilon=eps, constant=direction)
        rep = metrics.score_error_budget(law, bias, sched)
        rows.append((eps, rep.value, rep.extras["kl_excess"], rep.extras["kl_excess_per_budget"]))
    slope = float(np.polyfit(np.log([r[0] for r in rows]), np.log([r[2] for r in rows]), 1)[0])
    footer = [("loglog_slope", slope)]
    plot = {
        "series": [("KL excess", [r[0] for r in rows], [r[2] for r in rows])],
        "title": "KL excess vs score bias magnitude",
        "xlabel": "bias scale",
        "ylabel": "KL excess",
        "log_x": True,
        "log_y": True,
    }
    return ["eps", "budget", "kl_excess", "kl_excess_per_budget"], rows, footer, plot


def _tweedie_max_rel_err(oracle, rng, cases=40, h=1e-5):
    """Max relative gap between the score and the log-marginal FD gradient."""
    worst = 0.0
    for _ in range(cases):
        t = float(np.exp(rng.uniform(np.log(0.02), np.log(3.0))))
        x0 = oracle.sample0(rng, 1)
        c = math.exp(-t)
        sig = math.sqrt(-math.expm1(-2.0 * t))
        x = (c * x0 + sig * rng.standard_normal(x0.shape))[0]
        grad = np.zeros_like(x)
        for j in range(len(x)):
            e = np.zeros_like(x)
            e[j] = h
            grad[j] = float(oracle.log_marginal(t, x + e) - oracle.log_marginal(t, x - e)) / (2 * h)
        s = oracle.score(t, x)
        denom = float(np.linalg.norm(s))
        worst = max(worst, float(np.linalg.norm(grad - s)) / denom)
    return worst


def lemma_suite(seed: int, n: int = 20000, workers: int = 1):
    """Seeded grid of structure checks; returns (rows, all_passed).

    Rows are (check, case, value, stderr, z, passed).  Martingale residuals
    must sit within 3 standard errors of zero, monotonicity differences
    above -3 standard errors, concentration curves below the diameter bound
    and non-decreasing up to noise, and scores must match finite-difference
    gradients of the log marginal to 1e-4 relative.

    Each case draws from its own derived stream (seed, case index), so the
    table is identical for any worker count; ``workers > 1`` runs cases on a
    thread pool and only changes wall time.
    """
    two_point = build_measure({"kind": "two-point", "D": 2}, seed)
    gauss = build_measure({"kind": "gaussian", "D": 3, "rank": 1, "var": 0.25}, seed)
    circle = build_measure({"kind": "circle", "D": 2, "n": 512}, seed)
    oracles = [("two_point", two_point), ("gaussian_rank1", gauss), ("circle", circle)]
    triples = [(0.0, 0.25, 1.0), (0.01, 0.05, 0.3), (0.05, 0.2, 0.6), (0.1, 0.5, 2.0)]

    cases = []
    for oname, oracle in oracles:
        for ts in triples:
            cases.append(("martingale", oname, oracle, ts))
    for oname, oracle in oracles:
        for ts in triples:
            cases.append(("monotonicity", oname, oracle, ts))
    cases.append(("concentration", "circle", circle, None))
    for oname, oracle in oracles:
        cases.append(("tweedie_fd", oname, oracle, None))

    def run_case(idx_case):
        idx, (check, oname, oracle, ts) = idx_case
        rng = spawn_rng(seed, idx + 1)
        if check == "martingale":
            rep = metrics.martingale_checks(oracle, *ts, n, rng)
            z = rep.value / rep.stderr if rep.stderr > 0 else 0.0
            return [("martingale", f"{oname}@{ts}", rep.value, rep.stderr, z, abs(z) <= 3.0)]
        if check == "monotonicity":
            t1 = max(ts[0], 0.02)
            rep = metrics.monotonicity_check(oracle, t1, ts[1], ts[2], n, rng)
            z = rep.value / rep.stderr if rep.stderr > 0 else 0.0
            return [
                ("monotonicity", f"{oname}@{(t1, ts[1], ts[2])}", rep.value, rep.stderr, z, z >= -3.0)
            ]
        if check == "concentration":
            rep = metrics.concentration_curve(oracle, [1e-3, 1e-2, 1e-1], n, rng)
            bound_ok = all(v <= 1.0 + 3.0 * se for (_, _, v, se) in rep.components)
            grow_ok = rep.extras["min_increment_z"] >= -3.0
            return [
                ("concentration_bound", oname, rep.value, rep.stderr, 0.0, bound_ok),
                ("concentration_growth", oname, rep.extras["min_increment_z"], 0.0, 0.0, grow_ok),
            ]
        err = _tweedie_max_rel_err(oracle, rng)
        return [("tweedie_fd", oname, err, 0.0, 0.0, err <= 1e-4)]

    indexed = list(enumerate(cases))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_case, indexed))
    else:
        chunks = [run_case(ic) for ic in indexed]
    rows = [row for chunk in chunks for row in chunk]
    return rows, all(r[5] for r in rows)


def _preset_lemma_suite(cfg: ExperimentConfig):
    n = int(cfg.options.get("n", 20000))
    rows, ok = lemma_suite(cfg.seed, n, workers=cfg.workers)
    table = [(c, case, v, se, z, int(p)) for c, case, v, se, z, p in rows]
    footer = [("all_passed", int(ok))]
    return ["check", "case", "value", "stderr", "z", "passed"], table, footer, None


def run_experiment(config: ExperimentConfig):
    """Execute a named preset; writes CSV, JSON, meta and SVG files.

    Returns (base path, footer summary).  Unknown presets and malformed
    specs fail before any computation starts.
    """
    builders = {
        "d-sweep": _preset_d_sweep,
        "D-sweep": _preset_D_sweep,
        "K-sweep": _preset_K_sweep,
        "eps-sweep": _preset_eps_sweep,
        "lemma-suite": _preset_lemma_suite,
    }
    if config.name not in builders:
        raise ValueError(f"unknown preset {config.name!r}; choose from {PRESETS}")
    columns, rows, footer, plot = builders[config.name](config)
    meta = config.echo()
    base = _write_outputs(config.out_dir, config.name, columns, rows, meta, footer, plot)
    return base, dict(footer)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as validation failures (exit 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _add_schedule_flags(p, required=True):
    p.add_argument("--kappa", type=float, required=required)
    p.add_argument("--L", type=int, required=required)
    p.add_argument("--K", type=int, required=required)


def _schedule_from_args(args):
    return build_schedule(args.kappa, args.L, args.K)


def cli(argv=None) -> int:
    """Entry point; returns 0 on success, 1 on validation failure, 2 on runtime failure."""
    parser = _Parser(prog="revdiff", description="reverse-diffusion simulation and verification")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", default="runs", help="output directory")
    parser.add_argument("--workers", type=int, default=1, help="parallel worker bound")
    parser.add_argument("--config", default=None, help="sectioned key-value config file")
    # The same flags are accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering values given before it.
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_sched = sub.add_parser("schedule", parents=[common], help="print or validate a time grid")
    _add_schedule_flags(p_sched, required=False)
    p_sched.add_argument("--save", default=None, help="write the grid record here")
    p_sched.add_argument("--load", default=None, help="validate a saved grid instead")

    p_sample = sub.add_parser("sample", parents=[common], help="run the reverse sampler to files")
    _add_schedule_flags(p_sample)
    p_sample.add_argument("--measure", required=True)
    p_sample.add_argument("--batch", type=int, default=256)
    p_sample.add_argument("--scheme", choices=("corrected", "exponential_integrator"), default="corrected")
    p_sample.add_argument("--init", choices=("standard_normal", "data_pT"), default="standard_normal")

    p_kl = sub.add_parser("kl", parents=[common], help="exact Gaussian KL experiment")
    _add_schedule_flags(p_kl)
    p_kl.add_argument("--measure", required=True, help="gaussian measure spec")
    p_kl.add_argument("--scheme", choices=("corrected", "exponential_integrator"), default="corrected")
    p_kl.add_argument("--init", choices=("standard_normal", "data_pT"), default="standard_normal")

    p_meter = sub.add_parser("meter", parents=[common], help="discretization error functional")
    _add_schedule_flags(p_meter)
    p_meter.add_argument("--measure", required=True)
    p_meter.add_argument("--n", type=int, default=2000)
    p_meter.add_argument("--mode", choices=("mc", "exact"), default="mc")
    p_meter.add_argument("--midpoint", action="store_true")

    p_check = sub.add_parser("check", parents=[common], help="run the lemma suite")
    p_check.add_argument("--n", type=int, default=20000)

    p_sweep = sub.add_parser("sweep", parents=[common], help="run a sweep preset")
    p_sweep.add_argument("--preset", required=True, choices=PRESETS)
    p_sweep.add_argument("--kappa", type=float, default=None)
    p_sweep.add_argument("--horizon", type=float, default=None)
    p_sweep.add_argument("--delta", type=float, default=None)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _dispatch(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: numerical blow-ups, internal errors
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "schedule":
        if args.load:
            with open(args.load) as fh:
                sched = schedule_from_text(fh.read())
        else:
            if args.kappa is None or args.L is None or args.K is None:
                raise ValueError("schedule needs --kappa --L --K or --load FILE")
            sched = _schedule_from_args(args)
        report = validate_schedule(sched)
        print(f"kappa = {sched.kappa:.17g}  L = {sched.n_uniform}  K = {sched.n_steps}")
        print(f"T = {sched.horizon:.17g}  delta = {sched.early_stop:.17g}")
        print("times = " + " ".join(f"{t:.12g}" for t in sched.times))
        for name, ok, detail in report.checks:
            print(f"  [{'ok' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
        if args.save:
            with open(args.save, "w") as fh:
                fh.write(schedule_to_text(sched))
        return 0 if report.passed else 1

    if args.command == "sample":
        sched = _schedule_from_args(args)
        oracle = build_measure(args.measure, args.seed)
        cfg = ReverseRunConfig(
            schedule=sched,
            scheme=args.scheme,
            batch=args.batch,
            seed=args.seed,
            init=args.init,
            n_workers=args.workers,
        )
        start = time.perf_counter()
        result = run_reverse(cfg, oracle)
        # timing goes to stderr only: output files stay byte-reproducible
        print(f"wall_time_s = {time.perf_counter() - start:.3f}", file=sys.stderr)
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "sample.txt")
        save_batch(path, result, extra_meta={"measure": args.measure})
        print(path)
        return 0

    if args.command == "kl":
        sched = _schedule_from_args(args)
        oracle = build_measure(args.measure, args.seed)
        if not hasattr(oracle, "law"):
            raise ValueError("kl needs a gaussian measure spec")
        cfg = ReverseRunConfig(schedule=sched, scheme=args.scheme, seed=args.seed, init=args.init)
        report = metrics.kl_experiment(oracle.law, cfg)
        sys.stdout.write(report.to_keyvalues())
        return 0

    if args.command == "meter":
        sched = _schedule_from_args(args)
        oracle = build_measure(args.measure, args.seed)
        rng = spawn_rng(args.seed, 2)
        report = metrics.discretization_error_meter(
            oracle,
            sched,
            args.n,
            rng,
            mode=args.mode,
            quadrature="midpoint" if args.midpoint else "right",
        )
        sys.stdout.write(report.to_keyvalues())
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "meter_components.csv")
        with open(path, "w") as fh:
            fh.write(report.components_csv())
        print(path)
        return 0

    if args.command == "check":
        rows, ok = lemma_suite(args.seed, args.n, workers=args.workers)
        for check, case, value, stderr, z, passed in rows:
            state = "pass" if passed else "FAIL"
            print(f"[{state}] {check:<22} {case:<34} value={value:+.6e} stderr={stderr:.3e} z={z:+.2f}")
        print(f"lemma suite: {'all passed' if ok else 'FAILURES PRESENT'}")
        return 0 if ok else 1

    if args.command == "sweep":
        cfg = ExperimentConfig(name=args.preset, seed=args.seed, out_dir=args.out, workers=args.workers)
        if args.config:
            file_cfg = load_config(args.config)
            file_cfg.name = args.preset
            file_cfg.out_dir = args.out
            cfg = file_cfg
        if args.kappa is not None:
            cfg.schedule["kappa"] = args.kappa
        if args.horizon is not None:
            cfg.schedule["horizon"] = args.horizon
        if args.delta is not None:
            cfg.schedule["delta"] = args.delta
        if args.preset != "lemma-suite":
            missing = [k for k in ("kappa", "horizon", "delta") if k not in cfg.schedule]
            if missing:
                raise ValueError(
                    f"sweep preset {args.preset!r} requires explicit {missing} "
                    "(via flags or the [schedule] config section)"
                )
        base, footer = run_experiment(cfg)
        for key, val in sorted(footer.items()):
            print(f"{key} = {_fmt_val(val)}")
        print(base + ".csv")
        return 0

    raise ValueError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    return cli(argv)


if __name__ == "__main__":
    sys.exit(main())
