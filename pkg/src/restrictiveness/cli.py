"""Command line interface: ``restrict <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Every run writes four CSV files to the output directory:

``summary.csv``
    One row per (eligible set, model) or diagnostic check with columns
    ``application, eligible_set, model, statistic, estimate, se, ci_low,
    ci_high, M, n, inference, target, passed, seed, config_hash``.
``per_draw.csv``
    ``application, eligible_set, model, draw, model_d, base_d, theta, seed,
    config_hash`` with ``theta`` as semicolon-separated values.
``frontier.csv``
    ``application, eligible_set, model, completeness, completeness_se,
    restrictiveness, restrictiveness_se, config_hash``; completeness is
    empty where it is not defined.
``timing.csv``
    Wall-clock seconds per stage. Kept apart so that the other files are
    byte-identical across repeated runs.

The worker count comes from ``--workers``, then ``RESTRICT_WORKERS``, then
the config file.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as config_mod
from .config import RunConfig
from .engine import OptimSettings, completeness
from .exceptions import RestrictivenessError
from .kernels import KernelSpec
from .parallel import WORKERS_ENV

SUMMARY_COLUMNS = ("application", "eligible_set", "model", "statistic", "estimate", "se", "ci_low",
                   "ci_high", "M", "n", "inference", "target", "passed", "seed", "config_hash")
PER_DRAW_COLUMNS = ("application", "eligible_set", "model", "draw", "model_d", "base_d", "theta",
                    "seed", "config_hash")
FRONTIER_COLUMNS = ("application", "eligible_set", "model", "completeness", "completeness_se",
                    "restrictiveness", "restrictiveness_se", "config_hash")
TIMING_COLUMNS = ("application", "stage", "seconds", "workers", "config_hash")


def fmt(value) -> str:
    """Deterministic text for CSV cells; missing and non-finite values are empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value)) if math.isfinite(value) else ""
    if isinstance(value, (list, tuple, np.ndarray)):
        return ";".join(fmt(v) for v in np.ravel(np.asarray(value, dtype=float)))
    return str(value)


@dataclass
class RunOutput:
    """Rows of the emitted tables, as dictionaries keyed by column name."""

    summary: list = field(default_factory=list)
    per_draw: list = field(default_factory=list)
    frontier: list = field(default_factory=list)
    timing: list = field(default_factory=list)


class _Recorder:
    def __init__(self, cfg: RunConfig, workers: int):
        self.cfg = cfg
        self.app = cfg["run"]["application"]
        self.seed = cfg["run"]["seed"]
        self.hash = cfg.config_hash()
        self.workers = workers
        self.out = RunOutput()
        self._t = time.perf_counter()

    def result(self, eligible: str, model: str, res, comp=None):
        lo, hi = res.ci
        self.out.summary.append(dict(
            application=self.app, eligible_set=eligible, model=model, statistic="restrictiveness",
            estimate=res.r_hat, se=res.se, ci_low=lo, ci_high=hi, M=res.M, n=res.n,
            inference=res.inference, seed=self.seed, config_hash=self.hash))
        for m in range(res.M):
            theta = res.argmins[m] if m < len(res.argmins) else []
            self.out.per_draw.append(dict(
                application=self.app, eligible_set=eligible, model=model, draw=m,
                model_d=res.per_draw_model_d[m], base_d=res.per_draw_base_d[m], theta=theta,
                seed=self.seed, config_hash=self.hash))
        kappa, kappa_se = comp if comp is not None else (None, None)
        self.out.frontier.append(dict(
            application=self.app, eligible_set=eligible, model=model, completeness=kappa,
            completeness_se=kappa_se, restrictiveness=res.r_hat, restrictiveness_se=res.se,
            config_hash=self.hash))

    def check(self, name: str, value: float, target: float, passed: bool):
        self.out.summary.append(dict(
            application=self.app, eligible_set="", model=name, statistic="check", estimate=value,
            target=target, passed=bool(passed), seed=self.seed, config_hash=self.hash))

    def stage(self, name: str):
        now = time.perf_counter()
        self.out.timing.append(dict(application=self.app, stage=name, seconds=round(now - self._t, 3),
                                    workers=self.workers, config_hash=self.hash))
        self._t = now


def _opt(cfg: RunConfig) -> OptimSettings:
    o = cfg["optimizer"]
    return OptimSettings(o["n_starts"], o["tol"], o["max_evals"])


def _latent(cfg: RunConfig) -> tuple[str, str]:
    family = cfg["kernel"]["family"]
    return ("spline", "matern32") if family == "spline" else ("gp", family)


# ---------------------------------------------------------------------------
# applications


def _run_risk(cfg: RunConfig, rec: _Recorder):
    from .risk import DEFAULT_MASKS, REFERENCE_COMPLETENESS, parse_free, run_risk

    latent, family = _latent(cfg)
    k = cfg["kernel"]
    kernel = KernelSpec(family, k["variance"], k["lengthscale"])
    spec, free = cfg["risk"]["spec"], cfg["risk"]["free"]
    if free:
        if spec == "all":
            raise RestrictivenessError("risk.free needs risk.spec set to cpt or da")
        masks = {spec: [parse_free(free, spec)]}
    else:
        masks = {f: DEFAULT_MASKS[f] for f in DEFAULT_MASKS if spec in ("all", f)}
    results, _ = run_risk(kernel, cfg["run"]["M"], cfg["run"]["seed"], cfg["risk"]["grid"], latent,
                          masks, _opt(cfg), rec.workers, cfg["constraints"]["max_iter"])
    rec.stage("restrictiveness")
    for (fam, mask), res in results.items():
        label = f"{fam.upper()}({','.join(mask)})"
        ref = REFERENCE_COMPLETENESS.get((fam, tuple(mask)))
        rec.result(f"monotone_{cfg['kernel']['family']}", label, res, (ref, None))


def _panel(cfg: RunConfig, endogenous: bool):
    from .choice import SyntheticMarketSettings, generate_markets, load_markets_csv

    source = cfg["choice"]["markets"]
    if source == "synthetic":
        return generate_markets(SyntheticMarketSettings(endogenous=endogenous), cfg["choice"]["data_seed"])
    return load_markets_csv(source)


def _choice_sampler(cfg: RunConfig, panel):
    from .choice import ChoiceEligibleSampler

    latent, family = _latent(cfg)
    c = cfg["choice"]
    kernel = KernelSpec("product_categorical", c["variance"], c["lengthscale"],
                        c["categorical_correlation"], family)
    return ChoiceEligibleSampler(panel, c["eligible"], kernel, c["Ns"], cfg["run"]["seed"], latent)


def _choice_models(cfg: RunConfig, cls, **kwargs) -> dict:
    kinds = ("mnl", "nl", "mxl") if cfg["choice"]["model"] == "all" else (cfg["choice"]["model"],)
    return {k: cls(k, R=cfg["choice"]["R"], **kwargs) for k in kinds}


def _run_choice(cfg: RunConfig, rec: _Recorder):
    from .choice import ChoiceModel, run_choice, uniform_baseline
    from .engine import DiscrepancySpec

    panel = _panel(cfg, endogenous=False)
    models = _choice_models(cfg, ChoiceModel)
    results, _ = run_choice(panel, _choice_sampler(cfg, panel), models, cfg["run"]["M"],
                            cfg["run"]["seed"], _opt(cfg), rec.workers)
    rec.stage("restrictiveness")
    comp = {}
    if panel.shares is not None:
        opt = _opt(cfg)
        fits = {}
        for kind in ("mnl", "nl", "mxl"):
            if kind not in models:
                continue
            starts = None
            if kind != "mnl" and "mnl" in fits:
                beta = fits["mnl"].theta
                starts = [models[kind].embed_mnl(beta), models[kind].interior_start(beta)]
            elif kind == "mnl":
                starts = [np.zeros(models[kind].K)]
            fits[kind] = completeness(models[kind], (panel, panel.shares), uniform_baseline(),
                                      DiscrepancySpec(), opt, cfg["choice"]["completeness_B"],
                                      cfg["run"]["seed"], warm_starts=starts)
        comp = {k: (f.kappa, f.se) for k, f in fits.items()}
        rec.stage("completeness")
    for kind, res in results.items():
        rec.result(cfg["choice"]["eligible"], kind.upper(), res, comp.get(kind))


def _run_choice_iv(cfg: RunConfig, rec: _Recorder):
    from .endogenous import ControlSetup, IVChoiceModel, h_candidates, iv_completeness, restrictiveness_endog

    c = cfg["choice"]
    panel = _panel(cfg, endogenous=True)
    setup = ControlSetup.build(panel, num_iv=c["num_iv"])
    models = _choice_models(cfg, IVChoiceModel)
    opt = OptimSettings(0, cfg["optimizer"]["tol"], cfg["optimizer"]["max_evals"])
    run = restrictiveness_endog(models, _choice_sampler(cfg, panel), cfg["run"]["M"], setup, c["M_h"],
                                cfg["run"]["seed"], opt, rec.workers, screen=c["screen"])
    rec.stage("restrictiveness")
    comp = {}
    if panel.shares is not None:
        hdraws = h_candidates(setup, c["M_h"], cfg["run"]["seed"])
        fits = iv_completeness(panel, models, hdraws, c["completeness_B"], cfg["run"]["seed"], opt, c["screen"])
        comp = {k: (f.kappa, f.se) for k, f in fits.items()}
        rec.stage("completeness")
    for kind, res in run.results.items():
        rec.result(f"{c['eligible']}_{c['num_iv']}iv", f"{kind.upper()}-IV", res, comp.get(kind))


def _structural_kernel(cfg: RunConfig) -> KernelSpec:
    _, family = _latent(cfg)
    s = cfg["structural"]
    return KernelSpec(family, s["variance"], s["lengthscale"])


def _run_structural(cfg: RunConfig, rec: _Recorder):
    from . import structural as st

    mode, M, seed = cfg["structural"]["mode"], cfg["run"]["M"], cfg["run"]["seed"]
    points = st.grid_design(cfg["structural"]["grid"])
    kernel = _structural_kernel(cfg)
    if mode == "rf":
        res = st.ds_rf_restrictiveness(st.reduced_form_draws(points, M, seed, kernel), points,
                                       seed=seed, workers=rec.workers)
        label = "reduced_form"
    else:
        design = st.DemandDesign.linear(points)
        draws = st.demand_draws(design, M, seed, kernel)
        if mode == "demand_only":
            res, label = st.demand_only_restrictiveness(draws, design), "demand_only"
        else:
            res, label = st.ds_sf_restrictiveness(draws, design), "structural_form"
    rec.stage("restrictiveness")
    rec.result(f"gp_{mode}", label, res)


def _run_entry(cfg: RunConfig, rec: _Recorder):
    from . import structural as st

    x = st.grid_design(cfg["structural"]["grid"])
    draws = st.entry_draws(cfg["run"]["M"], x, cfg["run"]["seed"], _structural_kernel(cfg))
    res, _ = st.entry_restrictiveness(draws, x, opt=_opt(cfg), seed=cfg["run"]["seed"],
                                      errors=cfg["entry"]["errors"], workers=rec.workers)
    rec.stage("restrictiveness")
    rec.result("ccp_gp", f"entry_{cfg['entry']['errors']}", res)


def _run_diagnostics(cfg: RunConfig, rec: _Recorder):
    from .diagnostics import run_checks

    for c in run_checks(cfg["run"]["seed"], cfg["diagnostics"]["coverage_reps"], rec.workers):
        rec.check(c.name, c.value, c.target, c.passed)
    rec.stage("checks")


RUNNERS = {
    "risk": _run_risk,
    "choice": _run_choice,
    "choice_iv": _run_choice_iv,
    "structural": _run_structural,
    "entry": _run_entry,
    "diagnostics": _run_diagnostics,
}


def run_application(cfg: RunConfig, workers: Optional[int] = None) -> RunOutput:
    """Run the configured application and return its tables (nothing is written)."""
    workers = workers if workers is not None else cfg["run"]["workers"]
    rec = _Recorder(cfg, workers)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        RUNNERS[cfg["run"]["application"]](cfg, rec)
    return rec.out


def _write(path: Path, columns: Sequence[str], rows: list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def write_outputs(out: RunOutput, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = [("summary.csv", SUMMARY_COLUMNS, out.summary), ("per_draw.csv", PER_DRAW_COLUMNS, out.per_draw),
             ("frontier.csv", FRONTIER_COLUMNS, out.frontier), ("timing.csv", TIMING_COLUMNS, out.timing)]
    paths = []
    for name, cols, rows in files:
        _write(directory / name, cols, rows)
        paths.append(directory / name)
    return paths


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", type=Path, help="output directory (overrides run.out)")
    common.add_argument("--workers", type=_positive_int, help=f"worker processes (else ${WORKERS_ENV})")

    parser = argparse.ArgumentParser(prog="restrict", description="Restrictiveness of economic models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("risk", parents=[common], help="certainty-equivalent models of choice under risk")
    p.add_argument("--spec", choices=("all", "cpt", "da"))
    p.add_argument("--free", help="comma-separated free parameters, e.g. alpha,delta")
    p.add_argument("--M", type=_positive_int)
    p.add_argument("--grid", type=int, help="grid points per lottery coordinate")
    p.add_argument("--kernel", choices=("matern32", "sqexp", "spline"))

    p = sub.add_parser("choice", parents=[common], help="discrete choice with exogenous prices")
    p.add_argument("--eligible", choices=("np_both", "np_mean", "np_individual"))
    p.add_argument("--model", choices=("all", "mnl", "nl", "mxl"))
    p.add_argument("--markets", help="market CSV path or 'synthetic'")
    p.add_argument("--M", type=_positive_int)
    p.add_argument("--kernel", choices=("matern32", "sqexp", "spline"))

    p = sub.add_parser("choice-iv", parents=[common], help="discrete choice with endogenous prices")
    p.add_argument("--model", choices=("all", "mnl", "nl", "mxl"))
    p.add_argument("--eligible", choices=("np_both", "np_mean", "np_individual"))
    p.add_argument("--num-iv", type=int, choices=(2, 3))
    p.add_argument("--markets", help="market CSV path or 'synthetic'")
    p.add_argument("--M", type=_positive_int)
    p.add_argument("--Mh", type=_positive_int, help="control-function draws")
    p.add_argument("--kernel", choices=("matern32", "sqexp", "spline"))

    p = sub.add_parser("structural", parents=[common], help="demand-supply system")
    p.add_argument("--mode", choices=("rf", "demand_only", "sf"))
    p.add_argument("--M", type=_positive_int)

    p = sub.add_parser("entry", parents=[common], help="entry game with multiple equilibria")
    p.add_argument("--M", type=_positive_int)

    sub.add_parser("diagnostics", parents=[common], help="rad/vc, GMM and learning-curve checks")
    return parser


# flag name -> (section, key)
_OVERRIDES = {
    "seed": ("run", "seed"), "M": ("run", "M"), "spec": ("risk", "spec"), "free": ("risk", "free"),
    "grid": ("risk", "grid"), "kernel": ("kernel", "family"), "eligible": ("choice", "eligible"),
    "model": ("choice", "model"), "markets": ("choice", "markets"), "num_iv": ("choice", "num_iv"),
    "Mh": ("choice", "M_h"), "mode": ("structural", "mode"),
}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = config_mod.load_config(args.config) if args.config else RunConfig()
    cfg = cfg.replace("run", "application", args.command.replace("-", "_"))
    for flag, (section, key) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg = cfg.replace(section, key, value)
    if args.out is not None:
        cfg = cfg.replace("run", "out", str(args.out))
    return cfg


def resolve_cli_workers(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.workers is not None:
        return args.workers
    raw = os.environ.get(WORKERS_ENV)
    if raw is not None:
        try:
            value = int(raw)
        except ValueError:
            raise RestrictivenessError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
        if value < 1:
            raise RestrictivenessError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
        return value
    return cfg["run"]["workers"]


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        workers = resolve_cli_workers(args, cfg)
        out = run_application(cfg, workers)
        paths = write_outputs(out, cfg["run"]["out"])
    except (RestrictivenessError, ValueError, OSError) as exc:
        print(f"restrict: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for row in out.summary:
        if row["statistic"] == "check":
            status = "PASS" if row["passed"] else "FAIL"
            print(f"{status} {row['model']}: {fmt(row['estimate'])} (target {fmt(row['target'])})")
        else:
            print(f"{row['eligible_set']} {row['model']}: r = {row['estimate']:.4f} (se {row['se']:.4f})")
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
