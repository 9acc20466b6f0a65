"""``plasthom`` command-line interface.

Exit codes: 0 success, 1 input error, 2 numerical failure (partial results
are still written).  ``PLASTHOM_LOG`` sets the log level (error, info, debug).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from . import tensor as T
from .cell import CellProblemConfig, whom
from .errors import AssumptionViolated, InputError, NoConvergence, NumericalError
from .finsler import GEODESIC_EXACT, GROUP_EXP, finsler_length, geodesic, group_path
from .gamma import ExperimentConfig, convergence_table
from .gluing import fe_trials, gluing_constants
from .materials import MaterialModel, validate_assumptions

log = logging.getLogger("plasthom")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


class _Run:
    """Collects outputs of one invocation and writes its manifest."""

    def __init__(self, args, cfg):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = io.RunManifest(
            command=args.command, config_hash=io.config_hash(cfg),
            inputs=[str(args.config)] if args.config else [], seeds={"seed": args.seed},
            arguments={k: v for k, v in vars(args).items() if k not in ("func",)})

    def path(self, name) -> Path:
        p = self.out / name
        self.manifest.outputs.append(p)
        return p

    def field(self, name, values, **meta):
        binp, head = io.save_field(self.out / "fields" / name, values, **meta)
        self.manifest.outputs.extend([binp, head])

    def finish(self, code: int, status: str = "ok") -> int:
        self.manifest.exit_code = code
        self.manifest.status = status
        self.manifest.write(self.out)
        return code


def _matrix(vals, name) -> np.ndarray:
    if vals is None:
        return np.eye(3)
    if len(vals) != 9:
        raise InputError(f"{name} needs 9 reals, got {len(vals)}")
    return np.array(vals, float).reshape(3, 3)


def _model(cfg) -> MaterialModel:
    return MaterialModel.from_dict(io.model_section(cfg))


def cmd_whom(args, cfg, run: _Run) -> int:
    model = _model(cfg)
    cell = CellProblemConfig.from_dict(cfg.get("cell", {}))
    F = _matrix(args.F, "F")
    G = T.SL3Element(_matrix(args.G, "G")).value
    code = EXIT_OK
    try:
        res = whom(model, F, G, cell)
    except NoConvergence as exc:
        log.error("%s", exc)
        res, code = exc.best, EXIT_NUMERICAL
    io.write_csv(run.path("whom.csv"), res.rows())
    run.path("whom.json").write_text(res.to_json() + "\n")
    print(f"W_hom = {res.value:.12g} (spread {res.spread:.3g})")
    return code


def cmd_geodesic(args, cfg, run: _Run) -> int:
    model = _model(cfg)
    f0 = T.SL3Element(_matrix(args.F0, "F0")).value
    f1 = T.SL3Element(_matrix(args.F1, "F1")).value
    if args.mode == GEODESIC_EXACT:
        res = geodesic(model.norm, f0, f1, args.n)
        path, length, conv, it = res.path, res.length, res.converged, res.iterations
    else:
        path = group_path(f0, f1, args.n)
        length, conv, it = finsler_length(model.norm, path), True, 0
    det_err = float(np.max(np.abs(T.det(path.nodes) - 1.0)))
    io.write_json(run.path("geodesic.json"), {"mode": args.mode, "n": args.n, "length": length,
                                              "converged": conv, "iterations": it,
                                              "det_error": det_err})
    run.field("geodesic_nodes", path.nodes, mode=args.mode)
    print(f"length = {length:.12g}")
    return EXIT_OK if conv else EXIT_NUMERICAL


def cmd_gluecheck(args, cfg, run: _Run) -> int:
    model = _model(cfg)
    g = cfg.get("gluing", {})
    trials = args.trials if args.trials is not None else int(g.get("trials", 100))
    sigmas = tuple(args.sigma or g.get("sigmas", (0.5, 0.1)))
    summary = fe_trials(model, trials, sigmas, int(g.get("resolution", 64)),
                        float(g.get("eps", 0.25)), args.seed, args.mode)
    io.write_csv(run.path("gluecheck.csv"), summary.rows())
    io.write_json(run.path("gluecheck.json"), {
        "trials": trials, "sigmas": list(sigmas), "checks": len(summary.reports),
        "satisfied": summary.satisfied, "pigeonhole_ok": summary.pigeonhole,
        "constants": gluing_constants(model, args.mode).to_dict(), "seconds": summary.seconds})
    print(f"satisfied {summary.satisfied}/{len(summary.reports)}, "
          f"pigeonhole {summary.pigeonhole}/{len(summary.reports)}")
    return EXIT_OK


GAMMA_COLUMNS = ["eps", "min_Feps", "min_Fhom", "gap", "rel_gap", "iterations", "converged"]


def cmd_gamma(args, cfg, run: _Run) -> int:
    exp = dict(cfg.get("experiment", {}))
    exp["model"] = io.model_section(cfg)
    exp.setdefault("seed", args.seed)
    config = ExperimentConfig.from_dict(exp)
    ct = convergence_table(config, jobs=args.jobs)
    rows = ct.csv_rows()
    io.write_csv(run.path("gamma.csv"), rows, GAMMA_COLUMNS)
    io.write_csv(run.path("gaps.csv"), [{"eps": r.eps, "gap": r.gap} for r in ct.rows])
    summary = ct.to_dict()
    summary["config"] = config.to_dict()
    io.write_json(run.path("gamma.json"), summary)
    run.field("hom_y", ct.hom.y)
    run.field("hom_P", ct.hom.P)
    for r in ct.rows:
        log.info("eps=%g gap=%.6g (%.3g%%) %.1fs", r.eps, r.gap, 100 * r.rel_gap, r.seconds)
    print(f"final relative gap {ct.final_rel_gap:.4%}, trend ok: {ct.trend_ok()}")
    ok = all(r.converged for r in ct.rows) and ct.hom.converged
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_validate(args, cfg, run: _Run) -> int:
    model = _model(cfg)
    try:
        rep = validate_assumptions(model, args.samples, args.seed)
    except AssumptionViolated as exc:
        io.write_json(run.path("validate.json"), {"passed": False, "message": str(exc),
                                                  "witness": exc.witness})
        raise
    run.path("validate.json").write_text(rep.to_json() + "\n")
    obs = rep.observed
    print("observed " + ", ".join(f"{k} = {obs[k]:.6g}" for k in ("c1", "c2", "c3")))
    return EXIT_OK if rep.passed else EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="plasthom", description="Homogenization experiments for plastic composites.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON config path")
        sp.add_argument("--out", default="plasthom-out", help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--mode", choices=(GEODESIC_EXACT, GROUP_EXP), default=GROUP_EXP,
                        help="interpolation between plastic strains")

    sp = sub.add_parser("whom", help="cell problem along the lambda ladder")
    common(sp)
    sp.add_argument("--F", type=float, nargs="+", help="9 reals, row-major (default identity)")
    sp.add_argument("--G", type=float, nargs="+", help="9 reals, row-major (default identity)")
    sp.set_defaults(func=cmd_whom)

    sp = sub.add_parser("geodesic", help="shortest path between two plastic strains")
    common(sp)
    sp.add_argument("--F0", type=float, nargs="+")
    sp.add_argument("--F1", type=float, nargs="+")
    sp.add_argument("--n", type=int, default=32, help="path segments")
    sp.set_defaults(func=cmd_geodesic)

    sp = sub.add_parser("gluecheck", help="randomized check of the gluing inequality")
    common(sp)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--sigma", type=float, action="append")
    sp.set_defaults(func=cmd_gluecheck)

    sp = sub.add_parser("gamma", help="minimum values along the epsilon ladder")
    common(sp)
    sp.set_defaults(func=cmd_gamma)

    sp = sub.add_parser("validate", help="Monte-Carlo check of the material constants")
    common(sp)
    sp.add_argument("--samples", type=int, default=1000)
    sp.set_defaults(func=cmd_validate)
    return p


def _setup_logging():
    level = os.environ.get("PLASTHOM_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise InputError(f"PLASTHOM_LOG must be one of {sorted(LOG_LEVELS)}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv=None) -> int:
    run = None
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise InputError("--jobs must be >= 1")
        cfg = io.load_config(args.config)
        run = _Run(args, cfg)
        t0 = time.perf_counter()
        code = args.func(args, cfg, run)
        log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
        return run.finish(code, "ok" if code == EXIT_OK else "failed")
    except InputError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return run.finish(EXIT_INPUT, "input-error") if run else EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return run.finish(EXIT_NUMERICAL, "numerical-error") if run else EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
