"""Command-line pipeline: simulate, estimate, metrics, loocv, predict.

Every stage reads and writes plain files (CSV and JSON), so runs compose
through the shell.  Exit status is 0 on success, 1 on a numerical failure
and 2 on usage, configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, dump_json, load_config
from .distribution import (
    DiscreteDistribution,
    beta_product_cdf,
    cdf,
    distance_D,
    load_distribution,
    moments,
    write_cdf_csv,
    write_marginals_csv,
)
from .episodes import (
    EpisodeParseError,
    EpisodeValidationError,
    load_dataset,
    read_episode_csv,
    smooth_tac,
)
from .galerkin import assemble_galerkin, build_system
from .likelihood import cached_log_node_likelihoods
from .loocv import (
    STATISTICS,
    TacPrediction,
    band_stats,
    coverage_report,
    predict_tac,
    run_loocv,
    stats_table,
    tac_curve_stats,
)
from .mle import estimate, estimate_with_sigma2, sparsify
from .simulate import simulate_tac
from .synthetic import brac_library, generate_dataset, write_dataset

log = logging.getLogger("tacmix")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _require(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _load_episodes(cfg: RunConfig, manifest):
    return load_dataset(_require(manifest, "dataset manifest"), cfg.tau, cfg.smooth_window)


def _prediction_rows(pred: TacPrediction, measured=None):
    n = len(pred.mean_curve)
    meas = [""] * n if measured is None else [float(v) for v in measured]
    for k in range(n):
        yield (k + 1, float(pred.times[k]), float(pred.mean_curve[k]), float(pred.lower[k]),
               float(pred.upper[k]), meas[k])


PREDICTION_HEADER = ("step", "time_hours", "mean", "lower", "upper", "measured")


def _stats_doc(bands, measured) -> dict:
    """One entry per statistic with the measured / estimated / band columns."""
    out = {}
    for name in STATISTICS:
        b = bands[name]
        out[name] = {
            "measured": None if measured is None else getattr(measured, name),
            "estimated": b.estimate,
            "band_lower": b.lower,
            "band_upper": b.upper,
        }
    return out


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    if args.q is not None:
        return _forward(cfg, args, out)
    if args.batch:
        for m in cfg.m_values:
            ds = generate_dataset(m, spec=cfg.truth(), seed=cfg.seed, threads=cfg.threads)
            write_dataset(ds, out / f"m{m:02d}", cfg.provenance())
            log.info("wrote dataset m=%d to %s", m, out / f"m{m:02d}")
        return EXIT_OK
    ds = generate_dataset(cfg.m, spec=cfg.truth(), seed=cfg.seed, threads=cfg.threads)
    write_dataset(ds, out, cfg.provenance())
    log.info("wrote dataset m=%d to %s", cfg.m, out)
    return EXIT_OK


def _forward(cfg: RunConfig, args, out: Path) -> int:
    """Noise-free TAC for one parameter vector and one BrAC input."""
    if args.brac is not None:
        u = read_episode_csv(_require(args.brac, "BrAC file"), cfg.tau).brac
    else:
        library = brac_library(cfg.tau, cfg.horizon)
        if not 0 <= args.input_index < len(library):
            raise UsageError(f"--input-index must lie in [0, {len(library) - 1}]")
        u = library[args.input_index]
    res = simulate_tac(build_system(assemble_galerkin(cfg.n_mesh), tuple(args.q), cfg.tau), u)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "tac.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    rows = [(0, 0.0, 0.0)] + [(k + 1, float(t), float(y)) for k, (t, y) in enumerate(zip(res.times, res.y))]
    _write_csv(out, ("step", "time_hours", "tac"), rows)
    return EXIT_OK


def cmd_estimate(cfg: RunConfig, args) -> int:
    episodes = _load_episodes(cfg, args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid()
    L, _ = cached_log_node_likelihoods(episodes, grid, cfg.n_mesh, cfg.noise(), cfg.cache_dir, cfg.threads)
    sigma2 = cfg.sigma2
    if cfg.estimate_sigma2:
        fit, sigma2 = estimate_with_sigma2(L, cfg.estimator())
        L = L.with_sigma2(sigma2)
    else:
        fit = estimate(L, cfg.estimator())
    if cfg.sparsify:
        fit = sparsify(fit, L, cfg.sparsify_tol)
    if not fit.converged:
        print(f"warning: estimator stopped at max_iter={cfg.max_iter} without converging; "
              "outputs written anyway", file=sys.stderr)
    doc = fit.to_dict(seed=None)
    doc.update(cfg.provenance())
    doc.update({
        "m": len(episodes),
        "episode_ids": [e.id for e in episodes],
        "n_mesh": cfg.n_mesh,
        "tau": cfg.tau,
        "sigma2": sigma2,
        "likelihood_hash": L.content_hash,
    })
    dump_json(doc, out / "fit.json")
    write_cdf_csv(fit.distribution, out / "cdf.csv")
    write_marginals_csv(fit.distribution, out / "marginals.csv")
    log.info("fit: loglik=%.10g support=%d converged=%s", fit.final_loglik, fit.support_size, fit.converged)
    return EXIT_OK


def _reference(cfg: RunConfig, args):
    if args.reference_fit is not None:
        ref = load_distribution(_require(args.reference_fit, "reference fit"))
        return (lambda x, y: cdf(ref, (x, y))), {"kind": "fit", "path": str(args.reference_fit)}
    return beta_product_cdf(cfg.alpha, cfg.beta), {"kind": "beta-product", "alpha": cfg.alpha, "beta": cfg.beta}


def cmd_metrics(cfg: RunConfig, args) -> int:
    if not args.fit:
        raise UsageError("at least one --fit is required")
    reference, ref_doc = _reference(cfg, args)
    rows = []
    for path in args.fit:
        path = _require(path, "fit")
        doc = json.loads(path.read_text(encoding="utf-8"))
        d = DiscreteDistribution.from_dict(doc)
        n_mesh = doc.get("n_mesh", cfg.n_mesh)
        dist = distance_D(d, reference, cfg.d_mode, n_mesh)
        rows.append({
            "fit": str(path),
            "m": doc.get("m"),
            "M": d.grid.M,
            "N": n_mesh,
            **dist.to_dict(),
            "moments": moments(d).to_dict(),
        })
    rows.sort(key=lambda r: (r["m"] is None, r["m"] or 0, r["fit"]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_json({"reference": ref_doc, "rows": rows, **cfg.provenance()}, out)
    if args.table is not None:
        table = Path(args.table)
        table.parent.mkdir(parents=True, exist_ok=True)
        _write_csv(table, ("m", "D", "D_bar_M", "D_bar_N"),
                   [(r["m"], r["D"], r["D_bar_M"], r["D_bar_N"]) for r in rows])
    return EXIT_OK


def cmd_loocv(cfg: RunConfig, args) -> int:
    episodes = _load_episodes(cfg, args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid()
    L, _ = cached_log_node_likelihoods(episodes, grid, cfg.n_mesh, cfg.noise(), cfg.cache_dir, cfg.threads)
    folds = run_loocv(episodes, grid, cfg.n_mesh, cfg.noise(), cfg.estimator(), cfg.n_samples, cfg.seed,
                      cfg.threads, L, cfg.level, cfg.estimate_rule)
    width = max(2, len(str(len(folds))))
    for i, (f, e) in enumerate(zip(folds, episodes), start=1):
        d = out / f"fold{i:0{width}d}_{f.episode_id}"
        d.mkdir(parents=True, exist_ok=True)
        _write_csv(d / "prediction.csv", PREDICTION_HEADER, _prediction_rows(f.prediction, e.tac))
        dump_json({
            "drinking_episode": i,
            "episode_id": f.episode_id,
            "statistics": _stats_doc(f.bands, f.measured),
            "n_samples": cfg.n_samples,
            "level": cfg.level,
            **cfg.provenance(fold_spawn_index=i - 1),
        }, d / "stats.json")
    tables = stats_table(folds)
    report = coverage_report(folds)
    report.update(cfg.provenance())
    dump_json(report, out / "coverage.json")
    dump_json({"tables": tables, **cfg.provenance()}, out / "tables.json")
    for name, rows in tables.items():
        _write_csv(out / f"table_{name}.csv",
                   ("drinking_episode", "episode_id", "measured", "estimated", "band_lower", "band_upper"),
                   [tuple(r.values()) for r in rows])
    log.info("loocv coverage: %s", report["coverage"])
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args) -> int:
    d = load_distribution(_require(args.fit, "fit"))
    if args.episode is not None:
        e = read_episode_csv(_require(args.episode, "episode"), cfg.tau)
        e = smooth_tac(e, cfg.smooth_window)
    elif args.dataset is not None and args.episode_id is not None:
        matches = [x for x in _load_episodes(cfg, args.dataset) if x.id == args.episode_id]
        if not matches:
            raise UsageError(f"episode {args.episode_id!r} not in dataset")
        e = matches[0]
    else:
        raise UsageError("give --episode, or --dataset with --episode-id")
    pred = predict_tac(d, e.brac, cfg.n_samples, cfg.n_mesh, e.tau, cfg.seed, level=cfg.level)
    bands = band_stats(pred, estimate=cfg.estimate_rule)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "prediction.csv", PREDICTION_HEADER, _prediction_rows(pred, e.tac))
    dump_json({
        "episode_id": e.id,
        "statistics": _stats_doc(bands, tac_curve_stats(e.tac, e.tau)),
        "n_samples": cfg.n_samples,
        "level": cfg.level,
        **cfg.provenance(),
    }, out / "stats.json")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration (flags override --config)")
    g.add_argument("--config", help="JSON run configuration")
    g.add_argument("--bounds", type=float, nargs=4, metavar=("A1", "B1", "A2", "B2"))
    g.add_argument("--m1", type=int)
    g.add_argument("--m2", type=int)
    g.add_argument("--n-mesh", type=int, dest="n_mesh", help="Galerkin subintervals N")
    g.add_argument("--tau", type=float, help="sampling interval in hours")
    g.add_argument("--sigma2", type=float)
    g.add_argument("--estimate-sigma2", action="store_const", const=True, dest="estimate_sigma2")
    g.add_argument("--algorithm", choices=("em", "projected-gradient"))
    g.add_argument("--tol", type=float)
    g.add_argument("--gap-tol", type=float, dest="gap_tol")
    g.add_argument("--max-iter", type=int, dest="max_iter")
    g.add_argument("--no-sparsify", action="store_const", const=False, dest="sparsify")
    g.add_argument("--m", type=int, help="number of simulated episodes")
    g.add_argument("--n-truth-mesh", type=int, dest="n_truth_mesh", help="mesh used to generate data")
    g.add_argument("--m-values", type=_int_list, dest="m_values", help="comma list for --batch")
    g.add_argument("--n-samples", type=int, dest="n_samples")
    g.add_argument("--level", type=float)
    g.add_argument("--estimate-rule", choices=("mean-curve", "sample-mean"), dest="estimate_rule")
    g.add_argument("--d-mode", choices=("cdf", "cell-mass"), dest="d_mode")
    g.add_argument("--smooth-window", type=int, dest="smooth_window")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int, help="worker cap; 1 (serial) is bit-reproducible")
    g.add_argument("--cache-dir", dest="cache_dir", help="likelihood cache (else $TACMIX_CACHE_DIR)")
    g.add_argument("-q", "--quiet", action="store_true")
    return p


_CONFIG_FLAGS = ("bounds", "m1", "m2", "n_mesh", "tau", "sigma2", "estimate_sigma2", "algorithm", "tol",
                 "gap_tol", "max_iter", "sparsify", "m", "n_truth_mesh", "m_values", "n_samples", "level", "estimate_rule",
                 "d_mode", "smooth_window", "seed", "threads", "cache_dir")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="tacmix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="synthetic datasets or one forward run")
    p.add_argument("--out", required=True, help="dataset directory (or CSV path with --q)")
    p.add_argument("--batch", action="store_true", help="one dataset per value of m_values")
    p.add_argument("--q", type=float, nargs=2, metavar=("Q1", "Q2"), help="noise-free forward run")
    p.add_argument("--input-index", type=int, default=0, help="bundled BrAC profile for --q")
    p.add_argument("--brac", help="episode CSV supplying the BrAC input for --q")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", parents=[common], help="fit mixing weights on the grid")
    p.add_argument("--dataset", required=True, help="manifest JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("metrics", parents=[common], help="distance to a reference and moments")
    p.add_argument("--fit", action="append", help="fit.json (repeatable)")
    p.add_argument("--reference-fit", help="compare against this fit's cdf instead of the Beta product")
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--table", help="also write an (m, D) CSV table")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("loocv", parents=[common], help="leave-one-out prediction bands")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_loocv)

    p = sub.add_parser("predict", parents=[common], help="TAC band for one episode")
    p.add_argument("--fit", required=True)
    p.add_argument("--episode", help="episode CSV")
    p.add_argument("--dataset")
    p.add_argument("--episode-id", dest="episode_id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(message)s", force=True)
    try:
        overrides = {k: getattr(args, k) for k in _CONFIG_FLAGS}
        if overrides["bounds"] is not None:
            a1, b1, a2, b2 = overrides["bounds"]
            overrides["bounds"] = ((a1, b1), (a2, b2))
        cfg = load_config(args.config, **overrides)
        return args.func(cfg, args)
    except (UsageError, ConfigError, EpisodeParseError, EpisodeValidationError, OSError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
