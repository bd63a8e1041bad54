"""Command-line front end.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .analysis import (
    CONVENTIONS,
    DEFAULT_LLR_THRESHOLD,
    classify,
    classify_binned,
    fit_visibility,
    fit_visibility_binned,
    min_samples,
    stage_sweep,
)
from .collapse import Branch
from .config import RunConfig, parse_config
from .errors import InvalidConfig, ParseError
from .optics import PatternKind, normalize_pdf
from .simulator import (
    read_events_csv,
    read_histogram_csv,
    read_metadata,
    run_simulation,
    write_events_csv,
    write_histogram_csv,
)

log = logging.getLogger("collapse_probe")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(InvalidConfig):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _meta(cfg: RunConfig, **extra) -> dict:
    exp = cfg.experiment()
    return {"tool": "collapse_probe", "version": __version__, "config_digest": exp.digest, **extra}


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_pattern(args) -> int:
    cfg = parse_config(args.config, allow_missing_stages=True)
    kind = PatternKind.parse(args.kind)
    pdf = normalize_pdf(kind, cfg.optics, cfg.screen, n_nodes=args.nodes)
    path = _outdir(args) / "pattern.csv"
    pdf.to_csv(path, extra_meta={"config_digest": cfg.experiment().digest, "version": __version__})
    print(f"pattern kind={kind} nodes={pdf.x.size} peak_density={pdf.density.max():.6g} -> {path}")
    return EXIT_OK


def _analysis_payload(fit, verdict) -> dict:
    return {"fit": fit.to_dict(), "classification": verdict.to_dict(), "conventions": CONVENTIONS}


def cmd_simulate(args) -> int:
    cfg = parse_config(args.config)
    run = cfg.run.require()
    exp = cfg.experiment()
    result = run_simulation(exp, run.n_events, run.seed, run.n_workers, run.event_cap)
    out = _outdir(args)
    write_events_csv(out / "events.csv", result)
    write_histogram_csv(out / "histogram.csv", result)
    summary = {"metadata": result.metadata(), "config": exp.as_dict()}
    counts = {b.name.lower(): int((result.events.branch == b).sum()) for b in Branch}
    summary["recorded"] = {
        "branches": counts,
        "collapsed": int(result.events.collapsed.sum()),
        "d1_first": int(result.events.d1_first.sum()),
    }
    if len(result.events) >= 100:
        fit = fit_visibility(result.positions, cfg.optics, cfg.screen)
        verdict = classify(result.positions, cfg.optics, cfg.screen, args.llr_threshold)
        summary.update(_analysis_payload(fit, verdict))
        tail = f" v_hat={fit.v_hat:.4f} decision={verdict.decision.value}"
    else:
        tail = ""
    _write_json(out / "summary.json", summary)
    print(f"simulated n_events={result.n_events} seed={result.seed} digest={result.config_digest}{tail} -> {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = parse_config(args.config, allow_missing_stages=True)
    if args.events:
        events = read_events_csv(args.events)
        fit = fit_visibility(events.x_position, cfg.optics, cfg.screen)
        verdict = classify(events.x_position, cfg.optics, cfg.screen, args.llr_threshold)
        source = args.events
    else:
        centers, counts = read_histogram_csv(args.histogram)
        if centers.size != cfg.screen.n_bins or not all(
            math.isclose(c, e, rel_tol=1e-9, abs_tol=1e-15) for c, e in zip(centers, cfg.screen.bin_centers)
        ):
            raise UsageError(f"{args.histogram}: bin centers do not match the configured screen")
        fit = fit_visibility_binned(counts, cfg.optics, cfg.screen)
        verdict = classify_binned(counts, cfg.optics, cfg.screen, args.llr_threshold)
        source = args.histogram
    payload = {
        "metadata": _meta(cfg, source=str(source), source_metadata=read_metadata(source)),
        **_analysis_payload(fit, verdict),
    }
    path = _outdir(args) / "analysis.json"
    _write_json(path, payload)
    print(
        f"analyzed n={fit.n_samples} v_hat={fit.v_hat:.4f} "
        f"ci=[{fit.ci_low:.4f},{fit.ci_high:.4f}] decision={verdict.decision.value} -> {path}"
    )
    return EXIT_OK


def _parse_stages(text: str) -> range:
    try:
        lo, hi = (int(p) for p in text.split("..", 1))
    except ValueError:
        raise UsageError(f"--stages must look like LO..HI, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise UsageError(f"--stages needs 0 ≤ LO ≤ HI, got {text!r}")
    return range(lo, hi + 1)


def cmd_sweep(args) -> int:
    cfg = parse_config(args.config, allow_missing_stages=True)
    if cfg.detector.gain_g is None:
        raise UsageError("sweep needs detector.kind = pmt with detector.pmt_gain set")
    stages = _parse_stages(args.stages)
    n_events = args.events_per_stage or cfg.run.n_events
    seed = cfg.run.seed if cfg.run.seed is not None else 0
    if not n_events:
        raise UsageError("set run.n_events or --events-per-stage")
    result = stage_sweep(
        cfg.detector.gain_g,
        stages,
        cfg.collapse,
        n_events,
        seed,
        cfg.optics,
        cfg.screen,
        cfg.timing,
        cfg.branches,
        cfg.run.n_workers,
        args.llr_threshold,
    )
    out = _outdir(args)
    _write_json(out / "sweep.json", {"metadata": _meta(cfg, seed=seed), **result.to_dict()})
    rows = ["stages,environment_count,v_hat,ci_low,ci_high,log_likelihood_ratio,decision"]
    rows += [
        f"{r.stages},{r.environment_count!r},{r.fit.v_hat!r},{r.fit.ci_low!r},{r.fit.ci_high!r},"
        f"{r.log_likelihood_ratio!r},{r.decision.value}"
        for r in result.records
    ]
    meta = [f"# {k}={v}" for k, v in _meta(cfg, seed=seed, n_events_per_stage=n_events).items()]
    (out / "sweep.csv").write_text("\n".join(meta + rows) + "\n")
    if result.inferred_stage_threshold is None:
        print(f"sweep stages={args.stages}: no stage collapsed -> {out}")
    else:
        lo, hi = result.inferred_nc_bracket
        print(f"sweep stages={args.stages}: stage threshold {result.inferred_stage_threshold}, N_c in ({lo:g}, {hi:g}] -> {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = parse_config(args.config, allow_missing_stages=True)
    seed = cfg.run.seed if cfg.run.seed is not None else 0
    n = min_samples(args.v_true, args.v_alt, args.error_rate, cfg.optics, cfg.screen, seed=seed, n_trials=args.trials)
    payload = {
        "metadata": _meta(cfg, seed=seed),
        "v_true": args.v_true,
        "v_alt": args.v_alt,
        "error_rate": args.error_rate,
        "n_required": n,
        "conventions": CONVENTIONS,
    }
    path = _outdir(args) / "calibrate.json"
    _write_json(path, payload)
    print(f"calibrate v_true={args.v_true:g} v_alt={args.v_alt:g} error_rate={args.error_rate:g}: n_required={n} -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="collapse-probe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", required=True, help="output directory (created if missing)")

    p = sub.add_parser("pattern", help="tabulate a normalized screen pattern")
    common(p)
    p.add_argument("--kind", required=True, help="interference | envelope | mixed | family:V")
    p.add_argument("--nodes", type=int, default=2**15 + 1)
    p.set_defaults(func=cmd_pattern)

    p = sub.add_parser("simulate", help="run the event Monte Carlo")
    common(p)
    p.add_argument("--llr-threshold", type=float, default=DEFAULT_LLR_THRESHOLD)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="fit visibility and classify recorded data")
    common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--events", help="events CSV written by simulate")
    src.add_argument("--histogram", help="histogram CSV written by simulate")
    p.add_argument("--llr-threshold", type=float, default=DEFAULT_LLR_THRESHOLD)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="PMT stage sweep")
    common(p)
    p.add_argument("--stages", required=True, help="inclusive stage range LO..HI")
    p.add_argument("--events-per-stage", type=int, default=None)
    p.add_argument("--llr-threshold", type=float, default=DEFAULT_LLR_THRESHOLD)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="sample size needed to separate two visibilities")
    common(p)
    p.add_argument("--v-true", type=float, default=1.0)
    p.add_argument("--v-alt", type=float, default=1.0 / 3.0)
    p.add_argument("--error-rate", type=float, default=0.01)
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ParseError, InvalidConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
