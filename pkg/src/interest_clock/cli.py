"""Command line entry point: generate -> train -> evaluate -> report, or compare.

Output layout under ``--out`` (default ``experiment.out_dir``)::

    events.log  manifest  ckpt-<strategy>/  telemetry-<strategy>.csv
    metrics.csv  probe.csv  hour_dist.csv  compare.txt

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .core import (
    MINUTES_PER_DAY,
    CorruptSnapshot,
    DegenerateInput,
    DomainError,
    EmptyInput,
    EventLogError,
    Facet,
    NonFiniteGradient,
    OutOfOrderEvent,
    read_event_log,
    write_event_log,
)
from .estimator import InterestClockClassifier
from .metrics import (
    forgetting_probe,
    fmt,
    hour_distribution,
    metrics_report,
    read_csv,
    write_hour_dist_csv,
    write_metrics_csv,
    write_probe_csv,
)
from .stream import generate, split_by_day

log = logging.getLogger("interest_clock")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# pipeline stages (also usable from Python)
# ---------------------------------------------------------------------------

def run_generate(cfg: ExperimentConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    events, _ = generate(cfg.generator)
    path = out / "events.log"
    write_event_log(path, events, cfg.generator.vocab)
    manifest = {
        "config_sha256": cfg.digest(),
        "seed": cfg.generator.seed,
        "n_events": int(events.size),
        "events_sha256": file_sha256(path),
    }
    (out / "manifest").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    (out / "config.ini").write_text(dump_config(cfg))
    log.info("wrote %d events to %s", events.size, path)
    return path


def load_events(cfg: ExperimentConfig, path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"event log not found: {path}")
    return read_event_log(path, cfg.generator.vocab)


def train_split(cfg: ExperimentConfig, events):
    return split_by_day(events, cfg.first_test_day)


def run_train(cfg: ExperimentConfig, events, strategy: str, out: Path) -> InterestClockClassifier:
    out.mkdir(parents=True, exist_ok=True)
    train, _ = train_split(cfg, events)
    est = InterestClockClassifier(**cfg.estimator_params(strategy)).fit(train)
    est.save(out / f"ckpt-{strategy}")
    with open(out / f"telemetry-{strategy}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch_minutes", "running_loss", "strategy"])
        for step, minutes, running, kind in est.telemetry_:
            w.writerow([step, minutes, fmt(float(running)), kind])
    log.info("%s: %d training steps", strategy, est.n_steps_)
    return est


def evaluate_checkpoint(cfg: ExperimentConfig, est: InterestClockClassifier, events, strategy: str):
    train, test = train_split(cfg, events)
    if test.size == 0:
        raise EmptyInput("no held-out events after the training days")
    scores = est.decision_function(test)
    report = metrics_report(scores, test, strategy)
    train_hour = int((train["epoch_minutes"][-1] % MINUTES_PER_DAY) // 60) if train.size else 0
    probe = forgetting_probe(est.decision_function, test, train_hour, strategy)
    return report, probe


def write_reports(cfg: ExperimentConfig, events, reports, probes, out: Path) -> None:
    write_metrics_csv(out / "metrics.csv", reports)
    write_probe_csv(out / "probe.csv", probes)
    write_hour_dist_csv(out / "hour_dist.csv", hour_distribution(events, Facet.MOOD, cfg.generator.vocab))


def compare_table(reports, probes) -> str:
    lines = ["strategy        AUC       UAUC      spread",
             "--------------  --------  --------  --------"]
    for rep, probe in zip(reports, probes):
        lines.append(f"{rep.strategy:<14}  {fmt(rep.auc):<8}  {fmt(rep.uauc):<8}  {fmt(probe.spread):<8}")
    lines.append("")
    lines.append("UAUC: unweighted mean of per-user AUC over users with both classes.")
    lines.append("spread: max - min of per-hour AUC of the end-of-training checkpoint.")
    return "\n".join(lines) + "\n"


def run_compare(cfg: ExperimentConfig, out: Path):
    """Generate, train and evaluate every configured strategy; returns (reports, probes)."""
    path = run_generate(cfg, out)
    events = load_events(cfg, path)
    reports, probes = [], []
    for strategy in cfg.strategies:
        est = run_train(cfg, events, strategy, out)
        report, probe = evaluate_checkpoint(cfg, est, events, strategy)
        reports.append(report)
        probes.append(probe)
    write_reports(cfg, events, reports, probes, out)
    (out / "compare.txt").write_text(compare_table(reports, probes))
    return reports, probes


def summarize(out: Path) -> str:
    """Human-readable summary of metrics.csv, probe.csv and hour_dist.csv."""
    lines = []
    metrics = read_csv(out / "metrics.csv")
    strategies = list(dict.fromkeys(r["strategy"] for r in metrics))
    lines.append("strategy        AUC       UAUC      Low       Middle    High")
    for s in strategies:
        cells = {r["cell"]: r["auc"] or "-" for r in metrics if r["strategy"] == s}
        lines.append(f"{s:<14}  {cells.get('overall', '-'):<8}  {cells.get('uauc', '-'):<8}  "
                     f"{cells.get('tier=Low', '-'):<8}  {cells.get('tier=Middle', '-'):<8}  "
                     f"{cells.get('tier=High', '-'):<8}")
    probe_path = out / "probe.csv"
    if probe_path.is_file():
        lines.append("")
        lines.append("forgetting spread (max - min per-hour AUC)")
        by_strategy = {}
        for r in read_csv(probe_path):
            if r["auc"]:
                by_strategy.setdefault(r["strategy"], []).append(float(r["auc"]))
        for s, vals in by_strategy.items():
            lines.append(f"  {s:<14}  {fmt(max(vals) - min(vals))}")
    dist_path = out / "hour_dist.csv"
    if dist_path.is_file():
        rows = read_csv(dist_path)
        tags = list(dict.fromkeys(r["tag"] for r in rows))
        table = {(int(r["hour"]), r["tag"]): float(r["percent"]) for r in rows}
        lines.append("")
        lines.append("impression share by hour (%)")
        lines.append("hour  " + "  ".join(f"{t[:9]:>9}" for t in tags))
        for h in sorted({h for h, _ in table}):
            lines.append(f"{h:>4}  " + "  ".join(f"{table.get((h, t), 0.0):9.2f}" for t in tags))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="INI config file (defaults when omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("--out", "-o", help="output directory (default: experiment.out_dir)")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="interest-clock",
                                     description="Time-aware clock features for streaming recommendation.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic event log")
    for name, text in (("train", "stream-train one strategy"), ("evaluate", "score held-out events")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--events", help="event log (default: <out>/events.log)")
        p.add_argument("--strategy", help="clock strategy (default: clock.strategy)")
    sub.add_parser("report", parents=[common], help="summarize CSV outputs")
    sub.add_parser("compare", parents=[common], help="run every strategy and print the comparison")
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return parser


def _dispatch(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = Path(args.out or cfg.out_dir)
    if args.command == "config":
        sys.stdout.write(dump_config(cfg))
    elif args.command == "generate":
        path = run_generate(cfg, out)
        print(f"wrote {path}")
    elif args.command in ("train", "evaluate"):
        strategy = args.strategy or cfg.clock.strategy
        cfg.clock_strategy(strategy)
        events = load_events(cfg, args.events or out / "events.log")
        if args.command == "train":
            est = run_train(cfg, events, strategy, out)
            print(f"wrote {out / f'ckpt-{strategy}'} after {est.n_steps_} steps")
        else:
            ckpt = out / f"ckpt-{strategy}"
            if not ckpt.is_dir():
                raise FileNotFoundError(f"checkpoint not found: {ckpt}")
            est = InterestClockClassifier.load(ckpt)
            report, probe = evaluate_checkpoint(cfg, est, events, strategy)
            write_reports(cfg, events, [report], [probe], out)
            print(f"{strategy}: AUC {fmt(report.auc)}  UAUC {fmt(report.uauc)}  spread {fmt(probe.spread)}")
    elif args.command == "report":
        if not (out / "metrics.csv").is_file():
            raise FileNotFoundError(f"metrics not found: {out / 'metrics.csv'}")
        sys.stdout.write(summarize(out))
    elif args.command == "compare":
        reports, probes = run_compare(cfg, out)
        sys.stdout.write(compare_table(reports, probes))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EventLogError, OutOfOrderEvent, CorruptSnapshot, FileNotFoundError,
            DegenerateInput, EmptyInput, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteGradient, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
