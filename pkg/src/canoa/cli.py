"""Batch command-line front end.

One command per pipeline stage (simulate, train, authenticate, sweep)
plus an ``all`` convenience command. Every command is deterministic
under a fixed seed; exit codes are 0 on success, 1 on usage errors, and
2 on data errors. ``CANOA_LOG`` selects the log level.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import traceio
from .authenticate import authenticate_all
from .bus import simulate
from .config import RunConfig, parse_config
from .errors import BundleMismatch, CanoaError, ConfigError
from .evaluate import ConfusionMatrix, MetricReport, factor_sweep, grid_cells, metrics
from .frames import decode_transmissions
from .svm import bootstrap_accuracy
from .trace import SampledTrace
from .traceio import TraceKind
from .workflow import (
    attack_confusion,
    build_bundle,
    normal_transmissions,
    sender_confusion,
    usable_transmissions,
)

log = logging.getLogger("canoa.cli")

VOLTAGE_FILE = "voltage.ctrc"
GROUND_TRUTH_FILE = "ground_truth.csv"
BUNDLE_FILE = "bundle.cbnd"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


def power_file(index: int) -> str:
    return f"power_{index:03d}.ctrc"


# -------------------------------------------------------------- rendering


def render_confusion(cm: ConfusionMatrix, fmt: str) -> str:
    names = [str(lab) for lab in cm.labels]
    if fmt == "csv":
        lines = ["truth," + ",".join(names)]
        for i, name in enumerate(names):
            lines.append(name + "," + ",".join(f"{r:.6f}" for r in cm.rates[i]))
        return "\n".join(lines) + "\n"
    width = max(12, max(len(n) for n in names) + 2)
    header = " " * width + "".join(n.rjust(width) for n in names)
    lines = [header]
    for i, name in enumerate(names):
        lines.append(name.rjust(width) + "".join(f"{r:{width}.4f}" for r in cm.rates[i]))
    return "\n".join(lines) + "\n"


def render_metrics(report: MetricReport, fmt: str) -> str:
    if fmt == "csv":
        lines = ["label,precision,recall,f_measure,support,degenerate"]
        for label, m in report.per_label.items():
            lines.append(
                f"{label},{m.precision:.6f},{m.recall:.6f},{m.f_measure:.6f},{m.support},{int(m.degenerate)}"
            )
        lines.append(f"accuracy,{report.accuracy:.6f},,,,")
        lines.append(
            f"macro,{report.macro_precision:.6f},{report.macro_recall:.6f},{report.macro_f:.6f},,"
        )
        return "\n".join(lines) + "\n"
    lines = [f"{'label':>16} {'precision':>10} {'recall':>10} {'f-measure':>10} {'support':>8}"]
    for label, m in report.per_label.items():
        flag = " *" if m.degenerate else ""
        lines.append(
            f"{str(label):>16} {m.precision:>10.4f} {m.recall:>10.4f} {m.f_measure:>10.4f} {m.support:>8}{flag}"
        )
    lines.append(f"accuracy: {report.accuracy:.4f}")
    lines.append(
        f"macro: precision={report.macro_precision:.4f} recall={report.macro_recall:.4f} f={report.macro_f:.4f}"
    )
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ loading


def _load_run(args) -> RunConfig:
    run = parse_config(args.config)
    if args.seed is not None:
        scenario = dataclasses.replace(run.scenario, seed=args.seed)
        train_cfg = dataclasses.replace(run.train, seed=args.seed)
        run = RunConfig(scenario=scenario, pipeline=run.pipeline, train=train_cfg)
    if args.delta is not None:
        run = RunConfig(
            scenario=run.scenario,
            pipeline=dataclasses.replace(run.pipeline, delta=args.delta),
            train=run.train,
        )
    return run


def _read_traces(traces_dir: Path) -> tuple[SampledTrace, dict[int, SampledTrace]]:
    voltage_path = traces_dir / VOLTAGE_FILE
    if not voltage_path.exists():
        raise CanoaError(f"missing {voltage_path}")
    vfile = traceio.read_trace_file(voltage_path)
    voltage = SampledTrace(vfile.samples[0], vfile.sample_rate, vfile.start_time)
    powers: dict[int, SampledTrace] = {}
    for path in sorted(traces_dir.glob("power_*.ctrc")):
        index = int(path.stem.split("_")[1])
        pfile = traceio.read_trace_file(path)
        powers[index] = SampledTrace(pfile.samples[0], pfile.sample_rate, pfile.start_time)
    return voltage, powers


# ----------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    run = _load_run(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    voltage, powers, truth = simulate(run.scenario)
    traceio.write_trace_file(
        out / VOLTAGE_FILE, voltage.samples, TraceKind.VOLTAGE, voltage.sample_rate
    )
    for ecu, trace in zip(run.scenario.ecus, powers):
        traceio.write_trace_file(
            out / power_file(ecu.index), trace.samples, TraceKind.POWER, trace.sample_rate
        )
    traceio.write_ground_truth(out / GROUND_TRUTH_FILE, truth)
    print(
        f"simulated {len(truth)} frames ({truth.attack_count} attack) "
        f"over {run.scenario.duration:.3f}s at {run.scenario.bus.bitrate:.0f} bps"
    )
    print(f"wrote {VOLTAGE_FILE}, {len(powers)} power trace(s), {GROUND_TRUTH_FILE} in {out}")
    return 0


def cmd_train(args) -> int:
    run = _load_run(args)
    traces_dir = Path(args.traces)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not (traces_dir / GROUND_TRUTH_FILE).exists():
        raise CanoaError(f"missing {traces_dir / GROUND_TRUTH_FILE}")
    voltage, powers = _read_traces(traces_dir)
    samap = run.scenario.source_map()
    decoded = decode_transmissions(voltage, run.scenario.bus.bitrate, samap)
    truth = traceio.read_ground_truth(traces_dir / GROUND_TRUTH_FILE)
    training_set = normal_transmissions(decoded, truth)
    if len(training_set) < len(decoded):
        print(
            f"excluding {len(decoded) - len(training_set)} attack frame(s) from training "
            "per the ground-truth log"
        )
    result = build_bundle(powers, training_set, samap, run.pipeline, run.train)
    traceio.save_bundle(out / BUNDLE_FILE, result.bundle)

    report_lines = [
        f"transmissions: {len(result.transmissions)} (tau = {result.tau.value * 1e3:.4f} ms)"
    ]
    for entry in result.bundle.entries:
        meta = entry.model.meta
        curve = result.curves[entry.sa]
        report_lines.append(
            f"sa {entry.sa} (ecu {entry.ecu}): val_accuracy={meta.validation_accuracy:.4f} "
            f"iterations={meta.iterations} converged={meta.converged} "
            f"convergence_index={curve.convergence_index} final_loss={meta.final_loss:.6f}"
        )
        with open(out / f"learning_curve_{entry.sa}.csv", "w") as fh:
            fh.write("iteration,train_loss,val_loss\n")
            for i, (tr, va) in enumerate(zip(curve.train_loss, curve.val_loss)):
                fh.write(f"{i},{tr!r},{va!r}\n")
    with open(out / "bootstrap_accuracy.csv", "w") as fh:
        fh.write("sa,rounds,min,q1,median,q3,max\n")
        for (ecu, sa), ds in sorted(result.datasets.items(), key=lambda kv: kv[0][1]):
            summary = bootstrap_accuracy(ds, run.train)
            q1, q3 = summary.quartiles
            fh.write(
                f"{sa},{summary.accuracies.size},{summary.minimum!r},{q1!r},"
                f"{summary.median!r},{q3!r},{summary.maximum!r}\n"
            )
    (out / "training_report.txt").write_text("\n".join(report_lines) + "\n")
    print("\n".join(report_lines))
    print(f"wrote {BUNDLE_FILE}, learning curves, bootstrap accuracies in {out}")
    return 0


def cmd_authenticate(args) -> int:
    traces_dir = Path(args.traces)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = traceio.load_bundle(args.bundle)
    if args.delta is not None:
        bundle = dataclasses.replace(bundle, delta=args.delta)
    voltage, powers = _read_traces(traces_dir)
    expected = set(bundle.samap.ecus)
    if not expected.issubset(powers):
        raise BundleMismatch(
            f"bundle expects power channels {sorted(expected)}, found {sorted(powers)}"
        )
    decoded = decode_transmissions(voltage, args.bitrate, bundle.samap)
    usable = usable_transmissions(decoded, powers, bundle.tau)
    verdicts = authenticate_all(usable, powers, bundle)
    traceio.write_verdicts(out / "verdicts.csv", verdicts, bundle.sas)
    ext = "csv" if args.format == "csv" else "txt"

    cm_sender = sender_confusion(verdicts, bundle.samap)
    (out / f"sender_confusion.{ext}").write_text(render_confusion(cm_sender, args.format))
    (out / f"sender_metrics.{ext}").write_text(render_metrics(metrics(cm_sender), args.format))
    summary = [f"authenticated {len(verdicts)} transmissions ({len(decoded)} decoded)"]
    truth_path = traces_dir / GROUND_TRUTH_FILE
    if truth_path.exists():
        truth = traceio.read_ground_truth(truth_path)
        cm_attack = attack_confusion(verdicts, truth)
        (out / f"attack_confusion.{ext}").write_text(render_confusion(cm_attack, args.format))
        normal_rate = cm_attack.rate("normal", "normal") if "normal" in cm_attack.labels else 0.0
        attack_rate = cm_attack.rate("attack", "attack") if cm_attack.counts[1].sum() else None
        summary.append(f"normal->normal rate: {normal_rate:.4f}")
        if attack_rate is not None:
            summary.append(f"attack->attack rate: {attack_rate:.4f}")
    print("\n".join(summary))
    print(f"wrote verdicts.csv and report tables in {out}")
    return 0


def cmd_sweep(args) -> int:
    run = _load_run(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = grid_cells()
    grid = factor_sweep(
        run.scenario,
        cells=cells,
        pipeline_cfg=run.pipeline,
        train_cfg=run.train,
        jobs=args.jobs,
    )
    ext = "csv" if args.format == "csv" else "txt"
    lines_csv = ["bitrate,format,program,accuracy,precision,recall,f_measure,error"]
    lines_txt = [
        f"{'bitrate':>8} {'format':>9} {'program':>14} {'accuracy':>9} {'precision':>10} "
        f"{'recall':>8} {'f':>8}"
    ]
    for cell in cells:
        key = cell.key()
        if key in grid.reports:
            rep = grid.reports[key]
            lines_csv.append(
                f"{key[0]},{key[1]},{key[2]},{rep.accuracy:.6f},{rep.macro_precision:.6f},"
                f"{rep.macro_recall:.6f},{rep.macro_f:.6f},"
            )
            lines_txt.append(
                f"{key[0]:>8} {key[1]:>9} {key[2]:>14} {rep.accuracy:>9.4f} "
                f"{rep.macro_precision:>10.4f} {rep.macro_recall:>8.4f} {rep.macro_f:>8.4f}"
            )
        else:
            err = grid.errors.get(key, "unknown failure")
            lines_csv.append(f"{key[0]},{key[1]},{key[2]},,,,,{err}")
            lines_txt.append(f"{key[0]:>8} {key[1]:>9} {key[2]:>14} FAILED: {err}")
    content = "\n".join(lines_csv if args.format == "csv" else lines_txt) + "\n"
    (out / f"sweep_grid.{ext}").write_text(content)
    print(content, end="")
    print(f"wrote sweep_grid.{ext} in {out} ({len(grid.reports)}/{len(cells)} cells complete)")
    return 0


def cmd_all(args) -> int:
    rc = cmd_simulate(args)
    if rc:
        return rc
    train_args = argparse.Namespace(**vars(args))
    train_args.traces = args.out
    rc = cmd_train(train_args)
    if rc:
        return rc
    run = _load_run(args)
    auth_args = argparse.Namespace(**vars(args))
    auth_args.traces = args.out
    auth_args.bundle = str(Path(args.out) / BUNDLE_FILE)
    auth_args.bitrate = run.scenario.bus.bitrate
    return cmd_authenticate(auth_args)


def build_parser() -> _Parser:
    parser = _Parser(prog="canoa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="key=value run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--delta", type=float, default=None, help="override the decision threshold")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers where supported")
        p.add_argument("--format", choices=("csv", "text"), default="text")

    p_sim = sub.add_parser("simulate", help="synthesize traces and ground truth")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="decode traces and train the per-SA models")
    common(p_train)
    p_train.add_argument("--traces", required=True, help="directory with trace files")
    p_train.set_defaults(func=cmd_train)

    p_auth = sub.add_parser("authenticate", help="attribute senders and classify attacks")
    common(p_auth, config=False)
    p_auth.add_argument("--traces", required=True, help="directory with trace files")
    p_auth.add_argument("--bundle", required=True, help="trained model bundle")
    p_auth.add_argument("--bitrate", type=float, default=125_000.0, help="bus bitrate in bits/s")
    p_auth.set_defaults(func=cmd_authenticate)

    p_sweep = sub.add_parser("sweep", help="run the bus-speed x format x program grid")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_all = sub.add_parser("all", help="simulate, train, and authenticate in one directory")
    common(p_all)
    p_all.set_defaults(func=cmd_all)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("CANOA_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, CanoaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
