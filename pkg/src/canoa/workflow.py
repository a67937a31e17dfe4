"""End-to-end pipeline glue shared by the CLI, the factor sweep, and tests.

Decode a voltage trace, estimate the transmission window, build labeled
feature datasets, train one classifier per source address, and evaluate
sender attribution. Train/validation/test portions are contiguous
transmission-index slices, so evaluation always runs on the newest
traffic the models never saw labels for.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .authenticate import Decision, ModelBundle, SaEntry, Verdict, authenticate_all
from .bus import AttackKind, GroundTruthLog, ProgramActivity, Scenario, simulate
from .errors import MissingChannel
from .evaluate import ConfusionMatrix, FactorCell, MetricReport, confusion, metrics
from .features import (
    FeatureDataset,
    Tau,
    TukeyParams,
    build_datasets,
    estimate_tau,
)
from .frames import DecodedTransmission, FrameFormat, SourceAddressMap, decode_transmissions
from .svm import LearningCurve, TrainConfig, split_indices, train
from .trace import SampledTrace

log = logging.getLogger("canoa.workflow")


@dataclass(frozen=True)
class PipelineConfig:
    n_components: int = 50
    tukey_alpha: float = 0.25
    delta: float = 0.5
    calib_len: int = 100_000
    tau_limit: int | None = None


@dataclass
class TrainResult:
    bundle: ModelBundle
    curves: dict[int, LearningCurve]
    datasets: dict[tuple[int, int], FeatureDataset]
    transmissions: list[DecodedTransmission]
    tau: Tau

    @property
    def validation_accuracies(self) -> dict[int, float]:
        return {e.sa: e.model.meta.validation_accuracy for e in self.bundle.entries}


def usable_transmissions(
    decoded: Sequence[DecodedTransmission],
    powers: Mapping[int, SampledTrace],
    tau: Tau,
) -> list[DecodedTransmission]:
    """Valid transmissions whose feature window fits inside every trace."""
    end = min(p.end_time for p in powers.values())
    start = max(p.start_time for p in powers.values())
    return [
        d
        for d in decoded
        if d.crc_ok and d.sa is not None and d.t >= start and d.t + tau.value <= end
    ]


def build_bundle(
    powers: Mapping[int, SampledTrace],
    decoded: Sequence[DecodedTransmission],
    samap: SourceAddressMap,
    pipeline_cfg: PipelineConfig | None = None,
    train_cfg: TrainConfig | None = None,
) -> TrainResult:
    """Train the per-SA model set from decoded traffic and power traces."""
    pcfg = pipeline_cfg or PipelineConfig()
    tcfg = train_cfg or TrainConfig()
    missing = [e for e in samap.ecus if e not in powers]
    if missing:
        raise MissingChannel(f"no power trace for ECU index(es) {missing}")
    valid = [d for d in decoded if d.crc_ok and d.sa is not None]
    tau = estimate_tau(valid, pcfg.tau_limit)
    usable = usable_transmissions(decoded, powers, tau)
    window = TukeyParams(pcfg.tukey_alpha)
    datasets, bases, stats = build_datasets(
        powers,
        usable,
        samap,
        tau,
        window,
        n_components=pcfg.n_components,
        calib_len=pcfg.calib_len,
    )
    entries = []
    curves: dict[int, LearningCurve] = {}
    for (ecu, sa) in sorted(datasets, key=lambda k: k[1]):
        cfg = dataclasses.replace(tcfg, seed=tcfg.seed + 9973 * sa)
        model, curve = train(datasets[(ecu, sa)], cfg)
        if not model.meta.converged:
            log.warning("model for SA %d did not converge in %d iterations", sa, cfg.max_iters)
        entries.append(SaEntry(sa=sa, ecu=ecu, model=model, basis=bases[ecu], stats=stats[ecu]))
        curves[sa] = curve
    bundle = ModelBundle(
        entries=tuple(entries), samap=samap, tau=tau, window=window, delta=pcfg.delta
    )
    return TrainResult(
        bundle=bundle, curves=curves, datasets=datasets, transmissions=usable, tau=tau
    )


def holdout_transmissions(
    result: TrainResult, train_cfg: TrainConfig | None = None
) -> list[DecodedTransmission]:
    """The held-out test slice of the transmissions used to build a bundle."""
    tcfg = train_cfg or TrainConfig()
    _, _, te = split_indices(len(result.transmissions), tcfg.split)
    return result.transmissions[te]


def normal_transmissions(
    decoded: Sequence[DecodedTransmission],
    truth: GroundTruthLog,
    tolerance: float = 2e-4,
) -> list[DecodedTransmission]:
    """Drop decoded transmissions that ground truth marks as attacks.

    Used when training from a capture that already contains injected
    attacks: models must learn from legitimate traffic only, and an
    attack frame's claimed SA names an ECU that never transmitted it.
    """
    attack_times = sorted(e.t for e in truth.entries if e.kind is not AttackKind.NORMAL)
    if not attack_times:
        return list(decoded)
    import bisect

    kept = []
    for d in decoded:
        i = bisect.bisect_left(attack_times, d.t)
        near = min(
            (abs(attack_times[j] - d.t) for j in (i - 1, i) if 0 <= j < len(attack_times)),
            default=float("inf"),
        )
        if near > tolerance:
            kept.append(d)
    return kept


def align_truth(
    verdicts: Sequence[Verdict], truth: GroundTruthLog, tolerance: float = 2e-4
) -> list[tuple[Verdict, "AttackKind"]]:
    """Pair each verdict with the ground-truth kind of the nearest frame."""
    pairs = []
    entries = truth.entries
    times = [e.t for e in entries]
    import bisect

    for v in verdicts:
        i = bisect.bisect_left(times, v.t)
        best = None
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(entries):
                d = abs(entries[j].t - v.t)
                if best is None or d < best[0]:
                    best = (d, entries[j])
        if best is None or best[0] > tolerance:
            raise ValueError(f"no ground-truth frame within {tolerance}s of t={v.t}")
        pairs.append((v, best[1]))
    return pairs


def sender_confusion(
    verdicts: Sequence[Verdict], samap: SourceAddressMap
) -> ConfusionMatrix:
    """(ECU, SA) attribution confusion over verdicts with a mapped claim."""
    truth_labels = []
    predicted = []
    for v in verdicts:
        if v.claimed_sa is None or v.claimed_sa not in samap.owners:
            continue
        truth_labels.append((samap.owners[v.claimed_sa], v.claimed_sa))
        predicted.append((samap.owners[v.attributed_sa], v.attributed_sa))
    labels = sorted(((ecu, sa) for sa, ecu in samap.owners.items()))
    return confusion(truth_labels, predicted, labels=labels)


def attack_confusion(
    verdicts: Sequence[Verdict], truth: GroundTruthLog
) -> ConfusionMatrix:
    """{normal, attack} confusion: any non-Authentic decision flags attack."""
    pairs = align_truth(verdicts, truth)
    truth_labels = ["normal" if e.kind is AttackKind.NORMAL else "attack" for _, e in pairs]
    predicted = ["normal" if v.decision is Decision.AUTHENTIC else "attack" for v, _ in pairs]
    return confusion(truth_labels, predicted, labels=("normal", "attack"))


def scenario_for_cell(base: Scenario, cell: FactorCell, seed: int) -> Scenario:
    """Clone a scenario with one factor cell's bus and program levels."""
    fmt = FrameFormat(cell.frame_format)
    program = ProgramActivity(cell.program)
    bus = dataclasses.replace(base.bus, bitrate=cell.bitrate, format=fmt)
    ecus = tuple(
        dataclasses.replace(ecu, profile=dataclasses.replace(ecu.profile, program=program))
        for ecu in base.ecus
    )
    return dataclasses.replace(base, bus=bus, ecus=ecus, seed=seed)


def run_cell(
    scenario: Scenario,
    pipeline_cfg: PipelineConfig | None = None,
    train_cfg: TrainConfig | None = None,
) -> MetricReport:
    """Full pipeline for one sweep cell: sender-attribution metrics on test."""
    tcfg = train_cfg or TrainConfig()
    voltage, powers, _ = simulate(scenario)
    samap = scenario.source_map()
    decoded = decode_transmissions(voltage, scenario.bus.bitrate, samap)
    power_map = {ecu.index: p for ecu, p in zip(scenario.ecus, powers)}
    result = build_bundle(power_map, decoded, samap, pipeline_cfg, tcfg)
    held_out = holdout_transmissions(result, tcfg)
    verdicts = authenticate_all(held_out, power_map, result.bundle)
    return metrics(sender_confusion(verdicts, samap))
