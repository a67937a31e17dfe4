"""Sender attribution and impersonation-attack classification.

For each decoded transmission, every source address's model scores the
feature extracted from its owning ECU's power trace at the transmission
start. The winning model (highest calibrated transmission probability,
above the decision threshold delta) names the actual sender:

- winner owned by the purported sender's ECU -> Authentic (confusion
  between two addresses of the same ECU still identifies the
  transmitting ECU correctly, so it never escalates);
- winner owned by another ECU -> Impersonation, that ECU is flagged
  compromised;
- no model above delta -> AddedModule (nobody legitimate transmitted).

A softmax over the per-model probabilities is carried in every verdict
so downstream reporting keeps a distribution that sums to one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .features import NormStats, PcaBasis, Tau, TukeyParams, ecu_spectra, extract_feature
from .frames import DecodedTransmission, SourceAddressMap
from .svm import SvmModel, predict_proba
from .trace import SampledTrace

TIE_TOLERANCE = 1e-12


class Decision(Enum):
    AUTHENTIC = "authentic"
    IMPERSONATION = "impersonation"
    ADDED_MODULE = "added_module"


@dataclass(frozen=True)
class SaEntry:
    """Everything needed to score one source address."""

    sa: int
    ecu: int
    model: SvmModel
    basis: PcaBasis
    stats: NormStats


@dataclass(frozen=True)
class ModelBundle:
    """Per-SA classifiers plus the shared pipeline parameters."""

    entries: tuple[SaEntry, ...]
    samap: SourceAddressMap
    tau: Tau
    window: TukeyParams
    delta: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if {e.sa for e in self.entries} != set(self.samap.owners):
            raise ValueError("bundle SA set must match the source address map")

    @property
    def sas(self) -> list[int]:
        return [e.sa for e in self.entries]

    def entry(self, sa: int) -> SaEntry:
        for e in self.entries:
            if e.sa == sa:
                return e
        raise KeyError(sa)


@dataclass(frozen=True)
class Verdict:
    """Outcome of authenticating one transmission."""

    t: float
    claimed_sa: int | None
    p_tx: dict[int, float]           # per-SA calibrated transmission probability
    softmax_probs: dict[int, float]  # sums to one
    attributed_sa: int | None        # softmax winner, regardless of delta
    decision: Decision
    true_source: tuple[int, int] | None = None  # (ecu, sa) for impersonation
    flagged_compromised: int | None = None
    tie: bool = False
    multiple_positive: tuple[int, ...] = ()


def softmax(v: np.ndarray) -> np.ndarray:
    """Exp-normalized vector, stabilized by max subtraction."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.isfinite(v).all():
        raise ValueError("softmax input must be finite")
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def _winner(sas: Sequence[int], p_tx: np.ndarray) -> tuple[int, bool]:
    """Maximal SA with ties resolved toward the lowest address."""
    top = float(p_tx.max())
    contenders = [sa for sa, p in zip(sas, p_tx) if top - p <= TIE_TOLERANCE]
    return min(contenders), len(contenders) > 1


def _decide(
    claimed_sa: int | None,
    sas: Sequence[int],
    p_tx: np.ndarray,
    bundle: ModelBundle,
) -> tuple[Decision, tuple[int, int] | None, int | None, int, bool, tuple[int, ...]]:
    winner_sa, tie = _winner(sas, p_tx)
    positives = tuple(sa for sa, p in zip(sas, p_tx) if p > bundle.delta)
    has_winner = float(p_tx.max()) > bundle.delta
    purported_ecu = bundle.samap.owners.get(claimed_sa) if claimed_sa is not None else None
    if not has_winner:
        decision, true_source, flagged = Decision.ADDED_MODULE, None, None
    else:
        winner_ecu = bundle.samap.owners[winner_sa]
        if purported_ecu is not None and winner_ecu == purported_ecu:
            decision, true_source, flagged = Decision.AUTHENTIC, None, None
        else:
            decision = Decision.IMPERSONATION
            true_source = (winner_ecu, winner_sa)
            flagged = winner_ecu
    multiple = positives if len(positives) > 1 else ()
    return decision, true_source, flagged, winner_sa, tie, multiple


def attribute(
    transmission: DecodedTransmission,
    powers: Mapping[int, SampledTrace],
    bundle: ModelBundle,
) -> Verdict:
    """Score every SA model at the transmission start and decide the sender."""
    p_values = []
    for entry in bundle.entries:
        feat = extract_feature(
            powers[entry.ecu], entry.stats, transmission.t, bundle.tau, bundle.window, entry.basis
        )
        p_values.append(predict_proba(entry.model, feat)[1])
    p_tx = np.asarray(p_values)
    sm = softmax(p_tx)
    sas = bundle.sas
    decision, true_source, flagged, winner_sa, tie, multiple = _decide(
        transmission.sa, sas, p_tx, bundle
    )
    return Verdict(
        t=transmission.t,
        claimed_sa=transmission.sa,
        p_tx=dict(zip(sas, (float(p) for p in p_tx))),
        softmax_probs=dict(zip(sas, (float(p) for p in sm))),
        attributed_sa=winner_sa,
        decision=decision,
        true_source=true_source,
        flagged_compromised=flagged,
        tie=tie,
        multiple_positive=multiple,
    )


def detect_attack(
    transmission: DecodedTransmission | None,
    draft: Verdict,
    powers: Mapping[int, SampledTrace],
    bundle: ModelBundle,
) -> Verdict:
    """Finalize the attack classification for a (possibly partial) draft.

    Missing per-SA probabilities are computed from the power traces, so a
    draft that only scored the purported sender is completed here before
    the decision rules run. The draft carries the claimed SA and start
    time; ``transmission`` is only consulted as a fallback for the
    latter.
    """
    t = draft.t if transmission is None else transmission.t
    p_map = dict(draft.p_tx)
    for entry in bundle.entries:
        if entry.sa in p_map:
            continue
        feat = extract_feature(
            powers[entry.ecu], entry.stats, t, bundle.tau, bundle.window, entry.basis
        )
        p_map[entry.sa] = predict_proba(entry.model, feat)[1]
    sas = bundle.sas
    p_tx = np.asarray([p_map[sa] for sa in sas])
    sm = softmax(p_tx)
    decision, true_source, flagged, winner_sa, tie, multiple = _decide(
        draft.claimed_sa, sas, p_tx, bundle
    )
    return replace(
        draft,
        p_tx={sa: float(p) for sa, p in zip(sas, p_tx)},
        softmax_probs={sa: float(p) for sa, p in zip(sas, sm)},
        attributed_sa=winner_sa,
        decision=decision,
        true_source=true_source,
        flagged_compromised=flagged,
        tie=tie,
        multiple_positive=multiple,
    )


def authenticate_all(
    transmissions: Sequence[DecodedTransmission],
    powers: Mapping[int, SampledTrace],
    bundle: ModelBundle,
) -> list[Verdict]:
    """Batch attribution over many transmissions.

    Feature extraction is vectorized per ECU; the verdicts are identical
    to calling :func:`attribute` one transmission at a time.
    """
    if not transmissions:
        return []
    sas = bundle.sas
    p_columns: dict[int, np.ndarray] = {}
    coords_by_ecu: dict[int, np.ndarray] = {}
    for entry in bundle.entries:
        if entry.ecu not in coords_by_ecu:
            spectra = ecu_spectra(
                powers[entry.ecu], entry.stats, transmissions, bundle.tau, bundle.window
            )
            coords_by_ecu[entry.ecu] = entry.basis.transform(spectra)
        coords = coords_by_ecu[entry.ecu]
        margins = coords @ entry.model.weights + entry.model.bias
        a, b = entry.model.calibration
        f = a * margins + b
        p = np.where(f >= 0, np.exp(-np.minimum(f, 700)) / (1 + np.exp(-np.minimum(f, 700))),
                     1.0 / (1.0 + np.exp(np.maximum(f, -700))))
        p_columns[entry.sa] = p
    verdicts = []
    for i, tx in enumerate(transmissions):
        p_tx = np.asarray([p_columns[sa][i] for sa in sas])
        sm = softmax(p_tx)
        decision, true_source, flagged, winner_sa, tie, multiple = _decide(tx.sa, sas, p_tx, bundle)
        verdicts.append(
            Verdict(
                t=tx.t,
                claimed_sa=tx.sa,
                p_tx=dict(zip(sas, (float(x) for x in p_tx))),
                softmax_probs=dict(zip(sas, (float(x) for x in sm))),
                attributed_sa=winner_sa,
                decision=decision,
                true_source=true_source,
                flagged_compromised=flagged,
                tie=tie,
                multiple_positive=multiple,
            )
        )
    return verdicts
