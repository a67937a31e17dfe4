"""Power-trace feature extraction.

The pipeline for one transmission (t, S) against one ECU's power trace:
normalize by calibration statistics, slice a transmission-window-length
segment starting at t, taper it with a Tukey window, take the one-sided
FFT magnitude, and project onto the ECU's principal-component basis.
Segment length is fixed at ``round(tau * sample_rate)`` samples so FFT
lengths are uniform across transmissions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateTrace, EmptyInput, OutOfBounds, RankDeficient
from .frames import DecodedTransmission, SourceAddressMap
from .trace import SampledTrace

DEFAULT_CALIB_LEN = 100_000
DEFAULT_COMPONENTS = 50


@dataclass(frozen=True)
class NormStats:
    """Per-ECU mean and standard deviation from a calibration sample."""

    mean: float
    std: float

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")


@dataclass(frozen=True)
class TukeyParams:
    """Taper fraction of the tapered-cosine window; 0 = rectangular, 1 = Hann."""

    alpha: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")


@dataclass(frozen=True)
class Tau:
    """Estimated transmission window in seconds."""

    value: float

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("transmission window must be positive")

    def sample_count(self, sample_rate: float) -> int:
        return int(round(self.value * sample_rate))


@dataclass(frozen=True)
class PcaBasis:
    """Top-M principal directions of a spectra corpus.

    ``components`` rows are orthonormal; ``explained_variance`` is
    non-increasing. The sign convention makes each component's
    largest-magnitude entry positive, so fits are deterministic.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def transform(self, spectra: np.ndarray) -> np.ndarray:
        """Project spectra (vector or matrix rows) onto the basis."""
        return (np.asarray(spectra, dtype=np.float64) - self.mean) @ self.components.T


@dataclass(frozen=True)
class FeatureDataset:
    """Per-(ECU, SA) feature matrix with binary transmission labels.

    ``y[i] = 1`` when transmission i was observed with this dataset's
    source address, 0 when it carried any other source address.
    """

    x: np.ndarray
    y: np.ndarray
    sa: int
    ecu: int

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("feature matrix and labels disagree on row count")
        if not np.isfinite(self.x).all():
            raise ValueError("feature matrix contains non-finite values")


def estimate_norm_stats(trace: SampledTrace, calib_len: int = DEFAULT_CALIB_LEN) -> NormStats:
    """Sample mean and unbiased standard deviation over a calibration prefix."""
    if calib_len < 1000:
        raise ValueError("calibration sample must cover at least 1000 samples")
    prefix = np.asarray(trace.samples[:calib_len], dtype=np.float64)
    if prefix.size < 2:
        raise ValueError("trace shorter than two samples")
    mean = float(prefix.mean())
    std = float(prefix.std(ddof=1))
    if std == 0.0:
        raise DegenerateTrace("calibration sample has zero variance")
    return NormStats(mean=mean, std=std)


def estimate_tau(
    transmissions: Sequence[DecodedTransmission], limit: int | None = None
) -> Tau:
    """Mean duration of the first ``limit`` decoded transmissions (default all)."""
    if len(transmissions) == 0:
        raise EmptyInput("no transmissions to estimate the window from")
    chosen = transmissions if limit is None else transmissions[:limit]
    return Tau(float(np.mean([t.duration for t in chosen])))


def tukey_window(length: int, params: TukeyParams = TukeyParams()) -> np.ndarray:
    """Symmetric tapered-cosine window coefficients."""
    if length < 2:
        raise ValueError("window length must be at least 2")
    alpha = params.alpha
    if alpha <= 0.0:
        return np.ones(length)
    n = np.arange(length)
    edge = alpha * (length - 1) / 2.0
    w = np.ones(length)
    left = n < edge
    right = n > (length - 1) - edge
    w[left] = 0.5 * (1 + np.cos(np.pi * (n[left] / edge - 1)))
    w[right] = 0.5 * (1 + np.cos(np.pi * ((n[right] - (length - 1)) / edge + 1)))
    # exact zeros at the taper endpoints
    w[0] = 0.0
    w[-1] = 0.0
    return w


def spectrum(segment: np.ndarray) -> np.ndarray:
    """Magnitude of the one-sided DFT; output length is floor(n/2)+1."""
    seg = np.asarray(segment, dtype=np.float64)
    if seg.ndim != 1 or seg.size < 2:
        raise ValueError("segment must be a 1-D vector of length >= 2")
    return np.abs(np.fft.rfft(seg))


def fit_pca(spectra: np.ndarray, n_components: int) -> PcaBasis:
    """Top-M principal directions of mean-centered spectra rows by variance."""
    x = np.asarray(spectra, dtype=np.float64)
    n, f = x.shape
    if not (n > n_components >= 1):
        raise ValueError("need more rows than components and at least one component")
    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    tol = svals[0] * max(n, f) * np.finfo(np.float64).eps if svals.size else 0.0
    rank = int(np.sum(svals > tol))
    if rank < n_components:
        raise RankDeficient(
            f"only {rank} nonzero-variance directions available, {n_components} requested"
        )
    components = vt[:n_components].copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    explained = (svals[:n_components] ** 2) / (n - 1)
    return PcaBasis(mean=mean, components=components, explained_variance=explained)


def _segment_matrix(
    trace: SampledTrace,
    stats: NormStats,
    starts: np.ndarray,
    n_samples: int,
) -> np.ndarray:
    """Normalized tau-length segments, one row per start index."""
    n = trace.samples.size
    if starts.min() < 0 or starts.max() + n_samples > n:
        raise OutOfBounds("a transmission window falls outside the trace")
    idx = starts[:, None] + np.arange(n_samples)[None, :]
    seg = trace.samples[idx].astype(np.float64)
    seg -= stats.mean
    seg /= stats.std
    return seg


def extract_feature(
    trace: SampledTrace,
    stats: NormStats,
    t: float,
    tau: Tau,
    win: TukeyParams,
    basis: PcaBasis,
) -> np.ndarray:
    """Feature vector for one transmission start time against one trace.

    The window may well cover an interval where this ECU was not
    transmitting; that is the non-transmission class by construction.
    """
    n_samples = tau.sample_count(trace.sample_rate)
    start = np.array([trace.index_of(t)])
    seg = _segment_matrix(trace, stats, start, n_samples)[0]
    seg *= tukey_window(n_samples, win)
    return basis.transform(np.abs(np.fft.rfft(seg)))


def ecu_spectra(
    trace: SampledTrace,
    stats: NormStats,
    transmissions: Sequence[DecodedTransmission],
    tau: Tau,
    win: TukeyParams,
) -> np.ndarray:
    """Spectra matrix (one row per transmission) for a single ECU trace."""
    n_samples = tau.sample_count(trace.sample_rate)
    starts = np.array([trace.index_of(tx.t) for tx in transmissions], dtype=np.int64)
    segs = _segment_matrix(trace, stats, starts, n_samples)
    segs *= tukey_window(n_samples, win)[None, :]
    return np.abs(np.fft.rfft(segs, axis=1))


def build_datasets(
    powers: Mapping[int, SampledTrace],
    transmissions: Sequence[DecodedTransmission],
    samap: SourceAddressMap,
    tau: Tau,
    win: TukeyParams = TukeyParams(),
    n_components: int = DEFAULT_COMPONENTS,
    calib_len: int = DEFAULT_CALIB_LEN,
) -> tuple[dict[tuple[int, int], FeatureDataset], dict[int, PcaBasis], dict[int, NormStats]]:
    """Labeled per-(ECU, SA) feature datasets from decoded transmissions.

    One PCA basis is fitted per ECU on that ECU's spectra over all
    transmissions; datasets for the ECU's source addresses share its
    feature rows and differ only in labels.
    """
    if len(transmissions) == 0:
        raise EmptyInput("no transmissions to featurize")
    datasets: dict[tuple[int, int], FeatureDataset] = {}
    bases: dict[int, PcaBasis] = {}
    stats_by_ecu: dict[int, NormStats] = {}
    sa_labels = np.array([-1 if tx.sa is None else tx.sa for tx in transmissions])
    for ecu in samap.ecus:
        trace = powers[ecu]
        stats = estimate_norm_stats(trace, min(calib_len, trace.samples.size))
        spectra = ecu_spectra(trace, stats, transmissions, tau, win)
        basis = fit_pca(spectra, n_components)
        coords = basis.transform(spectra)
        stats_by_ecu[ecu] = stats
        bases[ecu] = basis
        for sa, owner in sorted(samap.owners.items()):
            if owner != ecu:
                continue
            y = (sa_labels == sa).astype(np.int8)
            datasets[(ecu, sa)] = FeatureDataset(x=coords, y=y, sa=sa, ecu=ecu)
    return datasets, bases, stats_by_ecu
