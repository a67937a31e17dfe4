"""Persistent file formats: sampled traces, ground truth, model bundles.

Trace files ("CTRC") store channel-major 32-bit little-endian floats
behind a fixed header; bundles ("CBND") are length-prefixed named
sections with a CRC-32 footer. Sample data goes to the binary format
because multi-megasample traces are large; CSV is reserved for logs and
reports.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .authenticate import ModelBundle, SaEntry, Verdict
from .bus import AttackKind, GroundTruthEntry, GroundTruthLog
from .errors import FileFormatError
from .features import NormStats, PcaBasis, Tau, TukeyParams
from .frames import DerivationRule, SourceAddressMap
from .svm import SvmModel, TrainingMeta

TRACE_MAGIC = b"CTRC"
TRACE_VERSION = 1
_TRACE_HEADER = struct.Struct("<4sHBHIQQ")

BUNDLE_MAGIC = b"CBND"
BUNDLE_FOOTER = b"CEND"
BUNDLE_VERSION = 1

GROUND_TRUTH_HEADER = ["t_sec", "frame_id", "claimed_sa", "true_source", "attack_kind"]
ADDED_MODULE_SOURCE = "added_module"


class TraceKind(Enum):
    VOLTAGE = 0
    POWER = 1


def write_trace_file(path: Path | str, samples, kind: TraceKind, sample_rate: float,
                     start_time: float = 0.0) -> None:
    """Write one or more channels of samples as a CTRC file.

    ``samples`` is a 1-D array (one channel) or a 2-D channel-major array.
    """
    data = np.asarray(samples, dtype=np.float32)
    if data.ndim == 1:
        data = data[None, :]
    channels, per_channel = data.shape
    header = _TRACE_HEADER.pack(
        TRACE_MAGIC,
        TRACE_VERSION,
        kind.value,
        channels,
        int(round(sample_rate)),
        per_channel,
        int(round(start_time * 1e9)),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data).astype("<f4", copy=False).tobytes())


@dataclass(frozen=True)
class TraceFileContents:
    kind: TraceKind
    sample_rate: float
    start_time: float
    samples: np.ndarray  # channel-major, float32


def read_trace_file(path: Path | str) -> TraceFileContents:
    raw = Path(path).read_bytes()
    if len(raw) < _TRACE_HEADER.size:
        raise FileFormatError(f"{path}: shorter than a trace header")
    magic, version, kind, channels, rate, per_channel, start_ns = _TRACE_HEADER.unpack_from(raw)
    if magic != TRACE_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != TRACE_VERSION:
        raise FileFormatError(f"{path}: unsupported trace version {version}")
    body = raw[_TRACE_HEADER.size :]
    expected = channels * per_channel * 4
    if len(body) != expected:
        raise FileFormatError(f"{path}: body is {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body, dtype="<f4").reshape(channels, per_channel)
    return TraceFileContents(
        kind=TraceKind(kind),
        sample_rate=float(rate),
        start_time=start_ns / 1e9,
        samples=data,
    )


# ------------------------------------------------------------- ground truth


def write_ground_truth(path: Path | str, log: GroundTruthLog) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GROUND_TRUTH_HEADER)
        for e in log.entries:
            source = ADDED_MODULE_SOURCE if e.true_source is None else e.true_source
            writer.writerow([repr(e.t), e.frame_id, e.claimed_sa, source, e.kind.value])


def read_ground_truth(path: Path | str) -> GroundTruthLog:
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != GROUND_TRUTH_HEADER:
            raise FileFormatError(f"{path}: unexpected ground-truth header {header}")
        last_t = -np.inf
        for row in reader:
            t = float(row[0])
            if t <= last_t:
                raise FileFormatError(f"{path}: t_sec not strictly increasing at {t}")
            last_t = t
            source = None if row[3] == ADDED_MODULE_SOURCE else int(row[3])
            entries.append(
                GroundTruthEntry(
                    t=t,
                    frame_id=int(row[1]),
                    claimed_sa=int(row[2]),
                    true_source=source,
                    kind=AttackKind(row[4]),
                )
            )
    return GroundTruthLog(tuple(entries))


# ------------------------------------------------------------------ verdicts


def write_verdicts(path: Path | str, verdicts: Sequence[Verdict], sas: Sequence[int]) -> None:
    """Verdict stream as CSV, one row per authenticated transmission."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [
            "t_sec",
            "claimed_sa",
            "attributed_sa",
            "decision",
            "true_source_ecu",
            "true_source_sa",
            "flagged_ecu",
            "tie",
        ]
        header += [f"p_tx_{sa}" for sa in sas] + [f"softmax_{sa}" for sa in sas]
        writer.writerow(header)
        for v in verdicts:
            src_ecu, src_sa = v.true_source if v.true_source else ("", "")
            row = [
                repr(v.t),
                "" if v.claimed_sa is None else v.claimed_sa,
                "" if v.attributed_sa is None else v.attributed_sa,
                v.decision.value,
                src_ecu,
                src_sa,
                "" if v.flagged_compromised is None else v.flagged_compromised,
                int(v.tie),
            ]
            row += [repr(v.p_tx[sa]) for sa in sas]
            row += [repr(v.softmax_probs[sa]) for sa in sas]
            writer.writerow(row)


# ------------------------------------------------------------------- bundles


def _sections_bytes(sections: list[tuple[str, bytes]]) -> bytes:
    out = io.BytesIO()
    out.write(BUNDLE_MAGIC)
    out.write(struct.pack("<H", BUNDLE_VERSION))
    for name, payload in sections:
        encoded = name.encode()
        out.write(struct.pack("<H", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<Q", len(payload)))
        out.write(payload)
    return out.getvalue()


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_bundle(path: Path | str, bundle: ModelBundle) -> None:
    meta = {
        "delta": bundle.delta,
        "tau": bundle.tau.value,
        "tukey_alpha": bundle.window.alpha,
        "map": {
            "rule": bundle.samap.rule.value,
            "owners": {str(sa): ecu for sa, ecu in bundle.samap.owners.items()},
            "table": {str(fid): sa for fid, sa in bundle.samap.table.items()},
        },
        "entries": [],
    }
    sections: list[tuple[str, bytes]] = []
    for e in bundle.entries:
        m = e.model.meta
        meta["entries"].append(
            {
                "sa": e.sa,
                "ecu": e.ecu,
                "bias": e.model.bias,
                "calibration": list(e.model.calibration),
                "norm_mean": e.stats.mean,
                "norm_std": e.stats.std,
                "meta": {
                    "iterations": m.iterations,
                    "final_loss": m.final_loss,
                    "epsilon": m.epsilon,
                    "converged": m.converged,
                    "convergence_index": m.convergence_index,
                    "validation_accuracy": m.validation_accuracy,
                },
                "pca_shape": list(e.basis.components.shape),
            }
        )
        sections.append((f"weights/{e.sa}", _f64(e.model.weights)))
        sections.append((f"pca_mean/{e.sa}", _f64(e.basis.mean)))
        sections.append((f"pca_components/{e.sa}", _f64(e.basis.components)))
        sections.append((f"pca_variance/{e.sa}", _f64(e.basis.explained_variance)))
    sections.insert(0, ("meta", json.dumps(meta, sort_keys=True).encode()))
    blob = _sections_bytes(sections)
    footer = BUNDLE_FOOTER + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    Path(path).write_bytes(blob + footer)


def _parse_sections(blob: bytes, path) -> dict[str, bytes]:
    if len(blob) < 6 or blob[:4] != BUNDLE_MAGIC:
        raise FileFormatError(f"{path}: not a bundle file")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != BUNDLE_VERSION:
        raise FileFormatError(f"{path}: unsupported bundle version {version}")
    sections: dict[str, bytes] = {}
    offset = 6
    while offset < len(blob):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode()
        offset += name_len
        (payload_len,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        sections[name] = blob[offset : offset + payload_len]
        offset += payload_len
    return sections


def load_bundle(path: Path | str) -> ModelBundle:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[-8:-4] != BUNDLE_FOOTER:
        raise FileFormatError(f"{path}: missing bundle footer")
    blob, (stored_crc,) = raw[:-8], struct.unpack("<I", raw[-4:])
    if zlib.crc32(blob) & 0xFFFFFFFF != stored_crc:
        raise FileFormatError(f"{path}: checksum mismatch")
    sections = _parse_sections(blob, path)
    meta = json.loads(sections["meta"].decode())
    samap = SourceAddressMap(
        owners={int(sa): ecu for sa, ecu in meta["map"]["owners"].items()},
        rule=DerivationRule(meta["map"]["rule"]),
        table={int(fid): sa for fid, sa in meta["map"]["table"].items()},
    )
    entries = []
    for em in meta["entries"]:
        sa = em["sa"]
        weights = np.frombuffer(sections[f"weights/{sa}"], dtype="<f8")
        shape = tuple(em["pca_shape"])
        basis = PcaBasis(
            mean=np.frombuffer(sections[f"pca_mean/{sa}"], dtype="<f8"),
            components=np.frombuffer(sections[f"pca_components/{sa}"], dtype="<f8").reshape(shape),
            explained_variance=np.frombuffer(sections[f"pca_variance/{sa}"], dtype="<f8"),
        )
        mm = em["meta"]
        model = SvmModel(
            weights=weights,
            bias=em["bias"],
            calibration=tuple(em["calibration"]),
            meta=TrainingMeta(
                iterations=mm["iterations"],
                final_loss=mm["final_loss"],
                epsilon=mm["epsilon"],
                converged=mm["converged"],
                convergence_index=mm["convergence_index"],
                validation_accuracy=mm["validation_accuracy"],
            ),
        )
        entries.append(
            SaEntry(
                sa=sa,
                ecu=em["ecu"],
                model=model,
                basis=basis,
                stats=NormStats(mean=em["norm_mean"], std=em["norm_std"]),
            )
        )
    return ModelBundle(
        entries=tuple(entries),
        samap=samap,
        tau=Tau(meta["tau"]),
        window=TukeyParams(meta["tukey_alpha"]),
        delta=meta["delta"],
    )
