"""File-format tests: trace files, ground truth CSV, bundle round trips."""

import numpy as np
import pytest

from canoa.bus import AttackKind, GroundTruthEntry, GroundTruthLog, truck_scenario, simulate
from canoa.errors import FileFormatError
from canoa.frames import decode_transmissions
from canoa.svm import TrainConfig
from canoa.traceio import (
    TraceKind,
    load_bundle,
    read_ground_truth,
    read_trace_file,
    save_bundle,
    write_ground_truth,
    write_trace_file,
    write_verdicts,
)
from canoa.authenticate import authenticate_all
from canoa.workflow import PipelineConfig, build_bundle, usable_transmissions


def test_trace_file_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    samples = rng.normal(size=5000).astype(np.float32)
    path = tmp_path / "x.ctrc"
    write_trace_file(path, samples, TraceKind.POWER, 2e6, start_time=0.25)
    back = read_trace_file(path)
    assert back.kind is TraceKind.POWER
    assert back.sample_rate == 2e6
    assert back.start_time == 0.25
    assert back.samples.shape == (1, 5000)
    assert np.array_equal(back.samples[0], samples)


def test_trace_file_multichannel(tmp_path):
    data = np.arange(12, dtype=np.float32).reshape(3, 4)
    path = tmp_path / "m.ctrc"
    write_trace_file(path, data, TraceKind.VOLTAGE, 1e6)
    back = read_trace_file(path)
    assert back.samples.shape == (3, 4)
    assert np.array_equal(back.samples, data)


def test_trace_file_rejects_corruption(tmp_path):
    path = tmp_path / "c.ctrc"
    write_trace_file(path, np.zeros(16, dtype=np.float32), TraceKind.VOLTAGE, 1e6)
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(FileFormatError):
        read_trace_file(path)
    # truncated body
    path2 = tmp_path / "t.ctrc"
    write_trace_file(path2, np.zeros(16, dtype=np.float32), TraceKind.VOLTAGE, 1e6)
    path2.write_bytes(path2.read_bytes()[:-4])
    with pytest.raises(FileFormatError):
        read_trace_file(path2)


def test_ground_truth_round_trip(tmp_path):
    log = GroundTruthLog(
        (
            GroundTruthEntry(0.001234567890123, 0xF001, 1, 0, AttackKind.NORMAL),
            GroundTruthEntry(0.0034, 0xD505, 5, None, AttackKind.ADDED_MODULE),
            GroundTruthEntry(0.01, 0x2, 2, 3, AttackKind.HIJACK_TRANSMISSION),
        )
    )
    path = tmp_path / "gt.csv"
    write_ground_truth(path, log)
    back = read_ground_truth(path)
    assert len(back) == 3
    for a, b in zip(log.entries, back.entries):
        assert a.t == b.t  # repr round-trips floats exactly
        assert a.frame_id == b.frame_id
        assert a.claimed_sa == b.claimed_sa
        assert a.true_source == b.true_source
        assert a.kind == b.kind


def test_ground_truth_rejects_non_increasing_t(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "t_sec,frame_id,claimed_sa,true_source,attack_kind\n"
        "0.5,1,1,0,normal\n"
        "0.4,2,2,0,normal\n"
    )
    with pytest.raises(FileFormatError):
        read_ground_truth(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    sc = truck_scenario(frames_per_sa=150, sample_rate=3e6, seed=61)
    voltage, powers, truth = simulate(sc)
    samap = sc.source_map()
    decoded = decode_transmissions(voltage, sc.bus.bitrate, samap)
    power_map = {e.index: p for e, p in zip(sc.ecus, powers)}
    result = build_bundle(
        power_map, decoded, samap, PipelineConfig(calib_len=40_000), TrainConfig(seed=6)
    )
    return sc, power_map, decoded, result


def test_bundle_round_trip_preserves_verdicts(trained, tmp_path):
    sc, power_map, decoded, result = trained
    path = tmp_path / "b.cbnd"
    save_bundle(path, result.bundle)
    loaded = load_bundle(path)
    assert loaded.delta == result.bundle.delta
    assert loaded.tau.value == result.bundle.tau.value
    assert loaded.samap.owners == result.bundle.samap.owners
    usable = usable_transmissions(decoded, power_map, result.tau)[:200]
    before = authenticate_all(usable, power_map, result.bundle)
    after = authenticate_all(usable, power_map, loaded)
    for a, b in zip(before, after):
        assert a.decision == b.decision
        assert a.attributed_sa == b.attributed_sa
        assert a.p_tx == b.p_tx  # float64 payloads are stored exactly
        assert a.softmax_probs == b.softmax_probs


def test_bundle_checksum_validates(trained, tmp_path):
    sc, power_map, decoded, result = trained
    path = tmp_path / "b.cbnd"
    save_bundle(path, result.bundle)
    raw = bytearray(path.read_bytes())
    raw[100] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FileFormatError):
        load_bundle(path)


def test_verdict_csv_columns_and_rows(trained, tmp_path):
    sc, power_map, decoded, result = trained
    usable = usable_transmissions(decoded, power_map, result.tau)[:50]
    verdicts = authenticate_all(usable, power_map, result.bundle)
    path = tmp_path / "v.csv"
    write_verdicts(path, verdicts, result.bundle.sas)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 51
    header = lines[0].split(",")
    for sa in result.bundle.sas:
        assert f"p_tx_{sa}" in header
        assert f"softmax_{sa}" in header
    assert header[:4] == ["t_sec", "claimed_sa", "attributed_sa", "decision"]
