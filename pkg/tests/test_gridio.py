import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stagesynth.denoiser import BranchDenoisers, LinearDenoiser
from stagesynth.grid import GridError, RngStream
from stagesynth.gridio import (
    MalformedHeaderError,
    TrailingDataError,
    TruncatedPayloadError,
    UnsupportedVersionError,
    decode_grid,
    encode_grid,
    export_pgm,
    load_checkpoint,
    pgm_bytes,
    read_grid,
    read_manifest,
    read_pgm,
    save_checkpoint,
    write_grid,
    write_manifest,
)
from stagesynth.schedule import build_linear_schedule


def test_round_trip_pi_multiples(tmp_path):
    g = np.pi * np.arange(1, 10, dtype=float).reshape(3, 3)
    write_grid(tmp_path / "g.stge", g)
    back = read_grid(tmp_path / "g.stge")
    assert back.tobytes() == g.tobytes()


def test_layout_is_little_endian():
    data = encode_grid(np.array([[1.5, -2.0]]))
    assert data[:4] == b"STGE"
    assert struct.unpack("<HII", data[4:14]) == (1, 1, 2)
    assert struct.unpack("<2d", data[14:]) == (1.5, -2.0)
    assert len(data) == 14 + 16


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_round_trip_property(g):
    assert decode_grid(encode_grid(g)).tobytes() == np.ascontiguousarray(g).tobytes()


def test_bad_magic():
    data = bytearray(encode_grid(np.zeros((2, 2))))
    data[:4] = b"XXXX"
    with pytest.raises(MalformedHeaderError):
        decode_grid(bytes(data))


def test_short_header():
    with pytest.raises(MalformedHeaderError):
        decode_grid(b"STGE\x01")


def test_unknown_version():
    data = struct.pack("<4sHII", b"STGE", 9, 1, 1) + b"\0" * 8
    with pytest.raises(UnsupportedVersionError):
        decode_grid(data)


def test_truncated():
    data = struct.pack("<4sHII", b"STGE", 1, 100, 100) + np.zeros(50).tobytes()
    with pytest.raises(TruncatedPayloadError):
        decode_grid(data)


def test_trailing():
    with pytest.raises(TrailingDataError):
        decode_grid(encode_grid(np.zeros((2, 2))) + b"\0")


def test_errors_distinct():
    kinds = {MalformedHeaderError, UnsupportedVersionError, TruncatedPayloadError, TrailingDataError}
    assert len(kinds) == 4


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        read_grid(tmp_path / "nope.stge")


def test_writer_rejects_non_finite(tmp_path):
    with pytest.raises(GridError):
        write_grid(tmp_path / "x.stge", np.array([[np.nan]]))


class TestPgm:
    def _pixels(self, tmp_path, grid, lo=-1.0, hi=1.0):
        export_pgm(grid, tmp_path / "a.pgm", lo, hi)
        return read_pgm(tmp_path / "a.pgm")

    def test_lo_hi(self, tmp_path):
        assert np.all(self._pixels(tmp_path, np.full((3, 4), -1.0)) == 0)
        assert np.all(self._pixels(tmp_path, np.full((3, 4), 1.0)) == 255)

    def test_midpoint_half_even(self, tmp_path):
        # 127.5 rounds to the even neighbour
        assert np.all(self._pixels(tmp_path, np.zeros((2, 2))) == 128)

    def test_clamp_and_header(self, tmp_path):
        data = pgm_bytes(np.array([[-5.0, 5.0, 0.0]]), -1.0, 1.0)
        assert data.startswith(b"P5\n3 1\n255\n")
        assert list(data[-3:]) == [0, 255, 128]

    def test_whitespace_valued_pixels(self, tmp_path):
        g = np.full((2, 2), 9 / 255 * 2 - 1)  # pixel value 9 is an ASCII tab
        assert np.all(self._pixels(tmp_path, g) == 9)

    def test_rejects_bad_range(self):
        with pytest.raises(ValueError):
            pgm_bytes(np.zeros((1, 1)), 1.0, 1.0)


def test_manifest_round_trip(tmp_path):
    recs = [{"index": i, "seed": 10 + i, "energy_in_mask": 0.5 * i} for i in range(3)]
    write_manifest(tmp_path / "m.jsonl", recs)
    assert read_manifest(tmp_path / "m.jsonl") == recs
    write_manifest(tmp_path / "e.jsonl", [])
    assert read_manifest(tmp_path / "e.jsonl") == []


def test_checkpoint_round_trip(tmp_path):
    sched = build_linear_schedule(20, 1e-3, 0.05)
    rng = RngStream(0)
    pair = BranchDenoisers(*(LinearDenoiser(sched, rng.normal(4), rng.normal((4, 3, 3)), rng.normal(4))
                             for _ in range(2)))
    save_checkpoint(tmp_path / "c.npz", pair, 1e-3, 0.05)
    back = load_checkpoint(tmp_path / "c.npz")
    assert np.array_equal(back.aware.schedule.beta, sched.beta)
    for a, b in zip(pair, back):
        for name in ("gain", "bias", "mask_gain"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
