import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvqrng import bitio
from pvqrng.photonics import BitRecordStream


def stream_from(indices, with_times):
    idx = np.asarray(indices, dtype=int)
    ts = np.arange(idx.size, dtype=float) * 1e-6 if with_times else None
    return BitRecordStream.from_indices(idx, ts)


class TestRecords:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 15), max_size=300), st.booleans())
    def test_round_trip(self, indices, with_times):
        s = stream_from(indices, with_times)
        assert bitio.decode_records(bitio.encode_records(s)) == s

    def test_layout(self):
        blob = bitio.encode_records(BitRecordStream(np.array([[1, 0, 0, 1], [0, 1, 1, 0], [1, 1, 1, 1]])))
        assert blob[:4] == b"PVQ4" and blob[4] == 1
        assert int.from_bytes(blob[5:13], "little") == 3
        assert blob[13:15] == bytes([0x96, 0xF0])
        assert blob[15] == 0 and len(blob) == 16

    def test_timestamps_little_endian(self):
        s = BitRecordStream(np.zeros((1, 4), np.uint8), np.array([1.5]))
        blob = bitio.encode_records(s)
        assert blob[14] == 1
        assert np.frombuffer(blob[15:], "<f8")[0] == 1.5

    def test_file(self, tmp_path):
        s = stream_from(range(16), True)
        bitio.write_records(tmp_path / "r.pvq4", s)
        assert bitio.read_records(tmp_path / "r.pvq4") == s

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda b: b[:5],
            lambda b: b"XXXX" + b[4:],
            lambda b: b[:4] + b"\x02" + b[5:],
            lambda b: b[:-1],
            lambda b: b + b"\x00",
            lambda b: b[:15] + b"\x07" + b[16:],
        ],
        ids=["short", "magic", "version", "truncated", "trailing", "flag"],
    )
    def test_malformed(self, mutate):
        blob = bitio.encode_records(stream_from([1, 2, 3], False))
        with pytest.raises(bitio.FormatError):
            bitio.decode_records(mutate(blob))

    def test_decreasing_times_rejected(self):
        blob = bytearray(bitio.encode_records(BitRecordStream(np.zeros((2, 4), np.uint8), np.array([0.0, 1.0]))))
        blob[-8:] = np.array([-1.0], "<f8").tobytes()
        with pytest.raises(bitio.FormatError):
            bitio.decode_records(bytes(blob))


class TestBits:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 1), max_size=200))
    def test_round_trip(self, bits):
        out = bitio.decode_bits(bitio.encode_bits(bits))
        assert out.tolist() == bits

    def test_layout(self):
        blob = bitio.encode_bits([1, 0, 1, 1, 0, 0, 0, 0, 1])
        assert blob[:4] == b"PVQ1"
        assert int.from_bytes(blob[4:12], "little") == 9
        assert blob[12:] == bytes([0xB0, 0x80])

    def test_rejects_non_bits(self):
        with pytest.raises(ValueError):
            bitio.encode_bits([0, 2])

    @pytest.mark.parametrize("blob", [b"PVQ1", b"PVQ4" + bytes(8), b"PVQ1" + (9).to_bytes(8, "little") + b"\x00"])
    def test_malformed(self, blob):
        with pytest.raises(bitio.FormatError):
            bitio.decode_bits(blob)
