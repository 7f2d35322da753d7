import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvqrng import keyproto as kp
from pvqrng.circuits import prepare_psi_abcd
from pvqrng.noise import NoiseConfig, four_qubit_state
from pvqrng.photonics import BitRecordStream, SourceConfig, sample_records
from pvqrng.randtests import conditional_entropy, mutual_information, shannon_entropy

PSI = prepare_psi_abcd()


def ideal_bundle(n, seed=0):
    return kp.derive_keys(sample_records(PSI, n, seed=seed))


class TestDeriveKeys:
    def test_column_split(self):
        b = kp.derive_keys(BitRecordStream(np.array([[0, 1, 1, 0], [1, 0, 0, 1]])))
        np.testing.assert_array_equal(b.alice_private, [0, 1])
        np.testing.assert_array_equal(b.bob_private_1, [1, 0])
        np.testing.assert_array_equal(b.alice_public, [1, 0])
        np.testing.assert_array_equal(b.bob_private_2, [0, 1])

    @pytest.mark.parametrize("bits,total", [(42_818, 171_272), (306_916, 1_227_664)])
    def test_key_accounting(self, bits, total):
        b = kp.derive_keys(np.zeros((bits, 4), dtype=np.uint8))
        assert len(b) == bits and b.total_key_bits == total

    def test_parity_at_every_index(self):
        b = ideal_bundle(10_000)
        assert not np.any(b.alice_private ^ b.alice_public ^ b.bob_private_1 ^ b.bob_private_2)

    def test_empty(self):
        with pytest.raises(kp.KeyMaterialError):
            kp.derive_keys(np.zeros((0, 4)))

    def test_unequal_lengths(self):
        with pytest.raises(kp.KeyMaterialError):
            kp.KeyBundle([0, 1], [0], [0, 1], [1, 0])


class TestEncrypt:
    def test_single_bit(self):
        b = kp.KeyBundle([0], [0], [0], [0])
        assert kp.encrypt([0], b).payload.tolist() == [0]

    def test_xor(self):
        b = kp.KeyBundle([0, 1, 1, 0], [1, 1, 1, 1], [0, 0, 0, 0], [1, 0, 0, 1])
        ct = kp.encrypt([1, 0, 1, 1], b)
        assert ct.payload.tolist() == [1, 1, 0, 1]
        assert ct.public_key.tolist() == [1, 1, 1, 1]
        assert ct.length == 4

    def test_no_reuse(self):
        b = ideal_bundle(100)
        kp.encrypt(np.zeros(60, np.uint8), b)
        with pytest.raises(kp.KeyMaterialError):
            kp.encrypt(np.zeros(41, np.uint8), b)
        ct = kp.encrypt(np.zeros(40, np.uint8), b)
        assert ct.offset == 60 and b.remaining == 0

    def test_too_long(self):
        with pytest.raises(kp.KeyMaterialError):
            kp.encrypt(np.zeros(11, np.uint8), ideal_bundle(10))

    def test_payload_hides_message(self):
        n = 1_000_000
        rng = np.random.default_rng(0)
        m = rng.integers(0, 2, n)
        ct = kp.encrypt(m, ideal_bundle(n, seed=1))
        assert mutual_information(ct.payload, m) < 1e-3


class TestRecover:
    def test_zero(self):
        assert kp.recover_private([0], [0], [0]).tolist() == [0]

    def test_table_row(self):
        assert kp.recover_private([1], [0], [1]).tolist() == [0]

    def test_all_ideal_patterns(self):
        for a, b, c, d in {tuple(r) for r in sample_records(PSI, 2000, seed=0).records.tolist()}:
            assert kp.recover_private([b], [c], [d]).tolist() == [a]

    def test_length_mismatch(self):
        with pytest.raises(kp.KeyMaterialError):
            kp.recover_private([0, 1], [0], [1])


class TestDecrypt:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 100_000), st.integers(0, 2**32 - 1))
    def test_round_trip(self, n, seed):
        m = np.random.default_rng(seed).integers(0, 2, n)
        b = ideal_bundle(max(n, 1), seed=seed % 1000)
        ct = kp.encrypt(m, b)
        np.testing.assert_array_equal(kp.decrypt(ct, b.bob_private_1, b.bob_private_2), m)

    def test_flipped_key_bit(self):
        b = ideal_bundle(64)
        m = np.zeros(64, np.uint8)
        ct = kp.encrypt(m, b)
        b1 = b.bob_private_1.copy()
        b1[17] ^= 1
        out = kp.decrypt(ct, b1, b.bob_private_2)
        assert np.nonzero(out)[0].tolist() == [17]

    def test_uses_offset_with_full_strings(self):
        b = ideal_bundle(100)
        kp.encrypt(np.ones(30, np.uint8), b)
        m = np.random.default_rng(1).integers(0, 2, 50)
        ct = kp.encrypt(m, b)
        np.testing.assert_array_equal(kp.decrypt(ct, b.bob_private_1, b.bob_private_2), m)

    def test_noisy_keys_error_rate(self):
        n = 1_000_000
        b = kp.derive_keys(sample_records(four_qubit_state(NoiseConfig(p=0.042)), n, seed=4))
        m = np.random.default_rng(5).integers(0, 2, n)
        out = kp.decrypt(kp.encrypt(m, b), b.bob_private_1, b.bob_private_2)
        ber = np.mean(out != m)
        assert abs(ber - 0.021) < 3 * math.sqrt(0.021 * 0.979 / n)

    def test_short_keys(self):
        b = ideal_bundle(10)
        ct = kp.encrypt(np.zeros(10, np.uint8), b)
        with pytest.raises(kp.KeyMaterialError):
            kp.decrypt(ct, b.bob_private_1[:5], b.bob_private_2[:5])
        with pytest.raises(kp.KeyMaterialError):
            kp.decrypt(ct, b.bob_private_1, b.bob_private_2[:5])


class TestFiles:
    @settings(max_examples=20, deadline=None)
    @given(st.binary(max_size=3000))
    def test_round_trip(self, data):
        b = ideal_bundle(8 * 3000 + 1)
        blob = kp.encrypt_file(data, b)
        assert kp.decrypt_file(blob, b.bob_private_1, b.bob_private_2) == data
        assert b.consumed == 8 * len(data)

    def test_unaligned_length(self):
        data = bytes(range(256)) * 20 + bytes(232) + b"\xc0"  # 5353 bytes, last 6 bits zero
        assert len(data) == 5353
        b = ideal_bundle(50_000)
        blob = kp.encrypt_file(data, b, bit_length=42_818)
        assert b.consumed == 42_824
        ct, bit_length = kp.parse_ciphertext(blob)
        assert bit_length == 42_818
        assert kp.decrypt_file(blob, b.bob_private_1, b.bob_private_2) == data

    def test_empty(self):
        b = ideal_bundle(8)
        blob = kp.encrypt_file(b"", b)
        assert b.consumed == 0
        assert kp.decrypt_file(blob, b.bob_private_1, b.bob_private_2) == b""

    def test_insufficient(self):
        with pytest.raises(kp.KeyMaterialError):
            kp.encrypt_file(b"abc", ideal_bundle(23))

    def test_bad_bit_length(self):
        with pytest.raises(ValueError):
            kp.encrypt_file(b"ab", ideal_bundle(100), bit_length=5)

    def test_layout(self):
        b = ideal_bundle(16)
        blob = kp.encrypt_file(b"\x0f", b)
        assert blob[:4] == b"PVQC" and blob[4] == 1
        assert int.from_bytes(blob[5:13], "little") == 8
        assert len(blob) == 13 + 2

    @pytest.mark.parametrize("blob", [b"", b"XXXX\x01" + bytes(8), b"PVQC\x01" + (16).to_bytes(8, "little") + b"\x00"])
    def test_malformed(self, blob):
        with pytest.raises(kp.FormatError):
            kp.decrypt_file(blob, np.zeros(16), np.zeros(16))


class TestFrames:
    def test_round_trip(self):
        f = kp.encode_frame(kp.ACK, b"abc")
        assert f[:4] == (4).to_bytes(4, "little") and f[4] == kp.ACK
        assert kp.decode_frame(f) == (kp.ACK, b"abc")

    @pytest.mark.parametrize("frame", [b"\x01", b"\x05\x00\x00\x00\x01abc", b"\x01\x00\x00\x00\x09"])
    def test_malformed(self, frame):
        with pytest.raises(kp.FormatError):
            kp.decode_frame(frame)


def endpoints(seed=0, duration=0.2, **kw):
    cfg = SourceConfig(pump_power=6, duration=duration, seed=seed, accidental_rate=kw.pop("accidental_rate", 0))
    return kp.make_endpoints(cfg, PSI, **kw)


class TestSession:
    def test_loopback_ideal(self):
        a, b = endpoints()
        m = np.random.default_rng(0).integers(0, 2, 1000)
        t = kp.session_run(a, b, kp.Channel(), m)
        assert t.ok
        np.testing.assert_array_equal(t.message, m)
        assert [k for _, k, _ in t.decoded()] == ["TIMESTAMPS", "TIMESTAMPS", "ACK", "ACK", "CIPHERTEXT", "PUBKEY", "ACK"]
        np.testing.assert_array_equal(a.coincidences, b.coincidences)

    def test_bob_sends(self):
        a, b = endpoints(seed=1)
        m = np.random.default_rng(1).integers(0, 2, 1000)
        t = kp.session_run(a, b, kp.Channel(), m, sender="bob")
        assert t.ok
        np.testing.assert_array_equal(t.message, m)
        assert t.decoded()[4][0] == "bob"

    def test_window_mismatch_fails_without_ciphertext(self):
        a, b = endpoints(seed=2, accidental_rate=None, bob_window=0.3e-9)
        t = kp.session_run(a, b, kp.Channel(), np.ones(100, np.uint8))
        assert not t.ok and t.message is None
        kinds = [k for _, k, _ in t.decoded()]
        assert "CIPHERTEXT" not in kinds and "PUBKEY" not in kinds and kinds[-1] == "FAIL"

    def test_not_enough_coincidences(self):
        a, b = endpoints(duration=0.001)
        t = kp.session_run(a, b, kp.Channel(), np.ones(100_000, np.uint8))
        assert not t.ok and "coincidences" in t.reason

    def test_transcript_leak_audit(self):
        payload, pub, xa, xb, xd = [], [], [], [], []
        for seed in range(10):
            a, b = endpoints(seed=100 + seed, duration=0.1)
            m = np.random.default_rng(seed).integers(0, 2, 8000)
            t = kp.session_run(a, b, kp.Channel(), m)
            assert t.ok
            pol_a, path_a = a.key_bits()
            pol_b, path_b = b.key_bits()
            payload.append(t.frame_bits(kp.CIPHERTEXT))
            pub.append(t.frame_bits(kp.PUBKEY))
            xa.append(pol_a[:8000])
            xb.append(pol_b[:8000])
            xd.append(path_b[:8000])
        payload, pub = np.concatenate(payload), np.concatenate(pub)
        for key in (np.concatenate(xa), np.concatenate(xb), np.concatenate(xd)):
            leak = shannon_entropy(key) - conditional_entropy(key, payload, pub)
            assert leak < 1e-3

    def test_channel_underflow(self):
        with pytest.raises(kp.ProtocolError):
            kp.Channel().recv("alice")

    def test_bad_sender(self):
        a, b = endpoints(duration=0.01)
        with pytest.raises(ValueError):
            kp.session_run(a, b, kp.Channel(), [0], sender="eve")
