"""Public/private key one-time pad built on the four-bit parity relation.

Alice holds ``x_A`` (private) and ``x_C`` (public); Bob holds ``x_B`` and
``x_D``. Alice sends ``m xor x_A`` with ``x_C``; Bob recovers
``x_A = x_B xor x_C xor x_D`` and decrypts.
"""
from __future__ import annotations

import hashlib
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .photonics import DetectionEvents, SourceConfig, match_coincidences, simulate_detections
from .qcore import DensityMatrix, StateVector


class KeyMaterialError(ValueError):
    """Insufficient or inconsistent key material."""


class ProtocolError(RuntimeError):
    pass


class FormatError(ValueError):
    pass


def _bits(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.uint8).ravel()
    if a.size and a.max() > 1:
        raise ValueError("bits must be 0 or 1")
    return a


def bytes_to_bits(data: bytes) -> np.ndarray:
    """MSB-first unpacking."""
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def bits_to_bytes(bits) -> bytes:
    """MSB-first packing, zero-padded to a whole byte."""
    return np.packbits(_bits(bits)).tobytes()


@dataclass
class KeyBundle:
    """The four key strings of one run and a cursor over consumed positions.

    Positions are never reused: ``take`` advances the cursor and fails once the
    strings run out.
    """

    alice_private: np.ndarray = field(repr=False)
    alice_public: np.ndarray = field(repr=False)
    bob_private_1: np.ndarray = field(repr=False)
    bob_private_2: np.ndarray = field(repr=False)
    consumed: int = 0

    def __post_init__(self) -> None:
        arrs = [_bits(a) for a in (self.alice_private, self.alice_public, self.bob_private_1, self.bob_private_2)]
        if len({a.size for a in arrs}) != 1:
            raise KeyMaterialError("all four key strings must have equal length")
        for a in arrs:
            a.setflags(write=False)
        self.alice_private, self.alice_public, self.bob_private_1, self.bob_private_2 = arrs

    def __len__(self) -> int:
        return self.alice_private.size

    @property
    def remaining(self) -> int:
        return len(self) - self.consumed

    @property
    def total_key_bits(self) -> int:
        return 4 * len(self)

    def take(self, n: int) -> tuple[int, np.ndarray, np.ndarray]:
        """Reserve ``n`` positions; returns ``(offset, private, public)``."""
        if n > self.remaining:
            raise KeyMaterialError(f"need {n} key bits, {self.remaining} unused remain")
        off = self.consumed
        self.consumed += n
        return off, self.alice_private[off : off + n], self.alice_public[off : off + n]


def derive_keys(stream) -> KeyBundle:
    """Split records into ``x_A, x_C`` (Alice) and ``x_B, x_D`` (Bob)."""
    rec = stream.records if hasattr(stream, "records") else np.asarray(stream, dtype=np.uint8).reshape(-1, 4)
    if len(rec) == 0:
        raise KeyMaterialError("empty stream")
    return KeyBundle(rec[:, 0].copy(), rec[:, 2].copy(), rec[:, 1].copy(), rec[:, 3].copy())


@dataclass(frozen=True)
class Ciphertext:
    payload: np.ndarray = field(repr=False)
    public_key: np.ndarray = field(repr=False)
    offset: int = 0

    def __post_init__(self) -> None:
        p, k = _bits(self.payload), _bits(self.public_key)
        if p.size != k.size:
            raise KeyMaterialError("payload and public key lengths differ")
        object.__setattr__(self, "payload", p)
        object.__setattr__(self, "public_key", k)

    @property
    def length(self) -> int:
        return self.payload.size


def encrypt(message, bundle: KeyBundle) -> Ciphertext:
    m = _bits(message)
    off, priv, pub = bundle.take(m.size)
    return Ciphertext(m ^ priv, pub.copy(), off)


def recover_private(x_b, x_c, x_d) -> np.ndarray:
    """The sender's private bits from the receiver's two bits and the public bits."""
    b, c, d = _bits(x_b), _bits(x_c), _bits(x_d)
    if not b.size == c.size == d.size:
        raise KeyMaterialError(f"length mismatch: {b.size}, {c.size}, {d.size}")
    return b ^ c ^ d


def decrypt(ct: Ciphertext, bob_private_1, bob_private_2) -> np.ndarray:
    """Bob's private strings may be the segment matching ``ct`` or the full strings."""
    b1, b2 = _bits(bob_private_1), _bits(bob_private_2)
    if b1.size != b2.size:
        raise KeyMaterialError("Bob's key strings differ in length")
    if b1.size != ct.length:
        if b1.size < ct.offset + ct.length:
            raise KeyMaterialError("Bob's key strings do not cover the ciphertext")
        b1 = b1[ct.offset : ct.offset + ct.length]
        b2 = b2[ct.offset : ct.offset + ct.length]
    return ct.payload ^ recover_private(b1, ct.public_key, b2)


# ----------------------------------------------------------------- file format
#
#   magic   4 bytes  b"PVQC"
#   version 1 byte   1
#   bitlen  8 bytes  uint64 little-endian, message length in bits
#   payload ceil(bitlen/8) bytes, MSB-first
#   pubkey  ceil(bitlen/8) bytes, MSB-first

CT_MAGIC = b"PVQC"
CT_VERSION = 1
_CT_HEADER = struct.Struct("<4sBQ")


def encrypt_file(data: bytes, bundle: KeyBundle, bit_length: int | None = None) -> bytes:
    """Encrypt ``data`` byte-wise; consumes ``8 * len(data)`` key positions.

    ``bit_length`` records the true message length when the last byte is
    padding (it must lie within the last byte).
    """
    nbits = 8 * len(data)
    if bit_length is None:
        bit_length = nbits
    if not nbits - 8 < bit_length <= nbits and not (nbits == bit_length == 0):
        raise ValueError(f"bit_length {bit_length} does not fit {len(data)} bytes")
    if nbits > bundle.remaining:
        raise KeyMaterialError(f"file needs {nbits} key bits, {bundle.remaining} remain")
    bits = bytes_to_bits(data)
    if bit_length < nbits:
        bits = bits.copy()
        bits[bit_length:] = 0
    ct = encrypt(bits, bundle)
    return _CT_HEADER.pack(CT_MAGIC, CT_VERSION, bit_length) + bits_to_bytes(ct.payload) + bits_to_bytes(ct.public_key)


def parse_ciphertext(blob: bytes, offset: int = 0) -> tuple[Ciphertext, int]:
    if len(blob) < _CT_HEADER.size:
        raise FormatError("ciphertext too short")
    magic, version, bit_length = _CT_HEADER.unpack_from(blob)
    if magic != CT_MAGIC or version != CT_VERSION:
        raise FormatError("not a ciphertext file")
    nbytes = (bit_length + 7) // 8
    body = blob[_CT_HEADER.size :]
    if len(body) != 2 * nbytes:
        raise FormatError("ciphertext body length does not match header")
    payload = bytes_to_bits(body[:nbytes])
    pub = bytes_to_bits(body[nbytes:])
    return Ciphertext(payload, pub, offset), bit_length


def decrypt_file(blob: bytes, bob_private_1, bob_private_2, offset: int = 0) -> bytes:
    ct, bit_length = parse_ciphertext(blob, offset)
    bits = decrypt(ct, bob_private_1, bob_private_2)
    bits[bit_length:] = 0
    return bits_to_bytes(bits)


# ----------------------------------------------------------------- session frames
#
# Frame: uint32 little-endian length of (type + body), uint8 type, body.
#   TIMESTAMPS body: uint64 count, count x float64 little-endian seconds
#   CIPHERTEXT body: uint64 bit length, uint64 key offset, packed payload bits
#   PUBKEY     body: uint64 bit length, packed public-key bits
#   ACK        body: 32-byte SHA-256 digest of the sender's coincidence index set
#   FAIL       body: UTF-8 reason

TIMESTAMPS, CIPHERTEXT, PUBKEY, ACK, FAIL = 1, 2, 3, 4, 5
FRAME_NAMES = {TIMESTAMPS: "TIMESTAMPS", CIPHERTEXT: "CIPHERTEXT", PUBKEY: "PUBKEY", ACK: "ACK", FAIL: "FAIL"}


def encode_frame(kind: int, body: bytes) -> bytes:
    if kind not in FRAME_NAMES:
        raise FormatError(f"unknown frame type {kind}")
    return struct.pack("<IB", len(body) + 1, kind) + body


def decode_frame(frame: bytes) -> tuple[int, bytes]:
    if len(frame) < 5:
        raise FormatError("truncated frame")
    length, kind = struct.unpack_from("<IB", frame)
    if length != len(frame) - 4 or kind not in FRAME_NAMES:
        raise FormatError("malformed frame")
    return kind, frame[5:]


def _bits_body(bits: np.ndarray, *extra: int) -> bytes:
    return struct.pack("<Q" + "Q" * len(extra), bits.size, *extra) + bits_to_bytes(bits)


def _parse_bits_body(body: bytes, n_extra: int = 0) -> tuple[np.ndarray, tuple[int, ...]]:
    head = struct.Struct("<Q" + "Q" * n_extra)
    vals = head.unpack_from(body)
    n = vals[0]
    bits = bytes_to_bits(body[head.size :])[:n]
    if bits.size != n:
        raise FormatError("bit body shorter than declared")
    return bits, vals[1:]


def coincidence_digest(indices: np.ndarray) -> bytes:
    return hashlib.sha256(np.ascontiguousarray(indices, dtype="<i8").tobytes()).digest()


class Channel:
    """Ordered, reliable in-process transport that records every frame."""

    def __init__(self) -> None:
        self.transcript: list[tuple[str, bytes]] = []
        self._queues: dict[str, deque[bytes]] = {}

    def send(self, sender: str, receiver: str, frame: bytes) -> None:
        self.transcript.append((sender, frame))
        self._queues.setdefault(receiver, deque()).append(frame)

    def recv(self, receiver: str) -> bytes:
        q = self._queues.get(receiver)
        if not q:
            raise ProtocolError(f"{receiver} expected a frame but none is queued")
        return q.popleft()


@dataclass
class Endpoint:
    """One party's local view: its detection events and its coincidence window."""

    name: str
    events: DetectionEvents
    window: float
    coincidences: np.ndarray | None = None

    def key_bits(self) -> tuple[np.ndarray, np.ndarray]:
        """``(polarization bits, path bits)`` at this party's coincident detections."""
        det = self.events.detectors[self.coincidences]
        return (det >> 1).astype(np.uint8), (det & 1).astype(np.uint8)


@dataclass(frozen=True)
class Transcript:
    frames: tuple[tuple[str, bytes], ...]
    ok: bool
    message: np.ndarray | None = field(default=None, repr=False)
    reason: str = ""

    def decoded(self) -> list[tuple[str, str, bytes]]:
        return [(who, FRAME_NAMES[decode_frame(f)[0]], decode_frame(f)[1]) for who, f in self.frames]

    def frame_bits(self, kind: int) -> np.ndarray:
        """All bit payloads of ``kind`` frames, concatenated."""
        out = []
        for _, f in self.frames:
            k, body = decode_frame(f)
            if k == kind:
                out.append(_parse_bits_body(body, 1 if kind == CIPHERTEXT else 0)[0])
        return np.concatenate(out) if out else np.zeros(0, np.uint8)


def make_endpoints(
    cfg: SourceConfig,
    state4: StateVector | DensityMatrix,
    alice_window: float | None = None,
    bob_window: float | None = None,
) -> tuple[Endpoint, Endpoint]:
    alice, bob = simulate_detections(cfg, state4)
    return (
        Endpoint("alice", alice, alice_window or cfg.coincidence_window),
        Endpoint("bob", bob, bob_window or cfg.coincidence_window),
    )


def session_run(
    alice: Endpoint,
    bob: Endpoint,
    channel: Channel,
    message,
    sender: str = "alice",
) -> Transcript:
    """Run the key exchange and one encrypted transfer over ``channel``.

    1. Both sides send their timestamps.
    2. Each side matches coincidences locally and sends a digest of the index set.
    3. On agreement the sender encrypts with its polarization bits as private key
       and sends the ciphertext and its path bits as public key.
    4. The receiver recovers the private bits from the parity relation, decrypts
       and acknowledges.
    A digest mismatch sends FAIL and no ciphertext is emitted.
    """
    m = _bits(message)
    if sender not in ("alice", "bob"):
        raise ValueError("sender must be 'alice' or 'bob'")
    tx, rx = (alice, bob) if sender == "alice" else (bob, alice)

    for me, other in ((alice, bob), (bob, alice)):
        ts = np.ascontiguousarray(me.events.timestamps, dtype="<f8")
        channel.send(me.name, other.name, encode_frame(TIMESTAMPS, struct.pack("<Q", ts.size) + ts.tobytes()))

    digests: dict[str, bytes] = {}
    for me in (alice, bob):
        kind, body = decode_frame(channel.recv(me.name))
        if kind != TIMESTAMPS:
            raise ProtocolError("expected TIMESTAMPS")
        (count,) = struct.unpack_from("<Q", body)
        theirs = np.frombuffer(body[8:], dtype="<f8", count=count)
        if me.name == "alice":
            ia, ib = match_coincidences(me.events.timestamps, theirs, me.window)
            me.coincidences = ia
        else:
            ia, ib = match_coincidences(theirs, me.events.timestamps, me.window)
            me.coincidences = ib
        digests[me.name] = coincidence_digest(np.stack([ia, ib], axis=1))

    for me, other in ((alice, bob), (bob, alice)):
        channel.send(me.name, other.name, encode_frame(ACK, digests[me.name]))
    for me, other in ((alice, bob), (bob, alice)):
        kind, body = decode_frame(channel.recv(me.name))
        if kind != ACK:
            raise ProtocolError("expected ACK")
        if body != digests[me.name]:
            reason = "coincidence sets differ between the two sides"
            channel.send(rx.name, tx.name, encode_frame(FAIL, reason.encode()))
            return Transcript(tuple(channel.transcript), False, None, reason)

    priv, pub = tx.key_bits()
    bundle_len = priv.size
    if m.size > bundle_len:
        reason = f"message needs {m.size} key bits, only {bundle_len} coincidences"
        channel.send(tx.name, rx.name, encode_frame(FAIL, reason.encode()))
        return Transcript(tuple(channel.transcript), False, None, reason)
    payload = m ^ priv[: m.size]
    channel.send(tx.name, rx.name, encode_frame(CIPHERTEXT, _bits_body(payload, 0)))
    channel.send(tx.name, rx.name, encode_frame(PUBKEY, _bits_body(pub[: m.size])))

    kind, body = decode_frame(channel.recv(rx.name))
    if kind != CIPHERTEXT:
        raise ProtocolError("expected CIPHERTEXT")
    got_payload, (offset,) = _parse_bits_body(body, 1)
    kind, body = decode_frame(channel.recv(rx.name))
    if kind != PUBKEY:
        raise ProtocolError("expected PUBKEY")
    got_pub, _ = _parse_bits_body(body)
    own_pol, own_path = rx.key_bits()
    n = got_payload.size
    recovered = recover_private(own_pol[offset : offset + n], got_pub, own_path[offset : offset + n])
    plain = got_payload ^ recovered
    channel.send(rx.name, tx.name, encode_frame(ACK, hashlib.sha256(bits_to_bytes(plain)).digest()))
    return Transcript(tuple(channel.transcript), True, plain)
