"""Parity and continuity checks, QBER estimation, sampled entanglement verification
and the public-verification split of a record stream."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .photonics import BitRecordStream
from .qcore import make_rng

ROLES = "ABCD"
PARITY, CONTINUITY = "parity", "continuity"
DEFAULT_THRESHOLD = 0.95


class VerificationError(ValueError):
    pass


def parity_check(record: Sequence[int]) -> bool:
    """True when the four bits XOR to 0."""
    a, b, c, d = (int(x) for x in record)
    return (a ^ b ^ c ^ d) == 0


def continuity_check(record: Sequence[int]) -> bool:
    """True when the first two bits differ."""
    return (int(record[0]) ^ int(record[1])) == 1


def violations(records: np.ndarray, mode: str = PARITY) -> np.ndarray:
    """Boolean mask of records in the violation set ``L``."""
    r = np.asarray(records, dtype=np.uint8).reshape(-1, 4)
    if mode == PARITY:
        return (r[:, 0] ^ r[:, 1] ^ r[:, 2] ^ r[:, 3]) != 0
    if mode == CONTINUITY:
        return (r[:, 0] ^ r[:, 1]) != 1
    raise VerificationError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class VerificationReport:
    n_records: int
    n_violations: int
    qber: float
    passed: bool
    threshold: float
    mode: str = PARITY
    sampled_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64), repr=False)

    @property
    def pass_fraction(self) -> float:
        return 1.0 - self.qber

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_records": self.n_records,
            "n_violations": self.n_violations,
            "qber": self.qber,
            "pass_fraction": self.pass_fraction,
            "threshold": self.threshold,
            "pass": self.passed,
            "n_sampled": int(self.sampled_indices.size),
        }


def qber_estimate(
    stream: BitRecordStream | np.ndarray, mode: str = PARITY, threshold: float = DEFAULT_THRESHOLD
) -> VerificationReport:
    """``delta = |L| / n`` over the whole stream."""
    records = stream.records if isinstance(stream, BitRecordStream) else np.asarray(stream)
    n = len(records)
    if n == 0:
        raise VerificationError("cannot estimate QBER of an empty stream")
    bad = int(np.count_nonzero(violations(records, mode)))
    qber = bad / n
    return VerificationReport(n, bad, qber, (1 - qber) >= threshold, threshold, mode)


def entanglement_verification(
    stream: BitRecordStream,
    sample_fraction: float = 0.1,
    threshold: float = DEFAULT_THRESHOLD,
    seed: int = 0,
    mode: str = PARITY,
) -> tuple[VerificationReport, BitRecordStream]:
    """Check a uniformly drawn sample of records and drop it from the stream.

    The sample is ``ceil(sample_fraction * n)`` records drawn without
    replacement; the surviving stream keeps the remaining records in order.
    """
    n = len(stream)
    if not 0 < sample_fraction < 1:
        raise VerificationError("sample_fraction must be in (0, 1)")
    k = math.ceil(sample_fraction * n)
    if n == 0 or k >= n:
        raise VerificationError(f"a sample of {k} records would consume the whole stream of {n}")
    rng = make_rng(np.random.SeedSequence(seed, spawn_key=(0x5645,)))
    idx = np.sort(rng.choice(n, size=k, replace=False))
    rep = qber_estimate(stream.records[idx], mode, threshold)
    keep = np.ones(n, bool)
    keep[idx] = False
    report = VerificationReport(
        rep.n_records, rep.n_violations, rep.qber, rep.passed, threshold, mode, idx
    )
    return report, stream.subset(np.nonzero(keep)[0])


@dataclass(frozen=True)
class RolePartition:
    verify_role: str = "A"
    discard_role: str = "D"

    def __post_init__(self) -> None:
        for r in (self.verify_role, self.discard_role):
            if r not in ROLES:
                raise VerificationError(f"unknown role {r!r}")
        if self.verify_role == self.discard_role:
            raise VerificationError("verify and discard roles must differ")

    @property
    def keep_roles(self) -> tuple[str, str]:
        return tuple(r for r in ROLES if r not in (self.verify_role, self.discard_role))

    @classmethod
    def parse(cls, text: str) -> "RolePartition":
        """Parse ``"verify=A,discard=D"``."""
        fields = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, _, value = part.partition("=")
            fields[key.strip().lower()] = value.strip().upper()
        unknown = set(fields) - {"verify", "discard"}
        if unknown:
            raise VerificationError(f"unknown role keys {sorted(unknown)}")
        return cls(fields.get("verify", "A"), fields.get("discard", "D"))

    def __str__(self) -> str:
        return f"verify={self.verify_role},discard={self.discard_role}"


@dataclass(frozen=True)
class PublicVerification:
    public_bits: np.ndarray = field(repr=False)
    secure_bits: tuple[np.ndarray, np.ndarray] = field(repr=False)
    merged_secure_bits: np.ndarray = field(repr=False)
    roles: RolePartition
    battery: object = None  # randtests.TestReport

    @property
    def n_discarded(self) -> int:
        return len(self.public_bits)

    def as_dict(self) -> dict:
        out = {
            "roles": str(self.roles),
            "keep_roles": "".join(self.roles.keep_roles),
            "n_records": len(self.public_bits),
            "public_bits": int(self.public_bits.size),
            "discarded_bits": self.n_discarded,
            "secure_bits": [int(b.size) for b in self.secure_bits],
            "merged_secure_bits": int(self.merged_secure_bits.size),
        }
        if self.battery is not None:
            out["battery"] = self.battery.as_dict()
        return out


def interleave(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.empty(x.size + y.size, dtype=np.uint8)
    out[0::2] = x
    out[1::2] = y
    return out


def public_verification_pipeline(
    stream: BitRecordStream, roles: RolePartition = RolePartition(), run_battery: bool = True
) -> PublicVerification:
    """Split a stream into a public test string and two secret strings.

    The verify-role column is published (and tested when ``run_battery``), the
    discard-role column is dropped, and the two keep-role columns are returned
    along with their record-interleaved merge.
    """
    if len(stream) == 0:
        raise VerificationError("empty stream")
    public = np.array(stream.column(roles.verify_role))
    k1, k2 = (np.array(stream.column(r)) for r in roles.keep_roles)
    battery = None
    if run_battery:
        from .randtests import run_battery as _battery

        battery = _battery(public)
    return PublicVerification(public, (k1, k2), interleave(k1, k2), roles, battery)
