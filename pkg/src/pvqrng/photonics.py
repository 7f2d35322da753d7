"""Photon-pair detection simulation, coincidence post-selection and rate accounting.

Detector numbering per side is ``2*polarization_bit + path_bit``: Alice's
detector carries ``(x_A, x_C)`` and Bob's carries ``(x_B, x_D)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .qcore import DensityMatrix, StateVector, as_density, index_to_bits, make_rng, sample_outcomes

PAIR_RATE_PER_MW = 16_400.0
COINCIDENCE_EFFICIENCY = 0.915
ACCIDENTAL_ANCHOR_RATE = 16.0
ACCIDENTAL_ANCHOR_MW = 0.15
DEFAULT_WINDOW = 1e-9

ALICE, BOB = "alice", "bob"


def scaled_accidental_rate(pump_power: float) -> float:
    """Accidental coincidences/s, quadratic in pump power through 16/s at 0.15 mW."""
    return ACCIDENTAL_ANCHOR_RATE * (pump_power / ACCIDENTAL_ANCHOR_MW) ** 2


@dataclass(frozen=True)
class SourceConfig:
    pump_power: float = 1.0
    duration: float = 1.0
    seed: int = 0
    pair_rate_per_mw: float = PAIR_RATE_PER_MW
    coincidence_efficiency: float = COINCIDENCE_EFFICIENCY
    accidental_rate: float | None = None
    coincidence_window: float = DEFAULT_WINDOW
    chunk_duration: float = 0.05

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.pump_power < 0 or self.pair_rate_per_mw < 0:
            raise ValueError("rates must be nonnegative")
        if not 0 < self.coincidence_efficiency <= 1:
            raise ValueError("coincidence_efficiency must be in (0, 1]")
        if self.accidental_rate is not None and self.accidental_rate < 0:
            raise ValueError("accidental_rate must be nonnegative")
        if self.coincidence_window <= 0:
            raise ValueError("coincidence_window must be positive")
        if self.chunk_duration <= 0:
            raise ValueError("chunk_duration must be positive")

    @property
    def pair_rate(self) -> float:
        return self.pump_power * self.pair_rate_per_mw

    @property
    def effective_accidental_rate(self) -> float:
        if self.accidental_rate is None:
            return scaled_accidental_rate(self.pump_power)
        return self.accidental_rate


@dataclass(frozen=True)
class DetectionEvents:
    """One side's detections, sorted by time.

    ``accidental`` flags events injected as uncorrelated background; real
    detectors cannot see it, it is kept for bookkeeping in tests.
    """

    side: str
    timestamps: np.ndarray = field(repr=False)
    detectors: np.ndarray = field(repr=False)
    accidental: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        for name in ("timestamps", "detectors", "accidental"):
            a = np.array(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class BitRecordStream:
    """Four-bit records ``(x_A, x_B, x_C, x_D)`` with optional timestamps."""

    records: np.ndarray = field(repr=False)
    timestamps: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        rec = np.array(self.records, dtype=np.uint8).reshape(-1, 4)
        if rec.size and rec.max() > 1:
            raise ValueError("record bits must be 0 or 1")
        rec.setflags(write=False)
        object.__setattr__(self, "records", rec)
        if self.timestamps is not None:
            ts = np.array(self.timestamps, dtype=np.float64)
            if ts.shape != (len(rec),):
                raise ValueError("timestamps must parallel records")
            if ts.size > 1 and np.any(np.diff(ts) < 0):
                raise ValueError("timestamps must be nondecreasing")
            ts.setflags(write=False)
            object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, role: str | int) -> np.ndarray:
        return self.records[:, role if isinstance(role, int) else "ABCD".index(role)]

    def subset(self, indices: np.ndarray) -> "BitRecordStream":
        ts = None if self.timestamps is None else self.timestamps[indices]
        return BitRecordStream(self.records[indices], ts)

    @classmethod
    def from_indices(cls, indices: np.ndarray, timestamps: np.ndarray | None = None) -> "BitRecordStream":
        return cls(index_to_bits(indices, 4), timestamps)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitRecordStream):
            return NotImplemented
        if not np.array_equal(self.records, other.records):
            return False
        if self.timestamps is None or other.timestamps is None:
            return self.timestamps is None and other.timestamps is None
        return np.array_equal(self.timestamps, other.timestamps)


def sample_records(state: StateVector | DensityMatrix, n: int, seed: int, workers: int = 1) -> BitRecordStream:
    """``n`` i.i.d. computational-basis records, without the timing layer."""
    return BitRecordStream.from_indices(sample_outcomes(state, n, seed, workers=workers))


def _simulate_chunk(cfg: SourceConfig, probs: np.ndarray, cdf: np.ndarray, i: int, t0: float, t1: float):
    rng = make_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
    span = t1 - t0
    n_pairs = rng.poisson(cfg.pair_rate * span)
    t_pairs = np.sort(rng.uniform(t0, t1, n_pairs))
    kept = rng.random(n_pairs) < cfg.coincidence_efficiency
    t_pairs = t_pairs[kept]
    outcome = np.searchsorted(cdf, rng.random(t_pairs.size), side="right")
    outcome = np.minimum(outcome, probs.size - 1)
    bits = index_to_bits(outcome, 4)
    a_det = 2 * bits[:, 0] + bits[:, 2]
    b_det = 2 * bits[:, 1] + bits[:, 3]

    n_acc = rng.poisson(cfg.effective_accidental_rate * span)
    t_acc_a = rng.uniform(t0, t1, n_acc)
    # Background pairs land anywhere inside the coincidence window.
    t_acc_b = np.clip(t_acc_a + rng.uniform(-1, 1, n_acc) * cfg.coincidence_window, 0.0, cfg.duration)
    acc_a = rng.integers(0, 4, n_acc)
    acc_b = rng.integers(0, 4, n_acc)
    return (
        np.concatenate([t_pairs, t_acc_a]),
        np.concatenate([a_det, acc_a]).astype(np.uint8),
        np.concatenate([t_pairs, t_acc_b]),
        np.concatenate([b_det, acc_b]).astype(np.uint8),
        np.concatenate([np.zeros(t_pairs.size, bool), np.ones(n_acc, bool)]),
    )


def simulate_detections(
    cfg: SourceConfig, state4: StateVector | DensityMatrix, workers: int = 1
) -> tuple[DetectionEvents, DetectionEvents]:
    """Alice's and Bob's detection events for one run of the source.

    Pairs arrive as a Poisson process at ``cfg.pair_rate``; each pair survives
    with ``coincidence_efficiency`` and carries one outcome sampled from
    ``state4``. Background coincidences with independent uniform detectors are
    added at ``cfg.effective_accidental_rate``. Time is cut into chunks of
    ``chunk_duration`` with per-chunk seeds, so ``workers`` does not change the
    output.
    """
    probs = as_density(state4).probabilities()
    probs = probs / probs.sum()
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    n_chunks = max(1, math.ceil(cfg.duration / cfg.chunk_duration - 1e-9))
    edges = [min(cfg.duration, i * cfg.chunk_duration) for i in range(n_chunks)] + [cfg.duration]
    jobs = [(i, edges[i], edges[i + 1]) for i in range(n_chunks)]

    def run(job):
        return _simulate_chunk(cfg, probs, cdf, *job)

    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]

    ta, da, tb, db, acc = (np.concatenate([p[k] for p in parts]) for k in range(5))
    oa = np.argsort(ta, kind="stable")
    ob = np.argsort(tb, kind="stable")
    return (
        DetectionEvents(ALICE, ta[oa], da[oa], acc[oa]),
        DetectionEvents(BOB, tb[ob], db[ob], acc[ob]),
    )


def match_coincidences(t_a: np.ndarray, t_b: np.ndarray, window: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy nearest-neighbour pairing of two sorted timestamp lists.

    Candidate pairs are each Alice event with its two nearest Bob events on
    either side, kept if ``|dt| <= window``; candidates are accepted in order of
    increasing ``|dt|`` (ties by Alice index) while both events are unused.
    Returns index arrays into ``t_a`` and ``t_b``, sorted by Alice index.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    t_a = np.asarray(t_a, dtype=np.float64)
    t_b = np.asarray(t_b, dtype=np.float64)
    if t_a.size == 0 or t_b.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    k = np.searchsorted(t_b, t_a)
    ia, ib = [], []
    for off in (-2, -1, 0, 1):
        j = k + off
        ok = (j >= 0) & (j < t_b.size)
        a_idx = np.nonzero(ok)[0]
        b_idx = j[ok]
        close = np.abs(t_b[b_idx] - t_a[a_idx]) <= window
        ia.append(a_idx[close])
        ib.append(b_idx[close])
    ia = np.concatenate(ia)
    ib = np.concatenate(ib)
    if ia.size == 0:
        return ia, ib
    dist = np.abs(t_b[ib] - t_a[ia])
    order = np.lexsort((ib, ia, dist))
    ia, ib = ia[order], ib[order]

    # Fast path: every event appears in at most one candidate.
    if np.unique(ia).size == ia.size and np.unique(ib).size == ib.size:
        sel = np.argsort(ia, kind="stable")
        return ia[sel], ib[sel]

    used_a = np.zeros(t_a.size, bool)
    used_b = np.zeros(t_b.size, bool)
    out_a, out_b = [], []
    for a, b in zip(ia.tolist(), ib.tolist()):
        if used_a[a] or used_b[b]:
            continue
        used_a[a] = used_b[b] = True
        out_a.append(a)
        out_b.append(b)
    out_a = np.asarray(out_a, np.int64)
    out_b = np.asarray(out_b, np.int64)
    sel = np.argsort(out_a, kind="stable")
    return out_a[sel], out_b[sel]


def records_from_detectors(a_det: np.ndarray, b_det: np.ndarray) -> np.ndarray:
    a_det = np.asarray(a_det, dtype=np.uint8)
    b_det = np.asarray(b_det, dtype=np.uint8)
    return np.stack([a_det >> 1, b_det >> 1, a_det & 1, b_det & 1], axis=1).astype(np.uint8)


def coincidence_postselect(alice: DetectionEvents, bob: DetectionEvents, window: float) -> BitRecordStream:
    ia, ib = match_coincidences(alice.timestamps, bob.timestamps, window)
    recs = records_from_detectors(alice.detectors[ia], bob.detectors[ib])
    ts = alice.timestamps[ia]
    return BitRecordStream(recs, ts)


def generate_stream(cfg: SourceConfig, state4: StateVector | DensityMatrix, workers: int = 1) -> BitRecordStream:
    alice, bob = simulate_detections(cfg, state4, workers=workers)
    return coincidence_postselect(alice, bob, cfg.coincidence_window)


def polarizer_keep_probability(theta_p: float) -> float:
    return math.cos(theta_p) ** 2


def polarizer_postselect(stream: BitRecordStream, theta_p: float, seed: int) -> BitRecordStream:
    """Polarizer in the transmitted (H) arm of Bob's PBS.

    Records with ``x_B = 0`` survive with probability ``cos^2(theta_p)``; the
    others always survive.
    """
    if not -1e-12 <= theta_p <= math.pi / 2 + 1e-12:
        raise ValueError(f"theta_p must be in [0, pi/2], got {theta_p}")
    keep_p = polarizer_keep_probability(theta_p)
    rng = make_rng(np.random.SeedSequence(seed, spawn_key=(0x504F4C,)))
    u = rng.random(len(stream))
    transmitted = stream.column("B") == 0
    keep = ~transmitted | (u < keep_p)
    return stream.subset(np.nonzero(keep)[0])


def port_pattern_probabilities(state4: StateVector | DensityMatrix, side: str = ALICE) -> dict[tuple[int, int], float]:
    """Probability of each ``(PBS port, BS port)`` pair on one side.

    The PBS port is the photon's polarization before the in-path HWPs:
    ``x_A xor (1 - x_C)`` for Alice (HWP in path 0), ``x_B xor x_D`` for Bob
    (HWP in path 1). The BS port is the path bit.
    """
    probs = as_density(state4).probabilities()
    bits = index_to_bits(np.arange(16), 4)
    if side == ALICE:
        pbs, bs = bits[:, 0] ^ bits[:, 2] ^ 1, bits[:, 2]
    elif side == BOB:
        pbs, bs = bits[:, 1] ^ bits[:, 3], bits[:, 3]
    else:
        raise ValueError(f"unknown side {side!r}")
    return {(i, j): float(probs[(pbs == i) & (bs == j)].sum()) for i in (0, 1) for j in (0, 1)}


@dataclass(frozen=True)
class RateReport:
    n_records: int
    duration: float
    coincidences_per_s: float
    collective_kbps: float
    per_string_kbps: float
    secure_kbps: float

    def as_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "duration_s": self.duration,
            "coincidences_per_s": self.coincidences_per_s,
            "collective_kbps": self.collective_kbps,
            "per_string_kbps": self.per_string_kbps,
            "secure_kbps": self.secure_kbps,
        }


def rate_summary(stream: BitRecordStream | int, duration: float) -> RateReport:
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = stream if isinstance(stream, int) else len(stream)
    c = n / duration
    per_string = c / 1000
    return RateReport(n, duration, c, 4 * per_string, per_string, 2 * per_string)
