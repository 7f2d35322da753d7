"""NIST SP 800-22 style randomness tests plus entropy and mutual-information estimators.

The battery implements nine test statistics: frequency (monobit), block
frequency, runs, longest run of ones, cumulative sums (forward and reverse),
serial, approximate entropy and the discrete Fourier transform test. Each
function takes a 0/1 array and returns a p-value (or a pair of them).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erfc, gammaincc
from scipy.stats import norm

ALPHA = 0.01
OMITTED_TESTS = (
    "NonOverlappingTemplate",
    "OverlappingTemplate",
    "Universal",
    "LinearComplexity",
    "Rank",
    "RandomExcursions",
    "RandomExcursionsVariant",
)


class NotApplicable(ValueError):
    """The sequence is too short for a test's parameters."""


def _bits(bits) -> np.ndarray:
    a = np.asarray(bits, dtype=np.uint8).ravel()
    if a.size and a.max() > 1:
        raise ValueError("bits must be 0 or 1")
    return a


def from_string(s: str) -> np.ndarray:
    return np.frombuffer(s.encode(), dtype=np.uint8) - ord("0")


def _require(n: int, minimum: int, name: str) -> None:
    if n < minimum:
        raise NotApplicable(f"{name} needs at least {minimum} bits, got {n}")


# ------------------------------------------------------------------ test statistics

def frequency(bits) -> float:
    e = _bits(bits)
    n = e.size
    _require(n, 100, "frequency")
    s = 2 * int(e.sum()) - n
    return float(erfc(abs(s) / math.sqrt(n) / math.sqrt(2)))


def block_frequency(bits, M: int = 128) -> float:
    e = _bits(bits)
    n = e.size
    _require(n, 100, "block frequency")
    N = n // M
    if N < 1:
        raise NotApplicable("block frequency needs at least one full block")
    pi = e[: N * M].reshape(N, M).sum(axis=1) / M
    chi2 = 4 * M * float(np.sum((pi - 0.5) ** 2))
    return float(gammaincc(N / 2, chi2 / 2))


def runs(bits) -> float:
    e = _bits(bits)
    n = e.size
    _require(n, 100, "runs")
    pi = e.mean()
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return 0.0
    v_obs = 1 + int(np.count_nonzero(e[1:] != e[:-1]))
    num = abs(v_obs - 2 * n * pi * (1 - pi))
    den = 2 * math.sqrt(2 * n) * pi * (1 - pi)
    return float(erfc(num / den))


_LONGEST_RUN_TABLES = (
    # (min n, M, class lower bound, class upper bound, probabilities)
    (750_000, 10_000, 10, 16, (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
    (6_272, 128, 4, 9, (0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124)),
    (128, 8, 1, 4, (0.2148, 0.3672, 0.2305, 0.1875)),
)


def _longest_runs(blocks: np.ndarray) -> np.ndarray:
    """Longest run of ones in each row of a 0/1 matrix."""
    n_blocks, m = blocks.shape
    padded = np.zeros((n_blocks, m + 2), dtype=np.int8)
    padded[:, 1:-1] = blocks
    d = np.diff(padded, axis=1)
    rows_s, cols_s = np.nonzero(d == 1)
    _, cols_e = np.nonzero(d == -1)
    lengths = cols_e - cols_s
    best = np.zeros(n_blocks, dtype=np.int64)
    np.maximum.at(best, rows_s, lengths)
    return best


def longest_run(bits) -> float:
    e = _bits(bits)
    n = e.size
    _require(n, 128, "longest run")
    for min_n, M, lo, hi, probs in _LONGEST_RUN_TABLES:
        if n >= min_n:
            break
    N = n // M
    longest = _longest_runs(e[: N * M].reshape(N, M))
    v = np.bincount(np.clip(longest, lo, hi) - lo, minlength=hi - lo + 1)
    p = np.asarray(probs)
    chi2 = float(np.sum((v - N * p) ** 2 / (N * p)))
    return float(gammaincc((len(p) - 1) / 2, chi2 / 2))


def cumulative_sums(bits, reverse: bool = False) -> float:
    e = _bits(bits)
    n = e.size
    _require(n, 100, "cumulative sums")
    x = 2 * e.astype(np.int64) - 1
    if reverse:
        x = x[::-1]
    z = int(np.max(np.abs(np.cumsum(x))))
    if z == 0:
        return 1.0
    sqn = math.sqrt(n)

    def ctrunc(a: float) -> int:
        return int(a)  # truncation toward zero, as in the reference C code

    nz = n // z
    k = np.arange(ctrunc((-nz + 1) / 4), ctrunc((nz - 1) / 4) + 1)
    s1 = np.sum(norm.cdf((4 * k + 1) * z / sqn) - norm.cdf((4 * k - 1) * z / sqn))
    k = np.arange(ctrunc((-nz - 3) / 4), ctrunc((nz - 1) / 4) + 1)
    s2 = np.sum(norm.cdf((4 * k + 3) * z / sqn) - norm.cdf((4 * k + 1) * z / sqn))
    return float(min(1.0, max(0.0, 1 - s1 + s2)))


def _pattern_counts(e: np.ndarray, m: int) -> np.ndarray:
    """Counts of the ``2^m`` overlapping m-bit patterns, wrapping around the end."""
    n = e.size
    if m <= 0:
        return np.array([n])
    ext = np.concatenate([e, e[: m - 1]]).astype(np.int64)
    v = np.zeros(n, dtype=np.int64)
    for j in range(m):
        v = (v << 1) | ext[j : j + n]
    return np.bincount(v, minlength=1 << m)


def _psi2(e: np.ndarray, m: int) -> float:
    if m <= 0:
        return 0.0
    n = e.size
    c = _pattern_counts(e, m).astype(np.float64)
    return float((1 << m) / n * np.sum(c * c) - n)


def serial(bits, m: int = 16) -> tuple[float, float]:
    e = _bits(bits)
    if m < 2 or e.size == 0:
        raise NotApplicable("serial test needs m >= 2 and a nonempty sequence")
    psi_m, psi_m1, psi_m2 = _psi2(e, m), _psi2(e, m - 1), _psi2(e, m - 2)
    d1 = psi_m - psi_m1
    d2 = psi_m - 2 * psi_m1 + psi_m2
    return float(gammaincc(2 ** (m - 2), d1 / 2)), float(gammaincc(2 ** (m - 3), d2 / 2))


def _phi(e: np.ndarray, m: int) -> float:
    c = _pattern_counts(e, m) / e.size
    c = c[c > 0]
    return float(np.sum(c * np.log(c)))


def approximate_entropy(bits, m: int = 10) -> float:
    e = _bits(bits)
    n = e.size
    if m < 1 or n == 0:
        raise NotApplicable("approximate entropy needs m >= 1 and a nonempty sequence")
    apen = _phi(e, m) - _phi(e, m + 1)
    chi2 = 2 * n * (math.log(2) - apen)
    return float(gammaincc(2 ** (m - 1), chi2 / 2))


def spectral(bits) -> float:
    e = _bits(bits)
    n = e.size
    if n < 10:
        raise NotApplicable("spectral test needs at least 10 bits")
    x = 2 * e.astype(np.float64) - 1
    mod = np.abs(np.fft.rfft(x))[: n // 2]
    t = math.sqrt(math.log(1 / 0.05) * n)
    n0 = 0.95 * n / 2
    n1 = int(np.count_nonzero(mod < t))
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4)
    return float(erfc(abs(d) / math.sqrt(2)))


# ------------------------------------------------------------------ battery

@dataclass(frozen=True)
class TestResult:
    name: str
    p_value: float | None
    min_bits: int = 0

    __test__ = False  # not a pytest class

    @property
    def applicable(self) -> bool:
        return self.p_value is not None

    @property
    def passed(self) -> bool | None:
        return None if self.p_value is None else self.p_value >= ALPHA


@dataclass(frozen=True)
class TestReport:
    n_bits: int
    results: tuple[TestResult, ...]
    omitted: tuple[str, ...] = field(default=OMITTED_TESTS)

    __test__ = False

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.results if r.applicable)

    @property
    def n_passed(self) -> int:
        return sum(1 for r in self.results if r.passed)

    def __getitem__(self, name: str) -> TestResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {
            "n_bits": self.n_bits,
            "alpha": ALPHA,
            "all_pass": self.all_pass,
            "n_passed": self.n_passed,
            "tests": [
                {
                    "name": r.name,
                    "p_value": r.p_value,
                    "pass": r.passed,
                    "status": "pass" if r.passed else ("not_applicable" if r.p_value is None else "fail"),
                }
                for r in self.results
            ],
            "omitted": list(self.omitted),
        }


@dataclass(frozen=True)
class BatteryParams:
    block_frequency_m: int = 128
    serial_m: int = 16
    apen_m: int = 10


# name, minimum length, function returning one or two p-values
def _battery_tests(params: BatteryParams) -> list[tuple[tuple[str, ...], int, Callable]]:
    return [
        (("Frequency",), 100, frequency),
        (("BlockFrequency",), 100, lambda e: block_frequency(e, params.block_frequency_m)),
        (("Runs",), 100, runs),
        (("LongestRun",), 128, longest_run),
        (("CumulativeSums(forward)",), 100, lambda e: cumulative_sums(e, False)),
        (("CumulativeSums(reverse)",), 100, lambda e: cumulative_sums(e, True)),
        (("Serial(1)", "Serial(2)"), 2 ** (params.serial_m + 3), lambda e: serial(e, params.serial_m)),
        (("ApproximateEntropy",), 2 ** (params.apen_m + 6), lambda e: approximate_entropy(e, params.apen_m)),
        (("Spectral",), 1000, spectral),
    ]


def run_battery(bits, params: BatteryParams = BatteryParams()) -> TestReport:
    """Run every test; tests whose minimum length exceeds the input report ``p_value=None``.

    Minimum lengths follow the SP 800-22 recommendations: ``n >= 2^(m+3)`` for
    serial, ``n >= 2^(m+6)`` for approximate entropy, 1000 for the DFT test.
    """
    e = _bits(bits)
    results: list[TestResult] = []
    for names, min_bits, fn in _battery_tests(params):
        if e.size < min_bits:
            results.extend(TestResult(nm, None, min_bits) for nm in names)
            continue
        out = fn(e)
        ps = out if isinstance(out, tuple) else (out,)
        results.extend(TestResult(nm, float(p), min_bits) for nm, p in zip(names, ps))
    return TestReport(int(e.size), tuple(results))


# ------------------------------------------------------------------ information measures

def _entropy_of_counts(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def shannon_entropy(bits) -> float:
    """Empirical entropy in bits per symbol."""
    e = _bits(bits)
    if e.size == 0:
        raise ValueError("empty sequence")
    return _entropy_of_counts(np.bincount(e, minlength=2))


def joint_entropy(*columns) -> float:
    cols = [_bits(c) for c in columns]
    n = cols[0].size
    if n == 0 or any(c.size != n for c in cols):
        raise ValueError("columns must be nonempty and of equal length")
    code = np.zeros(n, dtype=np.int64)
    for c in cols:
        code = (code << 1) | c
    return _entropy_of_counts(np.bincount(code, minlength=1 << len(cols)))


def mutual_information(x, y) -> float:
    """Plug-in estimate from the empirical 2x2 joint distribution, in bits."""
    x, y = _bits(x), _bits(y)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size == 0:
        raise ValueError("empty sequence")
    return max(0.0, shannon_entropy(x) + shannon_entropy(y) - joint_entropy(x, y))


def conditional_entropy(target, *given) -> float:
    """``H(target | given...)`` from the empirical joint distribution."""
    return max(0.0, joint_entropy(*given, target) - joint_entropy(*given))
