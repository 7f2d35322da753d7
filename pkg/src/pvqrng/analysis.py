"""CHSH S-value, two-photon visibility and the three noise sweeps."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circuits import prepare_psi_abcd
from .noise import NoiseConfig, depolarize, four_qubit_state, hwp_rotated_pair, nonmaximal_pair
from .photonics import SourceConfig, polarizer_postselect, polarizer_keep_probability, sample_records
from .qcore import DensityMatrix, StateVector, as_density
from .randtests import run_battery
from .verify import violations

SQRT2 = math.sqrt(2)
TSIRELSON = 2 * SQRT2
GRID_STEP = math.radians(0.5)
_INVPHI = (math.sqrt(5) - 1) / 2


def analyzer_ket(theta: float) -> np.ndarray:
    """``cos(t)|H> + sin(t)|V>``."""
    return np.array([math.cos(theta), math.sin(theta)], dtype=complex)


def _rho2(dm2: DensityMatrix | StateVector) -> np.ndarray:
    rho = as_density(dm2)
    if rho.n_qubits != 2:
        raise ValueError("expected a two-qubit state")
    return rho.entries


def projector_probability(dm2: DensityMatrix | StateVector, theta1: float, theta2: float) -> float:
    """``Tr(rho |t1 t2><t1 t2|)``."""
    v = np.kron(analyzer_ket(theta1), analyzer_ket(theta2))
    return float(np.real(v.conj() @ _rho2(dm2) @ v))


def _golden(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10) -> float:
    """Minimizer of a unimodal ``f`` on ``[lo, hi]``."""
    c, d = hi - _INVPHI * (hi - lo), lo + _INVPHI * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = f(d)
    x = (lo + hi) / 2
    return min((lo, hi, x), key=f)


def visibility(dm2: DensityMatrix | StateVector, theta1: float) -> float:
    """``(v_max - v_min) / (v_max + v_min)`` of the coincidence probability over ``theta2``.

    ``theta2`` runs over a 0.5 degree grid on ``[0, pi)``; each extremum is then
    refined by golden-section search within one grid step.
    """
    rho = _rho2(dm2)
    a = analyzer_ket(theta1)
    grid = np.arange(0.0, math.pi, GRID_STEP)
    kets = np.stack([np.cos(grid), np.sin(grid)], axis=1)
    vecs = np.einsum("i,gj->gij", a, kets).reshape(len(grid), 4)
    vals = np.real(np.einsum("gi,ij,gj->g", vecs.conj(), rho, vecs))

    def prob(t: float) -> float:
        return projector_probability(rho_dm, theta1, t)

    rho_dm = DensityMatrix(2, rho)
    t_min = grid[int(np.argmin(vals))]
    t_max = grid[int(np.argmax(vals))]
    v_min = prob(_golden(prob, t_min - GRID_STEP, t_min + GRID_STEP))
    v_max = prob(_golden(lambda t: -prob(t), t_max - GRID_STEP, t_max + GRID_STEP))
    v_min, v_max = min(v_min, vals.min()), max(v_max, vals.max())
    if v_max + v_min <= 0:
        raise ValueError("coincidence probability vanishes at every analyzer angle")
    return (v_max - v_min) / (v_max + v_min)


@dataclass(frozen=True)
class AnalyzerSettings:
    a: float
    a_prime: float
    b: float
    b_prime: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(x) for x in astuple(self)):
            raise ValueError("analyzer angles must be finite")


# Maximal violation for (|HV> + |VH>)/sqrt2, and for (|HV> - |VH>)/sqrt2 or
# (|HH> + |VV>)/sqrt2 respectively.
PSI_PLUS_SETTINGS = AnalyzerSettings(0.0, math.pi / 4, -math.pi / 8, -3 * math.pi / 8)
PSI_MINUS_SETTINGS = AnalyzerSettings(0.0, math.pi / 4, math.pi / 8, 3 * math.pi / 8)


def correlator(dm2: DensityMatrix | StateVector, a: float, b: float) -> float:
    h = math.pi / 2
    return (
        projector_probability(dm2, a, b)
        + projector_probability(dm2, a + h, b + h)
        - projector_probability(dm2, a, b + h)
        - projector_probability(dm2, a + h, b)
    )


def chsh_s(dm2: DensityMatrix | StateVector, settings: AnalyzerSettings = PSI_PLUS_SETTINGS) -> float:
    """``|E(a,b) - E(a,b') + E(a',b) + E(a',b')|``."""
    s = settings
    return abs(
        correlator(dm2, s.a, s.b)
        - correlator(dm2, s.a, s.b_prime)
        + correlator(dm2, s.a_prime, s.b)
        + correlator(dm2, s.a_prime, s.b_prime)
    )


def noisy_pair(p: float) -> DensityMatrix:
    """The maximally entangled source pair under depolarizing noise ``p``."""
    return depolarize(nonmaximal_pair(1 / SQRT2), p)


# ----------------------------------------------------------------- sweeps

CSV_HEADER = ("parameter", "S", "V", "pass_fraction", "bitrate", "tests_passed")


@dataclass(frozen=True)
class SweepRow:
    parameter: float
    S: float
    V: float
    pass_fraction: float
    bitrate: float
    tests_passed: int | None = None
    extra: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class SweepTable:
    kind: str
    rows: tuple[SweepRow, ...]

    def __post_init__(self) -> None:
        params = [r.parameter for r in self.rows]
        if any(b <= a for a, b in zip(params, params[1:])):
            raise ValueError("sweep parameters must be strictly increasing")

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(
                [repr(float(r.parameter)), repr(float(r.S)), repr(float(r.V)), repr(float(r.pass_fraction)),
                 repr(float(r.bitrate)), "" if r.tests_passed is None else r.tests_passed]
            )
        return buf.getvalue()


def nominal_secure_kbps(pump_power: float = 6.0) -> float:
    """Expected secure rate: two secret bits per coincidence, in kbit/s."""
    cfg = SourceConfig(pump_power=pump_power)
    return 2 * cfg.pair_rate * cfg.coincidence_efficiency / 1000


def _check_grid(grid: Sequence[float], lo: float, hi: float, name: str) -> list[float]:
    g = [float(x) for x in grid]
    if not g:
        raise ValueError(f"{name} grid is empty")
    if any(not lo - 1e-12 <= x <= hi + 1e-12 for x in g):
        raise ValueError(f"{name} grid must lie in [{lo}, {hi}]")
    if any(b <= a for a, b in zip(g, g[1:])):
        raise ValueError(f"{name} grid must be strictly increasing")
    return g


def _row_seed(seed: int, tag: int, i: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(tag, i)).generate_state(1)[0])


def _map(fn, items, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def sweep_depolarizing(
    p_grid: Sequence[float] = tuple(np.round(np.linspace(0, 1, 11), 10)),
    pump_power: float = 6.0,
    workers: int = 1,
) -> SweepTable:
    """Analytic rows for source depolarizing noise.

    The bit rate is the nominal secure rate times the fraction of records
    passing the parity check.
    """
    grid = _check_grid(p_grid, 0.0, 1.0, "p")
    nominal = nominal_secure_kbps(pump_power)

    def row(p: float) -> SweepRow:
        rho = noisy_pair(p)
        frac = 1 - p / 2
        return SweepRow(p, chsh_s(rho, PSI_PLUS_SETTINGS), visibility(rho, math.pi / 4), frac, nominal * frac)

    return SweepTable("depolarizing", tuple(_map(row, grid, workers)))


def hwp_chsh(theta_h: float) -> float:
    """S of the rotated pair at the settings fixed for ``theta_h = 0``."""
    return chsh_s(hwp_rotated_pair(theta_h), PSI_MINUS_SETTINGS)


def sweep_hwp(
    theta_grid: Sequence[float] = tuple(np.linspace(0, math.pi / 8, 9)),
    n_records: int = 100_000,
    seed: int = 0,
    pump_power: float = 6.0,
    run_tests: bool = False,
    workers: int = 1,
) -> SweepTable:
    """S at fixed settings versus HWP angle, with sampled parity statistics.

    The sampled records come from the four-qubit state built from the source
    with a HWP deviation of ``theta`` on Bob's photon. With ``run_tests`` the
    battery runs on Alice's polarization column.
    """
    grid = _check_grid(theta_grid, 0.0, math.pi / 8, "theta")
    nominal = nominal_secure_kbps(pump_power)

    def row(item: tuple[int, float]) -> SweepRow:
        i, t = item
        rho2 = as_density(hwp_rotated_pair(t))
        stream = sample_records(four_qubit_state(NoiseConfig(theta_h=t)), n_records, _row_seed(seed, 0x4857, i))
        frac = 1 - float(np.count_nonzero(violations(stream.records))) / n_records
        tests = run_battery(stream.column("A")).n_passed if run_tests else None
        bias = tuple(float(stream.records[:, k].mean()) for k in range(4))
        return SweepRow(t, chsh_s(rho2, PSI_MINUS_SETTINGS), visibility(rho2, math.pi / 4), frac,
                        nominal * frac, tests, {"column_means": bias})

    return SweepTable("hwp", tuple(_map(row, list(enumerate(grid)), workers)))


def sweep_polarizer(
    theta_grid: Sequence[float] = tuple(np.linspace(0, math.pi / 2, 7)),
    n_bits: int = 1_000_000,
    seed: int = 0,
    pump_power: float = 6.0,
    workers: int = 1,
) -> SweepTable:
    """Bit rate, column bias and battery results versus polarizer angle.

    Ideal records pass through the polarizer post-selection; the battery runs
    on the first ``n_bits`` surviving bits of Bob's polarization column, which
    is the column the polarizer biases. S and V are those of the ideal pair.
    """
    grid = _check_grid(theta_grid, 0.0, math.pi / 2, "theta")
    nominal = nominal_secure_kbps(pump_power)
    state = prepare_psi_abcd()
    pair = noisy_pair(0.0)
    s_ideal, v_ideal = chsh_s(pair), visibility(pair, math.pi / 4)

    def row(item: tuple[int, float]) -> SweepRow:
        i, t = item
        expected_keep = 0.5 + 0.5 * polarizer_keep_probability(t)
        n_raw = math.ceil(1.01 * n_bits / expected_keep) + 1000
        raw = sample_records(state, n_raw, _row_seed(seed, 0x504F, i))
        kept = polarizer_postselect(raw, t, _row_seed(seed, 0x4B50, i))
        frac = len(kept) / n_raw
        bits = kept.column("B")[:n_bits]
        report = run_battery(bits)
        bias = tuple(float(kept.records[:, k].mean()) for k in range(4))
        passing = 1 - float(np.count_nonzero(violations(kept.records))) / len(kept)
        return SweepRow(t, s_ideal, v_ideal, passing, nominal * frac, report.n_passed,
                        {"column_means": bias, "kept_fraction": frac, "n_tested": int(bits.size)})

    return SweepTable("polarizer", tuple(_map(row, list(enumerate(grid)), workers)))


SWEEPS = {"depolarizing": sweep_depolarizing, "hwp": sweep_hwp, "polarizer": sweep_polarizer}
