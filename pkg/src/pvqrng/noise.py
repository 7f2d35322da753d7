"""Source-pair noise models and their propagation through the four-qubit circuit."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuits import OPTICAL_GATES, bell_state, circuit_unitary
from .qcore import (
    DensityMatrix,
    QuantumError,
    StateVector,
    apply_gate,
    as_density,
    evolve,
    project_renormalize,
    tensor,
    Gate,
    hwp_matrix,
)

_OPTICAL_U = circuit_unitary(OPTICAL_GATES, 4)
_PATH_VACUUM = DensityMatrix(2, np.diag([1, 0, 0, 0]))


@dataclass(frozen=True)
class NoiseConfig:
    p: float = 0.0
    alpha: float = 1 / math.sqrt(2)
    theta_h: float = 0.0
    theta_p: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.p <= 1:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0 <= self.theta_h <= math.pi / 8 + 1e-12:
            raise ValueError(f"theta_h must be in [0, pi/8], got {self.theta_h}")
        if not 0 <= self.theta_p <= math.pi / 2 + 1e-12:
            raise ValueError(f"theta_p must be in [0, pi/2], got {self.theta_p}")


def depolarize(state: StateVector | DensityMatrix, p: float) -> DensityMatrix:
    """``(1-p) rho + p I/d`` on any number of qubits."""
    if not 0 <= p <= 1:
        raise QuantumError(f"p must be in [0, 1], got {p}")
    rho = as_density(state)
    d = 2**rho.n_qubits
    return DensityMatrix(rho.n_qubits, (1 - p) * rho.entries + p * np.eye(d) / d)


def depolarize_pair(pure: StateVector, p: float) -> DensityMatrix:
    if pure.n_qubits != 2:
        raise QuantumError("depolarize_pair expects a two-qubit state")
    return depolarize(pure, p)


def nonmaximal_pair(alpha: float) -> StateVector:
    """``alpha|HV> + beta|VH>`` with ``beta = sqrt(1 - alpha^2)``."""
    if not 0 <= alpha <= 1:
        raise QuantumError(f"alpha must be in [0, 1], got {alpha}")
    beta = math.sqrt(max(0.0, 1 - alpha * alpha))
    return StateVector(2, np.array([0, alpha, beta, 0], dtype=complex))


def hwp_rotated_pair(theta_h: float) -> StateVector:
    """``cos(2t)|Psi-> + sin(2t)|Phi+>``, the source after a HWP at ``t`` on one photon."""
    if not -1e-12 <= theta_h <= math.pi / 8 + 1e-12:
        raise QuantumError(f"theta_h must be in [0, pi/8], got {theta_h}")
    c, s = math.cos(2 * theta_h), math.sin(2 * theta_h)
    amps = c * bell_state("psi-").amplitudes + s * bell_state("phi+").amplitudes
    return StateVector(2, amps / np.linalg.norm(amps))


def hwp_misalignment(theta_h: float, qubit: int = 1) -> Gate:
    """Deviation of a HWP at ``theta_h`` from one at 0, i.e. ``HWP(t) HWP(0)``.

    Identity at ``theta_h = 0``; a real rotation by ``2 theta_h`` otherwise.
    """
    return Gate(f"HWPdev({theta_h:g})", hwp_matrix(theta_h) @ hwp_matrix(0.0), (qubit,))


def source_state(cfg: NoiseConfig = NoiseConfig()) -> DensityMatrix:
    """Two-qubit source for ``cfg``: non-maximal pair, HWP deviation on B, then depolarizing.

    ``theta_p`` is ignored here; the polarizer acts at detection.
    """
    pure = nonmaximal_pair(cfg.alpha)
    if cfg.theta_h:
        pure = apply_gate(pure, hwp_misalignment(cfg.theta_h))
    return depolarize(pure, cfg.p)


def propagate_four_qubit(source: DensityMatrix | StateVector) -> DensityMatrix:
    """``U (rho (x) |00><00|) U^dag`` through the optical circuit."""
    rho = as_density(source)
    if rho.n_qubits != 2:
        raise QuantumError("source must be a two-qubit state")
    return evolve(tensor(rho, _PATH_VACUUM), _OPTICAL_U)


def four_qubit_state(cfg: NoiseConfig = NoiseConfig()) -> DensityMatrix:
    return propagate_four_qubit(source_state(cfg))


def qber_predicted(p: float) -> float:
    if not 0 <= p <= 1:
        raise ValueError(f"p must be in [0, 1], got {p}")
    return p / 2


def parity_violation_probability(dm4: DensityMatrix | StateVector) -> float:
    """Probability that a computational-basis record has odd parity."""
    probs = as_density(dm4).probabilities()
    odd = np.array([bin(k).count("1") % 2 for k in range(probs.size)], dtype=bool)
    return float(probs[odd].sum())


def post_measurement_states(
    dm4: DensityMatrix | StateVector,
    subsystem: int | tuple[int, ...],
    outcome: int | tuple[int, ...],
) -> DensityMatrix:
    """Normalized state of the other qubits after measuring ``subsystem``."""
    qubits = (subsystem,) if isinstance(subsystem, int) else tuple(subsystem)
    bits = (outcome,) if isinstance(outcome, int) else tuple(outcome)
    return project_renormalize(dm4, qubits, bits)


def theta3_state() -> StateVector:
    """BCD state left by ``x_A = 0`` on the ideal four-qubit state."""
    amps = np.zeros(8, dtype=complex)
    amps[[0b000, 0b110, 0b101]] = 0.5
    amps[0b011] = -0.5
    return StateVector(3, amps)


def closed_form_conditional_bcd(p: float) -> DensityMatrix:
    return depolarize(theta3_state(), p)


def closed_form_conditional_cd(p: float) -> DensityMatrix:
    return depolarize(bell_state("phi-"), p)
