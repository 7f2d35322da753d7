"""The four-qubit states used by the protocols, as amplitude lists and as gate circuits."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .qcore import (
    CNOT,
    Gate,
    H,
    QuantumError,
    StateVector,
    X,
    apply_gates,
    embed,
    tensor,
)

A, B, C, D = 0, 1, 2, 3
_AMP = 1 / (2 * np.sqrt(2))

# Even-parity kets in the order their phases appear in the general parity state.
PARITY_KETS = ("0011", "0101", "0110", "1001", "1010", "1100", "1111")

_BELL = {
    "phi+": ("00", "11", +1),
    "phi-": ("00", "11", -1),
    "psi+": ("01", "10", +1),
    "psi-": ("01", "10", -1),
}


def _from_terms(n: int, terms: dict[str, complex], scale: float) -> StateVector:
    amps = np.zeros(2**n, dtype=complex)
    for label, c in terms.items():
        amps[int(label, 2)] = c * scale
    return StateVector(n, amps)


def bell_state(kind: str) -> StateVector:
    """One of ``"phi+"``, ``"phi-"``, ``"psi+"``, ``"psi-"``."""
    try:
        first, second, sign = _BELL[kind.lower()]
    except KeyError:
        raise QuantumError(f"unknown Bell state {kind!r}") from None
    return _from_terms(2, {first: 1, second: sign}, 1 / np.sqrt(2))


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple[Gate, ...]
    initial_state: StateVector = field(repr=False)

    def __post_init__(self) -> None:
        if self.initial_state.n_qubits != self.n_qubits:
            raise QuantumError("initial state size does not match circuit")
        for g in self.gates:
            if any(not 0 <= t < self.n_qubits for t in g.targets):
                raise QuantumError(f"gate {g.name} targets {g.targets} out of range")
        object.__setattr__(self, "gates", tuple(self.gates))

    def run(self) -> StateVector:
        return apply_gates(self.initial_state, self.gates)


def circuit_unitary(c: Circuit | Sequence[Gate], n_qubits: int | None = None) -> np.ndarray:
    """Product of the embedded gate matrices, first gate rightmost."""
    gates = c.gates if isinstance(c, Circuit) else tuple(c)
    n = c.n_qubits if isinstance(c, Circuit) else n_qubits
    if n is None:
        raise QuantumError("n_qubits is required for a bare gate list")
    u = np.eye(2**n, dtype=complex)
    for g in gates:
        if not g.unitary:
            raise QuantumError(f"{g.name} is not unitary")
        u = embed(g, n) @ u
    return u


# Polarization qubit A is flipped by a HWP at 45 deg in C's |0> path, B by one in D's |1> path.
HWP_FLIPS: tuple[Gate, ...] = (X(C), CNOT(C, A), X(C), CNOT(D, B))

OPTICAL_GATES: tuple[Gate, ...] = (
    CNOT(A, C),  # PBS2 on Alice's photon
    CNOT(B, D),  # PBS3 on Bob's photon
    H(C),  # 50:50 BS on Alice's paths
    H(D),  # 50:50 BS on Bob's paths
) + HWP_FLIPS

VERIFICATION_GATES: tuple[Gate, ...] = OPTICAL_GATES[:4]

UNIFORM_PARITY_GATES: tuple[Gate, ...] = (H(A), CNOT(A, D), H(B), CNOT(B, D), H(C), CNOT(C, D))


def source_input() -> StateVector:
    """``|Psi+>_AB |00>_CD``."""
    return tensor(bell_state("psi+"), StateVector.basis("00"))


def optical_circuit() -> Circuit:
    return Circuit(4, OPTICAL_GATES, source_input())


def verification_circuit() -> Circuit:
    return Circuit(4, VERIFICATION_GATES, source_input())


def uniform_parity_circuit() -> Circuit:
    return Circuit(4, UNIFORM_PARITY_GATES, StateVector.basis("0000"))


def prepare_psi_abcd() -> StateVector:
    return _from_terms(
        4,
        {
            "0000": 1, "0101": 1, "0110": 1, "0011": -1,
            "1100": 1, "1001": -1, "1010": -1, "1111": -1,
        },
        _AMP,
    )


def prepare_psi_abcd_optical() -> StateVector:
    return optical_circuit().run()


def prepare_phi_abcd() -> StateVector:
    return _from_terms(
        4,
        {
            "1000": 1, "0100": 1, "1010": -1, "0110": 1,
            "1001": 1, "0101": -1, "1011": -1, "0111": -1,
        },
        _AMP,
    )


def prepare_parity_state_appA() -> StateVector:
    return _from_terms(4, {k: 1 for k in ("0000",) + PARITY_KETS}, _AMP)


def prepare_general_phi4(phases: Sequence[float], duplicate_alpha1: bool = False) -> StateVector:
    """Even-parity state with equal weights and a free phase on each ket but ``|0000>``.

    ``phases[k]`` multiplies ``PARITY_KETS[k]``. With ``duplicate_alpha1`` the
    first phase is also used for ``|1100>`` and ``phases[5]`` is ignored, which
    is the literal published form of the general state.
    """
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (7,) or not np.all(np.isfinite(phases)):
        raise QuantumError("expected seven finite phases")
    if duplicate_alpha1:
        phases = phases.copy()
        phases[5] = phases[0]
    terms = {"0000": 1.0 + 0j}
    terms.update({k: np.exp(1j * a) for k, a in zip(PARITY_KETS, phases)})
    return _from_terms(4, terms, _AMP)


PREPARATIONS = {
    "psi": prepare_psi_abcd,
    "phi": prepare_phi_abcd,
    "uniform": prepare_parity_state_appA,
}
