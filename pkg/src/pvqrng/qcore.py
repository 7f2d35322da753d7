"""Dense linear algebra for pure states and density matrices on up to four qubits.

Qubit 0 is the leftmost label in a ket, so the basis index of ``|x_A x_B x_C x_D>``
is the integer whose binary digits are ``x_A x_B x_C x_D`` (A is the MSB).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_QUBITS = 4
ATOL = 1e-12
EIG_ATOL = 1e-10

_SQRT2_INV = 1 / np.sqrt(2)


class QuantumError(ValueError):
    """Raised for malformed states, gates or operation arguments."""


class ImpossibleOutcomeError(QuantumError):
    """Raised when conditioning on an outcome of zero probability."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


def _check_n(n: int) -> None:
    if not 1 <= n <= MAX_QUBITS:
        raise QuantumError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n}")


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        _check_n(self.n_qubits)
        amps = _frozen(np.ravel(self.amplitudes))
        if amps.shape != (2**self.n_qubits,):
            raise QuantumError(f"expected {2**self.n_qubits} amplitudes, got {amps.shape[0]}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1) > ATOL:
            raise QuantumError(f"state is not normalized (|psi|^2 = {norm!r})")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_amplitudes(cls, amplitudes: Sequence[complex], normalize: bool = False) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).ravel()
        n = int(round(np.log2(amps.size)))
        if 2**n != amps.size:
            raise QuantumError(f"length {amps.size} is not a power of two")
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(n, amps)

    @classmethod
    def basis(cls, label: str) -> "StateVector":
        """Computational basis state from a bit label such as ``"0101"``."""
        n = len(label)
        amps = np.zeros(2**n, dtype=complex)
        amps[int(label, 2)] = 1
        return cls(n, amps)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def density_matrix(self) -> "DensityMatrix":
        return DensityMatrix(self.n_qubits, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityMatrix:
    n_qubits: int
    entries: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        _check_n(self.n_qubits)
        rho = _frozen(self.entries)
        d = 2**self.n_qubits
        if rho.shape != (d, d):
            raise QuantumError(f"expected a {d}x{d} matrix, got {rho.shape}")
        if not np.allclose(rho, rho.conj().T, atol=ATOL, rtol=0):
            raise QuantumError("density matrix is not Hermitian")
        tr = np.trace(rho)
        if abs(tr - 1) > ATOL:
            raise QuantumError(f"density matrix trace is {tr!r}, expected 1")
        if np.linalg.eigvalsh(rho).min() < -EIG_ATOL:
            raise QuantumError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "entries", rho)

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        d = 2**n_qubits
        return cls(n_qubits, np.eye(d) / d)

    def probabilities(self) -> np.ndarray:
        return np.clip(np.diag(self.entries).real, 0.0, None)


def as_density(state: StateVector | DensityMatrix) -> DensityMatrix:
    return state.density_matrix() if isinstance(state, StateVector) else state


# --------------------------------------------------------------------------- gates

@dataclass(frozen=True)
class Gate:
    name: str
    matrix: np.ndarray = field(repr=False)
    targets: tuple[int, ...]
    unitary: bool = True

    def __post_init__(self) -> None:
        m = _frozen(self.matrix)
        k = len(self.targets)
        if m.shape != (2**k, 2**k):
            raise QuantumError(f"gate {self.name} matrix shape {m.shape} does not match {k} targets")
        if len(set(self.targets)) != k:
            raise QuantumError(f"gate {self.name} has repeated targets {self.targets}")
        if self.unitary and not np.allclose(m.conj().T @ m, np.eye(2**k), atol=ATOL, rtol=0):
            raise QuantumError(f"gate {self.name} is not unitary")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))


def hwp_matrix(theta: float) -> np.ndarray:
    """Jones matrix of a half-wave plate with fast axis at ``theta`` (H=0, V=1)."""
    c, s = np.cos(2 * theta), np.sin(2 * theta)
    return np.array([[c, s], [s, -c]], dtype=complex)


def H(q: int) -> Gate:
    return Gate("H", np.array([[1, 1], [1, -1]]) * _SQRT2_INV, (q,))


def X(q: int) -> Gate:
    return Gate("X", np.array([[0, 1], [1, 0]]), (q,))


def CNOT(control: int, target: int) -> Gate:
    m = np.eye(4)[[0, 1, 3, 2]]
    return Gate("CNOT", m, (control, target))


def HWP(theta: float, q: int) -> Gate:
    return Gate(f"HWP({theta:g})", hwp_matrix(theta), (q,))


def PHASE(alpha: float, q: int) -> Gate:
    return Gate(f"PHASE({alpha:g})", np.diag([1, np.exp(1j * alpha)]), (q,))


def POLPROJ(theta: float, q: int) -> Gate:
    """Projector onto linear polarization ``cos(theta)|H> + sin(theta)|V>``. Not unitary."""
    v = np.array([np.cos(theta), np.sin(theta)])
    return Gate(f"POLPROJ({theta:g})", np.outer(v, v), (q,), unitary=False)


def embed(g: Gate, n_qubits: int) -> np.ndarray:
    """Full ``2^n x 2^n`` operator of ``g`` acting on its targets."""
    if any(not 0 <= t < n_qubits for t in g.targets):
        raise QuantumError(f"gate {g.name} targets {g.targets} out of range for {n_qubits} qubits")
    k = len(g.targets)
    d = 2**n_qubits
    # Columns of the identity, transformed as states: operator = apply to each basis vector.
    basis = np.eye(d, dtype=complex).reshape([2] * n_qubits + [d])
    return _apply_tensor(basis, g.matrix.reshape([2] * (2 * k)), g.targets, n_qubits).reshape(d, d)


def _apply_tensor(psi: np.ndarray, m: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    k = len(targets)
    out = np.tensordot(m, psi, axes=(list(range(k, 2 * k)), list(targets)))
    # tensordot puts the gate's output axes first; move them back into place.
    return np.moveaxis(out, list(range(k)), list(targets))


# --------------------------------------------------------------------------- operations

def tensor(a, b):
    """Kronecker product of two states of the same kind, A on the left."""
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        n = a.n_qubits + b.n_qubits
        if n > MAX_QUBITS:
            raise QuantumError(f"tensor product would have {n} qubits (max {MAX_QUBITS})")
        return StateVector(n, np.kron(a.amplitudes, b.amplitudes))
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        n = a.n_qubits + b.n_qubits
        if n > MAX_QUBITS:
            raise QuantumError(f"tensor product would have {n} qubits (max {MAX_QUBITS})")
        return DensityMatrix(n, np.kron(a.entries, b.entries))
    raise QuantumError("tensor operands must both be StateVector or both DensityMatrix")


def apply_gate(state: StateVector, g: Gate) -> StateVector:
    if not g.unitary:
        raise QuantumError(f"{g.name} is not unitary; use project_renormalize")
    n = state.n_qubits
    if any(not 0 <= t < n for t in g.targets):
        raise QuantumError(f"gate {g.name} targets {g.targets} out of range for {n} qubits")
    k = len(g.targets)
    psi = state.amplitudes.reshape([2] * n)
    out = _apply_tensor(psi, g.matrix.reshape([2] * (2 * k)), g.targets, n)
    return StateVector(n, out.reshape(-1))


def apply_gates(state: StateVector, gates: Iterable[Gate]) -> StateVector:
    for g in gates:
        state = apply_gate(state, g)
    return state


def evolve(dm: DensityMatrix, unitary: np.ndarray) -> DensityMatrix:
    rho = unitary @ dm.entries @ unitary.conj().T
    return DensityMatrix(dm.n_qubits, (rho + rho.conj().T) / 2)


def make_rng(seed: int | np.random.SeedSequence | None) -> np.random.Generator:
    """PCG64 generator. Seeds are expanded through ``SeedSequence`` so they can be split."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def measure_all(state: StateVector | DensityMatrix, rng: np.random.Generator) -> int:
    """One computational-basis measurement; returns the basis index."""
    p = state.probabilities()
    return int(rng.choice(p.size, p=p / p.sum()))


def sample_outcomes(
    state: StateVector | DensityMatrix,
    n: int,
    seed: int,
    chunk_size: int = 1 << 16,
    workers: int = 1,
) -> np.ndarray:
    """Draw ``n`` basis indices.

    Chunk ``i`` always uses ``SeedSequence(seed, spawn_key=(i,))`` so the result
    does not depend on ``workers``.
    """
    p = state.probabilities()
    p = p / p.sum()
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    bounds = [(i, min(chunk_size, n - i * chunk_size)) for i in range((n + chunk_size - 1) // chunk_size)]

    def draw(job: tuple[int, int]) -> np.ndarray:
        i, size = job
        rng = make_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        return np.searchsorted(cdf, rng.random(size), side="right").astype(np.uint8)

    if workers > 1 and len(bounds) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(draw, bounds))
    else:
        parts = [draw(b) for b in bounds]
    if not parts:
        return np.zeros(0, dtype=np.uint8)
    return np.minimum(np.concatenate(parts), p.size - 1)


def index_to_bits(indices: np.ndarray, n_qubits: int) -> np.ndarray:
    """Basis indices to an ``(len, n_qubits)`` bit array, qubit 0 first."""
    idx = np.asarray(indices, dtype=np.int64)
    shifts = np.arange(n_qubits - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8)


def _check_subset(keep: Sequence[int], n: int) -> list[int]:
    keep = sorted(set(int(k) for k in keep))
    if not keep or len(keep) >= n:
        raise QuantumError("keep must be a nonempty strict subset of the qubits")
    if keep[0] < 0 or keep[-1] >= n:
        raise QuantumError(f"qubit index out of range in {keep}")
    return keep


def partial_trace(dm: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    n = dm.n_qubits
    keep = _check_subset(keep, n)
    drop = [q for q in range(n) if q not in keep]
    t = dm.entries.reshape([2] * (2 * n))
    # Contract each dropped row axis with its column axis; highest first keeps indices valid.
    m = n
    for q in sorted(drop, reverse=True):
        t = np.trace(t, axis1=q, axis2=q + m)
        m -= 1
    k = len(keep)
    rho = t.reshape(2**k, 2**k)
    return DensityMatrix(k, (rho + rho.conj().T) / 2)


def project_renormalize(
    dm: DensityMatrix | StateVector,
    qubits: Sequence[int],
    outcome: Sequence[int] | None = None,
    *,
    vector: Sequence[complex] | None = None,
) -> DensityMatrix:
    """Condition on a measurement of ``qubits`` and trace them out.

    Pass ``outcome`` as one bit per measured qubit for a computational-basis
    projector, or ``vector`` (a single-qubit ket) to project one qubit onto an
    arbitrary state. Returns ``tr_S(K rho K^dag) / tr(K^dag K rho)`` on the
    remaining qubits.
    """
    dm = as_density(dm)
    n = dm.n_qubits
    qubits = [int(q) for q in qubits]
    keep = _check_subset([q for q in range(n) if q not in qubits], n)
    if vector is not None:
        v = np.asarray(vector, dtype=complex)
        if len(qubits) != 1 or v.shape != (2,):
            raise QuantumError("vector projection needs one measured qubit and a 2-vector")
        proj = np.outer(v, v.conj()) / np.vdot(v, v).real
    else:
        bits = [int(b) for b in np.ravel(outcome)]
        if len(bits) != len(qubits) or any(b not in (0, 1) for b in bits):
            raise QuantumError("outcome must give one bit per measured qubit")
        proj = np.zeros((2 ** len(qubits),) * 2)
        idx = int("".join(map(str, bits)), 2)
        proj[idx, idx] = 1
    k_op = embed(Gate("proj", proj, tuple(qubits), unitary=False), n)
    rho = k_op @ dm.entries @ k_op.conj().T
    prob = np.trace(rho).real
    if prob <= EIG_ATOL:
        raise ImpossibleOutcomeError(f"outcome on qubits {qubits} has probability {prob:.3g}")
    rho = rho / prob
    return partial_trace(DensityMatrix(n, (rho + rho.conj().T) / 2), keep)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def fidelity(a: DensityMatrix | StateVector, b: DensityMatrix | StateVector) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(a) b sqrt(a)))^2``."""
    a, b = as_density(a), as_density(b)
    if a.n_qubits != b.n_qubits:
        raise QuantumError(f"dimension mismatch: {a.n_qubits} vs {b.n_qubits} qubits")
    sa = _psd_sqrt(a.entries)
    inner = sa @ b.entries @ sa
    ev = np.linalg.eigvalsh((inner + inner.conj().T) / 2)
    f = float(np.sum(np.sqrt(np.clip(ev, 0, None))) ** 2)
    return min(max(f, 0.0), 1.0)


def align_global_phase(a: StateVector, b: StateVector) -> np.ndarray:
    """Return ``b``'s amplitudes rotated so its phase matches ``a`` on ``a``'s largest amplitude."""
    k = int(np.argmax(np.abs(a.amplitudes)))
    if abs(b.amplitudes[k]) < ATOL:
        return b.amplitudes.copy()
    phase = a.amplitudes[k] / abs(a.amplitudes[k]) * abs(b.amplitudes[k]) / b.amplitudes[k]
    return b.amplitudes * phase


def phase_distance(a: StateVector, b: StateVector) -> float:
    """Max entrywise deviation after global-phase alignment."""
    if a.n_qubits != b.n_qubits:
        raise QuantumError("dimension mismatch")
    return float(np.max(np.abs(a.amplitudes - align_global_phase(a, b))))
