import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvqrng.circuits import bell_state, prepare_phi_abcd, prepare_psi_abcd
from pvqrng.noise import depolarize
from pvqrng.qcore import (
    CNOT,
    HWP,
    POLPROJ,
    DensityMatrix,
    H,
    ImpossibleOutcomeError,
    QuantumError,
    StateVector,
    X,
    apply_gate,
    apply_gates,
    embed,
    fidelity,
    measure_all,
    make_rng,
    partial_trace,
    project_renormalize,
    sample_outcomes,
    tensor,
)

S2 = 1 / math.sqrt(2)


def ket(label):
    return StateVector.basis(label)


class TestTypes:
    def test_unnormalized_rejected(self):
        with pytest.raises(QuantumError):
            StateVector(1, np.array([1, 1], dtype=complex))

    def test_wrong_length_rejected(self):
        with pytest.raises(QuantumError):
            StateVector(2, np.array([1, 0], dtype=complex))

    @pytest.mark.parametrize("n", [0, 5])
    def test_qubit_range(self, n):
        with pytest.raises(QuantumError):
            StateVector(n, np.zeros(2**n))

    def test_density_invariants(self):
        with pytest.raises(QuantumError):
            DensityMatrix(1, np.array([[0.5, 0.1], [0.2, 0.5]]))  # not Hermitian
        with pytest.raises(QuantumError):
            DensityMatrix(1, np.eye(2))  # trace 2
        with pytest.raises(QuantumError):
            DensityMatrix(1, np.array([[1.5, 0], [0, -0.5]]))  # negative eigenvalue

    def test_values_are_immutable(self):
        s = ket("01")
        with pytest.raises(ValueError):
            s.amplitudes[0] = 1

    def test_hwp_matrix_form(self):
        t = 0.3
        np.testing.assert_allclose(
            HWP(t, 0).matrix, [[math.cos(2 * t), math.sin(2 * t)], [math.sin(2 * t), -math.cos(2 * t)]]
        )

    def test_non_unitary_gate_flagged(self):
        with pytest.raises(QuantumError):
            from pvqrng.qcore import Gate

            Gate("bad", np.array([[1, 0], [0, 0]]), (0,))


class TestTensor:
    def test_basis_product(self):
        np.testing.assert_allclose(tensor(ket("0"), ket("0")).amplitudes, [1, 0, 0, 0])

    def test_bell_with_paths(self):
        s = tensor(bell_state("psi+"), ket("00"))
        expected = np.zeros(16)
        expected[0b0100] = expected[0b1000] = S2
        np.testing.assert_allclose(s.amplitudes, expected, atol=1e-15)

    def test_mixed_product(self):
        mm = DensityMatrix.maximally_mixed(1)
        np.testing.assert_allclose(tensor(mm, mm).entries, np.eye(4) / 4)

    def test_overflow(self):
        with pytest.raises(QuantumError):
            tensor(ket("000"), ket("00"))

    def test_mixed_kinds(self):
        with pytest.raises((QuantumError, TypeError)):
            tensor(ket("0"), DensityMatrix.maximally_mixed(1))


class TestApplyGate:
    def test_hadamard(self):
        np.testing.assert_allclose(apply_gate(ket("0"), H(0)).amplitudes, [S2, S2])

    def test_cnot(self):
        np.testing.assert_allclose(apply_gate(ket("10"), CNOT(0, 1)).amplitudes, ket("11").amplitudes)

    def test_cnot_reversed_control(self):
        np.testing.assert_allclose(apply_gate(ket("01"), CNOT(1, 0)).amplitudes, ket("11").amplitudes)

    def test_hwp_45_swaps(self):
        out = apply_gate(ket("0"), HWP(math.pi / 4, 0))
        np.testing.assert_allclose(out.amplitudes, ket("1").amplitudes, atol=1e-15)

    def test_projector_rejected(self):
        with pytest.raises(QuantumError):
            apply_gate(ket("0"), POLPROJ(0.0, 0))

    def test_target_out_of_range(self):
        with pytest.raises(QuantumError):
            apply_gate(ket("00"), X(2))

    def test_embed_matches_kron(self):
        # X on qubit 1 of 3 = I (x) X (x) I
        xm = np.array([[0, 1], [1, 0]])
        np.testing.assert_allclose(embed(X(1), 3), np.kron(np.kron(np.eye(2), xm), np.eye(2)))

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.tuples(st.sampled_from(["H", "X", "CNOT", "HWP"]), st.integers(0, 3), st.integers(0, 3),
                           st.floats(-3, 3)), max_size=12),
        st.integers(0, 15),
    )
    def test_norm_preserved(self, ops, start):
        gates = []
        for name, q1, q2, t in ops:
            if name == "CNOT":
                if q1 == q2:
                    continue
                gates.append(CNOT(q1, q2))
            elif name == "HWP":
                gates.append(HWP(t, q1))
            else:
                gates.append({"H": H, "X": X}[name](q1))
        out = apply_gates(ket(format(start, "04b")), gates)
        assert abs(np.linalg.norm(out.amplitudes) - 1) < 1e-10


class TestMeasurement:
    def test_basis_state_deterministic(self):
        rng = make_rng(1)
        assert all(measure_all(ket("0000"), rng) == 0 for _ in range(100))

    def test_parity_state_probabilities(self):
        p = prepare_psi_abcd().probabilities()
        for k in ("0000", "0101", "0110", "0011", "1100", "1001", "1010", "1111"):
            assert p[int(k, 2)] == pytest.approx(1 / 8, abs=1e-12)

    def test_verification_state_excludes_zero(self):
        assert prepare_phi_abcd().probabilities()[0] == 0

    def test_seeded(self):
        a = sample_outcomes(prepare_psi_abcd(), 1000, seed=5)
        b = sample_outcomes(prepare_psi_abcd(), 1000, seed=5)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("workers", [2, 3])
    def test_independent_of_workers(self, workers):
        s = prepare_psi_abcd()
        a = sample_outcomes(s, 200_000, seed=9, chunk_size=30_000)
        b = sample_outcomes(s, 200_000, seed=9, chunk_size=30_000, workers=workers)
        np.testing.assert_array_equal(a, b)

    def test_frequencies_within_5_sigma(self):
        s = StateVector.from_amplitudes([0.6, 0.8j])
        n = 1_000_000
        counts = np.bincount(sample_outcomes(s, n, seed=2), minlength=2)
        for k, p in enumerate(s.probabilities()):
            assert abs(counts[k] - n * p) < 5 * math.sqrt(n * p * (1 - p))


class TestPartialTrace:
    def test_bell_marginal(self):
        np.testing.assert_allclose(partial_trace(bell_state("psi+").density_matrix(), [0]).entries, np.eye(2) / 2,
                                   atol=1e-15)

    def test_product(self):
        rho = tensor(ket("0").density_matrix(), ket("1").density_matrix())
        np.testing.assert_allclose(partial_trace(rho, [1]).entries, [[0, 0], [0, 1]])

    @pytest.mark.parametrize("keep", [[], [0, 1]])
    def test_keep_must_be_strict_subset(self, keep):
        with pytest.raises(QuantumError):
            partial_trace(bell_state("psi+").density_matrix(), keep)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_tensor_roundtrip(self, seed):
        rng = np.random.default_rng(seed)

        def rand_rho(n):
            g = rng.normal(size=(2**n, 2**n)) + 1j * rng.normal(size=(2**n, 2**n))
            m = g @ g.conj().T
            return DensityMatrix(n, m / np.trace(m))

        a, b = rand_rho(1), rand_rho(2)
        np.testing.assert_allclose(partial_trace(tensor(a, b), [0]).entries, a.entries, atol=1e-12)
        np.testing.assert_allclose(partial_trace(tensor(a, b), [1, 2]).entries, b.entries, atol=1e-12)


class TestProjectRenormalize:
    def test_bell_collapse(self):
        out = project_renormalize(bell_state("psi+"), [0], [0])
        np.testing.assert_allclose(out.entries, [[0, 0], [0, 1]], atol=1e-15)

    def test_parity_state_a1_branch(self):
        out = project_renormalize(prepare_psi_abcd(), [0], [1])
        v = np.zeros(8)
        v[[0b100]] = 0.5
        v[[0b001, 0b010, 0b111]] = -0.5
        np.testing.assert_allclose(out.entries, np.outer(v, v), atol=1e-12)

    def test_mixed_collapse(self):
        out = project_renormalize(depolarize(bell_state("psi+"), 1.0), [0], [0])
        np.testing.assert_allclose(out.entries, np.eye(2) / 2, atol=1e-15)

    def test_impossible(self):
        with pytest.raises(ImpossibleOutcomeError):
            project_renormalize(ket("00"), [0], [1])

    def test_vector_projection(self):
        # |+> on A of Phi+ leaves |+> on B
        out = project_renormalize(bell_state("phi+"), [0], vector=[S2, S2])
        np.testing.assert_allclose(out.entries, np.full((2, 2), 0.5), atol=1e-12)


class TestFidelity:
    def test_self(self):
        rho = depolarize(prepare_psi_abcd(), 0.3)
        assert fidelity(rho, rho) == pytest.approx(1, abs=1e-10)

    def test_orthogonal(self):
        assert fidelity(ket("0"), ket("1")) == pytest.approx(0, abs=1e-12)

    @pytest.mark.parametrize("p", [0, 0.1, 0.2, 0.5, 1])
    def test_depolarized_bell(self, p):
        psi = bell_state("psi+")
        assert fidelity(psi, depolarize(psi, p)) == pytest.approx(1 - 3 * p / 4, abs=1e-10)

    def test_symmetric(self):
        a = depolarize(bell_state("psi+"), 0.3)
        b = depolarize(bell_state("phi-"), 0.6)
        assert fidelity(a, b) == pytest.approx(fidelity(b, a), abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(QuantumError):
            fidelity(ket("0"), ket("00"))
