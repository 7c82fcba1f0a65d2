import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonmarkov.errors import InvalidStateError
from nonmarkov.qstate import (
    BlochVector,
    QubitState,
    TwoQubitState,
    bell_state,
    bloch_matrix,
    bloch_to_state,
    concurrence,
    concurrence_array,
    state_to_bloch,
    trace_distance,
)

unit = st.floats(-1, 1, allow_nan=False)


@st.composite
def bloch_vectors(draw):
    v = np.array([draw(unit), draw(unit), draw(unit)])
    n = np.linalg.norm(v)
    if n > 1:
        v = v / n
    return v


def _wootters_eig(rho):
    """Textbook concurrence: square roots of eig(rho (YxY) rho* (YxY)), descending."""
    yy = np.kron([[0, -1j], [1j, 0]], [[0, -1j], [1j, 0]])
    ev = np.linalg.eigvals(rho @ yy @ rho.conj() @ yy)
    lam = np.sort(np.sqrt(np.clip(ev.real, 0, None)))[::-1]
    return max(0.0, lam[0] - lam[1] - lam[2] - lam[3])


def test_basis_conventions():
    h = QubitState.from_ket([1, 0])
    plus = QubitState.from_ket([1, 1])
    assert state_to_bloch(h) == BlochVector(0.0, 0.0, 1.0)
    b = state_to_bloch(plus)
    assert b.x == pytest.approx(1.0) and abs(b.z) < 1e-15
    # |+i> = (|H> + i|V>)/sqrt2 sits at y = +1
    assert state_to_bloch(QubitState.from_ket([1, 1j])).y == pytest.approx(1.0)


@pytest.mark.parametrize("m", [
    np.array([[1, 0], [0, 0.1]]),          # trace
    np.array([[0.5, 0.6], [0.6, 0.5]]),    # negative eigenvalue
    np.array([[0.5, 0.1j], [0.1j, 0.5]]),  # not Hermitian
    np.eye(3) / 3,                         # shape
])
def test_invalid_qubit_states_rejected(m):
    with pytest.raises(InvalidStateError):
        QubitState(m)


def test_bloch_vector_norm_checked():
    with pytest.raises(InvalidStateError):
        BlochVector(1.0, 0.1, 0.0)
    with pytest.raises(InvalidStateError):
        BlochVector(np.nan, 0, 0)


def test_record_round_trip_is_exact():
    rho = bell_state()
    rec = rho.to_record()
    assert len(rec) == 32
    assert TwoQubitState.from_json(json.dumps(rec)) == rho
    q = QubitState(bloch_matrix([0.3, -0.2, 0.5]))
    assert len(q.to_record()) == 8
    assert QubitState.from_json(q.to_json()) == q
    with pytest.raises(InvalidStateError):
        QubitState.from_record([0.0] * 7)


def test_states_are_immutable():
    q = QubitState.from_ket([1, 0])
    with pytest.raises(ValueError):
        q.matrix[0, 0] = 0


def test_trace_distance_known_values():
    h, v = QubitState.from_ket([1, 0]), QubitState.from_ket([0, 1])
    plus = QubitState.from_ket([1, 1])
    assert trace_distance(h, v) == pytest.approx(1.0)
    assert trace_distance(h, plus) == pytest.approx(np.sqrt(0.5))
    with pytest.raises(TypeError):
        trace_distance(h.matrix, v)
    with pytest.raises(InvalidStateError):
        trace_distance(h, bell_state())


@settings(max_examples=200, deadline=None)
@given(bloch_vectors(), bloch_vectors())
def test_trace_distance_is_half_bloch_distance(r1, r2):
    d = trace_distance(QubitState(bloch_matrix(r1)), QubitState(bloch_matrix(r2)))
    assert d == pytest.approx(0.5 * np.linalg.norm(r1 - r2), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(bloch_vectors())
def test_bloch_round_trip(r):
    back = state_to_bloch(bloch_to_state(BlochVector(*r))).as_array()
    np.testing.assert_allclose(back, r, atol=1e-12)


def test_concurrence_bell_and_product():
    assert concurrence(bell_state()) == pytest.approx(1.0, abs=1e-12)
    prod = TwoQubitState.from_ket(np.kron([1, 2j], [3, -1]))
    assert concurrence(prod) < 1e-12
    assert concurrence(TwoQubitState(np.eye(4) / 4)) == 0.0
    with pytest.raises(TypeError):
        concurrence(QubitState.from_ket([1, 0]))


@pytest.mark.parametrize("p", [0.0, 0.2, 1 / 3, 0.5, 0.9, 1.0])
def test_werner_concurrence(p):
    # p |Bell><Bell| + (1 - p) I/4 has C = max(0, (3p - 1)/2)
    rho = p * bell_state().matrix + (1 - p) * np.eye(4) / 4
    assert concurrence(TwoQubitState(rho)) == pytest.approx(max(0.0, (3 * p - 1) / 2), abs=1e-12)


def test_concurrence_matches_textbook_eigenvalue_route():
    rng = np.random.default_rng(0)
    g = rng.normal(size=(50, 4, 4)) + 1j * rng.normal(size=(50, 4, 4))
    rho = g @ np.swapaxes(g.conj(), -1, -2)
    rho /= np.trace(rho, axis1=-2, axis2=-1).real[:, None, None]
    # bias toward entangled states so the comparison is not all zeros
    rho = 0.5 * rho + 0.5 * bell_state().matrix
    ours = concurrence_array(rho)
    ref = np.array([_wootters_eig(r) for r in rho])
    assert ours.max() > 0.2
    np.testing.assert_allclose(ours, ref, atol=1e-9)
