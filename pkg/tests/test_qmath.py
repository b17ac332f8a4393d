import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdtimebin.qmath import (
    ANALYZERS,
    NonPhysicalStateError,
    TwoQubitDensity,
    TwoQubitState,
    analyzer,
    bell_state,
    concurrence,
    fidelity,
    projector,
    random_density,
    random_local_unitary,
    relabel_basis,
    swap_hv,
    werner,
)

S2 = 1 / math.sqrt(2)
SY = np.array([[0, -1j], [1j, 0]])


def wootters_oracle(m):
    """Concurrence from the non-Hermitian product rho * rho~ (textbook route)."""
    yy = np.kron(SY, SY)
    r = m @ yy @ m.conj() @ yy
    lam = np.sort(np.sqrt(np.abs(np.linalg.eigvals(r).real)))[::-1]
    return max(0.0, lam[0] - lam[1] - lam[2] - lam[3])


complex_amp = st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False)


@given(st.lists(complex_amp, min_size=4, max_size=4).filter(lambda a: np.linalg.norm(a) > 1e-3))
def test_state_is_normalized_on_construction(amps):
    s = TwoQubitState(amps)
    assert abs(np.sum(np.abs(s.amplitudes) ** 2) - 1) < 1e-12


def test_state_rejects_zero_vector():
    with pytest.raises(ValueError):
        TwoQubitState([0, 0, 0, 0])


def test_bell_state_amplitudes():
    np.testing.assert_allclose(bell_state(0).amplitudes, [S2, 0, 0, S2], atol=1e-15)
    np.testing.assert_allclose(bell_state(math.pi).amplitudes, [S2, 0, 0, -S2], atol=1e-15)
    psi = bell_state(0.141 * math.pi)
    assert fidelity(psi.density(), psi) == pytest.approx(1.0, abs=1e-12)


def test_bell_state_rejects_non_finite_phase():
    with pytest.raises(ValueError):
        bell_state(float("nan"))


@pytest.mark.parametrize("matrix, reason", [
    (np.diag([1.0, 0, 0, 0]) + np.triu(np.ones((4, 4)), 1) * 0.1, "hermitian"),
    (np.eye(4) / 2, "trace"),
    (np.diag([0.6, 0.6, -0.2, 0.0]), "eigen"),
])
def test_density_invariants_enforced(matrix, reason):
    with pytest.raises(NonPhysicalStateError):
        TwoQubitDensity(matrix)


def test_unchecked_density_reports_physicality():
    rho = TwoQubitDensity(np.diag([0.6, 0.6, -0.2, 0.0]), check=False)
    assert not rho.is_physical
    with pytest.raises(NonPhysicalStateError):
        concurrence(rho)
    with pytest.raises(NonPhysicalStateError):
        fidelity(rho, bell_state(0))


def test_analyzer_conventions():
    for a in ANALYZERS.values():
        assert np.linalg.norm(a.jones) == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(ANALYZERS["D"].jones, [S2, S2])
    np.testing.assert_allclose(ANALYZERS["A"].jones, [S2, -S2])
    np.testing.assert_allclose(ANALYZERS["R"].jones, [S2, 1j * S2])
    np.testing.assert_allclose(ANALYZERS["L"].jones, [S2, -1j * S2])
    with pytest.raises(ValueError):
        analyzer("X")


def test_projector_examples():
    np.testing.assert_allclose(projector("H", "H").matrix, np.diag([1, 0, 0, 0]), atol=1e-15)
    np.testing.assert_allclose(projector("D", "D").matrix, np.full((4, 4), 0.25), atol=1e-15)


def test_projector_rl_on_bell_by_amplitude_oracle():
    # <RL|bell(0)> = (<R|H><L|H> + <R|V><L|V>)/sqrt2 with R = (H+iV)/sqrt2, L = (H-iV)/sqrt2
    r, l = np.array([S2, 1j * S2]), np.array([S2, -1j * S2])
    amp = (np.conj(r[0]) * np.conj(l[0]) + np.conj(r[1]) * np.conj(l[1])) * S2
    expected = abs(amp) ** 2
    got = np.trace(projector("R", "L").matrix @ bell_state(0).density().matrix).real
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("a, b", list(itertools.product("HVDARL", repeat=2)))
def test_projectors_idempotent_unit_trace(a, b):
    p = projector(a, b).matrix
    np.testing.assert_allclose(p @ p, p, atol=1e-12)
    assert np.trace(p).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.matrix_rank(p, tol=1e-9) == 1


def test_fidelity_examples():
    assert fidelity(TwoQubitDensity(np.eye(4) / 4), bell_state(1.3)) == pytest.approx(0.25, abs=1e-12)
    assert fidelity(werner(0.693), bell_state(0)) == pytest.approx((3 * 0.693 + 1) / 4, abs=1e-12)
    assert round(fidelity(werner(0.693), bell_state(0)), 3) == 0.770


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_fidelity_bounded(seed, rank):
    rng = np.random.default_rng(seed)
    rho = random_density(rng, rank)
    psi = TwoQubitState(rng.normal(size=4) + 1j * rng.normal(size=4))
    f = fidelity(rho, psi)
    assert 0.0 <= f <= 1.0
    assert f == pytest.approx((psi.amplitudes.conj() @ rho.matrix @ psi.amplitudes).real, abs=1e-12)


def test_concurrence_examples():
    assert concurrence(bell_state(0).density()) == pytest.approx(1.0, abs=1e-12)
    assert concurrence(TwoQubitDensity(np.eye(4) / 4)) == pytest.approx(0.0, abs=1e-12)
    assert concurrence(werner(0.693)) == pytest.approx(0.5395, abs=1e-10)


@pytest.mark.parametrize("p", [0, 0.2, 1 / 3, 0.5, 0.693, 1])
def test_werner_concurrence_and_fidelity_formulas(p):
    rho = werner(p)
    assert concurrence(rho) == pytest.approx(max(0.0, (3 * p - 1) / 2), abs=1e-10)
    assert fidelity(rho, bell_state(0)) == pytest.approx((3 * p + 1) / 4, abs=1e-10)


def test_werner_limits_and_errors():
    np.testing.assert_allclose(werner(1, 0.4).matrix, bell_state(0.4).density().matrix, atol=1e-15)
    np.testing.assert_allclose(werner(0).matrix, np.eye(4) / 4, atol=1e-15)
    for p in (-0.1, 1.1):
        with pytest.raises(ValueError):
            werner(p)


def test_concurrence_matches_textbook_oracle_on_random_states():
    rng = np.random.default_rng(11)
    for rank in (1, 2, 3, 4) * 10:
        rho = random_density(rng, rank)
        assert concurrence(rho) == pytest.approx(wootters_oracle(rho.matrix), abs=1e-7)  # the oracle itself takes sqrt of round-off


def test_separable_states_have_zero_concurrence():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = random_density(rng).matrix[:2, :2]
        a = a / np.trace(a)
        b = random_density(rng).matrix[2:, 2:]
        b = b / np.trace(b)
        assert concurrence(TwoQubitDensity(np.kron(a, b))) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("rank", [1, 2, 3, 4])
def test_concurrence_local_unitary_invariance(rank):
    rng = np.random.default_rng(rank)
    for _ in range(100):
        rho = random_density(rng, rank)
        rotated = relabel_basis(rho, random_local_unitary(rng))
        assert abs(concurrence(rotated) - concurrence(rho)) < 1e-9


def test_relabel_basis_examples():
    rho = werner(0.7, 0.3)
    np.testing.assert_allclose(relabel_basis(rho, np.eye(2)).matrix, rho.matrix, atol=1e-15)
    twice = relabel_basis(relabel_basis(rho, swap_hv()), swap_hv())
    np.testing.assert_allclose(twice.matrix, rho.matrix, atol=1e-15)
    # V -> e, H -> l with a path phase on the long arm
    to_timebin = np.array([[0, 1], [np.exp(0.4j), 0]])
    tb = relabel_basis(rho, to_timebin, "timebin")
    assert tb.basis_label == "timebin"
    assert concurrence(tb) == pytest.approx(concurrence(rho), abs=1e-12)
    np.testing.assert_allclose(tb.eigenvalues(), rho.eigenvalues(), atol=1e-12)


def test_relabel_basis_rejects_non_unitary():
    with pytest.raises(ValueError):
        relabel_basis(werner(0.5), np.diag([1.0, 2.0]))


def test_density_text_round_trip():
    rho = werner(0.693, 0.141 * math.pi, "timebin")
    back = TwoQubitDensity.from_text(rho.to_text())
    assert back.basis_label == "timebin"
    np.testing.assert_array_equal(back.matrix, rho.matrix)
    header, *rows = rho.to_text().splitlines()
    assert header == "basis=timebin"
    assert len(rows) == 4 and all(len(r.split()) == 4 for r in rows)


def test_density_is_immutable():
    rho = werner(0.5)
    with pytest.raises(ValueError):
        rho.matrix[0, 0] = 1.0
