import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import random_matrix
from umps import core, linalg, models
from umps.errors import ConvergenceError, DimensionError, HermiticityError


def _transfer(A):
    return lambda x, side: core.apply_transfer(A, x, side)


def test_linear_map_linearity_and_matrix(rng):
    M = random_matrix((6, 6), rng)
    L = linalg.matrix_map(M)
    assert L.linearity_defect() < 1e-12
    assert np.allclose(L.matrix(), M)


def test_dominant_eigenpair_identity():
    lam, v, rep = linalg.dominant_eigenpair(linalg.matrix_map(np.eye(9)))
    assert abs(lam - 1) < 1e-12 and abs(np.linalg.norm(v) - 1) < 1e-12 and rep.converged


def test_dominant_eigenpair_planted(rng):
    S = random_matrix((9, 9), rng)
    vals = np.concatenate([[2.0], rng.uniform(-0.9, 0.9, size=8)])
    M = S @ np.diag(vals) @ np.linalg.inv(S)
    lam, v, rep = linalg.dominant_eigenpair(linalg.matrix_map(M))
    assert abs(lam - 2.0) < 1e-12
    assert np.linalg.norm(M @ v - lam * v) <= 1e-12 * 2 * 10


def test_dominant_eigenpair_aklt_transfer(aklt):
    A, fp, _ = aklt
    M = linalg.LinearMap(4, 4, lambda v: core.apply_transfer(A, v.reshape(2, 2), "right").ravel())
    lam, v, _ = linalg.dominant_eigenpair(M)
    assert abs(lam - 1) < 1e-12
    assert abs(linalg.dense_dominant_eigenpair(oracles.dense_transfer(A))[0] - 1) < 1e-12


def test_non_square_map_rejected():
    with pytest.raises(DimensionError):
        linalg.dominant_eigenpair(linalg.matrix_map(np.ones((3, 4))))


def test_bicgstab_solves_and_reports(rng):
    M = np.eye(30) + 0.1 * random_matrix((30, 30), rng)
    b = random_matrix(30, rng)
    x, rep = linalg.bicgstab_solve(linalg.matrix_map(M), b)
    assert rep.converged and rep.final_residual <= 1e-12 * max(1, np.linalg.norm(b))
    assert np.linalg.norm(M @ x - b) <= 1e-11 * np.linalg.norm(b)


def test_bicgstab_gives_up_on_singular_system():
    M = np.diag([1.0, 0.0, 2.0])
    with pytest.raises(ConvergenceError):
        linalg.bicgstab_solve(linalg.matrix_map(M), np.array([0, 1.0, 0]), max_iter=50)


def test_pseudo_inverse_annihilates_fixed_point(aklt):
    A, fp, _ = aklt
    x = linalg.geometric_inverse_apply(_transfer(A), fp.l, fp.r, 1.0, fp.r, "right")
    assert np.linalg.norm(x) < 1e-14


def test_pseudo_inverse_vs_neumann_series(aklt, rng):
    A, fp, _ = aklt
    l, r = fp.l, fp.r
    y = random_matrix((2, 2), rng)
    got = linalg.geometric_inverse_apply(_transfer(A), l, r, 1.0, y, "right")
    q = lambda v: v - np.trace(l @ v) * r
    term = q(y)
    ref = np.zeros_like(term)
    for _ in range(401):
        ref = ref + term
        term = q(core.apply_transfer(A, term, "right"))
    assert np.linalg.norm(got - ref) < 1e-12


@pytest.mark.parametrize("side", ["left", "right"])
def test_geometric_inverse_vs_dense_solve(side, rng):
    A, fp = core.fixed_points(core.random_tensor(3, 2, rng))
    y = random_matrix((3, 3), rng)
    phase = np.exp(1j * np.pi / 3)
    got = linalg.geometric_inverse_apply(_transfer(A), fp.l, fp.r, phase, y, side)
    ref = linalg.dense_geometric_inverse(oracles.dense_transfer(A), fp.l, fp.r, phase, y, side)
    assert np.linalg.norm(got - ref) < 1e-11


@settings(max_examples=15, deadline=None)
@given(p=st.floats(-np.pi, np.pi), seed=st.integers(0, 10 ** 6),
       side=st.sampled_from(["left", "right"]))
def test_pseudo_inverse_defining_identities(p, seed, side):
    rng = np.random.default_rng(seed)
    A, fp = core.fixed_points(core.random_tensor(3, 2, rng))
    l, r = fp.l, fp.r
    T = _transfer(A)
    q_left, q_right = linalg._projectors(l, r)
    q = q_left if side == "left" else q_right
    x = random_matrix((3, 3), rng)
    e = np.exp(1j * p)
    # (1 - e E)(1 - e E)^P x = Q x
    P = linalg.geometric_inverse_apply(T, l, r, e, x, side)
    lhs = P - e * T(P, side)
    assert np.linalg.norm(q(lhs) - q(x)) < 1e-10 * max(1, np.linalg.norm(x))
    # (1 - E)^P (1 - E) x = Q x
    y = x - T(x, side)
    P0 = linalg.geometric_inverse_apply(T, l, r, 1.0, y, side)
    assert np.linalg.norm(P0 - q(x)) < 1e-10 * max(1, np.linalg.norm(x))


def test_resolvent_for_contracting_map(rng):
    A, _ = core.fixed_points(core.random_tensor(3, 2, rng))
    half = lambda x, side: 0.5 * core.apply_transfer(A, x, side)
    y = random_matrix((3, 3), rng)
    got = linalg.resolvent_apply(half, 1.0, y, "right")
    E = 0.5 * oracles.dense_transfer(A)
    assert np.allclose(got.ravel(), np.linalg.solve(np.eye(9) - E, y.ravel()), atol=1e-12)


def test_hermitian_lowest_on_diagonal_map():
    M = linalg.LinearMap(40, 40, lambda v: np.arange(40) * v, hermitian=True)
    vals, vecs, rep = linalg.hermitian_lowest_eigs(M, 4)
    assert np.allclose(vals, [0, 1, 2, 3])
    vals, _, _ = linalg.hermitian_lowest_eigs(M, 4, method="lanczos")
    assert np.allclose(vals, [0, 1, 2, 3], atol=1e-10)


def test_hermitian_lowest_vs_dense(rng):
    H = random_matrix((50, 50), rng)
    H = H + H.conj().T
    ref = np.linalg.eigvalsh(H)[:5]
    for method in ("dense", "lanczos"):
        vals, vecs, rep = linalg.hermitian_lowest_eigs(linalg.matrix_map(H, True), 5, method=method)
        assert np.allclose(vals, ref, atol=1e-10)
        assert np.all(np.diff(vals) >= 0)
    assert np.allclose(linalg.dense_lowest_eigs(H, 5)[0], ref)


def test_hermiticity_violations_rejected(rng):
    M = random_matrix((10, 10), rng)
    with pytest.raises(HermiticityError):
        linalg.hermitian_lowest_eigs(linalg.matrix_map(M, True), 1)
    H = M + M.conj().T
    with pytest.raises(HermiticityError):
        linalg.hermitian_lowest_eigs(linalg.matrix_map(H, False), 1)


def test_hermitian_lowest_aklt_magnon(aklt):
    from umps import excite
    A, fp, h = aklt
    env = excite.Environments.build(A, fp, h)
    M = excite.EffectiveHamiltonian(env, np.pi).linear_map()
    vals, _, _ = linalg.hermitian_lowest_eigs(M, 1)
    assert abs(vals[0] - 10 / 27) < 1e-12
