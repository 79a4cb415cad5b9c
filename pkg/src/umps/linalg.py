"""Matrix-free linear algebra used throughout the package.

All solvers take a :class:`LinearMap`, i.e. only matvec access, and return a
:class:`SolveReport`.  Each one has a dense twin (``dense_*``) used by the
tests as an oracle.

The Krylov kernels are the scipy ones (ARPACK for eigenpairs, BiCGStab for
linear systems), wrapped so that tolerances are checked on the true residual
and failures surface as :class:`~umps.errors.ConvergenceError`.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DimensionError, HermiticityError

DEFAULT_EIG_TOL = 1e-12
DEFAULT_SOLVE_TOL = 1e-12
BREAKDOWN_RHO = 1e-30
MAX_RESTARTS = 3
HERM_TOL = 1e-10


@dataclass
class LinearMap:
    """A linear map given by its action on flat complex vectors."""

    dim_in: int
    dim_out: int
    apply: Callable[[np.ndarray], np.ndarray]
    hermitian: bool = False

    def __call__(self, x):
        return self.apply(x)

    def as_operator(self):
        return spla.LinearOperator(
            (self.dim_out, self.dim_in), matvec=self.apply, dtype=complex
        )

    def matrix(self):
        """Dense matrix built column by column (only for small maps)."""
        out = np.empty((self.dim_out, self.dim_in), dtype=complex)
        e = np.zeros(self.dim_in, dtype=complex)
        for j in range(self.dim_in):
            e[j] = 1.0
            out[:, j] = self.apply(e)
            e[j] = 0.0
        return out

    def linearity_defect(self, rng=None):
        """Randomized check of ``M(ax+by) = aM(x) + bM(y)``; returns the relative defect."""
        rng = np.random.default_rng(0) if rng is None else rng
        x = rng.normal(size=self.dim_in) + 1j * rng.normal(size=self.dim_in)
        y = rng.normal(size=self.dim_in) + 1j * rng.normal(size=self.dim_in)
        a, b = 0.7 - 0.2j, -1.3 + 0.5j
        lhs = self.apply(a * x + b * y)
        rhs = a * self.apply(x) + b * self.apply(y)
        scale = max(np.linalg.norm(rhs), 1e-300)
        return np.linalg.norm(lhs - rhs) / scale

    def hermiticity_defect(self, rng=None):
        """Relative value of ``<x, My> - <Mx, y>`` on a random pair."""
        rng = np.random.default_rng(1) if rng is None else rng
        x = rng.normal(size=self.dim_in) + 1j * rng.normal(size=self.dim_in)
        y = rng.normal(size=self.dim_in) + 1j * rng.normal(size=self.dim_in)
        mx, my = self.apply(x), self.apply(y)
        scale = max(np.linalg.norm(mx) * np.linalg.norm(y), 1e-300)
        return abs(np.vdot(x, my) - np.vdot(mx, y)) / scale


def matrix_map(M, hermitian=False):
    """Wrap a dense matrix as a :class:`LinearMap`."""
    M = np.asarray(M)
    return LinearMap(M.shape[1], M.shape[0], lambda x: M @ x, hermitian)


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    restarts: int = 0


def _check_square(M):
    if M.dim_in != M.dim_out:
        raise DimensionError(f"map is not square: {M.dim_out}x{M.dim_in}")


# ---------------------------------------------------------------- eigenpairs


def leading_eigenpairs(M: LinearMap, k=1, tol=DEFAULT_EIG_TOL, max_iter=None, v0=None,
                       ncv=30):
    """The ``k`` largest-modulus eigenpairs of a general map, sorted by modulus.

    Restarted Arnoldi with Krylov dimension ``min(n, ncv)``.  Small maps are
    handled densely because ARPACK needs ``n > k + 1``.
    """
    _check_square(M)
    n = M.dim_in
    if n <= k + 2:
        vals, vecs = np.linalg.eig(M.matrix())
        order = np.argsort(-np.abs(vals), kind="stable")[:k]
        return vals[order], vecs[:, order], SolveReport(1, 0.0, True)
    ncv = min(n, max(ncv, 2 * k + 1))
    max_iter = max_iter or 100 * n
    try:
        vals, vecs = spla.eigs(M.as_operator(), k=k, which="LM", v0=v0, ncv=ncv,
                               tol=tol, maxiter=max_iter)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"Arnoldi did not converge: {exc}") from exc
    order = np.argsort(-np.abs(vals), kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    res = max(np.linalg.norm(M(vecs[:, j]) - vals[j] * vecs[:, j]) for j in range(k))
    return vals, vecs, SolveReport(max_iter, float(res), True)


def dominant_eigenpair(M: LinearMap, tol=DEFAULT_EIG_TOL, max_iter=None, v0=None):
    """Largest-modulus eigenpair ``(lam, v, report)`` with ``|v| = 1``."""
    vals, vecs, rep = leading_eigenpairs(M, 1, tol=tol, max_iter=max_iter, v0=v0)
    lam, v = vals[0], vecs[:, 0]
    res = np.linalg.norm(M(v) - lam * v)
    # ARPACK's own stopping rule is relative to the Ritz value; report the true residual
    rep = SolveReport(rep.iterations, float(res), res <= max(tol, 1e-13) * max(abs(lam), 1e-300) * 10)
    if not rep.converged:
        raise ConvergenceError(f"dominant eigenpair residual {res:.2e} above tolerance")
    return lam, v, rep


def dense_dominant_eigenpair(M):
    vals, vecs = np.linalg.eig(np.asarray(M))
    j = int(np.argmax(np.abs(vals)))
    return vals[j], vecs[:, j] / np.linalg.norm(vecs[:, j])


# ------------------------------------------------------------ linear solves


def bicgstab_solve(A: LinearMap, b, x0=None, tol=DEFAULT_SOLVE_TOL, max_iter=None, rng=None):
    """Solve ``A x = b`` to absolute residual ``tol * max(1, |b|)``.

    Restarts (at most three) from a perturbed guess when BiCGStab breaks down or
    stalls; the residual is always re-evaluated from scratch.
    """
    _check_square(A)
    b = np.asarray(b, dtype=complex)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, True)
    target = tol * max(1.0, bnorm)
    max_iter = max_iter or max(200, 20 * A.dim_in)
    op = A.as_operator()
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=complex)
    rng = np.random.default_rng(12345) if rng is None else rng
    iters = 0
    for attempt in range(MAX_RESTARTS + 1):
        counter = [0]

        def cb(_xk):
            counter[0] += 1

        x_new, info = spla.bicgstab(op, b, x0=x, rtol=0.0, atol=0.5 * target,
                                    maxiter=max_iter, callback=cb)
        iters += counter[0]
        finite = bool(np.all(np.isfinite(x_new)))
        res = np.linalg.norm(A(x_new) - b) if finite else np.inf
        if finite:
            x = x_new
        if res <= target:
            return x, SolveReport(iters, float(res), True, attempt)
        if not np.isfinite(np.linalg.norm(x)):
            x = np.zeros_like(b)
        scale = max(np.linalg.norm(x), bnorm) * 1e-8
        x = x + scale * (rng.normal(size=x.shape) + 1j * rng.normal(size=x.shape))
    res = np.linalg.norm(A(x) - b)
    raise ConvergenceError(f"BiCGStab residual {res:.2e} > {target:.2e} after restarts")


def _projectors(l, r):
    """Q acting on left vectors x (x -> x - tr(xr) l) and on right vectors y."""
    def q_left(x):
        return x - np.trace(x @ r) * l

    def q_right(y):
        return y - np.trace(l @ y) * r

    return q_left, q_right


def geometric_inverse_apply(transfer, l, r, phase, y, side="right", tol=DEFAULT_SOLVE_TOL,
                            x0=None, return_report=False):
    """Apply ``Q (1 - phase Q E Q)^{-1} Q`` to the matrix ``y``.

    ``transfer(x, side)`` must apply E on the given side.  ``l`` and ``r`` are
    the fixed points with ``tr(l r) = 1``, defining ``S = |r)(l|``.  For
    ``phase = 1`` this is the pseudo-inverse of ``1 - E``.
    """
    y = np.asarray(y, dtype=complex)
    shape = y.shape
    q_left, q_right = _projectors(l, r)
    q = q_left if side == "left" else q_right

    # v - phase Q E Q v is the identity on the fixed-point direction, so the map
    # is nonsingular; for b = Q y its solution already satisfies x = Q x.
    # Projecting v first would make it singular and can derail BiCGStab.
    def mv(v):
        v = v.reshape(shape)
        return (v - phase * q(transfer(q(v), side))).ravel()

    n = y.size
    b = q(y).ravel()
    x, rep = bicgstab_solve(LinearMap(n, n, mv), b, None if x0 is None else np.ravel(x0), tol)
    x = q(x.reshape(shape))
    return (x, rep) if return_report else x


def resolvent_apply(transfer, phase, y, side="right", tol=DEFAULT_SOLVE_TOL, x0=None,
                    return_report=False):
    """Apply ``(1 - phase E)^{-1}`` for a map with spectral radius below one."""
    y = np.asarray(y, dtype=complex)
    shape = y.shape

    def mv(v):
        v = v.reshape(shape)
        return (v - phase * transfer(v, side)).ravel()

    x, rep = bicgstab_solve(LinearMap(y.size, y.size, mv), y.ravel(),
                            None if x0 is None else np.ravel(x0), tol)
    x = x.reshape(shape)
    return (x, rep) if return_report else x


def dense_geometric_inverse(E, l, r, phase, y, side="right"):
    """Dense twin of :func:`geometric_inverse_apply`.

    ``E`` is the D^2 x D^2 matrix of the right action on row-major vec(y); the
    left action is its transpose acting on vec(x^T).
    """
    D = l.shape[0]
    vr, vl = r.ravel(), l.T.ravel()
    S = np.outer(vr, vl)
    Q = np.eye(D * D) - S
    if side == "right":
        M = np.eye(D * D) - phase * Q @ E @ Q
        x = np.linalg.lstsq(M, Q @ y.ravel(), rcond=None)[0]
        return (Q @ x).reshape(D, D)
    M = np.eye(D * D) - phase * (Q @ E @ Q).T
    x = np.linalg.lstsq(M, Q.T @ y.T.ravel(), rcond=None)[0]
    return (Q.T @ x).reshape(D, D).T


# -------------------------------------------------- Hermitian eigenproblems

DENSE_EIG_THRESHOLD = 1600


def _check_hermitian(M, tol=HERM_TOL):
    defect = M.hermiticity_defect()
    if defect > tol:
        raise HermiticityError(f"map fails Hermiticity check (defect {defect:.2e})")


def hermitian_extremal_eigs(M: LinearMap, k=1, which="SA", tol=DEFAULT_EIG_TOL, method="auto",
                            max_iter=None, herm_tol=HERM_TOL):
    """Extremal eigenpairs of a Hermitian map; eigenvalues returned ascending.

    ``method='lanczos'`` runs implicitly restarted Lanczos (ARPACK, full
    reorthogonalization) from the normalized all-ones vector.  ``'dense'``
    assembles the matrix from matvecs and diagonalizes it, which resolves exact
    degeneracies that a single-vector Krylov method can miss.  ``'auto'`` picks
    dense below ``DENSE_EIG_THRESHOLD``.
    """
    _check_square(M)
    if not M.hermitian:
        raise HermiticityError("hermitian eigensolver called on a map not flagged Hermitian")
    _check_hermitian(M, herm_tol)
    n = M.dim_in
    k = min(k, n)
    use_dense = method == "dense" or (method == "auto" and (n <= DENSE_EIG_THRESHOLD or n <= k + 2))
    if use_dense:
        H = M.matrix()
        H = 0.5 * (H + H.conj().T)
        vals, vecs = np.linalg.eigh(H)
        sel = slice(0, k) if which == "SA" else slice(n - k, n)
        vals, vecs = vals[sel], vecs[:, sel]
        res = max((np.linalg.norm(M(vecs[:, j]) - vals[j] * vecs[:, j]) for j in range(k)), default=0.0)
        return vals, vecs, SolveReport(n, float(res), True)
    v0 = np.ones(n, dtype=complex) / np.sqrt(n)
    ncv = min(n, max(2 * k + 20, 40))
    try:
        vals, vecs = spla.eigsh(M.as_operator(), k=k, which=which, v0=v0, ncv=ncv, tol=tol,
                                maxiter=max_iter or 50 * n)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"Lanczos did not converge: {exc}") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    res = max(np.linalg.norm(M(vecs[:, j]) - vals[j] * vecs[:, j]) for j in range(k))
    scale = max(1.0, float(np.max(np.abs(vals))))
    # a matvec accurate only to herm_tol cannot give a smaller residual
    ok = res <= max(max(tol, 1e-13) * 1e3, herm_tol) * scale
    if not ok:
        raise ConvergenceError(f"Lanczos residual {res:.2e} above tolerance")
    return vals, vecs, SolveReport(ncv, float(res), ok)


def hermitian_lowest_eigs(M: LinearMap, k=1, tol=DEFAULT_EIG_TOL, method="auto", herm_tol=HERM_TOL):
    """The ``k`` lowest eigenpairs of a Hermitian map, ascending."""
    return hermitian_extremal_eigs(M, k, "SA", tol, method, herm_tol=herm_tol)


def dense_lowest_eigs(H, k):
    vals, vecs = scipy.linalg.eigh(np.asarray(H))
    return vals[:k], vecs[:, :k]
