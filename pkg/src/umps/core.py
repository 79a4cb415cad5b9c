"""Uniform MPS tensors, transfer maps, fixed points and gauge machinery.

Conventions
-----------
* A tensor ``A`` has shape ``(d, D, D)`` and is indexed ``A[s, alpha, beta]``.
* A left environment ``x`` is indexed ``x[bra, ket]`` and transfers as
  ``x -> sum_s bottom[s]^dag x top[s]``; a right environment ``y`` is indexed
  ``y[ket, bra]`` and transfers as ``y -> sum_s top[s] y bottom[s]^dag``.
  The pairing is ``(x|y) = tr(x y)``.
* ``top`` is the ket layer, ``bottom`` the bra layer, so ``E^B_C`` in the usual
  notation is ``apply_transfer(..., top=B, bottom=C)``.

Boundary vectors of the infinite chain never appear: everything is written in
terms of the fixed points ``l`` and ``r``.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import linalg
from .errors import ConditioningError, ConvergenceError, DimensionError, InjectivityError

TOL_FP = 1e-14
GAP_MIN = 1e-12
EIG_FLOOR = 1e-15
COND_MAX = 1e14
NULL_REL = 1e-12


def random_tensor(D, d, rng=None, real=False):
    """A random (injective with probability one) tensor of shape ``(d, D, D)``."""
    rng = np.random.default_rng(rng)
    A = rng.normal(size=(d, D, D))
    if not real:
        A = A + 1j * rng.normal(size=(d, D, D))
    return np.asarray(A, dtype=complex)


def _check_tensor(A):
    A = np.asarray(A)
    if A.ndim != 3:
        raise DimensionError(f"tensor must have shape (d, D, D'), got {A.shape}")
    return A


def apply_transfer(A, x, side="right", top=None, bottom=None):
    """Apply the (generalized) transfer map to a boundary matrix.

    Right action: ``sum_s top[s] x bottom[s]^dag``.  Left action:
    ``sum_s bottom[s]^dag x top[s]``.  Missing layers default to ``A``.
    Rectangular tensors are allowed, as needed for domain walls.
    """
    top = _check_tensor(A if top is None else top)
    bottom = _check_tensor(A if bottom is None else bottom)
    x = np.asarray(x)
    if top.shape[0] != bottom.shape[0]:
        raise DimensionError("physical dimensions of the two layers differ")
    if side == "right":
        if x.shape != (top.shape[2], bottom.shape[2]):
            raise DimensionError(f"right boundary has shape {x.shape}, expected "
                                 f"{(top.shape[2], bottom.shape[2])}")
        return np.tensordot(top @ x, bottom.conj(), axes=([0, 2], [0, 2]))
    if side == "left":
        if x.shape != (bottom.shape[1], top.shape[1]):
            raise DimensionError(f"left boundary has shape {x.shape}, expected "
                                 f"{(bottom.shape[1], top.shape[1])}")
        return np.tensordot(bottom.conj(), x @ top, axes=([0, 1], [0, 1]))
    raise ValueError(f"side must be 'left' or 'right', not {side!r}")


def transfer_matrix(top, bottom=None):
    """Dense matrix of the right action on row-major ``vec(y)``: ``sum_s top^s (x) conj(bottom^s)``."""
    bottom = top if bottom is None else bottom
    return sum(np.kron(top[s], bottom[s].conj()) for s in range(top.shape[0]))


def operator_on_tensor(O, A):
    """Tensor of ``O`` acting on the physical index: ``sum_s O[t, s] A[s]``."""
    return np.tensordot(O, A, axes=([1], [0]))


# -------------------------------------------------------------- fixed points


@dataclass
class FixedPoints:
    l: np.ndarray
    r: np.ndarray
    omega: complex = 1.0
    residual: float = 0.0

    @property
    def trace_norm(self):
        return float(np.real(np.trace(self.l @ self.r)))

    @property
    def D(self):
        return self.l.shape[0]


def _make_positive(m):
    """Fix the free phase of a fixed point of a CP map and Hermitize it."""
    t = np.trace(m)
    if abs(t) < 1e-300:
        raise InjectivityError("fixed point has vanishing trace")
    m = m * (abs(t) / t)
    return 0.5 * (m + m.conj().T)


def _dominant(A, side, tol_fp, need_gap):
    D = A.shape[1] if side == "right" else A.shape[1]
    n = D * D
    M = linalg.LinearMap(n, n, lambda v: apply_transfer(A, v.reshape(D, D), side).ravel())
    v0 = np.eye(D, dtype=complex).ravel() / np.sqrt(D)
    k = 2 if (need_gap and n > 1) else 1
    vals, vecs, rep = linalg.leading_eigenpairs(M, k, tol=tol_fp, v0=v0, ncv=min(n, 30))
    return vals, vecs[:, 0].reshape(D, D)


def fixed_points(A, tol_fp=TOL_FP, gap_min=GAP_MIN):
    """Normalize ``A`` so that the transfer map has spectral radius one.

    Returns ``(A_normalized, FixedPoints)`` with Hermitian positive definite
    ``l, r`` and ``tr(l r) = 1``.  The input array is not modified.
    """
    A = np.array(_check_tensor(A), dtype=complex)
    if A.shape[1] != A.shape[2]:
        raise DimensionError("a uniform MPS tensor must be square in its virtual indices")
    D = A.shape[1]
    vals, r = _dominant(A, "right", tol_fp, True)
    omega = vals[0]
    if len(vals) > 1 and abs(vals[1]) >= abs(omega) - gap_min * abs(omega):
        raise InjectivityError(f"degenerate dominant transfer eigenvalue: |w1|={abs(omega):.3e}, "
                               f"|w2|={abs(vals[1]):.3e}")
    if abs(omega.imag) > 1e-8 * abs(omega) or omega.real <= 0:
        raise InjectivityError(f"dominant transfer eigenvalue {omega} is not real positive")
    A /= np.sqrt(omega.real)
    _, l = _dominant(A, "left", tol_fp, False)
    l, r = _make_positive(l), _make_positive(r)
    for name, m in (("l", l), ("r", r)):
        ev = np.linalg.eigvalsh(m)
        if ev[0] <= EIG_FLOOR * ev[-1] * D:
            raise InjectivityError(f"fixed point {name} is not positive definite (min eig {ev[0]:.2e})")
    c = np.real(np.trace(l @ r))
    l, r = l / np.sqrt(c), r / np.sqrt(c)
    t = np.sqrt(np.linalg.norm(r) / np.linalg.norm(l))
    l, r = l * t, r / t
    res = max(np.linalg.norm(apply_transfer(A, l, "left") - l),
              np.linalg.norm(apply_transfer(A, r, "right") - r))
    if res > 100 * max(tol_fp, 1e-14) * max(1.0, np.linalg.norm(l), np.linalg.norm(r)):
        raise ConvergenceError(f"fixed point residual {res:.2e} above tolerance")
    return A, FixedPoints(l, r, complex(omega), float(res))


def normalize(A, tol_fp=TOL_FP):
    """Shorthand returning only the normalized tensor."""
    return fixed_points(A, tol_fp)[0]


class CorrelationLength(NamedTuple):
    xi: float
    omega2: complex
    degenerate: bool


def transfer_spectrum(A, k=3, tol=1e-13):
    """The ``k`` largest-modulus transfer eigenvalues of a normalized tensor."""
    D = A.shape[1]
    n = D * D
    M = linalg.LinearMap(n, n, lambda v: apply_transfer(A, v.reshape(D, D), "right").ravel())
    vals, _, _ = linalg.leading_eigenpairs(M, min(k, n), tol=tol,
                                           v0=np.eye(D, dtype=complex).ravel() / np.sqrt(D))
    return vals


def correlation_length(A, fp=None):
    """``xi = -1/log|w2|`` from the subdominant transfer eigenvalue.

    A product state (D = 1) has no subdominant eigenvalue; ``xi = 0`` is
    returned with ``degenerate=True``.
    """
    D = A.shape[1]
    if D == 1:
        return CorrelationLength(0.0, 0.0, True)
    vals = transfer_spectrum(A, 2)
    w2 = vals[1]
    if abs(w2) >= 1.0 - GAP_MIN:
        raise InjectivityError(f"|w2| = {abs(w2)} is not below one")
    if abs(w2) == 0.0:
        return CorrelationLength(0.0, w2, True)
    return CorrelationLength(float(-1.0 / np.log(abs(w2))), complex(w2), False)


def expectation(A, fp, O):
    """Single-site expectation value ``(l|E_O|r)``."""
    return np.trace(fp.l @ apply_transfer(A, fp.r, "right", top=operator_on_tensor(O, A)))


def two_site_tensor(A1, A2):
    """``A1^s A2^t`` as an array indexed ``[s, t, alpha, beta]``."""
    return np.einsum("sab,tbc->stac", A1, A2)


def expectation_two_site(A, fp, O2):
    """``(l|E_{O2}|r)`` for a two-site operator given as ``O2[u, v, s, t] = <uv|O|st>``."""
    AA = two_site_tensor(A, A)
    C = np.tensordot(O2, AA, axes=([2, 3], [0, 1]))
    y = np.einsum("stab,bc,stdc->ad", C, fp.r, AA.conj())
    return np.trace(fp.l @ y)


def connected_correlator(A, fp, O_alpha, O_beta, n):
    """Connected two-point function ``(l|E_Oa Q (QEQ)^{n-1} Q E_Ob|r)`` at separation ``n >= 1``."""
    if n < 1:
        raise ValueError("separation must be at least 1")
    l, r = fp.l, fp.r
    q_left, q_right = linalg._projectors(l, r)
    y = q_right(apply_transfer(A, r, "right", top=operator_on_tensor(O_beta, A)))
    for _ in range(n - 1):
        y = q_right(apply_transfer(A, y, "right"))
    x = apply_transfer(A, l, "left", top=operator_on_tensor(O_alpha, A))
    return np.trace(x @ y)


def schmidt_values(fp):
    """Schmidt coefficients of a half-infinite bipartition, descending and normalized."""
    ev = np.linalg.eigvals(fp.l @ fp.r).real
    ev = np.sort(np.clip(ev, 0.0, None))[::-1]
    ev = ev / ev.sum()
    return np.sqrt(ev)


def gauge_transform(A, G):
    """``G^{-1} A^s G``, a representation of the same state."""
    return np.linalg.solve(G, A) @ G


def left_canonical(A, fp):
    """Left-isometric representative ``l^{1/2} A l^{-1/2}`` with its fixed points (1, r')."""
    sq = hermitian_sqrt(fp.l)
    AL = sq.half @ A @ sq.inv_half
    lL = np.eye(A.shape[1], dtype=complex)
    rL = sq.half @ fp.r @ sq.half
    lL, rL = lL, 0.5 * (rL + rL.conj().T)
    return AL, FixedPoints(lL, rL, 1.0, 0.0)


# ------------------------------------------------------------------- gauge


class HermitianSqrt(NamedTuple):
    half: np.ndarray
    inv_half: np.ndarray
    cond: float


def hermitian_sqrt(m):
    """``m^{1/2}`` and ``m^{-1/2}`` from an eigendecomposition with a floor on the eigenvalues."""
    w, U = np.linalg.eigh(0.5 * (m + m.conj().T))
    wmax = float(np.max(np.abs(w)))
    floored = np.maximum(w, EIG_FLOOR * wmax)
    cond = float(wmax / floored[0])
    if cond > COND_MAX:
        raise ConditioningError(f"condition number {cond:.2e} exceeds {COND_MAX:.0e}")
    s = np.sqrt(floored)
    return HermitianSqrt((U * s) @ U.conj().T, (U / s) @ U.conj().T, cond)


def _null_columns(M, count):
    """Orthonormal basis of the right null space of ``M`` with a fixed phase convention."""
    _, S, Vh = np.linalg.svd(M, full_matrices=True)
    rank = int(np.sum(S > NULL_REL * S[0])) if S.size else 0
    if rank != M.shape[0]:
        raise ConditioningError(f"gauge matrix has rank {rank}, expected {M.shape[0]}")
    N = Vh[rank:].conj().T
    if N.shape[1] != count:
        raise DimensionError(f"null space has dimension {N.shape[1]}, expected {count}")
    for j in range(N.shape[1]):
        col = N[:, j]
        idx = int(np.argmax(np.abs(col) > 1e-12 * np.max(np.abs(col))))
        ph = col[idx] / abs(col[idx])
        N[:, j] = col / ph
    return N


@dataclass
class GaugeIsometry:
    """Null-space isometries and the square roots of the fixed points.

    ``VL[s]`` is ``D x (d-1)D`` with ``sum_s A^s^dag l^{1/2} VL^s = 0``;
    ``VR[s]`` is ``(d-1)D x D`` with ``sum_s VR^s r^{1/2} A^s^dag = 0``.
    """

    VL: np.ndarray
    VR: Optional[np.ndarray]
    l_half: np.ndarray
    l_inv_half: np.ndarray
    r_half: np.ndarray
    r_inv_half: np.ndarray

    @property
    def d(self):
        return self.VL.shape[0]

    @property
    def D(self):
        return self.VL.shape[1]

    @property
    def nX(self):
        return self.VL.shape[2]

    def VL_matrix(self):
        return self.VL.reshape(self.d * self.D, self.nX)


def build_gauge_isometry(A, fp, right=True, r=None):
    """Construct ``V_L`` (and ``V_R``) for the left-gauge tangent parameterization.

    ``r`` overrides the right fixed point used for ``r^{-1/2}``, which is how
    the domain-wall ansatz attaches the second state's environment.
    """
    d, D, _ = A.shape
    lh = hermitian_sqrt(fp.l)
    rr = fp.r if r is None else r
    rh = hermitian_sqrt(rr)
    Lmat = np.concatenate([A[s].conj().T @ lh.half for s in range(d)], axis=1)
    VL = _null_columns(Lmat, (d - 1) * D).reshape(d, D, (d - 1) * D)
    VR = None
    if right:
        Dr = rr.shape[0]
        rh_own = hermitian_sqrt(fp.r)
        Mdag = np.concatenate([A[s] @ rh_own.half for s in range(d)], axis=1)
        W = _null_columns(Mdag, (d - 1) * D).reshape(d, D, (d - 1) * D)
        VR = W.conj().transpose(0, 2, 1)
    return GaugeIsometry(VL, VR, lh.half, lh.inv_half, rh.half, rh.inv_half)


def tangent_lift(X, g: GaugeIsometry):
    """``B^s = l^{-1/2} V_L^s X r^{-1/2}`` for ``X`` of shape ``((d-1)D, D')``."""
    return g.l_inv_half @ (g.VL @ X) @ g.r_inv_half


def tangent_project(G, g: GaugeIsometry):
    """Adjoint of :func:`tangent_lift`: ``sum_s V_L^s^dag l^{-1/2} G^s r^{-1/2}``."""
    return np.einsum("sai,sab->ib", g.VL.conj(), g.l_inv_half @ G @ g.r_inv_half)


def block_lift(X, g: GaugeIsometry, K):
    """K-site block ``B[a, s1..sK, b] = (l^{-1/2} V_L^{s1})[a,i] X[i, s2..sK, c] r^{-1/2}[c, b]``.

    ``X`` has shape ``((d-1)D, d**(K-1), D')``; the result has ``K + 2`` axes.
    """
    d, D = g.d, g.D
    Dr = g.r_inv_half.shape[0]
    left = g.l_inv_half @ g.VL                    # (d, D, nX)
    B = np.einsum("sai,imc,cb->asmb", left, X, g.r_inv_half)
    return B.reshape((D,) + (d,) * K + (Dr,))


def block_project(G, g: GaugeIsometry, K):
    """Adjoint of :func:`block_lift`."""
    d, D = g.d, g.D
    Dr = g.r_inv_half.shape[0]
    G = G.reshape(D, d, d ** (K - 1), Dr)
    left = g.l_inv_half @ g.VL
    return np.einsum("sai,asmb,cb->imc", left.conj(), G, g.r_inv_half.conj())


def tensor_to_block(B):
    """``(d, D, D')`` single-site tensor to ``(D, d, D')`` block layout."""
    return np.transpose(B, (1, 0, 2))


def block_to_tensor(B):
    return np.transpose(B, (1, 0, 2))


def null_mode(A, x, p):
    """``N_p(x)^s = A^s x - e^{-ip} x A^s``; generates zero-norm tangent vectors."""
    return A @ x - np.exp(-1j * p) * (x @ A)


def block_null_mode(A, x, p, K):
    """K-site null mode ``A^{s1} x^{s2..sK} - e^{-ip} x^{s1..s_{K-1}} A^{sK}``.

    ``x`` has shape ``(D, d, ..., d, D)`` with ``K - 1`` physical axes.
    """
    t1 = np.tensordot(A.transpose(1, 0, 2), x, axes=([2], [0]))
    t2 = np.tensordot(x, A.transpose(1, 0, 2), axes=([-1], [0]))
    return t1 - np.exp(-1j * p) * t2


# ------------------------------------------------------ tangent overlaps


class Overlap(NamedTuple):
    value: complex
    disconnected: complex


def tangent_overlap(A, fp, B_bra, B_ket, p, tol=linalg.DEFAULT_SOLVE_TOL):
    """Full overlap ``<Phi_p(B_bra)|Phi_p(B_ket)>`` per unit ``2 pi delta``.

    The connected value is returned together with the coefficient ``c`` of the
    disconnected ``2 pi delta(p)`` contribution.  For gauge-fixed vectors
    ``c = 0``; otherwise callers decide what to do at ``p = 0``.  The ``-c``
    that survives away from ``p = 0`` is included in ``value``.
    """
    l, r = fp.l, fp.r
    T = lambda x, side: apply_transfer(A, x, side)
    e = np.exp(1j * p)
    local = np.trace(l @ apply_transfer(A, r, "right", top=B_ket, bottom=B_bra))
    # bra to the left of the ket
    y = apply_transfer(A, r, "right", top=B_ket, bottom=A)
    y = linalg.geometric_inverse_apply(T, l, r, e, y, "right", tol)
    left_term = e * np.trace(apply_transfer(A, l, "left", top=A, bottom=B_bra) @ y)
    # bra to the right of the ket
    x = apply_transfer(A, l, "left", top=B_ket, bottom=A)
    x = linalg.geometric_inverse_apply(T, l, r, np.conj(e), x, "left", tol)
    right_term = np.conj(e) * np.trace(x @ apply_transfer(A, r, "right", top=A, bottom=B_bra))
    c = (np.trace(l @ apply_transfer(A, r, "right", top=A, bottom=B_bra))
         * np.trace(l @ apply_transfer(A, r, "right", top=B_ket, bottom=A)))
    return Overlap(local + left_term + right_term - c, c)


# ---------------------------------------------------------------- state


@dataclass
class UmpsState:
    """A normalized uMPS tensor with its fixed points and cached gauge data."""

    A: np.ndarray
    fp: FixedPoints
    _gauge: Optional[GaugeIsometry] = field(default=None, repr=False)

    @classmethod
    def from_tensor(cls, A, tol_fp=TOL_FP):
        A, fp = fixed_points(A, tol_fp)
        return cls(A, fp)

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def D(self):
        return self.A.shape[1]

    @property
    def gauge(self):
        if self._gauge is None:
            self._gauge = build_gauge_isometry(self.A, self.fp)
        return self._gauge

    def is_left_isometric(self, tol=1e-12):
        dev = np.linalg.norm(np.einsum("sab,sac->bc", self.A.conj(), self.A) - np.eye(self.D))
        return dev < tol
