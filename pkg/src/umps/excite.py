"""Variational excitations on the momentum tangent space.

Vectors are gauge-fixed parameters ``X`` (left gauge), so the effective norm is
the identity and the variational problem is an ordinary Hermitian eigenproblem
for the effective Hamiltonian ``H(p)``.

Matvecs are computed as gradients: for a ket block ``B`` we evaluate
``G = d/d conj(B') <Phi_p(B')|H|Phi_p(B)>`` and map it back with the adjoint of
the parameterization.  Position bookkeeping always puts the ket block at site 0
and the bra block at site ``m``, which carries the phase ``exp(-i p m)``.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import linalg
from .core import (FixedPoints, UmpsState, apply_transfer, block_lift, block_project,
                   build_gauge_isometry, fixed_points, tangent_lift, tangent_project)
from .errors import ArgumentError, CapError, PairError
from .models import TwoSiteHamiltonian, apply_H_superop, energy_density, ket_pair

K_MAX = 12
MULTIPLET_TOL = 1e-8


# ================================================================ helpers


def _grad_first(Lenv, C, Renv, A2):
    """``sum_t Lenv C^{st} Renv A2^t^dag``: bra slot on the first site of a pair."""
    return np.einsum("ab,stbc,cd,ted->sae", Lenv, C, Renv, A2.conj(), optimize=True)


def _grad_second(Lenv, C, Renv, A1):
    """``sum_s A1^s^dag Lenv C^{st} Renv``: bra slot on the second site of a pair."""
    return np.einsum("sba,bc,stcd,de->tae", A1.conj(), Lenv, C, Renv, optimize=True)


def _grad_site(Lenv, T, Renv):
    return Lenv @ T @ Renv


def _left_pair(Lenv, C, bra1, bra2):
    """``sum_st (bra1^s bra2^t)^dag Lenv C^{st}``."""
    return np.einsum("syx,txa,yc,stce->ae", bra1.conj(), bra2.conj(), Lenv, C, optimize=True)


def _right_pair(C, Renv, bra1, bra2):
    """``sum_st C^{st} Renv (bra1^s bra2^t)^dag``."""
    return np.einsum("stab,bc,sdx,txc->ad", C, Renv, bra1.conj(), bra2.conj(), optimize=True)


# ============================================= environments of a ground state


@dataclass
class Environments:
    """p-independent data for one ``(state, h)`` pair, reused over the momentum grid."""

    A: np.ndarray
    fp: FixedPoints
    h: TwoSiteHamiltonian          # shifted to zero energy density
    C: np.ndarray                  # C^{st} = sum h A^u A^v
    L_h: np.ndarray                # (l|H^{AA}_{AA} (1-E)^P
    R_h: np.ndarray                # (1-E)^P H^{AA}_{AA}|r)
    energy: float
    tol: float = 1e-12

    @classmethod
    def build(cls, A, fp, h: TwoSiteHamiltonian, tol=1e-12):
        e = energy_density(A, fp, h)
        hs = h.shifted(e)
        T = lambda x, side: apply_transfer(A, x, side)
        C = ket_pair(hs.h4, A, A)
        y = apply_H_superop(hs, A, A, A, A, fp.l, "left")
        L_h = linalg.geometric_inverse_apply(T, fp.l, fp.r, 1.0, y, "left", tol)
        y = apply_H_superop(hs, A, A, A, A, fp.r, "right")
        R_h = linalg.geometric_inverse_apply(T, fp.l, fp.r, 1.0, y, "right", tol)
        return cls(A, fp, hs, C, L_h, R_h, e + h.shift, tol)

    def transfer(self, x, side):
        return apply_transfer(self.A, x, side)

    def pinv(self, phase, y, side):
        return linalg.geometric_inverse_apply(self.transfer, self.fp.l, self.fp.r, phase, y,
                                              side, self.tol)


# ======================================== single-site effective Hamiltonian

# Each surviving contribution to <Phi_p(B')|H|Phi_p(B)> under left gauge fixing, as
# a closure mapping the ket tensor B to its gradient with respect to the bra B'.
# Names: where the bra sits relative to the ket, and where h acts.


def _t_same_h_right(env, B, p):
    """Bra on the ket site, h on (0, 1)."""
    A, h4, l, r = env.A, env.h.h4, env.fp.l, env.fp.r
    return _grad_first(l, ket_pair(h4, B, A), r, A)


def _t_same_h_left(env, B, p):
    """Bra on the ket site, h on (-1, 0)."""
    A, h4, l, r = env.A, env.h.h4, env.fp.l, env.fp.r
    return _grad_second(l, ket_pair(h4, A, B), r, A)


def _t_same_env_left(env, B, p):
    """Bra on the ket site, h anywhere to the left."""
    return _grad_site(env.L_h, B, env.fp.r)


def _t_same_env_right(env, B, p):
    """Bra on the ket site, h anywhere to the right."""
    return _grad_site(env.fp.l, B, env.R_h)


def _t_next_left_h_pair(env, B, p):
    """Bra one site left of the ket, h on both of them."""
    A, h4, l, r = env.A, env.h.h4, env.fp.l, env.fp.r
    return np.exp(1j * p) * _grad_first(l, ket_pair(h4, A, B), r, A)


def _t_next_right_h_pair(env, B, p):
    """Bra one site right of the ket, h on both of them."""
    A, h4, l, r = env.A, env.h.h4, env.fp.l, env.fp.r
    return np.exp(-1j * p) * _grad_second(l, ket_pair(h4, B, A), r, A)


def _right_tail(env, B, p):
    """``(1 - e^{ip}E)^P E^B_A|r)``; environment of a ket block far to the right."""
    A, r = env.A, env.fp.r
    return env.pinv(np.exp(1j * p), apply_transfer(A, r, "right", top=B, bottom=A), "right")


def _t_far_left_env(env, B, p):
    """Bra left of the ket (any distance), h further left."""
    return np.exp(1j * p) * _grad_site(env.L_h, env.A, _right_tail(env, B, p))


def _t_far_left_h_before(env, B, p):
    """Bra left of the ket, h on (m-1, m)."""
    A = env.A
    return np.exp(1j * p) * _grad_second(env.fp.l, env.C, _right_tail(env, B, p), A)


def _t_far_left_h_after(env, B, p):
    """Bra at m <= -2, h on (m, m+1)."""
    A = env.A
    return np.exp(2j * p) * _grad_first(env.fp.l, env.C, _right_tail(env, B, p), A)


def _left_tail(env, x, p):
    return env.pinv(np.exp(-1j * p), x, "left")


def _t_far_right_env(env, B, p):
    """Bra right of the ket, h left of the ket."""
    A, r = env.A, env.fp.r
    x = apply_transfer(A, env.L_h, "left", top=B, bottom=A)
    return np.exp(-1j * p) * _grad_site(_left_tail(env, x, p), A, r)


def _t_far_right_h_before(env, B, p):
    """Bra right of the ket, h on (-1, 0)."""
    A, h4, l, r = env.A, env.h.h4, env.fp.l, env.fp.r
    x = _left_pair(l, ket_pair(h4, A, B), A, A)
    return np.exp(-1j * p) * _grad_site(_left_tail(env, x, p), A, r)


def _t_far_right_h_after(env, B, p):
    """Bra at m >= 2, h on (0, 1)."""
    A, h4, l, r = env.A, env.h.h4, env.fp.l, env.fp.r
    x = _left_pair(l, ket_pair(h4, B, A), A, A)
    return np.exp(-2j * p) * _grad_site(_left_tail(env, x, p), A, r)


HAMILTONIAN_TERMS = {
    "same_h_right": _t_same_h_right,
    "same_h_left": _t_same_h_left,
    "same_env_left": _t_same_env_left,
    "same_env_right": _t_same_env_right,
    "next_left_h_pair": _t_next_left_h_pair,
    "next_right_h_pair": _t_next_right_h_pair,
    "far_left_env": _t_far_left_env,
    "far_left_h_before": _t_far_left_h_before,
    "far_left_h_after": _t_far_left_h_after,
    "far_right_env": _t_far_right_env,
    "far_right_h_before": _t_far_right_h_before,
    "far_right_h_after": _t_far_right_h_after,
}


class EffectiveHamiltonian:
    """``H(p)`` on single-site parameters ``X`` of shape ``((d-1)D, D)``.

    The matvec sums the named terms but shares the two geometric-series solves,
    so one application costs two BiCGStab solves plus O(d^2 D^3) contractions.
    """

    def __init__(self, env: Environments, p, gauge=None):
        self.env = env
        self.p = float(p)
        self.gauge = build_gauge_isometry(env.A, env.fp, right=False) if gauge is None else gauge
        self.shape = (self.gauge.nX, env.A.shape[1])
        self.n = self.shape[0] * self.shape[1]

    def gradient(self, B):
        env, p = self.env, self.p
        A, h4, l, r, C = env.A, env.h.h4, env.fp.l, env.fp.r, env.C
        e = np.exp(1j * p)
        CB1 = ket_pair(h4, B, A)
        CB2 = ket_pair(h4, A, B)
        G = _grad_first(l, CB1, r, A) + _grad_second(l, CB2, r, A)
        G += env.L_h @ B @ r + l @ B @ env.R_h
        G += e * _grad_first(l, CB2, r, A) + np.conj(e) * _grad_second(l, CB1, r, A)
        RB = _right_tail(env, B, p)
        G += e * (env.L_h @ A @ RB) + e * _grad_second(l, C, RB, A) \
            + e * e * _grad_first(l, C, RB, A)
        x = (np.conj(e) * apply_transfer(A, env.L_h, "left", top=B, bottom=A)
             + np.conj(e) * _left_pair(l, CB2, A, A)
             + np.conj(e) ** 2 * _left_pair(l, CB1, A, A))
        G += _left_tail(env, x, p) @ A @ r
        return G

    def apply(self, X):
        X = X.reshape(self.shape)
        return tangent_project(self.gradient(tangent_lift(X, self.gauge)), self.gauge)

    def term(self, name, X):
        X = X.reshape(self.shape)
        G = HAMILTONIAN_TERMS[name](self.env, tangent_lift(X, self.gauge), self.p)
        return tangent_project(G, self.gauge)

    def linear_map(self):
        return linalg.LinearMap(self.n, self.n, lambda v: self.apply(v).ravel(), hermitian=True)

    def matrix(self):
        return self.linear_map().matrix()


def effective_norm_apply(p, X):
    """The effective norm in the gauge-fixed parameterization is the identity."""
    return X


def effective_hamiltonian_apply(p, X, env: Environments, gauge=None):
    return EffectiveHamiltonian(env, p, gauge).apply(X)


# ============================================ double-tangent coupling K(p)


class DoubleTangentCoupling:
    """``K(p)``: ``<Upsilon_{p,-p}(B1, B2)|H - E|Psi>`` as a matrix on parameters.

    ``apply(y)`` returns ``K(p) y`` where ``y`` stands for ``conj(X2)``; the
    bilinear value is ``X1^T K(p) X2`` with both vectors conjugated, see
    :meth:`value`.
    """

    def __init__(self, env: Environments, p, gauge=None):
        self.env = env
        self.p = float(p)
        self.gauge = build_gauge_isometry(env.A, env.fp, right=False) if gauge is None else gauge
        self.shape = (self.gauge.nX, env.A.shape[1])
        self.n = self.shape[0] * self.shape[1]

    def gradient(self, B2):
        """Gradient with respect to the bra block at ``m`` given the bra block ``B2`` at 0."""
        env, p = self.env, self.p
        A, l, r, C = env.A, env.fp.l, env.fp.r, env.C
        e = np.exp(1j * p)
        # slot left of B2: environment of B2 on the right
        R2 = env.pinv(e, apply_transfer(A, r, "right", top=A, bottom=B2), "right")
        G = e * (env.L_h @ A @ R2) + e * _grad_second(l, C, R2, A) + e * e * _grad_first(l, C, R2, A)
        G += e * _grad_first(l, C, r, B2)
        # slot right of B2
        x = (np.conj(e) * apply_transfer(A, env.L_h, "left", top=A, bottom=B2)
             + np.conj(e) * _left_pair(l, C, A, B2)
             + np.conj(e) ** 2 * _left_pair(l, C, B2, A))
        G += _left_tail(env, x, p) @ A @ r
        G += np.conj(e) * _grad_second(l, C, r, B2)
        return G

    def apply(self, y):
        y = y.reshape(self.shape)
        B2 = tangent_lift(np.conj(y), self.gauge)
        return tangent_project(self.gradient(B2), self.gauge)

    def value(self, X1, X2):
        """``<Upsilon(B(X1), B(X2))|H - E|Psi>`` per unit ``2 pi delta``."""
        return np.sum(np.conj(X1.reshape(self.shape)) * self.apply(np.conj(X2)))

    def matrix(self):
        return linalg.LinearMap(self.n, self.n, lambda v: self.apply(v).ravel()).matrix()


def double_tangent_overlap(p, X1, X2, env: Environments, gauge=None):
    return DoubleTangentCoupling(env, p, gauge).value(X1, X2)


# ================================================== general block engine


def _as_block(T):
    """``(d, D, D')`` tensor to ``(D, d, D')``."""
    return np.transpose(T, (1, 0, 2))


class BlockEngine:
    """Effective Hamiltonian and overlaps for K-site blocks.

    Handles the topologically trivial sector (``Ar is A``) and the domain-wall
    sector, where ``A`` lives to the left of the block and ``Ar`` to the right.
    A ket block is an array of shape ``(D, d, ..., d, Dr)`` with ``K`` physical
    axes.
    """

    def __init__(self, A, fpA, h: Optional[TwoSiteHamiltonian], K=1, Ar=None, fpAr=None,
                 tol=1e-12, gauge=None):
        if K < 1 or K > K_MAX:
            raise CapError(f"block width must be in 1..{K_MAX}, got {K}")
        self.K = K
        self.A, self.fpA = A, fpA
        self.trivial = Ar is None
        self.Ar = A if Ar is None else Ar
        self.fpAr = fpA if Ar is None else fpAr
        self.d, self.D = A.shape[0], A.shape[1]
        self.Dr = self.Ar.shape[1]
        self.tol = tol
        self.l, self.r = fpA.l, self.fpAr.r
        if gauge is None:
            gauge = build_gauge_isometry(A, fpA, right=False, r=self.fpAr.r)
        self.gauge = gauge
        nbytes = 16 * self.D * self.Dr * self.d ** (K + 2)
        self.memory_estimate = nbytes
        self.h = None
        if h is not None:
            eA = energy_density(A, fpA, h)
            if not self.trivial:
                eB = energy_density(self.Ar, self.fpAr, h)
                if abs(eA - eB) > 1e-10 * max(1.0, abs(eA)):
                    raise PairError(f"energy densities differ: {eA} vs {eB}")
            self.h = h.shifted(eA)
            self.energy = eA + h.shift
            hs = self.h
            TA = lambda x, side: apply_transfer(A, x, side)
            TB = lambda x, side: apply_transfer(self.Ar, x, side)
            y = apply_H_superop(hs, A, A, A, A, fpA.l, "left")
            self.L_h = linalg.geometric_inverse_apply(TA, fpA.l, fpA.r, 1.0, y, "left", tol)
            Ar_ = self.Ar
            y = apply_H_superop(hs, Ar_, Ar_, Ar_, Ar_, self.fpAr.r, "right")
            self.R_h = linalg.geometric_inverse_apply(TB, self.fpAr.l, self.fpAr.r, 1.0, y,
                                                      "right", tol)
        self.nX = self.gauge.nX * self.d ** (K - 1) * self.Dr
        self.Xshape = (self.gauge.nX, self.d ** (K - 1), self.Dr)

    # ---------------------------------------------------------- gap solves

    def _gap_right(self, phase, x):
        """``x sum_j (phase E)^j`` for bra A over ket Ar (left action)."""
        T = lambda v, side: apply_transfer(self.A, v, side, top=self.Ar, bottom=self.A)
        if self.trivial:
            return linalg.geometric_inverse_apply(T, self.l, self.r, phase, x, "left", self.tol)
        return linalg.resolvent_apply(T, phase, x, "left", self.tol)

    def _gap_left(self, phase, y):
        """``sum_j (phase E)^j y`` for ket A under bra Ar (right action)."""
        T = lambda v, side: apply_transfer(self.A, v, side, top=self.A, bottom=self.Ar)
        if self.trivial:
            return linalg.geometric_inverse_apply(T, self.l, self.r, phase, y, "right", self.tol)
        return linalg.resolvent_apply(T, phase, y, "right", self.tol)

    # ------------------------------------------------------------ sweeps

    def _sweep(self, B, Lenv, Renv, w0, w1, kpos, bpos, hpos):
        """Contract a finite window ``[w0, w1]``.

        Ket: ``A`` left of ``kpos``, block ``B`` on ``kpos..kpos+K-1``, ``Ar`` after.
        Bra: ``A`` left of ``bpos``, open slot on ``bpos..bpos+K-1``, ``Ar`` after.
        ``hpos`` puts h on sites ``(hpos, hpos+1)``.  Returns the slot gradient
        (shape of a block) if the slot is inside the window, otherwise the left
        environment at ``w1 + 1`` (``Renv is None``).

        Windows whose slot lies left of the ket block are swept from the right,
        by running the left-to-right sweep on the mirror image.  This keeps at
        most ``K + 2`` physical legs open.
        """
        h4 = None if (hpos is None or self.h is None) else self.h.h4
        if Renv is None or bpos >= kpos:
            return self._sweep_core(self.A, self.Ar, h4, B, Lenv, Renv, w0, w1, kpos, bpos, hpos)
        K = self.K
        Am, Arm = np.transpose(self.Ar, (0, 2, 1)), np.transpose(self.A, (0, 2, 1))
        h4m = None if h4 is None else h4.transpose(1, 0, 3, 2)
        Gm = self._sweep_core(Am, Arm, h4m, np.transpose(B), Renv.T, Lenv.T, -w1, -w0,
                              -(kpos + K - 1), -(bpos + K - 1),
                              None if hpos is None else -(hpos + 1))
        return np.transpose(Gm)

    def _sweep_core(self, A, Ar, h4, B, Lenv, Renv, w0, w1, kpos, bpos, hpos):
        K = self.K
        Ab, Arb = _as_block(A), _as_block(Ar)
        P = Lenv
        axes = ["bl", "k"]
        x = w0
        applied = hpos is None
        while x <= w1:
            if kpos <= x < kpos + K:
                if x != kpos:
                    raise ArgumentError("window cuts through the ket block")
                T, width = B, K
            else:
                T, width = (Ab if x < kpos else Arb), 1
            ik = axes.index("k")
            P = np.tensordot(P, T, axes=([ik], [0]))
            axes = axes[:ik] + axes[ik + 1:] + [("p", x + j) for j in range(width)] + ["k"]
            x += width
            if not applied and hpos + 1 < x:
                i0, i1 = axes.index(("p", hpos)), axes.index(("p", hpos + 1))
                P = np.tensordot(h4, P, axes=([2, 3], [i0, i1]))
                rest = [a for j, a in enumerate(axes) if j not in (i0, i1)]
                axes = [("p", hpos), ("p", hpos + 1)] + rest
                applied = True
            # contract every leg whose bra is fixed and which h no longer needs
            for y in sorted(a[1] for a in axes if isinstance(a, tuple)):
                if not applied and y in (hpos, hpos + 1):
                    continue
                if bpos <= y < bpos + K:
                    continue
                iy = axes.index(("p", y))
                if y < bpos:
                    ib = axes.index("bl")
                    P = np.tensordot(P, A.conj(), axes=([ib, iy], [1, 0]))
                    axes = [a for j, a in enumerate(axes) if j not in (ib, iy)] + ["bl"]
                elif "bc" not in axes:
                    P = np.tensordot(P, Ar.conj(), axes=([iy], [0]))
                    axes = [a for j, a in enumerate(axes) if j != iy] + ["bs", "bc"]
                else:
                    ib = axes.index("bc")
                    P = np.tensordot(P, Ar.conj(), axes=([ib, iy], [1, 0]))
                    axes = [a for j, a in enumerate(axes) if j not in (ib, iy)] + ["bc"]
        if not applied:
            raise ArgumentError("window does not contain the h term")
        slot = [("p", bpos + j) for j in range(K)]
        has_slot = all(s in axes for s in slot)
        if Renv is None:
            if has_slot:
                raise ArgumentError("an open slot needs a right environment")
            order = [axes.index("bl"), axes.index("k")]
            return np.transpose(P, order)
        ik = axes.index("k")
        if "bc" in axes:
            ib = axes.index("bc")
            P = np.tensordot(P, Renv, axes=([ik, ib], [0, 1]))
            axes = [a for j, a in enumerate(axes) if j not in (ik, ib)]
        else:
            P = np.tensordot(P, Renv, axes=([ik], [0]))
            axes = [a for j, a in enumerate(axes) if j != ik] + ["bs"]
        if not has_slot:
            raise ArgumentError("closed windows are not supported")
        order = [axes.index("bl")] + [axes.index(s) for s in slot] + [axes.index("bs")]
        return np.transpose(P, order)

    def _right_block_env(self, B):
        """``E^B_{Ar...}|r)``: ket block closed against bra ``Ar`` on every site."""
        P = np.tensordot(B, self.r, axes=([-1], [0]))
        for _ in range(self.K):
            P = np.tensordot(P, self.Ar.conj(), axes=([-2, -1], [0, 2]))
        return P

    def _apply_gap(self, env, n, side):
        for _ in range(n):
            if side == "left":
                env = apply_transfer(self.A, env, "left", top=self.Ar, bottom=self.A)
            else:
                env = apply_transfer(self.A, env, "right", top=self.A, bottom=self.Ar)
        return env

    # ------------------------------------------------------- gradients

    def hamiltonian_gradient(self, B, p):
        """``d/d conj(B') <Phi_p(B')|H|Phi_p(B)>`` for a gauge-fixed ket block ``B``."""
        K, l, r = self.K, self.l, self.r
        L_h, R_h = self.L_h, self.R_h
        far = 10 ** 6
        e = lambda m: np.exp(-1j * p * m)
        sw = self._sweep
        G = sw(B, L_h, r, 0, K - 1, 0, 0, None) + sw(B, l, R_h, 0, K - 1, 0, 0, None)
        for n0 in range(-1, K):
            G += sw(B, l, r, min(0, n0), max(K - 1, n0 + 1), 0, 0, n0)
        for m in range(-K, K + 1):
            if m == 0:
                continue
            lo, end = min(0, m), max(K - 1, m + K - 1)
            G += e(m) * (sw(B, L_h, r, lo, end, 0, m, None)
                         + sw(B, l, r, lo - 1, end, 0, m, lo - 1)
                         + sw(B, l, r, lo, max(end, lo + 1), 0, m, lo))
        Mc, we = K + 1, max(K - 1, 1)
        # bra far to the right
        lam = (sw(B, L_h, None, 0, we, 0, far, None) + sw(B, l, None, -1, we, 0, far, -1)
               + sw(B, l, None, 0, we, 0, far, 0))
        lam = self._apply_gap(lam, Mc - we - 1, "left")
        Lt = e(Mc) * self._gap_right(np.exp(-1j * p), lam)
        G += sw(B, Lt, r, 0, K - 1, -far, 0, None)
        # bra far to the left
        RB = self._apply_gap(self._right_block_env(B), Mc - we - 1, "right")
        Rt = np.exp(1j * p * Mc) * self._gap_left(np.exp(1j * p), RB)
        G += (sw(B, L_h, Rt, 0, we, far, 0, None) + sw(B, l, Rt, -1, we, far, 0, -1)
              + sw(B, l, Rt, 0, we, far, 0, 0))
        return G

    def norm_gradient(self, B, p):
        """``d/d conj(B') <Phi_p(B')|Phi_p(B)>`` for a gauge-fixed bra; ``B`` arbitrary.

        Returns ``(G, c)`` with ``c = (l|E^B_{A..}|r)``, the overlap of the ket
        with the ground state that multiplies the disconnected ``2 pi delta(p)``.
        """
        K, l, r = self.K, self.l, self.r
        far = 10 ** 6
        sw = self._sweep
        G = sw(B, l, r, 0, K - 1, 0, 0, None)
        for m in range(1, K + 1):
            G += np.exp(-1j * p * m) * sw(B, l, r, 0, m + K - 1, 0, m, None)
        Mc = K + 1
        lam = sw(B, l, None, 0, K - 1, 0, far, None)
        c = np.trace(lam @ r)
        lam = self._apply_gap(lam, Mc - K, "left")
        Lt = np.exp(-1j * p * Mc) * self._gap_right(np.exp(-1j * p), lam)
        G += sw(B, Lt, r, 0, K - 1, -far, 0, None)
        return G, c

    # --------------------------------------------------- parameter maps

    def lift(self, X):
        return block_lift(X.reshape(self.Xshape), self.gauge, self.K)

    def project(self, G):
        return block_project(G, self.gauge, self.K)

    def hamiltonian(self, p):
        n = self.nX

        def mv(v):
            return self.project(self.hamiltonian_gradient(self.lift(v), p)).ravel()

        return linalg.LinearMap(n, n, mv, hermitian=True)

    def coordinates(self, B, p):
        """Gauge-fixed parameters of ``Phi_p(B)`` and its ground-state overlap."""
        G, c = self.norm_gradient(B, p)
        return self.project(G), c


# ================================================================ spectra


@dataclass
class DispersionResult:
    momenta: np.ndarray
    energies: List[np.ndarray] = field(default_factory=list)
    vectors: List[np.ndarray] = field(default_factory=list)
    residuals: List[np.ndarray] = field(default_factory=list)
    reports: List[linalg.SolveReport] = field(default_factory=list)
    groups: List[np.ndarray] = field(default_factory=list)
    ground_energy: float = 0.0

    def lowest(self):
        return np.array([e[0] for e in self.energies])

    def rows(self):
        """Flat rows ``(p, branch_index, energy, residual, multiplicity_group)``."""
        out = []
        for p, E, R, g in zip(self.momenta, self.energies, self.residuals, self.groups):
            for j in range(len(E)):
                out.append((float(p), j, float(E[j]), float(R[j]), int(g[j])))
        return out


def multiplet_groups(vals, tol=MULTIPLET_TOL):
    """Label sorted eigenvalues so that neighbours within ``tol`` share a group index."""
    groups = np.zeros(len(vals), dtype=int)
    for j in range(1, len(vals)):
        groups[j] = groups[j - 1] + (0 if abs(vals[j] - vals[j - 1]) <= tol else 1)
    return groups


def momentum_grid(n=64):
    """Closed-open grid on ``[-pi, pi)``."""
    return -np.pi + 2 * np.pi * np.arange(n) / n


@dataclass
class DomainWallPair:
    """Two degenerate ground states for the domain-wall ansatz, phase-aligned."""

    A: np.ndarray
    fpA: FixedPoints
    Ar: np.ndarray
    fpAr: FixedPoints
    mixed_eigenvalue: complex

    @classmethod
    def build(cls, A, Ar, h: TwoSiteHamiltonian, fix_phase=True):
        A, fpA = fixed_points(A)
        Ar, fpAr = fixed_points(Ar)
        eA, eB = energy_density(A, fpA, h), energy_density(Ar, fpAr, h)
        if abs(eA - eB) > 1e-10 * max(1.0, abs(eA)):
            raise PairError(f"energy densities differ: {eA:.12f} vs {eB:.12f}")
        D, Dr = A.shape[1], Ar.shape[1]
        n = D * Dr
        M = linalg.LinearMap(n, n, lambda v: apply_transfer(
            A, v.reshape(D, Dr), "right", top=A, bottom=Ar).ravel())
        vals = linalg.leading_eigenpairs(M, min(4, n), tol=1e-12)[0]
        lam = vals[0]
        if abs(lam) > 1 - 1e-10:
            raise PairError(f"mixed transfer map has spectral radius {abs(lam):.3e}; "
                            "the states are not orthogonal")
        if fix_phase and abs(lam) > 1e-14:
            lam = _phase_reference(vals)
            Ar = Ar * (lam / abs(lam))
            lam = abs(lam)
        return cls(A, fpA, Ar, fpAr, complex(lam))


def _phase_reference(vals, rel=1e-8):
    """The leading mixed eigenvalue that is rotated onto the positive real axis.

    A phase ``e^{i phi}`` on the second state rotates every mixed eigenvalue
    and shifts the domain-wall momentum by ``phi``.  When several eigenvalues
    share the largest modulus the choice is made from their relative angles
    only (the candidate whose counter-clockwise neighbours come first), so it
    does not depend on the phase the second state was handed in with.
    """
    import warnings

    vals = np.asarray(vals)
    top = vals[np.abs(vals) >= (1 - rel) * np.abs(vals[0])]
    if len(top) == 1:
        return top[0]
    ang = np.angle(top)
    keys = [tuple(np.round(np.sort(np.mod(ang - a, 2 * np.pi))[1:], 9)) for a in ang]
    best = min(range(len(top)), key=lambda j: keys[j])
    tie = sum(k == keys[best] for k in keys) > 1
    warnings.warn(f"{len(top)} mixed transfer eigenvalues share the largest modulus; the "
                  "domain-wall momentum origin is fixed by their relative angles"
                  + (" and is ambiguous (symmetric arrangement)" if tie else ""))
    return top[best]


def _solve(M, k, tol, method, herm_tol=linalg.HERM_TOL):
    vals, vecs, rep = linalg.hermitian_lowest_eigs(M, k, tol, method, herm_tol)
    res = np.array([np.linalg.norm(M(vecs[:, j]) - vals[j] * vecs[:, j]) for j in range(len(vals))])
    return vals, vecs, res, rep


def hermiticity_tolerance(*fps):
    """Round-off floor for the Hermiticity self-check of a gauge-fixed ``H(p)``.

    The parameterization goes through ``l^{-1/2}`` and ``r^{-1/2}``, so the
    absolute error of the fixed points is amplified by their condition
    numbers.  Well-conditioned states keep the default; states whose Schmidt
    spectrum runs into round-off (``D`` larger than the state needs) get
    ``1e-15 max(cond(l), cond(r))``; measured defects sit 2-3 orders below.
    """
    cond = 1.0
    for m in fps:
        w = np.linalg.eigvalsh(m)
        cond = max(cond, w[-1] / max(w[0], 1e-300))
    return max(linalg.HERM_TOL, 1e-15 * cond)


def conditioned_hermiticity_tolerance(*fps):
    """:func:`hermiticity_tolerance`, warning when it exceeds the default."""
    import warnings
    herm_tol = hermiticity_tolerance(*fps)
    if herm_tol > linalg.HERM_TOL:
        warnings.warn(f"fixed points are poorly conditioned; Hermiticity checked to {herm_tol:.1e} "
                      "only (consider a smaller bond dimension)")
    return herm_tol


def _reflect(A, fp, h):
    At = np.transpose(A, (0, 2, 1)).copy()
    return At, FixedPoints(fp.r.T.copy(), fp.l.T.copy(), fp.omega, fp.residual), h.reflected()


def excitation_spectrum(state, h: TwoSiteHamiltonian, p_grid, k=1, K_block=1,
                        sector="trivial", state2=None, gauge="left", tol=1e-12,
                        method="auto", eta_warn=1e-6):
    """Lowest ``k`` variational excitation energies at each momentum.

    ``state`` is a :class:`UmpsState` (or a tensor).  For ``sector="domainwall"``
    ``state2`` is the second ground state; the pair is phase-aligned.
    ``gauge="right"`` solves the mirror-image problem (transposed tensors,
    reflected h, momentum ``-p``), which is the right-gauge parameterization of
    the same variational space.
    """
    import warnings
    from .tdvp import gradient

    if not isinstance(state, UmpsState):
        state = UmpsState.from_tensor(state)
    A, fp = state.A, state.fp
    p_grid = np.atleast_1d(np.asarray(p_grid, dtype=float))
    sign = 1.0
    Ar = fpAr = None
    if sector == "domainwall":
        if state2 is None:
            raise PairError("domain-wall sector needs a second state")
        if not isinstance(state2, UmpsState):
            state2 = UmpsState.from_tensor(state2)
        pair = DomainWallPair.build(A, state2.A, h)
        A, fp, Ar, fpAr = pair.A, pair.fpA, pair.Ar, pair.fpAr
    elif sector != "trivial":
        raise ArgumentError(f"unknown sector {sector!r}")
    if gauge == "right":
        A, fp, h = _reflect(A, fp, h)
        if Ar is not None:
            Ar, fpAr, _ = _reflect(Ar, fpAr, h)
            A, fp, Ar, fpAr = Ar, fpAr, A, fp
        sign = -1.0
    elif gauge != "left":
        raise ArgumentError(f"gauge must be 'left' or 'right', not {gauge!r}")
    if sector == "trivial" and eta_warn is not None:
        eta = gradient(A, fp, h).eta
        if eta > eta_warn:
            warnings.warn(f"state is not converged (eta = {eta:.2e}); spectrum is not variational")
    result = DispersionResult(p_grid)
    if sector == "trivial" and K_block == 1:
        env = Environments.build(A, fp, h, tol)
        g = build_gauge_isometry(A, fp, right=False)
        result.ground_energy = env.energy
        make = lambda p: EffectiveHamiltonian(env, p, g).linear_map()
    else:
        eng = BlockEngine(A, fp, h, K_block, Ar, fpAr, tol)
        result.ground_energy = eng.energy
        make = eng.hamiltonian
    herm_tol = conditioned_hermiticity_tolerance(fp.l, (fp if fpAr is None else fpAr).r)
    for p in p_grid:
        M = make(sign * p)
        vals, vecs, res, rep = _solve(M, k, tol, method, herm_tol)
        result.energies.append(vals)
        result.vectors.append(vecs)
        result.residuals.append(res)
        result.reports.append(rep)
        result.groups.append(multiplet_groups(vals))
    return result


# ====================================================== block complement


def block_complement_project(K, B, state: UmpsState, p=0.0):
    """Parameters ``Y`` of the component of ``Phi_{p,K}(B)`` orthogonal to ``T_{p,K-1}``.

    ``Y`` has shape ``((d-1)D, d^(K-2), (d-1)D)`` and enters through
    ``l^{-1/2} V_L^{s1} Y^{s2..s_{K-1}} V_R^{sK} r^{-1/2}``.
    """
    if K < 2:
        raise ArgumentError("the complement space needs K >= 2")
    A, fp = state.A, state.fp
    g = build_gauge_isometry(A, fp)
    eng = BlockEngine(A, fp, None, K, gauge=g)
    X, _ = eng.coordinates(B, p)
    d = A.shape[0]
    X = X.reshape(g.nX, d ** (K - 2), d, A.shape[1])
    return np.einsum("imtc,tjc->imj", X, g.VR.conj())


def complement_lift(Y, state: UmpsState, K):
    g = build_gauge_isometry(state.A, state.fp)
    d, D = state.d, state.D
    Y = Y.reshape(g.nX, d ** (K - 2), g.nX)
    X = np.einsum("imj,tjc->imtc", Y, g.VR).reshape(g.nX, d ** (K - 1), D)
    return block_lift(X, g, K)


# =================================================== linearized TDVP


@dataclass
class LinearizedSpectrum:
    p: float
    omegas: np.ndarray             # all eigenvalues, sorted
    positive: np.ndarray           # the k lowest non-negative branch values
    imag_max: float
    dual_defect: float


def linearized_blocks(env: Environments, p, gauge=None):
    g = build_gauge_isometry(env.A, env.fp, right=False) if gauge is None else gauge
    Hp = EffectiveHamiltonian(env, p, g).matrix()
    Hm = EffectiveHamiltonian(env, -p, g).matrix()
    Kp = DoubleTangentCoupling(env, p, g).matrix()
    Km = DoubleTangentCoupling(env, -p, g).matrix()
    return Hp, Hm, Kp, Km


def _linearized_eigs(Hp, Hm, Kp, Km):
    n = Hp.shape[0]
    M = np.block([[Hp, Kp], [-Km.conj(), -Hm.conj()]])
    return np.linalg.eigvals(M)


def linearized_tdvp_spectrum(state, h, p, k=1, tol=1e-12):
    """Eigenvalues of the linearized TDVP problem at momentum ``p``.

    Solves ``omega diag(1, -1) v = [[H(p), K(p)], [conj K(-p), conj H(-p)]] v``
    by explicit reduction to a standard eigenproblem.  The dual structure
    ``omega(-p) = -omega(p)`` is measured and reported.
    """
    if not isinstance(state, UmpsState):
        state = UmpsState.from_tensor(state)
    env = Environments.build(state.A, state.fp, h, tol)
    g = build_gauge_isometry(state.A, state.fp, right=False)
    Hp, Hm, Kp, Km = linearized_blocks(env, p, g)
    w = _linearized_eigs(Hp, Hm, Kp, Km)
    w_dual = _linearized_eigs(Hm, Hp, Km, Kp)
    ws = np.sort(w.real)
    wd = np.sort(-w_dual.real)
    pos = np.sort(w.real[w.real >= -1e-12])[:k]
    return LinearizedSpectrum(float(p), w[np.argsort(w.real)], pos,
                              float(np.max(np.abs(w.imag))) if w.size else 0.0,
                              float(np.max(np.abs(ws - wd))) if w.size else 0.0)
