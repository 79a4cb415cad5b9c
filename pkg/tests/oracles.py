"""Brute-force reference computations.

Everything here works site by site on a finite strip of the infinite chain,
closed with the fixed points ``l`` and ``r``.  Infinite sums over positions are
truncated; the tails decay like ``|w2|^n`` so a few dozen sites suffice for
the small, well-gapped test states.  Nothing in this module calls the
geometric-series machinery of the package.
"""

import itertools

import numpy as np


# ------------------------------------------------------------ dense maps


def dense_transfer(top, bottom=None):
    """``E = sum_s top^s (x) conj(bottom^s)`` acting on ``vec(y[ket, bra])``."""
    bottom = top if bottom is None else bottom
    return sum(np.kron(top[s], bottom[s].conj()) for s in range(top.shape[0]))


def dense_fixed_points(A):
    """Dominant eigenvalue and normalized ``l, r`` from a dense diagonalization."""
    D = A.shape[1]
    E = dense_transfer(A)
    w, V = np.linalg.eig(E)
    order = np.argsort(-np.abs(w))
    w, V = w[order], V[:, order]
    r = V[:, 0].reshape(D, D)
    wl, U = np.linalg.eig(E.T)
    l = U[:, np.argmax(np.abs(wl))].reshape(D, D)   # x[bra, ket] with vec over (ket, bra)
    l = l.T
    r = r * (abs(np.trace(r)) / np.trace(r))
    l = l * (abs(np.trace(l)) / np.trace(l))
    c = np.trace(l @ r)
    return w, l / np.sqrt(c), r / np.sqrt(c)


# ------------------------------------------------------------ strip contractions


def merge_sites(ts):
    """Product of consecutive site tensors as one tensor with a fused physical index."""
    T = ts[0]
    for t in ts[1:]:
        T = np.einsum("sab,tbc->stac", T, t).reshape(T.shape[0] * t.shape[0], T.shape[1],
                                                     t.shape[2])
    return T


_SUPEROPS = {}


def _superop(tops, bots, O=None):
    """Dense column map ``v[ket, bra] -> v'`` as a matrix, cached by identity."""
    key = tuple(map(id, tops)) + (None,) + tuple(map(id, bots)) + (id(O),)
    hit = _SUPEROPS.get(key)
    if hit is not None and all(a is b for a, b in zip(hit[0], list(tops) + list(bots) + [O])):
        return hit[1]
    T, Bt = merge_sites(tops), merge_sites(bots)
    if O is not None:
        Bt = np.tensordot(O.conj().T, Bt, axes=([1], [0]))       # bra side carries O^dag
    M = np.einsum("sac,sbd->abcd", T, Bt.conj()).reshape(T.shape[1] * Bt.shape[1], -1)
    if len(_SUPEROPS) > 20000:
        _SUPEROPS.clear()
    _SUPEROPS[key] = (list(tops) + list(bots) + [O], M)
    return M


def strip(tops, bots, l, r, ops=()):
    """``(l| prod_x E^{top_x}_{bot_x} |r)`` with operators inserted.

    ``tops`` and ``bots`` are lists of site tensors ``(d, a, b)`` for consecutive
    sites 0..L-1; ``ops`` is a list of ``(start, width, O)`` where ``O`` is the
    ``d^w x d^w`` matrix ``<out|O|in>`` acting on sites ``start..start+w-1``.
    Operators must not overlap (merge them first).
    """
    starts = {s: (w, O) for s, w, O in ops}
    v = np.asarray(l).T.ravel()                           # v[ket, bra]
    x = 0
    L = len(tops)
    while x < L:
        if x in starts:
            w, O = starts[x]
            v = v @ _superop(tops[x:x + w], bots[x:x + w], O)
            x += w
        else:
            v = v @ _superop(tops[x:x + 1], bots[x:x + 1])
            x += 1
    return v @ np.asarray(r).ravel()


def split_block(B, d):
    """Exact MPS factorization of a ``(D, d, .., d, D')`` block into site tensors."""
    D, Dr = B.shape[0], B.shape[-1]
    K = B.ndim - 2
    out = []
    rest = B.reshape(D, -1)
    a = D
    for j in range(K - 1):
        M = rest.reshape(a * d, -1)
        U, S, Vh = np.linalg.svd(M, full_matrices=False)
        keep = max(1, int(np.sum(S > 1e-14 * S[0])))
        U, S, Vh = U[:, :keep], S[:keep], Vh[:keep]
        out.append(U.reshape(a, d, keep).transpose(1, 0, 2))
        rest = S[:, None] * Vh
        a = keep
    out.append(rest.reshape(a, d, Dr).transpose(1, 0, 2))
    return out


def energy_density(A, l, r, h):
    return strip([A, A], [A, A], l, r, [(0, 2, h)]).real


# ------------------------------------------------------------ chain layouts


class Chain:
    """Site tensors of a ket or bra with up to two embedded blocks.

    ``left`` fills sites before the first block, ``right`` sites after it (the
    domain-wall case has ``left != right``).  ``blocks`` maps a start site to a
    list of block site tensors; between two blocks the ``right`` tensor is used.
    """

    def __init__(self, left, right, blocks=None):
        self.left, self.right = left, right
        self.blocks = dict(blocks or {})
        self.first = min(self.blocks) if self.blocks else None
        self._sites = {}
        for s, ts in self.blocks.items():
            for j, t in enumerate(ts):
                self._sites[s + j] = t

    def site(self, x):
        if x in self._sites:
            return self._sites[x]
        if self.first is None or x < self.first:
            return self.left
        return self.right

    def span(self):
        if not self._sites:
            return None
        return min(self._sites), max(self._sites)


def chain_value(ket: Chain, bra: Chain, l, r, ops=()):
    """Strip value for ket/bra chains and operators ``(start, width, O)``."""
    lo, hi = [], []
    for c in (ket, bra):
        s = c.span()
        if s:
            lo.append(s[0])
            hi.append(s[1])
    for s, w, _ in ops:
        lo.append(s)
        hi.append(s + w - 1)
    a, b = min(lo), max(hi)
    tops = [ket.site(x) for x in range(a, b + 1)]
    bots = [bra.site(x) for x in range(a, b + 1)]
    return strip(tops, bots, l, r, [(s - a, w, O) for s, w, O in ops])


# ------------------------------------------------------- effective operators


CLASSES_K1 = {
    "same_h_right": lambda m, n: m == 0 and n == 0,
    "same_h_left": lambda m, n: m == 0 and n == -1,
    "same_env_left": lambda m, n: m == 0 and n <= -2,
    "same_env_right": lambda m, n: m == 0 and n >= 1,
    "next_left_h_pair": lambda m, n: m == -1 and n == -1,
    "next_right_h_pair": lambda m, n: m == 1 and n == 0,
    "far_left_env": lambda m, n: m <= -1 and n <= m - 2,
    "far_left_h_before": lambda m, n: m <= -1 and n == m - 1,
    "far_left_h_after": lambda m, n: m <= -2 and n == m,
    "far_right_env": lambda m, n: m >= 1 and n <= -2,
    "far_right_h_before": lambda m, n: m >= 1 and n == -1,
    "far_right_h_after": lambda m, n: m >= 2 and n == 0,
}


def classify_k1(m, n):
    for name, test in CLASSES_K1.items():
        if test(m, n):
            return name
    return None


def hamiltonian_configurations(A, l, r, h_shifted, B_ket, B_bra, p, N, Ar=None):
    """``{(m, n): e^{-ipm} <B_bra at m| h_{n,n+1} |B_ket at 0>}`` for ``|m|, |n| <= N``.

    ``B_ket`` and ``B_bra`` are lists of site tensors (a split block); ``Ar``
    is the tensor to the right of the blocks (domain walls).
    """
    Ar = A if Ar is None else Ar
    K = len(B_ket)
    ket = Chain(A, Ar, {0: B_ket})
    out = {}
    for m in range(-N, N + 1):
        bra = Chain(A, Ar, {m: B_bra})
        for n in range(-N, N + K + 1):
            out[(m, n)] = np.exp(-1j * p * m) * chain_value(ket, bra, l, r, [(n, 2, h_shifted)])
    return out


def norm_configurations(A, l, r, B_ket, B_bra, p, N, Ar=None):
    Ar = A if Ar is None else Ar
    ket = Chain(A, Ar, {0: B_ket})
    return {m: np.exp(-1j * p * m) * chain_value(ket, Chain(A, Ar, {m: B_bra}), l, r)
            for m in range(-N, N + 1)}


def double_tangent_configurations(A, l, r, h_shifted, B1, B2, p, N):
    """``e^{-ipm} <B1 at m, B2 at 0| h_{n,n+1} |Psi>`` for ``m != 0``."""
    ket = Chain(A, A)
    out = {}
    for m in range(-N, N + 1):
        if m == 0:
            continue
        bra = Chain(A, A, {m: [B1], 0: [B2]})
        for n in range(-N, N + 1):
            out[(m, n)] = np.exp(-1j * p * m) * chain_value(ket, bra, l, r, [(n, 2, h_shifted)])
    return out


def variance_density(A, l, r, h_shifted, N):
    """``sum_n <h_{0,1} h_{n,n+1}>`` for a shifted ``h`` (the variance per site)."""
    d = A.shape[0]
    I = np.eye(d)
    hh = {0: h_shifted @ h_shifted,
          1: np.kron(h_shifted, I) @ np.kron(I, h_shifted),
          -1: np.kron(I, h_shifted) @ np.kron(h_shifted, I)}
    ket = bra = Chain(A, A)
    total = 0.0
    for n in range(-N, N + 1):
        if n == 0:
            ops = [(0, 2, hh[0])]
        elif n == 1:
            ops = [(0, 3, hh[1])]
        elif n == -1:
            ops = [(-1, 3, hh[-1])]
        elif n > 0:
            ops = [(0, 2, h_shifted), (n, 2, h_shifted)]
        else:
            ops = [(n, 2, h_shifted), (0, 2, h_shifted)]
        total += chain_value(ket, bra, l, r, ops)
    return total


def connected_structure_factor(A, l, r, O, p, N):
    """``sum_n e^{ipn} <O_0 O_n>_c`` by explicit strips."""
    e0 = strip([A], [A], l, r, [(0, 1, O)])
    e0c = strip([A], [A], l, r, [(0, 1, O.conj().T)])
    total = strip([A], [A], l, r, [(0, 1, O.conj().T @ O)]) - e0c * e0
    for n in range(1, N + 1):
        tops = [A] * (n + 1)
        right = strip(tops, tops, l, r, [(0, 1, O.conj().T), (n, 1, O)]) - e0c * e0
        left = strip(tops, tops, l, r, [(0, 1, O), (n, 1, O.conj().T)]) - e0c * e0
        total += np.exp(1j * p * n) * right + np.exp(-1j * p * n) * left
    return total


def connected_structure_factor_wide(A, l, r, O, w, p, N):
    """Same sum for a ``w``-site operator; overlapping placements use the merged product."""
    d = A.shape[0]
    Od = O.conj().T
    e0 = strip([A] * w, [A] * w, l, r, [(0, w, O)])
    e0c = strip([A] * w, [A] * w, l, r, [(0, w, Od)])
    total = 0
    for n in range(-N, N + 1):
        if abs(n) >= w:
            lo = min(0, n)
            L = abs(n) + w
            ops = [(0 - lo, w, Od), (n - lo, w, O)]
            ops.sort(key=lambda t: t[0])
            v = strip([A] * L, [A] * L, l, r, ops)
        else:
            L = w + abs(n)
            I = np.eye(d ** abs(n))
            if n >= 0:
                M = np.kron(Od, I) @ np.kron(I, O)
            else:
                M = np.kron(I, Od) @ np.kron(O, I)
            v = strip([A] * L, [A] * L, l, r, [(0, L, M)])
        total += np.exp(1j * p * n) * (v - e0c * e0)
    return total


# ------------------------------------------------------------ test states


def decay_sites(A, l, r, target=1e-14):
    """Sites needed for ``|w2|^n < target``."""
    w = np.sort(np.abs(np.linalg.eigvals(dense_transfer(A))))[::-1]
    w2 = w[1] if len(w) > 1 else 0.0
    if w2 < 1e-6:
        return 4
    return int(np.ceil(np.log(target) / np.log(w2))) + 2


def all_index_tuples(d, K):
    return list(itertools.product(range(d), repeat=K))
