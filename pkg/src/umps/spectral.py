"""Dynamic structure on the tangent space: kernel polynomial expansion of Im G.

For a local operator ``O`` the state ``O_p|Psi>`` is exactly a (block) tangent
vector.  With its gauge-fixed parameters ``X_O`` the spectral function is

    A(p, w) = <X_O, delta(w - H(p)) X_O>,

whose integral over ``w`` is ``<X_O, X_O>``.  ``A`` is expanded in Chebyshev
polynomials of the rescaled effective Hamiltonian.
"""

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import linalg
from .core import UmpsState, build_gauge_isometry
from .errors import ArgumentError, BoundsError, SupportError
from .excite import (BlockEngine, EffectiveHamiltonian, Environments,
                     conditioned_hermiticity_tolerance)
from .io import atomic_write_text

PAD = 0.05
EPS_MARGIN = 0.0125
BLOWUP = 1e3


# ------------------------------------------------------ operator embedding


@dataclass
class TangentOperator:
    X: np.ndarray
    p: float
    K: int
    support: int
    ground_component: complex      # <Psi|O|Psi>, multiplies 2 pi delta(p)


def _operator_support(O, d):
    O = np.asarray(O, dtype=complex)
    if O.ndim == 2:
        n = O.shape[0]
        w = int(round(np.log(n) / np.log(d))) if n > 1 else 1
        if d ** w != n or O.shape[1] != n:
            raise ArgumentError(f"operator of shape {O.shape} does not act on sites of dimension {d}")
        return O.reshape((d,) * (2 * w)), w
    if O.ndim % 2 or any(s != d for s in O.shape):
        raise ArgumentError(f"operator of shape {O.shape} does not act on sites of dimension {d}")
    return O, O.ndim // 2


def operator_block(O, A, K):
    """``B^{s1..sK} = sum <s1..sw|O|t1..tw> A^{t1}..A^{tw} A^{s_{w+1}}..A^{sK}``."""
    d, D, _ = A.shape
    O, w = _operator_support(O, d)
    if w > K:
        raise SupportError(f"operator acts on {w} sites but the block holds only {K}")
    T = np.transpose(A, (1, 0, 2))
    for _ in range(K - 1):
        T = np.tensordot(T, np.transpose(A, (1, 0, 2)), axes=([-1], [0]))
    # T has axes (D, t1..tK, D); act on the first w physical legs
    out = np.tensordot(O, T, axes=(list(range(w, 2 * w)), list(range(1, w + 1))))
    return np.moveaxis(out, list(range(w)), list(range(1, w + 1)))


def operator_to_tangent(O, state, p, K=1, engine: Optional[BlockEngine] = None):
    """Gauge-fixed parameters of ``O_p|Psi>`` with its ground-state component removed."""
    if not isinstance(state, UmpsState):
        state = UmpsState.from_tensor(state)
    A, fp = state.A, state.fp
    _, w = _operator_support(O, A.shape[0])
    if w > K:
        raise SupportError(f"operator acts on {w} sites but the block holds only {K}")
    if engine is None:
        engine = BlockEngine(A, fp, None, K, gauge=build_gauge_isometry(A, fp))
    B = operator_block(O, A, K)
    X, c = engine.coordinates(B, p)
    return TangentOperator(X.ravel(), float(p), K, w, complex(c))


# --------------------------------------------------------- Chebyshev series


@dataclass
class SpectralSeries:
    p: float
    moments: np.ndarray
    a: float                       # half-width of the scaled interval
    b: float                       # centre
    bounds: tuple
    kernel: str = "jackson"
    weight: float = 0.0

    @property
    def N(self):
        return len(self.moments)

    @property
    def resolution(self):
        """Jackson broadening in energy units, ``pi a / N``."""
        return np.pi * self.a / self.N

    def scaled(self, omega):
        return (np.asarray(omega, dtype=float) - self.b) / self.a

    def to_json(self):
        return {"p": self.p, "a": self.a, "b": self.b, "bounds": list(self.bounds),
                "kernel": self.kernel, "weight": self.weight, "resolution": self.resolution,
                "moments": [float(m) for m in self.moments]}


def spectral_bounds(M: linalg.LinearMap, pad=PAD, tol=1e-8, herm_tol=linalg.HERM_TOL):
    """Extremal Ritz values of ``M`` widened by ``pad`` times the spectral width."""
    lo = linalg.hermitian_extremal_eigs(M, 1, "SA", tol, herm_tol=herm_tol)[0][0]
    hi = linalg.hermitian_extremal_eigs(M, 1, "LA", tol, herm_tol=herm_tol)[0][-1]
    width = max(hi - lo, 1e-12)
    return float(lo - pad * width), float(hi + pad * width)


def chebyshev_moments(M: linalg.LinearMap, X, N, bounds=None, p=0.0, eps=EPS_MARGIN,
                      herm_tol=linalg.HERM_TOL):
    """``mu_n = <X, T_n(Hs) X>`` with ``Hs = (M - b) / a`` mapping ``bounds`` into ``[-1+eps/2, 1-eps/2]``."""
    if N < 1:
        raise ArgumentError("need at least one moment")
    if bounds is None:
        bounds = spectral_bounds(M, herm_tol=herm_tol)
    lo, hi = bounds
    if not hi > lo:
        raise ArgumentError(f"invalid spectral bounds {bounds}")
    a = (hi - lo) / (2.0 - eps)
    b = 0.5 * (hi + lo)
    X = np.asarray(X, dtype=complex).ravel()
    nX = np.linalg.norm(X)
    mu = np.zeros(N)
    mv = lambda v: (M(v) - b * v) / a
    mu[0] = np.vdot(X, X).real
    if N == 1:
        return SpectralSeries(float(p), mu, float(a), float(b), (float(lo), float(hi)), weight=mu[0])
    v_prev, v = X, mv(X)
    mu[1] = np.vdot(X, v).real
    # T_{2n} = 2 T_n^2 - 1 and T_{2n+1} = 2 T_{n+1} T_n - T_1: two moments per matvec
    n = 1
    while 2 * n < N:
        mu[2 * n] = 2.0 * np.vdot(v, v).real - mu[0]
        if 2 * n + 1 >= N:
            break
        v_prev, v = v, 2.0 * mv(v) - v_prev
        if np.linalg.norm(v) > BLOWUP * max(nX, 1e-300):
            wider = spectral_bounds(M, pad=4 * PAD, tol=1e-10, herm_tol=herm_tol)
            raise BoundsError(f"Chebyshev recurrence diverged at n={n + 1}: bounds {bounds} do not "
                              f"enclose the spectrum; re-estimated {wider}", wider)
        mu[2 * n + 1] = 2.0 * np.vdot(v, v_prev).real - mu[1]
        n += 1
    return SpectralSeries(float(p), mu, float(a), float(b), (float(lo), float(hi)), weight=mu[0])


def kernel_coefficients(N, kernel="jackson"):
    n = np.arange(N)
    if kernel == "dirichlet":
        return np.ones(N)
    if kernel == "jackson":
        q = np.pi / (N + 1)
        return ((N - n + 1) * np.cos(q * n) + np.sin(q * n) / np.tan(q)) / (N + 1)
    raise ArgumentError(f"unknown kernel {kernel!r}; use 'jackson' or 'dirichlet'")


def reconstruct(series: SpectralSeries, omega, kernel=None):
    """Kernel-damped Chebyshev sum ``A(w)`` on ``omega``; zero outside the scaled interval."""
    kernel = series.kernel if kernel is None else kernel
    g = kernel_coefficients(series.N, kernel)
    x = series.scaled(omega)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    xi = x[inside]
    theta = np.arccos(xi)
    c = g * series.moments
    c[1:] *= 2.0
    # T_n(cos t) = cos(n t)
    vals = np.cos(np.outer(theta, np.arange(series.N))) @ c
    out[inside] = vals / (np.pi * series.a * np.sqrt(1 - xi ** 2))
    return out


def integrate(omega, values):
    return float(np.trapezoid(values, omega)) if hasattr(np, "trapezoid") else float(np.trapz(values, omega))


# ----------------------------------------------------------------- pipeline


@dataclass
class SpectralFunction:
    p_grid: np.ndarray
    omega: np.ndarray
    series: List[SpectralSeries]
    values: np.ndarray             # (len(p_grid), len(omega))
    ground_components: List[complex] = field(default_factory=list)


def spectral_function(state, h, O, p_grid, N, omega, K=1, kernel="jackson", bounds=None,
                      tol=1e-12):
    """``A(p, w)`` for the operator ``O`` on a momentum grid."""
    if not isinstance(state, UmpsState):
        state = UmpsState.from_tensor(state)
    A, fp = state.A, state.fp
    g = build_gauge_isometry(A, fp)
    omega = np.asarray(omega, dtype=float)
    p_grid = np.atleast_1d(np.asarray(p_grid, dtype=float))
    herm_tol = conditioned_hermiticity_tolerance(fp.l, fp.r)
    eng_h = BlockEngine(A, fp, h, K, tol=tol, gauge=g)
    env = Environments.build(A, fp, h, tol) if K == 1 else None
    out, rows, ground = [], [], []
    for p in p_grid:
        T = operator_to_tangent(O, state, p, K, eng_h)
        if K == 1:
            M = EffectiveHamiltonian(env, p, g).linear_map()
        else:
            M = eng_h.hamiltonian(p)
        s = chebyshev_moments(M, T.X, N, bounds, p, herm_tol=herm_tol)
        s.kernel = kernel
        out.append(s)
        rows.append(reconstruct(s, omega, kernel))
        ground.append(T.ground_component)
    return SpectralFunction(p_grid, omega, out, np.array(rows), ground)


@dataclass
class DensityOfStates:
    omega: np.ndarray
    values: np.ndarray
    fringe_warning: bool
    max_shift: float
    resolution: float


def density_of_states(p_grid, omega, values, series: Optional[List[SpectralSeries]] = None):
    """``N(w) = (1/2 pi) int_0^{2 pi} A(p, w) dp`` by the trapezoidal rule on a periodic grid.

    When moments are available, the spectral centroids of neighbouring momenta
    are compared with the coarser of their two kernel resolutions; a larger
    shift means the momentum grid is too coarse and produces fringes.
    """
    p = np.mod(np.asarray(p_grid, dtype=float), 2 * np.pi)
    order = np.argsort(p)
    p, values = p[order], np.asarray(values)[order]
    # periodic trapezoid: each point weighted by half its two neighbouring gaps
    gaps = np.diff(np.concatenate([p, [p[0] + 2 * np.pi]]))
    w = 0.5 * (gaps + np.roll(gaps, 1))
    dos = (w[:, None] * values).sum(axis=0) / (2 * np.pi)
    fringe, shift, res = False, 0.0, 0.0
    if series:
        s = [series[j] for j in order]
        cent = np.array([x.a * x.moments[1] / x.moments[0] + x.b if x.moments[0] > 0 and x.N > 1
                         else x.b for x in s])
        shifts = np.abs(np.diff(np.concatenate([cent, cent[:1]])))
        resol = np.array([x.resolution for x in s])
        pair_res = np.maximum(resol, np.roll(resol, -1))
        worst = int(np.argmax(shifts / pair_res))
        shift, res = float(shifts[worst]), float(pair_res[worst])
        if shift > res:
            fringe = True
            warnings.warn(f"momentum grid too coarse: neighbouring spectral centroids move by "
                          f"{shift:.3g}, more than the kernel resolution {res:.3g}")
    return DensityOfStates(np.asarray(omega), dos, fringe, shift, res)


def polarization_cross(q):
    """``<x, M y>`` from four quadratic forms ``q(k) = <x + i^k y, M (x + i^k y)>``, k = 0..3."""
    return 0.25 * (q[0] - q[2] - 1j * q[1] + 1j * q[3])


# ----------------------------------------------------------------- output


def write_spectral_csv(path, sf: SpectralFunction, header_comment=None):
    lines = []
    if header_comment:
        lines.append(f"# {header_comment}")
    lines.append("p,omega,ImG")
    for i, p in enumerate(sf.p_grid):
        for j, w in enumerate(sf.omega):
            lines.append(f"{float(p)!r},{float(w)!r},{float(sf.values[i, j])!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_moments_sidecar(path, sf: SpectralFunction, extra=None):
    obj = {"series": [s.to_json() for s in sf.series], **(extra or {})}
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True))


def read_spectral_csv(path):
    """Return ``(p_grid, omega, values)`` from a long-form ``p,omega,ImG`` file."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["p", "omega", "ImG"]:
            raise ArgumentError(f"{path}: expected header p,omega,ImG")
        for k, row in enumerate(reader, start=2):
            try:
                rows.append(tuple(float(v) for v in row))
            except ValueError as exc:
                raise ArgumentError(f"{path}: bad number on data line {k}: {row}") from exc
    if not rows:
        raise ArgumentError(f"{path}: no data")
    data = np.array(rows)
    p_grid = np.unique(data[:, 0])
    omega = np.unique(data[:, 1])
    if len(p_grid) * len(omega) != len(data):
        raise ArgumentError(f"{path}: data is not a full p x omega grid")
    vals = np.zeros((len(p_grid), len(omega)))
    ip = np.searchsorted(p_grid, data[:, 0])
    iw = np.searchsorted(omega, data[:, 1])
    vals[ip, iw] = data[:, 2]
    return p_grid, omega, vals


def read_moments_sidecar(path):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    out = []
    for s in obj["series"]:
        out.append(SpectralSeries(s["p"], np.array(s["moments"]), s["a"], s["b"],
                                  tuple(s["bounds"]), s["kernel"], s["weight"]))
    return out
