"""Time-dependent variational principle on the uMPS manifold.

The gradient ``F`` lives in the left-gauge parameterization ``B = l^{-1/2} V_L F
r^{-1/2}``, so the inverse metric is the identity and one TDVP step is simply
``A -> A - i dt B`` (real time) or ``A -> A - dtau B`` (imaginary time).
"""

import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import linalg
from .core import (FixedPoints, GaugeIsometry, UmpsState, apply_transfer, build_gauge_isometry,
                   expectation, expectation_two_site, fixed_points, left_canonical, tangent_lift,
                   tangent_project)
from .errors import ArgumentError, CapError, ConvergenceError
from .models import TwoSiteHamiltonian, apply_H_superop, energy_density, ket_pair, spin_operators

SINC_FLOOR = 1e-14
# energy densities carry ~1e-13 noise from the fixed-point solves; rises below this are ignored
ENERGY_NOISE = 1e-12


def _T(A):
    return lambda x, side: apply_transfer(A, x, side)


@dataclass
class TdvpGradient:
    F: np.ndarray
    K_env: np.ndarray
    eta: float
    energy: float
    h_shifted: TwoSiteHamiltonian
    gauge: GaugeIsometry


def gradient(A, fp: FixedPoints, h: TwoSiteHamiltonian, gauge=None, tol=1e-13, K0=None):
    """TDVP gradient ``F`` with ``eta = |F|_F``.

    ``h`` is shifted to zero energy density here, for the current state.
    """
    gauge = build_gauge_isometry(A, fp, right=False) if gauge is None else gauge
    e = energy_density(A, fp, h)
    hs = h.shifted(e)
    l, r = fp.l, fp.r
    C = ket_pair(hs.h4, A, A)
    y = apply_H_superop(hs, A, A, A, A, l, "left")
    K = linalg.geometric_inverse_apply(_T(A), l, r, 1.0, y, "left", tol, x0=K0)
    Ad = A.conj().transpose(0, 2, 1)
    G = np.einsum("ab,stbc,cd,tde->sae", l, C, r, Ad, optimize=True)
    G += np.einsum("tab,bc,tscd,de->sae", Ad, l, C, r, optimize=True)
    G += K @ A @ r
    F = tangent_project(G, gauge)
    return TdvpGradient(F, K, float(np.linalg.norm(F)), e + h.shift, hs, gauge)


def energy_variance(A, fp: FixedPoints, h: TwoSiteHamiltonian, tol=1e-13):
    """Energy variance per site, ``Delta H^2 / |Z|``, for the shifted ``h``."""
    hs = h.shifted(energy_density(A, fp, h))
    l, r = fp.l, fp.r
    d = hs.d
    h2 = TwoSiteHamiltonian(d, hs.h @ hs.h)
    local0 = np.trace(l @ apply_H_superop(h2, A, A, A, A, r, "right"))
    # <h_{01} h_{12}>: h12 acting on the ket, h01 on the bra
    AAA = np.einsum("uab,vbc,wcd->uvwad", A, A, A)
    ket = np.einsum("vwxy,uxyad->uvwad", hs.h4, AAA)
    bra = np.einsum("uvxy,xywad->uvwad", hs.h4, AAA)
    local1 = np.einsum("ab,uvwbc,cd,uvwad->", l, ket, r, bra.conj())
    x = apply_H_superop(hs, A, A, A, A, l, "left").conj().T
    y = apply_H_superop(hs, A, A, A, A, r, "right")
    y = linalg.geometric_inverse_apply(_T(A), l, r, 1.0, y, "right", tol)
    tail = np.trace(x @ y)
    return float(np.real(local0 + 2 * local1 + 2 * tail))


def error_epsilon_stable(A, fp: FixedPoints, h: TwoSiteHamiltonian, gauge=None):
    """``(eps, Y)`` with ``Y = sum <st|h|uv> V_L^s^dag l^{1/2} A^u A^v r^{1/2} V_R^t^dag``."""
    gauge = build_gauge_isometry(A, fp) if gauge is None or gauge.VR is None else gauge
    hs = h.shifted(energy_density(A, fp, h))
    C = ket_pair(hs.h4, A, A)
    left = np.einsum("sai,ab->sib", gauge.VL.conj(), gauge.l_half)
    right = np.einsum("ab,tib->tai", gauge.r_half, gauge.VR.conj())
    Y = np.einsum("sib,stbc,tcj->ij", left, C, right, optimize=True)
    return float(np.linalg.norm(Y)), Y


def error_epsilon_subtraction(A, fp, h, grad=None):
    """``sqrt(Delta H^2/|Z| - eta^2)``; loses accuracy when both terms are close."""
    grad = gradient(A, fp, h) if grad is None else grad
    v = energy_variance(A, fp, h) - grad.eta ** 2
    return float(np.sqrt(max(v, 0.0))), v


# ---------------------------------------------------------- integrators


def _mode_factor(mode):
    if mode == "real":
        return 1j
    if mode == "imaginary":
        return 1.0
    raise ArgumentError(f"mode must be 'real' or 'imaginary', not {mode!r}")


def step_euler(A, grad: TdvpGradient, dt, mode="imaginary"):
    """One Euler step followed by renormalization; returns ``(A, fp)``."""
    B = tangent_lift(grad.F, grad.gauge)
    return fixed_points(A - _mode_factor(mode) * dt * B)


def step_isometric(A, grad: TdvpGradient, dt, mode="imaginary"):
    """Exponential update that keeps a left-isometric ``A`` exactly isometric.

    ``A(t+dt) = A cos(dt|B|) - c B |B|^{-1} sin(dt|B|)`` with ``c = i`` in real
    time and ``c = 1`` in imaginary time.
    """
    c = _mode_factor(mode)
    B = tangent_lift(grad.F, grad.gauge)
    BB = np.einsum("sab,sac->bc", B.conj(), B)
    w, U = np.linalg.eigh(0.5 * (BB + BB.conj().T))
    sig = np.sqrt(np.clip(w, 0.0, None))
    sig[sig < SINC_FLOOR * max(sig.max(), 1e-300)] = 0.0
    cos_m = (U * np.cos(dt * sig)) @ U.conj().T
    # sin(dt s)/s written through sinc so that s -> 0 needs no special casing
    sinc_m = (U * (dt * np.sinc(dt * sig / np.pi))) @ U.conj().T
    return A @ cos_m - c * (B @ sinc_m)


def expansion_factors(Y, n_new):
    """Rank-``n_new`` factors ``Z12 (m x n_new)``, ``Z21 (n_new x m)`` of ``Y`` with tail error."""
    U, S, Vh = np.linalg.svd(Y)
    k = min(n_new, S.size)
    sq = np.sqrt(S[:k])
    Z12 = np.zeros((Y.shape[0], n_new), dtype=complex)
    Z21 = np.zeros((n_new, Y.shape[1]), dtype=complex)
    Z12[:, :k] = U[:, :k] * sq
    Z21[:k] = sq[:, None] * Vh[:k]
    return Z12, Z21, float(np.sqrt(np.sum(S[k:] ** 2))), S


@dataclass
class Expansion:
    A: np.ndarray
    Z12: np.ndarray
    Z21: np.ndarray
    Y: np.ndarray
    truncation: float
    singular_values: np.ndarray


def expand_bond(A, fp, h, D_new, dt=1.0, mode="imaginary", A_step=None, gauge=None):
    """Grow the bond dimension to ``D_new`` by the optimal two-site correction.

    ``A_step`` (default ``A``) fills the upper-left block, normally the tensor
    after the ordinary TDVP step.  The off-diagonal blocks are
    ``sqrt(dt) (-c) l^{-1/2} V_L Z12`` and ``sqrt(dt) Z21 V_R r^{-1/2}``, so
    that their product reproduces ``-c dt Y`` (rank-limited) with ``c`` as in
    :func:`step_isometric`.
    """
    d, D, _ = A.shape
    if D_new <= D:
        raise ArgumentError(f"new bond dimension {D_new} must exceed {D}")
    if D_new > d * D:
        raise CapError(f"one expansion step can reach at most d*D = {d * D}, asked {D_new}")
    gauge = build_gauge_isometry(A, fp) if gauge is None or gauge.VR is None else gauge
    _, Y = error_epsilon_stable(A, fp, h, gauge)
    Z12, Z21, trunc, S = expansion_factors(Y, D_new - D)
    B12 = gauge.l_inv_half @ gauge.VL @ Z12            # (d, D, D_new - D)
    B21 = Z21 @ gauge.VR @ gauge.r_inv_half            # (d, D_new - D, D)
    c = _mode_factor(mode)
    out = np.zeros((d, D_new, D_new), dtype=complex)
    out[:, :D, :D] = A if A_step is None else A_step
    out[:, :D, D:] = -c * np.sqrt(dt) * B12
    out[:, D:, :D] = np.sqrt(dt) * B21
    return Expansion(out, Z12, Z21, Y, trunc, S)


# --------------------------------------------------------------- evolution


@dataclass
class ExpandConfig:
    D_new: int
    trigger_epsilon: float


@dataclass
class EvolutionConfig:
    mode: str = "imaginary"
    dt: float = 0.1
    scheme: str = "euler"
    t_max: float = np.inf
    tol_eta: float = 1e-10
    expand: Optional[ExpandConfig] = None
    max_steps: int = 100000
    max_halvings: int = 3
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ArgumentError("dt must be positive")
        if self.scheme not in ("euler", "isometric"):
            raise ArgumentError(f"unknown scheme {self.scheme!r}")
        _mode_factor(self.mode)


def observable_functions(names, d):
    """Map observable names (``sz``, ``sx``, ``szsz``, ``sxsx``, ``energy``) to callables."""
    ops = spin_operators((d - 1) / 2)
    table = {
        "sz": lambda A, fp: expectation(A, fp, ops.Sz),
        "sx": lambda A, fp: expectation(A, fp, ops.Sx),
        "szsz": lambda A, fp: expectation_two_site(
            A, fp, np.kron(ops.Sz, ops.Sz).reshape(d, d, d, d)),
        "sxsx": lambda A, fp: expectation_two_site(
            A, fp, np.kron(ops.Sx, ops.Sx).reshape(d, d, d, d)),
    }
    out = {}
    for n in names:
        if n not in table:
            raise ArgumentError(f"unknown observable {n!r}; choose from {sorted(table)}")
        out[n] = table[n]
    return out


def _complex_json(z):
    z = complex(z)
    return z.real if abs(z.imag) < 1e-15 else [z.real, z.imag]


@dataclass
class Trajectory:
    records: List[Dict] = field(default_factory=list)
    A: Optional[np.ndarray] = None
    fp: Optional[FixedPoints] = None
    converged: bool = False

    @property
    def state(self):
        return UmpsState(self.A, self.fp)


def evolve(A0, h: TwoSiteHamiltonian, cfg: EvolutionConfig, observables=(), log=None,
           callback: Optional[Callable] = None):
    """Integrate the TDVP flow with per-step diagnostics.

    Imaginary mode stops when ``eta < tol_eta`` (or at ``t_max``); real mode
    runs to ``t_max``.  ``log`` is an optional open text file that receives one
    JSON record per step.
    """
    A, fp = fixed_points(A0)
    if cfg.scheme == "isometric":
        A, fp = left_canonical(A, fp)
    obs = observable_functions(observables, A.shape[0])
    dt = cfg.dt
    t = 0.0
    traj = Trajectory()
    K0 = None
    halvings = 0
    for step in range(cfg.max_steps + 1):
        gauge = build_gauge_isometry(A, fp)
        g = gradient(A, fp, h, gauge, K0=K0)
        K0 = g.K_env
        eps, _ = error_epsilon_stable(A, fp, h, gauge)
        rec = {"step": step, "t": t, "dt": dt, "D": int(A.shape[1]), "energy": g.energy,
               "eta": g.eta, "eps": eps}
        for name, f in obs.items():
            rec[name] = _complex_json(f(A, fp))
        if step % cfg.record_every == 0:
            traj.records.append(rec)
            if log is not None:
                log.write(json.dumps(rec) + "\n")
                log.flush()
        if callback is not None:
            callback(rec, A, fp)
        if cfg.mode == "imaginary" and g.eta < cfg.tol_eta:
            traj.converged = True
            break
        if t >= cfg.t_max - 1e-12 * max(1.0, cfg.t_max):
            traj.converged = cfg.mode == "real"
            break
        if step == cfg.max_steps:
            break
        h_dt = min(dt, cfg.t_max - t) if np.isfinite(cfg.t_max) else dt
        while True:
            if cfg.scheme == "isometric":
                A_step = step_isometric(A, g, h_dt, cfg.mode)
            else:
                A_step = A - _mode_factor(cfg.mode) * h_dt * tangent_lift(g.F, gauge)
            D = A.shape[1]
            if (cfg.expand is not None and eps > cfg.expand.trigger_epsilon
                    and D < cfg.expand.D_new):
                D_new = min(cfg.expand.D_new, A.shape[0] * D)
                A_step = expand_bond(A, fp, h, D_new, h_dt, cfg.mode, A_step, gauge).A
                K0 = None
            A_new, fp_new = fixed_points(A_step)
            if cfg.scheme == "isometric":
                A_new, fp_new = left_canonical(A_new, fp_new)
            if cfg.mode != "imaginary" or A_new.shape != A.shape:
                break
            e_new = energy_density(A_new, fp_new, h)
            if e_new <= g.energy + ENERGY_NOISE * max(1.0, abs(g.energy)):
                halvings = 0
                break
            halvings += 1
            if halvings > cfg.max_halvings:
                raise ConvergenceError(f"energy increased after {cfg.max_halvings} halvings of dt "
                                       f"(eta={g.eta:.3e})")
            h_dt *= 0.5
            dt = h_dt
        A, fp = A_new, fp_new
        t += h_dt
    traj.A, traj.fp = A, fp
    return traj


def ground_state(h, D, rng=None, dt=0.1, tol_eta=1e-10, scheme="euler", max_steps=100000,
                 A0=None, log=None):
    """Imaginary-time TDVP from a seeded random tensor (or ``A0``)."""
    from .core import random_tensor
    if A0 is None:
        A0 = random_tensor(D, h.d, rng)
    cfg = EvolutionConfig("imaginary", dt, scheme, np.inf, tol_eta, max_steps=max_steps)
    return evolve(A0, h, cfg, log=log)
