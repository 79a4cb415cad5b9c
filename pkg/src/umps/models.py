"""Two-site Hamiltonians, spin operators and the Hamiltonian superoperator.

A two-site term is stored as a ``d^2 x d^2`` matrix ``h[(u,v), (s,t)] = <uv|h|st>``
and, for contractions, as the rank-4 tensor ``h4[u, v, s, t]``.
"""

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import apply_transfer, FixedPoints
from .errors import ArgumentError, DimensionError, HermiticityError


class SpinOps(NamedTuple):
    Sx: np.ndarray
    Sy: np.ndarray
    Sz: np.ndarray
    Sp: np.ndarray
    Sm: np.ndarray

    @property
    def d(self):
        return self.Sz.shape[0]


def spin_operators(s):
    """Spin-``s`` matrices in the basis ``m = s, s-1, ..., -s``."""
    d = int(round(2 * s + 1))
    if abs(d - (2 * s + 1)) > 1e-12 or d < 1:
        raise ArgumentError(f"spin must be a non-negative half-integer, got {s}")
    m = s - np.arange(d)
    Sz = np.diag(m).astype(complex)
    Sp = np.zeros((d, d), dtype=complex)
    for k in range(1, d):
        # <m+1|S+|m> with m = m[k]
        Sp[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    Sm = Sp.conj().T
    Sx = 0.5 * (Sp + Sm)
    Sy = -0.5j * (Sp - Sm)
    return SpinOps(Sx, Sy, Sz, Sp, Sm)


PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class TwoSiteHamiltonian:
    """Hermitian nearest-neighbour term; ``shift`` records what has been subtracted."""

    d: int
    h: np.ndarray
    shift: float = 0.0
    name: str = ""

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if h.shape != (self.d ** 2, self.d ** 2):
            raise DimensionError(f"two-site term must be {self.d**2}x{self.d**2}, got {h.shape}")
        scale = max(np.linalg.norm(h), 1e-300)
        if np.linalg.norm(h - h.conj().T) > 1e-10 * scale:
            raise HermiticityError("two-site Hamiltonian is not Hermitian")
        object.__setattr__(self, "h", h)

    @property
    def h4(self):
        d = self.d
        return self.h.reshape(d, d, d, d)

    def shifted(self, e):
        """``h - e 1`` with the shift accumulated."""
        e = float(np.real(e))
        return TwoSiteHamiltonian(self.d, self.h - e * np.eye(self.d ** 2), self.shift + e, self.name)

    def unshifted(self):
        return TwoSiteHamiltonian(self.d, self.h + self.shift * np.eye(self.d ** 2), 0.0, self.name)

    def reflected(self):
        """The same term with its two sites exchanged."""
        d = self.d
        h = self.h4.transpose(1, 0, 3, 2).reshape(d * d, d * d)
        return TwoSiteHamiltonian(d, h, self.shift, self.name)


def spin_dot(ops: SpinOps):
    """``S . S`` on two sites as a ``d^2 x d^2`` matrix."""
    return (np.kron(ops.Sx, ops.Sx) + np.kron(ops.Sy, ops.Sy) + np.kron(ops.Sz, ops.Sz)).real.astype(complex)


def bilinear_biquadratic(theta, J=1.0):
    """Spin-1 ``J [cos(theta) S.S + sin(theta) (S.S)^2]``."""
    SS = spin_dot(spin_operators(1))
    h = J * (np.cos(theta) * SS + np.sin(theta) * SS @ SS)
    return TwoSiteHamiltonian(3, h, name=f"bb:theta={theta!r},J={J!r}")


AKLT_THETA = float(np.arctan(1.0 / 3.0))


def aklt_hamiltonian():
    """Projector onto total spin 2 on a bond: ``(1/2) S.S + (1/6)(S.S)^2 + 1/3``.

    This is the bilinear-biquadratic term at ``tan(theta) = 1/3`` with
    ``J cos(theta) = 1/2`` plus a constant; the AKLT state has zero energy.
    """
    SS = spin_dot(spin_operators(1))
    h = 0.5 * SS + SS @ SS / 6.0 + np.eye(9) / 3.0
    return TwoSiteHamiltonian(3, h, name="aklt")


def heisenberg(J=1.0, s=1):
    ops = spin_operators(s)
    return TwoSiteHamiltonian(ops.d, J * spin_dot(ops), name=f"heisenberg:s={s},J={J}")


def transverse_field_ising(g, J=1.0):
    """``-J Z Z - (g/2)(X 1 + 1 X)`` with Pauli matrices; ordered for ``g < 1``."""
    I2 = np.eye(2)
    h = -J * np.kron(PAULI_Z, PAULI_Z) - 0.5 * g * (np.kron(PAULI_X, I2) + np.kron(I2, PAULI_X))
    return TwoSiteHamiltonian(2, h, name=f"tfi:g={g},J={J}")


def aklt_tensor():
    """The D=2 valence-bond tensor, basis ``m = +1, 0, -1``; not yet normalized."""
    sp = np.array([[0, 1], [0, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    A = np.array([np.sqrt(2 / 3) * sp, -np.sqrt(1 / 3) * sz, -np.sqrt(2 / 3) * sp.T])
    return A


# ------------------------------------------------------- superoperator


def ket_pair(h4, A1, A2):
    """``C^{st} = sum_uv <st|h|uv> A1^u A2^v`` as ``[s, t, alpha, beta]``."""
    AA = np.einsum("uab,vbc->uvac", A1, A2)
    return np.tensordot(h4, AA, axes=([2, 3], [0, 1]))


def apply_H_superop(h, A1, A2, A3, A4, x, side="right"):
    """Contract ``H^{A1 A2}_{A3 A4}`` with a boundary matrix.

    ``A1, A2`` form the ket pair (acted on by ``h``), ``A3, A4`` the bra pair.
    Right action: ``sum_st C^{st} x (A3^s A4^t)^dag``; left action:
    ``sum_st (A3^s A4^t)^dag x C^{st}``.
    """
    h4 = h.h4 if isinstance(h, TwoSiteHamiltonian) else np.asarray(h)
    d = h4.shape[0]
    for T in (A1, A2, A3, A4):
        if T.shape[0] != d:
            raise DimensionError("physical dimension of tensor and Hamiltonian differ")
    C = ket_pair(h4, A1, A2)
    if side == "right":
        # (C x) then close with the bra pair: first A4, then A3
        Cx = np.tensordot(C, x, axes=([3], [0]))                 # s t a c
        y = np.tensordot(Cx, A4.conj(), axes=([1, 3], [0, 2]))    # s a b'
        return np.tensordot(y, A3.conj(), axes=([0, 2], [0, 2]))  # a a'
    if side == "left":
        xC = np.tensordot(x, C, axes=([1], [2]))                 # a' s t b
        y = np.tensordot(A3.conj(), xC, axes=([0, 1], [1, 0]))    # m t b
        return np.tensordot(A4.conj(), y, axes=([0, 1], [1, 0]))  # b' b
    raise ValueError(f"side must be 'left' or 'right', not {side!r}")


def energy_density(A, fp: FixedPoints, h):
    """``(l|H^{AA}_{AA}|r)``, real part."""
    return float(np.real(np.trace(fp.l @ apply_H_superop(h, A, A, A, A, fp.r, "right"))))


def shift_to_zero_energy(h: TwoSiteHamiltonian, A, fp):
    """``h - h(A) 1`` so that the state has zero energy density."""
    return h.shifted(energy_density(A, fp, h))


# ---------------------------------------------------------------- file IO


def hamiltonian_to_json(h: TwoSiteHamiltonian, units_note="dimensionless"):
    flat = h.unshifted().h.ravel()
    return {"d": h.d, "matrix": [[float(z.real), float(z.imag)] for z in flat],
            "units_note": units_note}


def save_hamiltonian(path, h: TwoSiteHamiltonian, units_note="dimensionless"):
    from .io import atomic_write_text
    atomic_write_text(path, json.dumps(hamiltonian_to_json(h, units_note), indent=1))


def hamiltonian_from_json(obj, source="<memory>"):
    if not isinstance(obj, dict):
        raise ArgumentError(f"{source}: $ must be an object")
    if "d" not in obj or not isinstance(obj["d"], int) or obj["d"] < 1:
        raise ArgumentError(f"{source}: $.d must be a positive integer")
    d = obj["d"]
    m = obj.get("matrix")
    if not isinstance(m, list) or len(m) != d ** 4:
        raise ArgumentError(f"{source}: $.matrix must be a list of {d**4} [re, im] pairs")
    vals = np.empty(d ** 4, dtype=complex)
    for i, z in enumerate(m):
        if (not isinstance(z, (list, tuple)) or len(z) != 2
                or not all(isinstance(v, (int, float)) for v in z)):
            raise ArgumentError(f"{source}: $.matrix[{i}] must be a [re, im] pair of numbers")
        vals[i] = complex(z[0], z[1])
    h = vals.reshape(d * d, d * d)
    scale = max(np.linalg.norm(h), 1e-300)
    if np.linalg.norm(h - h.conj().T) > 1e-10 * scale:
        raise HermiticityError(f"{source}: matrix is not Hermitian")
    return TwoSiteHamiltonian(d, h, name=f"file:{source}")


def load_hamiltonian(path):
    """Read a ``hamiltonian.json`` file (``{d, matrix, units_note}``)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"{path}: JSON parse error at line {exc.lineno}, "
                            f"column {exc.colno} (offset {exc.pos}): {exc.msg}") from exc
    return hamiltonian_from_json(obj, str(path))
