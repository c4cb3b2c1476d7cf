"""Dense operator substrate.

Density matrices are vectorized by column stacking, so that

    vec(A X B) = (B^T kron A) vec(X)

and a superoperator is a plain ``d^2 x d^2`` complex array acting on those
vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, InvalidState

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10


def vectorize(A: np.ndarray) -> np.ndarray:
    """Column-stack ``A`` into a 1-d vector of length ``rows * cols``."""
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {A.shape}")
    return A.reshape(-1, order="F")


def unvectorize(v: np.ndarray, rows: int, cols: int | None = None) -> np.ndarray:
    cols = rows if cols is None else cols
    v = np.asarray(v)
    if v.size != rows * cols:
        raise DimensionMismatch(f"cannot reshape {v.size} entries into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


@dataclass(frozen=True)
class Superoperator:
    """Linear map on ``d x d`` matrices stored as a ``d^2 x d^2`` array."""

    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.dim**2, self.dim**2):
            raise DimensionMismatch(f"superoperator for d={self.dim} must be {self.dim**2}x{self.dim**2}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("superoperator has non-finite entries")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return unvectorize(self.matrix @ vectorize(X), self.dim)

    @property
    def norm(self) -> float:
        """Spectral norm, the scale used for all relative spectral tolerances."""
        return float(np.linalg.norm(self.matrix, 2))

    def trace_defect(self) -> float:
        """Largest |Tr[S(E)]| over the matrix-unit basis; zero for a trace-preserving map."""
        # Tr[unvec(v)] = sum of entries of v at positions i*(d+1)
        tr_rows = self.matrix[:: self.dim + 1, :]
        return float(np.abs(tr_rows.sum(axis=0)).max())


def build_liouvillian(H: np.ndarray, jumps: Sequence[np.ndarray] = (), *, herm_tol: float = HERMITIAN_TOL) -> Superoperator:
    """Assemble the Lindblad generator ``-i[H, .] + sum_a D[J_a]``.

    The Hermiticity tolerance is relative to ``max(1, ||H||)`` since
    Hamiltonians are stored in rad/s and routinely have entries ~1e5.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatch(f"Hamiltonian must be square, got {H.shape}")
    d = H.shape[0]
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    if np.abs(H - H.conj().T).max(initial=0.0) > herm_tol * scale:
        raise ValueError("Hamiltonian is not Hermitian within tolerance")
    eye = np.eye(d)
    S = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for J in jumps:
        J = np.asarray(J, dtype=complex)
        if J.shape != (d, d):
            raise DimensionMismatch(f"jump operator shape {J.shape} does not match Hamiltonian {H.shape}")
        JdJ = J.conj().T @ J
        S = S + np.kron(J.conj(), J) - 0.5 * np.kron(eye, JdJ) - 0.5 * np.kron(JdJ.T, eye)
    return Superoperator(d, S)


def schatten_norm(A: np.ndarray, p=2) -> np.ndarray | float:
    """Schatten-p norm over the last two axes; ``p`` is one of 1, 2, ``inf``.

    Leading axes are treated as a batch, which is what the trajectory code
    relies on to avoid Python loops over time samples.
    """
    A = np.asarray(A)
    if p == 2 or p == "2":
        out = np.sqrt(np.sum(np.abs(A) ** 2, axis=(-2, -1)))
    elif p == 1 or p == "1":
        out = np.linalg.svd(A, compute_uv=False).sum(axis=-1)
    elif p in (np.inf, "inf"):
        out = np.linalg.svd(A, compute_uv=False).max(axis=-1)
    else:
        raise ValueError(f"unsupported Schatten index p={p!r}; use 1, 2 or inf")
    return float(out) if np.ndim(out) == 0 else out


def parse_norm(p) -> float:
    """Normalize a user-facing norm label (``"1"``, ``"hs"``, ``"inf"``...) to 1, 2 or inf."""
    if isinstance(p, str):
        key = p.strip().lower()
        table = {"1": 1, "trace": 1, "2": 2, "hs": 2, "inf": np.inf, "op": np.inf}
        if key not in table:
            raise ValueError(f"unknown norm {p!r}")
        return table[key]
    if p in (1, 2):
        return int(p)
    if p == np.inf:
        return np.inf
    raise ValueError(f"unsupported Schatten index p={p!r}; use 1, 2 or inf")


def ket_to_dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(psi, psi.conj())


def as_density_matrix(state: np.ndarray) -> np.ndarray:
    """Accept a ket or a density matrix; kets are normalized-checked and expanded."""
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        n = np.linalg.norm(state)
        if abs(n - 1.0) > 1e-10:
            raise InvalidState(f"ket is not normalized (norm {n})")
        return ket_to_dm(state)
    return state


def validate_density_matrix(rho: np.ndarray, *, herm_tol=HERMITIAN_TOL, trace_tol=TRACE_TOL, psd_tol=PSD_TOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidState(f"density matrix must be square, got {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise InvalidState("density matrix has non-finite entries")
    if np.abs(rho - rho.conj().T).max() > herm_tol:
        raise InvalidState("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > trace_tol:
        raise InvalidState(f"density matrix trace is {np.trace(rho).real:.3g}, not 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -psd_tol:
        raise InvalidState("density matrix has a negative eigenvalue")
    return rho


def exp_evolve(S: Superoperator, rho_in: np.ndarray, t: float) -> np.ndarray:
    """Propagate ``rho_in`` by ``exp(S t)``.

    Uses scaling-and-squaring with a Pade approximant (scipy), entirely
    independent of any eigendecomposition, so it can serve as a check on the
    mode expansion.
    """
    if t < 0:
        raise ValueError("evolution time must be nonnegative")
    rho_in = validate_density_matrix(as_density_matrix(rho_in), psd_tol=PSD_TOL)
    if rho_in.shape[0] != S.dim:
        raise DimensionMismatch(f"state dimension {rho_in.shape[0]} != superoperator dimension {S.dim}")
    if t == 0:
        return rho_in.copy()
    return unvectorize(scipy.linalg.expm(S.matrix * t) @ vectorize(rho_in), S.dim)
