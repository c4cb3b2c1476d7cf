"""Eigendecomposition of Lindblad generators.

Conventions
-----------
``R_i`` are right eigenmatrices, ``S R_i = lambda_i R_i``.  ``L_i`` are
eigenmatrices of the adjoint generator with eigenvalue ``conj(lambda_i)`` and
the pairing is the Hilbert-Schmidt one,

    Tr[L_i^dagger R_j] = delta_ij,

so overlaps are ``a_i = Tr[L_i^dagger rho]``.  Index 0 is the steady state
(``R_0`` has unit trace, ``L_0`` is the identity); the decay modes are sorted
by decreasing real part, ties broken by decreasing imaginary part.

Gauge: every decay mode is scaled to ``||R_i||_2 = 1`` and rotated by the
global phase that makes it as Hermitian as possible.  For real eigenvalues
this makes ``R_i`` and ``L_i`` Hermitian; the remaining sign is fixed so the
largest-magnitude eigenvalue of ``L_i`` is positive.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateSteadyState, DimensionMismatch, NonDiagonalizable, OscillatoryMode
from .operators import Superoperator, as_density_matrix, unvectorize, vectorize

ZERO_TOL = 1e-10
COND_LIMIT = 1e8
RESIDUAL_TOL = 1e-9
TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Spectrum:
    superop: Superoperator
    eigenvalues: np.ndarray  # (N+1,)
    right: np.ndarray  # (N+1, d, d)
    left: np.ndarray  # (N+1, d, d)

    def __post_init__(self):
        for name in ("eigenvalues", "right", "left"):
            arr = np.array(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.superop.dim

    @property
    def n_modes(self) -> int:
        """Number of decay modes N = d^2 - 1."""
        return len(self.eigenvalues) - 1

    @property
    def steady_state(self) -> np.ndarray:
        return self.right[0]

    @cached_property
    def timescales(self) -> np.ndarray:
        """tau_1..tau_N in seconds (index 0 of the result is tau_1)."""
        return timescales(self)

    @property
    def tau(self):
        """Timescales indexed like the modes, ``tau[i]`` for i >= 1 (``tau[0]`` is inf)."""
        return np.concatenate([[np.inf], self.timescales])

    @cached_property
    def _right_flat(self):
        return self.right.reshape(len(self.eigenvalues), -1, order="C")

    @cached_property
    def _left_flat_conj(self):
        return self.left.conj().reshape(len(self.eigenvalues), -1, order="C")

    def to_dict(self) -> dict:
        def cm(A):
            return [[[float(z.real), float(z.imag)] for z in row] for row in A]

        tau = []
        for lam in self.eigenvalues[1:]:
            tau.append(None if lam.real == 0 else float(1.0 / abs(lam.real)))
        return {
            "dim": self.dim,
            "n_modes": self.n_modes,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "timescales_s": tau,
            "steady_state": cm(self.steady_state),
            "right": [cm(R) for R in self.right],
            "left": [cm(L) for L in self.left],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict, superop: Superoperator) -> "Spectrum":
        def mat(x):
            a = np.asarray(x, dtype=float)
            return a[..., 0] + 1j * a[..., 1]

        return cls(superop, mat(data["eigenvalues"]), mat(data["right"]), mat(data["left"]))


def _sort_order(w: np.ndarray, steady: int, tol: float) -> list[int]:
    rest = [i for i in range(len(w)) if i != steady]
    rest.sort(key=lambda i: -w[i].real)
    # chain together runs of (nearly) equal real parts, then order each run by Im
    groups, cur = [], [rest[0]] if rest else []
    for i in rest[1:]:
        if w[cur[-1]].real - w[i].real <= tol:
            cur.append(i)
        else:
            groups.append(cur)
            cur = [i]
    if cur:
        groups.append(cur)
    order = [steady]
    for g in groups:
        order.extend(sorted(g, key=lambda i: -w[i].imag))
    return order


def _hermitian_phase(R: np.ndarray) -> complex:
    """Unit phase c maximizing ||cR + (cR)^dagger||_2."""
    t = np.trace(R @ R)
    if abs(t) > 1e-8 * np.sum(np.abs(R) ** 2):
        return np.exp(-0.5j * np.angle(t))
    k = np.unravel_index(np.argmax(np.abs(R)), R.shape)
    return np.exp(-1j * np.angle(R[k]))


def decompose(S: Superoperator, *, cond_limit: float = COND_LIMIT) -> Spectrum:
    """Full biorthogonal eigendecomposition of a trace-preserving generator.

    Raises
    ------
    DegenerateSteadyState
        if more (or fewer) than one eigenvalue is within ``1e-10 ||S||`` of 0.
    NonDiagonalizable
        if the eigenvector matrix has condition number above ``cond_limit``
        or the eigen-residuals exceed tolerance.
    """
    d = S.dim
    M = S.matrix
    scale = S.norm
    w, V = np.linalg.eig(M)

    near_zero = np.flatnonzero(np.abs(w) <= ZERO_TOL * scale)
    if len(near_zero) != 1:
        raise DegenerateSteadyState(f"{len(near_zero)} eigenvalues within {ZERO_TOL:g}*||S|| of zero")
    order = _sort_order(w, int(near_zero[0]), TIE_TOL * scale)
    w, V = w[order], V[:, order]

    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > cond_limit:
        raise NonDiagonalizable(f"eigenvector condition number {cond:.3g} exceeds {cond_limit:g}")
    # rows of V^-1 are the left eigenvectors, already biorthonormal to V's columns
    W = np.linalg.inv(V)

    n = len(w)
    right = np.empty((n, d, d), dtype=complex)
    left = np.empty((n, d, d), dtype=complex)
    for i in range(n):
        R = unvectorize(V[:, i], d)
        L = unvectorize(W[i].conj(), d)
        if i == 0:
            c = np.trace(R)
            R, L = R / c, L * np.conj(c)
            R = 0.5 * (R + R.conj().T)
        else:
            c = _hermitian_phase(R) / np.linalg.norm(R)
            R, L = R * c, L / np.conj(c)
            if abs(w[i].imag) <= 1e-8 * abs(w[i]):
                ev = np.linalg.eigvalsh(0.5 * (L + L.conj().T))
                if ev[np.argmax(np.abs(ev))] < 0:
                    R, L = -R, -L
            else:
                k = np.unravel_index(np.argmax(np.abs(R.real)), R.shape)
                if R[k].real < 0:
                    R, L = -R, -L
        right[i], left[i] = R, L

    spec = Spectrum(S, w, right, left)
    res = max(_residuals(spec))
    if res > RESIDUAL_TOL * max(scale, 1e-300):
        raise NonDiagonalizable(f"eigen-residual {res:.3g} exceeds tolerance")
    return spec


def _residuals(spec: Spectrum):
    M = spec.superop.matrix
    for lam, R, L in zip(spec.eigenvalues, spec.right, spec.left):
        r = vectorize(R)
        l = vectorize(L)
        yield float(np.linalg.norm(M @ r - lam * r))
        yield float(np.linalg.norm(M.conj().T @ l - np.conj(lam) * l))


def eigen_residual(spec: Spectrum) -> float:
    """Largest right/left eigen-residual norm (absolute)."""
    return max(_residuals(spec))


def biorthogonality_error(spec: Spectrum) -> float:
    """max |Tr[L_i^dagger R_j] - delta_ij|."""
    G = spec._left_flat_conj @ spec._right_flat.T
    return float(np.abs(G - np.eye(len(G))).max())


def overlaps(spec: Spectrum, rho_in: np.ndarray) -> np.ndarray:
    """Mode coefficients ``a_i = Tr[L_i^dagger rho_in]`` for i = 0..N.

    Accepts a ket, a density matrix, or a batch of density matrices
    ``(..., d, d)``.
    """
    rho = np.asarray(rho_in, dtype=complex)
    if rho.ndim == 1:
        rho = as_density_matrix(rho)
    if rho.shape[-2:] != (spec.dim, spec.dim):
        raise DimensionMismatch(f"state of shape {rho.shape[-2:]} does not match d={spec.dim}")
    flat = rho.reshape(rho.shape[:-2] + (-1,))
    return flat @ spec._left_flat_conj.T


def reconstruct(spec: Spectrum, a: np.ndarray) -> np.ndarray:
    """Inverse of :func:`overlaps`: ``sum_i a_i R_i``."""
    return np.tensordot(np.asarray(a), spec.right, axes=(-1, 0))


def timescales(spec: Spectrum) -> np.ndarray:
    """``tau_i = 1/|Re lambda_i|`` for the decay modes i = 1..N."""
    re = spec.eigenvalues[1:].real
    tol = ZERO_TOL * spec.superop.norm
    bad = np.flatnonzero(np.abs(re) <= tol)
    if len(bad):
        raise OscillatoryMode(int(bad[0]) + 1)
    return 1.0 / np.abs(re)
