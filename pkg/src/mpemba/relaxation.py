"""Distance to the steady state, relaxation speed and sampled trajectories."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateAtSteadyState, DimensionMismatch
from .operators import Superoperator, as_density_matrix, parse_norm, schatten_norm, validate_density_matrix
from .spectral import Spectrum, overlaps

STEADY_TOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Time grid: t=0 followed by log-spaced points from ``t_min`` to ``t_max``.

    ``None`` bounds default to ``tau_N / 10`` and ``3 tau_1``.  ``n_points``
    counts every sample including t=0.
    """

    t_max: float | None = None
    n_points: int = 2000
    t_min: float | None = None

    def times(self, spec: Spectrum) -> np.ndarray:
        tau = spec.timescales
        t_max = 3.0 * tau[0] if self.t_max is None else float(self.t_max)
        t_min = tau[-1] / 10.0 if self.t_min is None else float(self.t_min)
        if self.n_points < 2:
            raise ValueError("grid needs at least two points")
        if not 0 < t_min < t_max:
            raise ValueError("grid requires 0 < t_min < t_max")
        return np.concatenate([[0.0], np.geomspace(t_min, t_max, self.n_points - 1)])


def _deviation(spec: Spectrum, a: np.ndarray, t, *, derivative=False, modes=None) -> np.ndarray:
    """sum_i a_i [lambda_i] e^{lambda_i t} R_i over decay modes.

    ``a`` may carry leading batch axes; ``t`` may be a scalar or 1-d array.
    Result shape is ``a.shape[:-1] + t.shape + (d, d)``.
    """
    a = np.asarray(a)
    t = np.asarray(t, dtype=float)
    idx = np.arange(1, spec.n_modes + 1) if modes is None else np.asarray(modes)
    lam = spec.eigenvalues[idx]
    coef = a[..., idx]
    if derivative:
        coef = coef * lam
    phase = np.exp(np.multiply.outer(t, lam))  # t.shape + (m,)
    w = coef.reshape(coef.shape[:-1] + (1,) * t.ndim + (len(idx),)) * phase
    return np.tensordot(w, spec.right[idx], axes=(-1, 0))


def evolve_modes(spec: Spectrum, a: np.ndarray, t) -> np.ndarray:
    """rho_t = rho_ss + sum_{i>=1} a_i e^{lambda_i t} R_i."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("evolution time must be nonnegative")
    return spec.steady_state + _deviation(spec, a, t)


def distance(rho_t: np.ndarray, rho_ss: np.ndarray, p=2):
    rho_t = np.asarray(rho_t)
    if rho_t.shape[-2:] != np.shape(rho_ss):
        raise DimensionMismatch("state and steady state differ in shape")
    return schatten_norm(rho_t - rho_ss, parse_norm(p))


def speed(spec: Spectrum, a: np.ndarray, t, p=2):
    """||d rho/dt|| = ||sum_i a_i lambda_i e^{lambda_i t} R_i||_p."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("time must be nonnegative")
    return schatten_norm(_deviation(spec, a, t, derivative=True), parse_norm(p))


def _rate_of_distance(X: np.ndarray, Xdot: np.ndarray, p) -> np.ndarray:
    """|d/dt ||X||_p| for Hermitian X(t) with derivative Xdot (batched).

    Uses the eigenbasis of X: for p=2 this is |Tr[X Xdot]| / ||X||_2, and by
    Hoelder's inequality it never exceeds ||Xdot||_p.
    """
    Xh = 0.5 * (X + np.conj(np.swapaxes(X, -1, -2)))
    Yh = 0.5 * (Xdot + np.conj(np.swapaxes(Xdot, -1, -2)))
    if p == 2:
        num = np.abs(np.sum(np.conj(Xh) * Yh, axis=(-2, -1)))
        return num / np.sqrt(np.sum(np.abs(Xh) ** 2, axis=(-2, -1)))
    x, U = np.linalg.eigh(Xh)
    diag = np.einsum("...ki,...kl,...li->...i", np.conj(U), Yh, U).real
    if p == 1:
        return np.abs(np.sum(np.sign(x) * diag, axis=-1))
    k = np.argmax(np.abs(x), axis=-1)[..., None]
    return np.abs(np.take_along_axis(diag, k, axis=-1)[..., 0])


def geometric_speed(rho_t: np.ndarray, S: Superoperator, rho_ss: np.ndarray, p=2) -> float:
    """Rate of change of the distance, |dD/dt|, at the state ``rho_t``.

    For the Hilbert-Schmidt norm this is ``|Tr[(rho - rho_ss) L(rho)]| /
    ||rho - rho_ss||``, which the Cauchy-Schwarz inequality bounds by the
    relaxation speed ``||L(rho)||``.
    """
    p = parse_norm(p)
    X = np.asarray(rho_t) - rho_ss
    if np.linalg.norm(X) < STEADY_TOL:
        raise DegenerateAtSteadyState("geometric speed is undefined at the steady state")
    Xdot = S.apply(rho_t)
    return float(min(_rate_of_distance(X, Xdot, p), schatten_norm(Xdot, p)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    distance: np.ndarray
    speed: np.ndarray
    geometric_speed: np.ndarray
    norm_p: float
    initial_state: np.ndarray
    overlap_vector: np.ndarray
    spectrum: Spectrum = field(repr=False, default=None)

    CSV_COLUMNS = ("t_seconds", "distance", "speed", "geometric_speed")

    def to_csv(self, fh=None, header_lines=()) -> str | None:
        """Write the sampled series; returns the text when ``fh`` is None."""
        out = io.StringIO() if fh is None else fh
        for line in header_lines:
            out.write(f"# {line}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for row in zip(self.times, self.distance, self.speed, self.geometric_speed):
            w.writerow([repr(float(x)) for x in row])
        return out.getvalue() if fh is None else None


def trajectory(spec: Spectrum, rho_in: np.ndarray, grid: GridSpec | None = None, p=2, *, times=None) -> Trajectory:
    p = parse_norm(p)
    rho = validate_density_matrix(as_density_matrix(rho_in))
    a = overlaps(spec, rho)
    t = (grid or GridSpec()).times(spec) if times is None else np.asarray(times, dtype=float)
    X = _deviation(spec, a, t)
    Xdot = _deviation(spec, a, t, derivative=True)
    dist = schatten_norm(X, p)
    vel = schatten_norm(Xdot, p)
    geo = np.zeros_like(dist)
    live = np.sqrt(np.sum(np.abs(X) ** 2, axis=(-2, -1))) >= STEADY_TOL
    if live.any():
        # the bound geo <= vel is exact; clip the last-ulp excess of the two evaluations
        geo[live] = np.minimum(_rate_of_distance(X[live], Xdot[live], p), vel[live])
    return Trajectory(t, dist, vel, geo, p, rho, a, spec)
