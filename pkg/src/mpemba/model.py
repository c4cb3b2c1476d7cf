"""Trapped-ion three-level model and the initial-state families used with it.

Levels: |0> is the ground state, |1> and |2> are two metastable levels each
driven from |0> and each decaying back to |0>.  All frequencies and rates are
angular (rad/s).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ComplexSlowMode, NoSignChange
from .operators import Superoperator, build_liouvillian
from .spectral import Spectrum

KHZ = 2 * np.pi * 1e3  # kHz -> rad/s

SQRT_RATE = "sqrt-rate"
LITERAL_RATE = "literal-rate"
JUMP_CONVENTIONS = (SQRT_RATE, LITERAL_RATE)


@dataclass(frozen=True)
class IonParams:
    omega1: float = 20.0 * KHZ
    omega2: float = 0.06 * 20.0 * KHZ
    gamma1: float = 40.0 * KHZ
    gamma2: float = 0.03 * KHZ
    jump_convention: str = SQRT_RATE
    phase1: float = 0.0
    phase2: float = 0.0

    def __post_init__(self):
        for name in ("omega1", "omega2", "gamma1", "gamma2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.jump_convention not in JUMP_CONVENTIONS:
            raise ValueError(f"jump_convention must be one of {JUMP_CONVENTIONS}")

    @classmethod
    def from_khz(cls, omega1_khz=20.0, omega2_ratio=0.06, gamma1_khz=40.0, gamma2_khz=0.03, jump_convention=SQRT_RATE, **kw):
        return cls(
            omega1=omega1_khz * KHZ,
            omega2=omega2_ratio * omega1_khz * KHZ,
            gamma1=gamma1_khz * KHZ,
            gamma2=gamma2_khz * KHZ,
            jump_convention=jump_convention,
            **kw,
        )

    @classmethod
    def from_config(cls, config: dict | str | Path) -> "IonParams":
        """Build from a mapping or a JSON file with kHz-denominated keys.

        Recognized keys: ``omega1_khz``, ``omega2_ratio``, ``gamma1_khz``,
        ``gamma2_khz``, ``jump_convention``; anything else is ignored.
        """
        if not isinstance(config, dict):
            config = json.loads(Path(config).read_text())
        keys = ("omega1_khz", "omega2_ratio", "gamma1_khz", "gamma2_khz", "jump_convention")
        return cls.from_khz(**{k: config[k] for k in keys if k in config})

    def with_convention(self, convention: str) -> "IonParams":
        d = asdict(self)
        d["jump_convention"] = convention
        return IonParams(**d)


def build_ion_model(p: IonParams) -> tuple[np.ndarray, list[np.ndarray]]:
    """Hamiltonian and jump operators of the driven three-level ion.

    ``H = sum_a (Omega_a/2)(e^{i phi_a}|0><a| + h.c.)`` and
    ``J_a = c_a |0><a|`` with ``c_a = sqrt(gamma_a)`` (sqrt-rate) or
    ``c_a = gamma_a`` (literal-rate).
    """
    H = np.zeros((3, 3), dtype=complex)
    H[0, 1] = 0.5 * p.omega1 * np.exp(1j * p.phase1)
    H[0, 2] = 0.5 * p.omega2 * np.exp(1j * p.phase2)
    H[1, 0] = np.conj(H[0, 1])
    H[2, 0] = np.conj(H[0, 2])
    if p.jump_convention == SQRT_RATE:
        c1, c2 = math.sqrt(p.gamma1), math.sqrt(p.gamma2)
    else:
        c1, c2 = p.gamma1, p.gamma2
    J1 = np.zeros((3, 3), dtype=complex)
    J1[0, 1] = c1
    J2 = np.zeros((3, 3), dtype=complex)
    J2[0, 2] = c2
    return H, [J1, J2]


def ion_liouvillian(p: IonParams | None = None) -> Superoperator:
    H, jumps = build_ion_model(p or IonParams())
    return build_liouvillian(H, jumps)


@dataclass(frozen=True)
class StateFamilyContext:
    """Two eigenvectors of the slowest left mode spanning the rotated family.

    ``phase`` is the unit factor that made ``L_1`` Hermitian.  It is 1 for
    spectra from :func:`mpemba.spectral.decompose`; in general the slow-mode
    overlap of the rotated state is ``phase * a1(s)``.
    """

    phi1: np.ndarray
    phi2: np.ndarray
    alpha1: float
    alpha2: float
    s_star: float
    l1_eigenvalues: tuple
    phase: complex = 1.0

    def a1(self, s) -> np.ndarray:
        """Closed-form slow-mode overlap of the rotated state at angle ``s``."""
        s = np.asarray(s)
        return self.alpha1 * np.cos(s) ** 2 + self.alpha2 * np.sin(s) ** 2


def strong_angle(alpha1: float, alpha2: float) -> float:
    """Angle where ``alpha1 cos^2 s + alpha2 sin^2 s`` vanishes."""
    if alpha1 * alpha2 >= 0:
        raise NoSignChange("alpha1 and alpha2 must have opposite signs")
    return math.atan(math.sqrt(abs(alpha1 / alpha2)))


def _canonical_phase(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return v * np.exp(-1j * np.angle(v[k]))


def select_pair(eigenvalues: np.ndarray) -> tuple[int, int]:
    """Indices (i1, i2) of the eigenvalues used for phi1 and phi2.

    phi2 goes with the largest-magnitude eigenvalue; phi1 with the
    largest-magnitude eigenvalue of the opposite sign.
    """
    ev = np.asarray(eigenvalues, dtype=float)
    i2 = int(np.argmax(np.abs(ev)))
    opposite = [i for i in range(len(ev)) if ev[i] * ev[i2] < 0]
    if not opposite:
        raise NoSignChange("all eigenvalues of the slowest left mode share one sign")
    i1 = max(opposite, key=lambda i: abs(ev[i]))
    return i1, i2


def state_family_context(spec: Spectrum, *, herm_tol: float = 1e-6) -> StateFamilyContext:
    lam1 = spec.eigenvalues[1]
    if abs(lam1.imag) > 1e-8 * abs(lam1):
        raise ComplexSlowMode(f"slowest eigenvalue {lam1} is not real")
    L1 = spec.left[1]
    t = np.trace(L1 @ L1)
    phase = np.exp(-0.5j * np.angle(t)) if abs(t) > 0 else 1.0
    L1 = L1 * phase
    if np.linalg.norm(L1 - L1.conj().T) > herm_tol * np.linalg.norm(L1):
        raise ComplexSlowMode("slowest left mode is not Hermitian up to a phase")
    L1h = 0.5 * (L1 + L1.conj().T)
    ev, vecs = np.linalg.eigh(L1h)
    i1, i2 = select_pair(ev)
    a1, a2 = float(ev[i1]), float(ev[i2])
    return StateFamilyContext(
        phi1=_canonical_phase(vecs[:, i1]),
        phi2=_canonical_phase(vecs[:, i2]),
        alpha1=a1,
        alpha2=a2,
        s_star=strong_angle(a1, a2),
        l1_eigenvalues=tuple(float(x) for x in ev),
        phase=complex(phase),
    )


def rotated_state(ctx: StateFamilyContext, s: float) -> np.ndarray:
    """``exp[-i s (|phi1><phi2| + |phi2><phi1|)] |phi1> = cos s |phi1> - i sin s |phi2>``."""
    return np.cos(s) * ctx.phi1 - 1j * np.sin(s) * ctx.phi2


def basis_state(k: int, d: int = 3) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[k] = 1.0
    return v


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for task ``key`` under master ``seed``.

    The task index enters through :class:`numpy.random.SeedSequence`'s spawn
    key, so streams do not depend on how tasks are scheduled.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def sample_haar_pure(d: int, seed=None, size: int | None = None) -> np.ndarray:
    """Haar-random pure state(s) as normalized complex Gaussian vectors.

    ``seed`` may be an int, a SeedSequence or an existing Generator.
    """
    if d < 2:
        raise ValueError("dimension must be at least 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (d,) if size is None else (size, d)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)
