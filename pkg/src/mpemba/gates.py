"""Qutrit state preparation with virtual phase gates, projective tomography
and maximum-likelihood reconstruction.

A target ``(a, b, c)`` is prepared as ``U|0> = M m|0>`` where ``m`` mixes
levels 0-2 and ``M`` levels 0-1.  Each factor splits into a physical
rotation and diagonal phase gates; the phase gates are moved to the front of
the sequence, where they only redefine the phases of later drives and of the
tomography pulses.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .model import IonParams, build_ion_model
from .operators import Superoperator, build_liouvillian, validate_density_matrix

DEGENERATE_TOL = 1e-14


def P01(x):
    return np.diag([np.exp(1j * x), np.exp(1j * x), 1.0]).astype(complex)


def P02(x):
    return np.diag([np.exp(1j * x), 1.0, np.exp(1j * x)]).astype(complex)


def Z01(x):
    return np.diag([np.exp(-1j * x), np.exp(1j * x), 1.0]).astype(complex)


def Z02(x):
    return np.diag([np.exp(-1j * x), 1.0, np.exp(1j * x)]).astype(complex)


def _rotation(theta, phi, j):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    R = np.eye(3, dtype=complex)
    R[0, 0] = R[j, j] = c
    R[0, j] = -1j * np.exp(-1j * phi) * s
    R[j, 0] = -1j * np.exp(1j * phi) * s
    return R


def R01(theta, phi):
    return _rotation(theta, phi, 1)


def R02(theta, phi):
    return _rotation(theta, phi, 2)


def _wrap(x):
    return float((x + np.pi) % (2 * np.pi) - np.pi)


@dataclass(frozen=True)
class GatePlan:
    target: tuple  # (a, b, c) as complex
    gamma: float
    alpha: float
    beta: float
    delta: float
    gamma_p: float
    alpha_p: float
    beta_p: float
    delta_p: float
    degenerate: bool = False

    @property
    def phi(self) -> float:
        """Drive phase of the physical 0-1 rotation."""
        return _wrap(self.alpha_p - (self.beta_p + self.delta_p) + np.pi / 2 - 2 * self.delta)

    @property
    def phi_p(self) -> float:
        """Drive phase of the physical 0-2 rotation."""
        return _wrap(np.pi / 2 - 2 * self.delta_p)

    @property
    def phi_l1(self) -> float:
        """Phase offset accumulated on the 0-1 coherence."""
        return _wrap(self.alpha_p - 2 * (self.beta + self.delta) - (self.beta_p + self.delta_p))

    @property
    def phi_l2(self) -> float:
        """Phase offset accumulated on the 0-2 coherence."""
        return _wrap(self.alpha - 2 * (self.beta_p + self.delta_p) - (self.beta + self.delta))

    def phase_gates(self) -> np.ndarray:
        return P01(self.alpha) @ P02(self.alpha_p) @ Z01(self.beta + self.delta) @ Z02(self.beta_p + self.delta_p)

    def rotations(self) -> np.ndarray:
        """The two pulses that are physically applied, R01(gamma, phi) R02(gamma', phi')."""
        return R01(self.gamma, self.phi) @ R02(self.gamma_p, self.phi_p)

    def unitary(self) -> np.ndarray:
        return self.phase_gates() @ self.rotations()

    def prepared_state(self) -> np.ndarray:
        return self.unitary()[:, 0]

    def physical_state(self) -> np.ndarray:
        """State after the physical pulses only (phase gates left virtual)."""
        return self.rotations()[:, 0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target"] = [[float(z.real), float(z.imag)] for z in self.target]
        d.update(phi=self.phi, phi_p=self.phi_p, phi_l1=self.phi_l1, phi_l2=self.phi_l2)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def target_factors(target) -> tuple[np.ndarray, np.ndarray]:
    """The factors ``M`` (levels 0-1) and ``m`` (levels 0-2) with ``M m |0> = target``."""
    a, b, c = (complex(x) for x in target)
    n = math.sqrt(abs(a) ** 2 + abs(b) ** 2)
    M = np.array([[a / n, np.conj(b) / n, 0], [b / n, -np.conj(a) / n, 0], [0, 0, 1]], dtype=complex)
    m = np.array([[n, 0, np.conj(c)], [0, 1, 0], [c, 0, -n]], dtype=complex)
    return M, m


def decompose(target) -> GatePlan:
    """Angles of the two-rotation preparation of a unit qutrit vector.

    When the target is |2> up to a phase the 0-1 factor is undefined; the
    plan then uses a single ``R02(pi, arg(c) + pi/2)`` pulse and no phase
    gates.
    """
    vec = np.asarray(target, dtype=complex).reshape(-1)
    if vec.shape != (3,):
        raise ValueError("target must be a 3-vector")
    if abs(np.linalg.norm(vec) - 1.0) > 1e-12:
        raise ValueError(f"target is not normalized (norm {np.linalg.norm(vec)})")
    a, b, c = vec
    tgt = tuple(complex(x) for x in vec)
    if abs(a) ** 2 + abs(b) ** 2 < DEGENERATE_TOL:
        dp = -np.angle(c) / 2
        return GatePlan(tgt, 0.0, 0.0, 0.0, 0.0, np.pi, 0.0, -dp, dp, degenerate=True)

    M, m = target_factors(vec)
    gamma = 2 * math.acos(min(1.0, abs(M[0, 0])))
    alpha = 0.5 * (np.angle(M[0, 0]) + np.angle(M[1, 1]))
    beta = 0.5 * (np.angle(M[1, 0]) - np.angle(M[0, 0]))
    delta = -alpha + np.angle(M[1, 1]) - beta
    gamma_p = 2 * math.acos(min(1.0, abs(m[0, 0])))
    alpha_p = 0.5 * (np.angle(m[0, 0]) + np.angle(m[2, 2]))
    beta_p = 0.5 * (np.angle(m[2, 0]) - np.angle(m[0, 0]))
    delta_p = -alpha_p + np.angle(m[2, 2]) - beta_p
    return GatePlan(tgt, gamma, float(alpha), float(beta), float(delta), gamma_p, float(alpha_p), float(beta_p), float(delta_p))


FRAME_PHASES = "frame"
ROTATION_PHASES = "rotation"


def adjusted_params(p: IonParams, plan: GatePlan, phases: str = ROTATION_PHASES) -> IonParams:
    if phases == ROTATION_PHASES:
        ph1, ph2 = plan.phi, plan.phi_p
    elif phases == FRAME_PHASES:
        # conjugating H by the virtual phase gates shifts H_{0a} by -phi_La
        ph1, ph2 = -plan.phi_l1, -plan.phi_l2
    else:
        raise ValueError(f"phases must be {ROTATION_PHASES!r} or {FRAME_PHASES!r}")
    d = asdict(p)
    d.update(phase1=p.phase1 + ph1, phase2=p.phase2 + ph2)
    return IonParams(**d)


def adjusted_liouvillian(p: IonParams, plan: GatePlan, phases: str = ROTATION_PHASES) -> Superoperator:
    """Generator for the dynamics after the virtual phase gates.

    ``phases="rotation"`` installs the two rotation phases (phi, phi') as
    drive phases.  ``phases="frame"`` installs the phases that the virtual
    gates actually imprint on the 0-1 and 0-2 couplings, ``-phi_L1`` and
    ``-phi_L2``; only this choice reproduces the unadjusted dynamics in the
    prepared frame.
    """
    H, jumps = build_ion_model(adjusted_params(p, plan, phases))
    return build_liouvillian(H, jumps)


# ---------------------------------------------------------------------------
# tomography

_S2 = 1 / math.sqrt(2)


@dataclass(frozen=True)
class Setting:
    """One measurement configuration with three outcomes.

    ``basis`` is an orthonormal basis (columns); the pre-measurement rotation
    ``basis^dagger`` sends column k to level |k>, so outcome 0 is the listed
    basis state brought to the detected level |0>.
    """

    name: str
    basis: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        return self.basis.conj().T

    @property
    def projectors(self) -> np.ndarray:
        return np.einsum("ik,jk->kij", self.basis, self.basis.conj())


def _pair_basis(j, k, rel, spectator):
    B = np.zeros((3, 3), dtype=complex)
    B[j, 0], B[k, 0] = _S2, _S2 * rel
    B[j, 1], B[k, 1] = _S2, -_S2 * rel
    B[spectator, 2] = 1.0
    return B


@dataclass(frozen=True)
class TomographySetup:
    settings: tuple
    phase01: float = 0.0
    phase02: float = 0.0

    @property
    def names(self):
        return [s.name for s in self.settings]

    def all_projectors(self) -> np.ndarray:
        return np.concatenate([s.projectors for s in self.settings])


def tomography_setup(phase01: float = 0.0, phase02: float = 0.0) -> TomographySetup:
    """The nine settings: one per level |k> and one per +/- superposition pair.

    Level settings Z0, Z1, Z2 are the computational basis ordered with |k>
    first; pair settings resolve both superpositions and the spectator level.  Nonzero phases
    shift the relative phase of |1> (resp. |2>) against |0> in every basis
    state, i.e. the basis becomes ``diag(1, e^{i phase01}, e^{i phase02}) |b>``.
    """
    settings = []
    perm = {0: (0, 1, 2), 1: (1, 0, 2), 2: (2, 0, 1)}
    for k in range(3):
        B = np.eye(3, dtype=complex)[:, perm[k]]
        settings.append(Setting(f"Z{k}", B))
    for (j, k, spec), tag in (((0, 1, 2), "01"), ((0, 2, 1), "02"), ((1, 2, 0), "12")):
        settings.append(Setting(f"X{tag}", _pair_basis(j, k, 1.0, spec)))
        settings.append(Setting(f"Y{tag}", _pair_basis(j, k, 1j, spec)))
    if phase01 or phase02:
        D = np.diag([1.0, np.exp(1j * phase01), np.exp(1j * phase02)])
        settings = [Setting(s.name, D @ s.basis) for s in settings]
    return TomographySetup(tuple(settings), float(phase01), float(phase02))


def adjusted_tomography(plan: GatePlan) -> TomographySetup:
    return tomography_setup(plan.phi_l1, plan.phi_l2)


@dataclass
class TomographyData:
    """Per-setting outcome counts (or exact probabilities when ``shots`` is None)."""

    setup: TomographySetup
    counts: list  # one array per setting
    shots: int | None

    def as_nominal(self) -> "TomographyData":
        """Same counts attributed to the unadjusted settings.

        Counts taken with phase-adjusted settings on the physical state are
        read as measurements of the ideal state in the nominal bases.
        """
        return TomographyData(tomography_setup(), self.counts, self.shots)

    def to_csv(self, fh=None, header_lines=()):
        out = io.StringIO() if fh is None else fh
        for line in header_lines:
            out.write(f"# {line}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["setting", "outcome", "count"])
        for s, c in zip(self.setup.settings, self.counts):
            for k, v in enumerate(c):
                w.writerow([s.name, k, int(v) if self.shots is not None else repr(float(v))])
        return out.getvalue() if fh is None else None


def simulate_tomography(rho: np.ndarray, setup: TomographySetup, shots: int | None = None, seed=None) -> TomographyData:
    """Outcome statistics of every setting.

    Probabilities are the detected populations after each pre-measurement
    rotation; ``shots=None`` returns them exactly, otherwise multinomial
    counts drawn from a generator seeded with ``seed``.
    """
    rho = validate_density_matrix(rho, herm_tol=1e-10, trace_tol=1e-10)
    rng = np.random.default_rng(seed)
    counts = []
    for s in setup.settings:
        T = s.rotation
        probs = np.clip(np.real(np.diag(T @ rho @ T.conj().T)), 0.0, None)
        probs = probs / probs.sum()
        counts.append(probs if shots is None else rng.multinomial(shots, probs))
    return TomographyData(setup, counts, shots)


@dataclass
class MLEResult:
    rho: np.ndarray
    log_likelihood: list = field(repr=False)
    iterations: int = 0
    converged: bool = False
    errorbars: np.ndarray | None = None


def _loglik(projs, weights, rho):
    p = np.real(np.einsum("kij,ji->k", projs, rho))
    live = weights > 0
    return float(np.sum(weights[live] * np.log(np.clip(p[live], 1e-300, None)))), p


def _cholesky_polish(projs, w, rho0):
    d = rho0.shape[0]
    rows, cols = np.tril_indices(d)
    off = rows != cols
    T0 = np.linalg.cholesky(rho0 + 1e-12 * np.eye(d))
    x0 = np.concatenate([T0[rows, cols].real, T0[rows, cols][off].imag])
    live = w > 0

    def unpack(x):
        T = np.zeros((d, d), dtype=complex)
        T[rows, cols] = x[: len(rows)]
        T[rows[off], cols[off]] += 1j * x[len(rows):]
        r = T @ T.conj().T
        return r / np.real(np.trace(r))

    def nll(x):
        pr = np.real(np.einsum("kij,ji->k", projs[live], unpack(x)))
        return -float(np.sum(w[live] * np.log(np.clip(pr, 1e-300, None))))

    res = minimize(nll, x0, method="BFGS", options={"gtol": 1e-12})
    return unpack(res.x)


def mle_reconstruct(
    data: TomographyData,
    *,
    max_iter: int = 10_000,
    tol: float = 1e-10,
    polish: bool = True,
    bootstrap: int = 0,
    seed=None,
) -> MLEResult:
    """Maximum-likelihood density matrix from tomography counts.

    R-rho-R iteration ``rho <- R^m rho R^m / Tr``.  The exponent ``m`` is
    doubled while that raises the likelihood (over-relaxation) and reset to 1
    otherwise; if even ``m = 1`` would lower the likelihood the diluted step
    ``(I + e R) rho (I + e R)`` is used with ``e`` halved until it does not.
    Every accepted step is checked, so the log-likelihood never decreases.  Stops when the
    gain falls below ``tol`` or after ``max_iter`` iterations.

    The fixed-point iteration converges only sublinearly towards
    rank-deficient states.  With ``polish`` the result is refined by a BFGS
    search over Cholesky factors ``rho = T T^dagger / Tr``, kept only if it
    raises the likelihood.

    ``bootstrap > 0`` resamples the counts that many times and returns the
    elementwise standard deviation of the resampled reconstructions.
    """
    projs = data.setup.all_projectors()
    weights = np.concatenate([np.asarray(c, dtype=float) for c in data.counts])
    total = weights.sum()
    if total <= 0:
        raise ValueError("all counts are zero")
    w = weights / total
    d = projs.shape[-1]
    eye = np.eye(d)
    rho = eye / d
    ll, p = _loglik(projs, w, rho)
    history = [ll]
    converged = False
    it = 0
    power = 1.0

    def attempt(G):
        cand = G @ rho @ G.conj().T
        cand = 0.5 * (cand + cand.conj().T)
        cand /= np.real(np.trace(cand))
        return (cand,) + _loglik(projs, w, cand)

    for it in range(1, max_iter + 1):
        live = w > 0
        R = np.einsum("k,kij->ij", w[live] / np.clip(p[live], 1e-300, None), projs[live])
        R = 0.5 * (R + R.conj().T)
        # each setting's projectors resolve the identity, so R -> I at the optimum
        ev, U = np.linalg.eigh(R)
        ev = np.clip(ev, 1e-300, None)

        def R_pow(m):
            return (U * ev**m) @ U.conj().T

        best = None
        m = power
        while m >= 1.0:
            trial = attempt(R_pow(m))
            if trial[1] >= ll:
                best = trial
                break
            m /= 2
        if best is not None:
            # accelerate: keep doubling the exponent while the likelihood improves
            while m < 64:
                trial = attempt(R_pow(2 * m))
                if trial[1] <= best[1]:
                    break
                best, m = trial, 2 * m
            power = max(1.0, m)
        else:
            step = 1.0
            while step > 1e-12:
                trial = attempt((eye + step * R) / (1 + step))
                if trial[1] >= ll:
                    best = trial
                    break
                step /= 2
            power = 1.0
        if best is None:
            break
        cand, new_ll, new_p = best
        gain = new_ll - ll
        rho, ll, p = cand, new_ll, new_p
        history.append(ll)
        if gain < tol:
            converged = True
            break

    if polish:
        cand = _cholesky_polish(projs, w, rho)
        new_ll, new_p = _loglik(projs, w, cand)
        if new_ll > ll:
            rho, ll, p = cand, new_ll, new_p
            history.append(ll)

    errorbars = None
    if bootstrap:
        rng = np.random.default_rng(seed)
        shots = data.shots or 1000
        samples = []
        for _ in range(bootstrap):
            resampled = []
            for c in data.counts:
                pr = np.asarray(c, float) / np.sum(c)
                resampled.append(rng.multinomial(shots, pr))
            boot = TomographyData(data.setup, resampled, shots)
            samples.append(mle_reconstruct(boot, max_iter=max_iter, tol=tol, polish=polish).rho)
        samples = np.array(samples)
        errorbars = samples.real.std(axis=0) + 1j * samples.imag.std(axis=0)
    return MLEResult(rho, history, it, converged, errorbars)


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``."""
    w, U = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    sq = (U * np.sqrt(np.clip(w, 0, None))) @ U.conj().T
    inner = sq @ sigma @ sq
    ev = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    return float(np.sum(np.sqrt(np.clip(ev, 0, None))) ** 2)
