"""Crossing detection, Mpemba classification and the Monte Carlo studies built on it.

A *pair* of initial states is labelled by how many times the distance
curves ``D_f(t)`` and ``D_c(t)`` cross on ``(0, t_max]``, where ``f`` is the
state that starts farther from the steady state:

    0 -> NoME, 1 -> ME, 2 -> MultiME, k > 2 -> Higher(k).
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import GridMismatch, TiedStart
from .model import StateFamilyContext, derive_rng, rotated_state, sample_haar_pure
from .operators import as_density_matrix, parse_norm, schatten_norm
from .relaxation import GridSpec, Trajectory, _deviation, speed
from .spectral import Spectrum, overlaps

TIE_TOL = 1e-12
TOUCH_TOL = 1e-12
ROOT_RTOL = 1e-9
MERGE_SEPARATION = 1e-6  # in units of tau_1
TANGENCY_TOL = 1e-10  # relative to the larger initial distance
QUADRANT_TOL = 1e-12

NOME, ME, MULTIME = "NoME", "ME", "MultiME"


def label_for(n_crossings: int) -> str:
    if n_crossings == 0:
        return NOME
    if n_crossings == 1:
        return ME
    if n_crossings == 2:
        return MULTIME
    return f"Higher({n_crossings})"


def _locate_crossings(times, delta, evaluate, tau1, d0_max):
    """Roots of ``delta`` on (0, t_max] from grid sign changes plus refinement.

    Samples with ``|delta| <= TOUCH_TOL`` carry no sign, so a dip to zero
    that recovers with the same sign is not counted.  Pairs of roots closer
    than ``MERGE_SEPARATION * tau1``, or with no excursion above
    ``TANGENCY_TOL * d0_max`` between them, are a grazing contact and are
    dropped together.
    """
    keep = np.flatnonzero(np.abs(delta) > TOUCH_TOL)
    if len(keep) < 2:
        return []
    sgn = np.sign(delta[keep])
    flips = np.flatnonzero(sgn[1:] != sgn[:-1])
    roots, brackets = [], []
    for j in flips:
        lo, hi = times[keep[j]], times[keep[j + 1]]
        try:
            r = brentq(evaluate, lo, hi, xtol=1e-300, rtol=ROOT_RTOL, maxiter=200)
        except ValueError:
            # grid and scalar evaluation disagree in sign at round-off level
            d_lo, d_hi = delta[keep[j]], delta[keep[j + 1]]
            r = lo + (hi - lo) * d_lo / (d_lo - d_hi)
        roots.append(float(r))
        brackets.append((keep[j], keep[j + 1]))

    out = []
    i = 0
    while i < len(roots):
        if i + 1 < len(roots):
            a, b = brackets[i][1], brackets[i + 1][0]
            between = np.abs(delta[a : b + 1]) if b >= a else np.array([0.0])
            if roots[i + 1] - roots[i] < MERGE_SEPARATION * tau1 or between.max() <= TANGENCY_TOL * d0_max:
                i += 2
                continue
        out.append(roots[i])
        i += 1
    return out


@dataclass(frozen=True)
class PairRecord:
    index: int
    d0_f: float
    d0_c: float
    delta_a1: float
    delta_a2: float
    delta_a8: float
    crossing_times: tuple
    label: str
    farther: str = "a"

    @property
    def n_crossings(self) -> int:
        return len(self.crossing_times)

    CSV_COLUMNS = ("index", "farther", "d0_f", "d0_c", "delta_a1", "delta_a2", "delta_a8", "n_crossings", "class", "crossing_times_s")

    def csv_row(self):
        return [
            self.index,
            self.farther,
            repr(self.d0_f),
            repr(self.d0_c),
            repr(self.delta_a1),
            repr(self.delta_a2),
            repr(self.delta_a8),
            self.n_crossings,
            self.label,
            ";".join(repr(t) for t in self.crossing_times),
        ]


def read_pair_records(fh) -> list:
    """Parse a phase-diagram CSV written by :meth:`PhaseDiagram.to_csv`."""
    rows = csv.DictReader(line for line in fh if not line.startswith("#"))
    out = []
    for row in rows:
        ct = tuple(float(x) for x in row["crossing_times_s"].split(";") if x)
        out.append(
            PairRecord(
                index=int(row["index"]),
                d0_f=float(row["d0_f"]),
                d0_c=float(row["d0_c"]),
                delta_a1=float(row["delta_a1"]),
                delta_a2=float(row["delta_a2"]),
                delta_a8=float(row["delta_a8"]),
                crossing_times=ct,
                label=row["class"],
                farther=row["farther"],
            )
        )
    return out


def _distance_curves(spec, A, times, p):
    return schatten_norm(_deviation(spec, A, times), p)


def _scalar_distance(spec, a, p):
    def f(t):
        return schatten_norm(_deviation(spec, a, float(t)), p)

    return f


def _record(spec, index, a_f, a_c, D_f, D_c, times, p, farther):
    tau1 = spec.timescales[0]
    df, dc = _scalar_distance(spec, a_f, p), _scalar_distance(spec, a_c, p)
    roots = _locate_crossings(times, D_f - D_c, lambda t: df(t) - dc(t), tau1, max(D_f[0], D_c[0]))
    N = spec.n_modes
    return PairRecord(
        index=int(index),
        d0_f=float(D_f[0]),
        d0_c=float(D_c[0]),
        delta_a1=float(abs(a_f[1]) - abs(a_c[1])),
        delta_a2=float(abs(a_f[2]) - abs(a_c[2])) if N >= 2 else 0.0,
        delta_a8=float(abs(a_f[N]) - abs(a_c[N])),
        crossing_times=tuple(roots),
        label=label_for(len(roots)),
        farther=farther,
    )


def _classify_overlaps(spec, index, a_a, a_b, times, p):
    D = _distance_curves(spec, np.stack([a_a, a_b]), times, p)
    if abs(D[0, 0] - D[1, 0]) <= TIE_TOL:
        raise TiedStart(f"initial distances {D[0, 0]!r} and {D[1, 0]!r} are tied")
    if D[0, 0] > D[1, 0]:
        return _record(spec, index, a_a, a_b, D[0], D[1], times, p, "a")
    return _record(spec, index, a_b, a_a, D[1], D[0], times, p, "b")


def crossing_times(traj_f: Trajectory, traj_c: Trajectory) -> list[float]:
    """Times where the two distance curves cross, refined to relative 1e-9.

    Both trajectories must share their time grid and norm.  If they carry a
    spectrum the roots are refined on the exact mode expansion, otherwise by
    linear interpolation on the grid.
    """
    if traj_f.times.shape != traj_c.times.shape or not np.array_equal(traj_f.times, traj_c.times):
        raise GridMismatch("trajectories are sampled on different grids")
    if traj_f.norm_p != traj_c.norm_p:
        raise GridMismatch("trajectories use different norms")
    if abs(traj_f.distance[0] - traj_c.distance[0]) <= TIE_TOL:
        raise TiedStart("initial distances are tied")
    if traj_f.distance[0] < traj_c.distance[0]:
        traj_f, traj_c = traj_c, traj_f
    t, delta = traj_f.times, traj_f.distance - traj_c.distance
    spec = traj_f.spectrum
    if spec is not None:
        df = _scalar_distance(spec, traj_f.overlap_vector, traj_f.norm_p)
        dc = _scalar_distance(spec, traj_c.overlap_vector, traj_c.norm_p)
        tau1 = spec.timescales[0]

        def evaluate(x):
            return df(x) - dc(x)

    else:
        tau1 = t[-1]

        def evaluate(x):
            return np.interp(x, t, delta)

    return _locate_crossings(t, delta, evaluate, tau1, traj_f.distance[0])


def classify_pair(spec: Spectrum, psi_a, psi_b, grid: GridSpec | None = None, p=2, *, index: int = 0) -> PairRecord:
    """Label a pair of states by the number of distance-curve crossings.

    The farther/closer roles are assigned from the initial distances, so the
    argument order does not matter (apart from the ``farther`` tag).
    """
    p = parse_norm(p)
    times = (grid or GridSpec()).times(spec)
    a_a = overlaps(spec, as_density_matrix(psi_a))
    a_b = overlaps(spec, as_density_matrix(psi_b))
    return _classify_overlaps(spec, index, a_a, a_b, times, p)


def _quadrant(rec: PairRecord):
    if abs(rec.delta_a8) <= QUADRANT_TOL or abs(rec.delta_a1) <= QUADRANT_TOL:
        return None
    return ("+" if rec.delta_a8 > 0 else "-", "+" if rec.delta_a1 > 0 else "-")


def quadrant_key(q) -> str:
    return f"da8{q[0]}_da1{q[1]}"


QUADRANTS = [("+", "-"), ("+", "+"), ("-", "-"), ("-", "+")]


@dataclass
class PhaseDiagram:
    records: list
    tau1: float
    tauN: float
    seed: int
    norm_p: float
    meta: dict = field(default_factory=dict)

    def labels(self):
        return sorted({r.label for r in self.records}, key=lambda s: (len(s), s))

    def class_counts(self) -> dict:
        out = {NOME: 0, ME: 0, MULTIME: 0}
        for r in self.records:
            out[r.label] = out.get(r.label, 0) + 1
        return out

    def quadrant_stats(self) -> dict:
        """Per quadrant of (sign d|a_N|, sign d|a_1|): count and class fractions."""
        stats = {}
        for q in QUADRANTS:
            members = [r for r in self.records if _quadrant(r) == q]
            n = len(members)
            fr = {NOME: 0.0, ME: 0.0, MULTIME: 0.0}
            for r in members:
                fr[r.label] = fr.get(r.label, 0.0) + 1.0
            stats[quadrant_key(q)] = {"count": n, "fractions": {k: (v / n if n else 0.0) for k, v in fr.items()}}
        return stats

    def class_quadrant_stats(self) -> dict:
        """Per class: the fraction of its members that fall in each quadrant."""
        stats = {}
        for label in (ME, MULTIME, NOME):
            members = [r for r in self.records if r.label == label and _quadrant(r) is not None]
            n = len(members)
            fr = {quadrant_key(q): 0.0 for q in QUADRANTS}
            for r in members:
                fr[quadrant_key(_quadrant(r))] += 1.0
            stats[label] = {"count": n, "fractions": {k: (v / n if n else 0.0) for k, v in fr.items()}}
        return stats

    def summary(self) -> dict:
        return {
            "n_pairs": len(self.records),
            "seed": self.seed,
            "norm_p": str(self.norm_p),
            "tau1_s": self.tau1,
            "tauN_s": self.tauN,
            "class_counts": self.class_counts(),
            "quadrants": self.quadrant_stats(),
            "class_quadrants": self.class_quadrant_stats(),
            **self.meta,
        }

    def to_csv(self, fh=None, header_lines=()):
        out = io.StringIO() if fh is None else fh
        for line in header_lines:
            out.write(f"# {line}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(PairRecord.CSV_COLUMNS)
        for r in self.records:
            w.writerow(r.csv_row())
        return out.getvalue() if fh is None else None


def _draw_pair(spec, seed, index):
    rng = derive_rng(seed, index)
    rho_ss = spec.steady_state
    while True:
        pa, pb = sample_haar_pure(spec.dim, rng, size=2)
        da = np.linalg.norm(np.outer(pa, pa.conj()) - rho_ss)
        db = np.linalg.norm(np.outer(pb, pb.conj()) - rho_ss)
        if abs(da - db) > TIE_TOL:
            return pa, pb


def _run_chunk(spec, seed, start, stop, times, p):
    states = np.array([_draw_pair(spec, seed, i) for i in range(start, stop)])  # (n, 2, d)
    rho = np.einsum("npi,npj->npij", states, states.conj())
    A = overlaps(spec, rho)  # (n, 2, N+1)
    D = _distance_curves(spec, A, times, p)  # (n, 2, T)
    out = []
    for k, i in enumerate(range(start, stop)):
        if D[k, 0, 0] > D[k, 1, 0]:
            out.append(_record(spec, i, A[k, 0], A[k, 1], D[k, 0], D[k, 1], times, p, "a"))
        else:
            out.append(_record(spec, i, A[k, 1], A[k, 0], D[k, 1], D[k, 0], times, p, "b"))
    return out


def phase_diagram(
    spec: Spectrum,
    n_pairs: int = 50000,
    seed: int = 0,
    grid: GridSpec | None = None,
    p=2,
    *,
    workers: int | None = 1,
    chunk_size: int = 250,
) -> PhaseDiagram:
    """Classify ``n_pairs`` Haar-random pairs of pure states.

    Pair ``i`` draws from its own stream derived from ``(seed, i)``, so the
    record stream is identical for any ``workers``/``chunk_size``.
    ``workers=None`` uses every available core.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    p = parse_norm(p)
    times = (grid or GridSpec()).times(spec)
    bounds = [(s, min(s + chunk_size, n_pairs)) for s in range(0, n_pairs, chunk_size)]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(_run_chunk, spec, seed, a, b, times, p) for a, b in bounds]
            records = [r for f in futs for r in f.result()]
    else:
        records = [r for a, b in bounds for r in _run_chunk(spec, seed, a, b, times, p)]
    records.sort(key=lambda r: r.index)
    tau = spec.timescales
    return PhaseDiagram(records, float(tau[0]), float(tau[-1]), seed, p, {"t_max_s": float(times[-1]), "n_times": len(times)})


@dataclass(frozen=True)
class CrossingHistogram:
    label: str
    edges: np.ndarray  # bin edges in units of tau_1
    first: np.ndarray
    second: np.ndarray
    n_records: int
    all_before_tau1: bool
    max_crossing: float  # in units of tau_1, nan when empty
    median_first: float
    median_second: float
    below_first: int = 0  # crossings earlier than the first edge
    below_second: int = 0

    def to_csv(self, fh=None, header_lines=()):
        out = io.StringIO() if fh is None else fh
        for line in header_lines:
            out.write(f"# {line}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["bin_lo_tau1", "bin_hi_tau1", "first_count", "second_count"])
        # underflow row: crossings before the grid's first nonzero sample
        w.writerow([repr(0.0), repr(float(self.edges[0])), self.below_first, self.below_second])
        for lo, hi, a, b in zip(self.edges[:-1], self.edges[1:], self.first, self.second):
            w.writerow([repr(float(lo)), repr(float(hi)), int(a), int(b)])
        return out.getvalue() if fh is None else None


def crossing_histogram(pd: PhaseDiagram, label: str, bins: int = 50) -> CrossingHistogram:
    """First/second crossing-time histograms (units of tau_1) for one class.

    Bins are log-spaced over [tau_N/10, 3 tau_1]; crossings earlier than
    tau_N/10 are counted separately as underflow.
    """
    if label not in (ME, MULTIME):
        raise ValueError("histograms are defined for the ME and MultiME classes")
    edges = np.geomspace(pd.tauN / 10.0 / pd.tau1, 3.0, bins + 1)
    members = [r for r in pd.records if r.label == label]
    first = np.array([r.crossing_times[0] for r in members]) / pd.tau1
    second = np.array([r.crossing_times[1] for r in members if r.n_crossings > 1]) / pd.tau1
    every = np.concatenate([first, second])
    return CrossingHistogram(
        label=label,
        edges=edges,
        first=np.histogram(first, edges)[0],
        second=np.histogram(second, edges)[0],
        n_records=len(members),
        all_before_tau1=bool(np.all(every < 1.0)),
        max_crossing=float(every.max()) if every.size else float("nan"),
        median_first=float(np.median(first)) if first.size else float("nan"),
        median_second=float(np.median(second)) if second.size else float("nan"),
        below_first=int(np.sum(first < edges[0])),
        below_second=int(np.sum(second < edges[0])),
    )


@dataclass
class CorrelationResult:
    rows: list  # dicts: label, time_s, mode, r (None when undefined)
    samples: dict  # column name -> array over states

    def to_csv(self, fh=None, header_lines=()):
        out = io.StringIO() if fh is None else fh
        for line in header_lines:
            out.write(f"# {line}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["label", "time_s", "mode", "pearson_r"])
        for row in self.rows:
            r = "undefined" if row["r"] is None else repr(row["r"])
            w.writerow([row["label"], repr(row["time_s"]), row["mode"], r])
        return out.getvalue() if fh is None else None

    def samples_csv(self, fh=None, header_lines=()):
        out = io.StringIO() if fh is None else fh
        for line in header_lines:
            out.write(f"# {line}\n")
        w = csv.writer(out, lineterminator="\n")
        cols = list(self.samples)
        w.writerow(cols)
        for row in zip(*(self.samples[c] for c in cols)):
            w.writerow([repr(float(x)) for x in row])
        return out.getvalue() if fh is None else None

    def r(self, label):
        return next(row["r"] for row in self.rows if row["label"] == label)


def pearson(x, y):
    """Pearson correlation, or None when either sample has zero variance."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    sx, sy = x.std(), y.std()
    if sx <= 1e-15 * max(1.0, np.abs(x).max()) or sy <= 1e-15 * max(1.0, np.abs(y).max()):
        return None
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


def speed_overlap_correlation(spec: Spectrum, n_states: int = 5000, seed: int = 0, p=2, *, states=None) -> CorrelationResult:
    """Correlate v(t) with the mode overlap expected to dominate at t.

    Pairs: v(0) with |a_N|, v(2 tau_2) with |a_2|, v(tau_1) with |a_1|.
    State ``i`` is drawn from the stream derived from ``(seed, i)`` unless
    ``states`` is given explicitly.
    """
    p = parse_norm(p)
    if states is None:
        if n_states < 100:
            raise ValueError("need at least 100 states for a meaningful correlation")
        states = np.array([sample_haar_pure(spec.dim, derive_rng(seed, i)) for i in range(n_states)])
    states = np.asarray(states)
    rho = np.einsum("ni,nj->nij", states, states.conj())
    A = overlaps(spec, rho)
    tau = spec.timescales
    N = spec.n_modes
    plan = [("v(0)~|a_N|", 0.0, N), ("v(2tau2)~|a_2|", 2.0 * tau[1], 2), ("v(tau1)~|a_1|", tau[0], 1)]
    rows, samples = [], {}
    for m in (1, 2, N):
        samples[f"abs_a{m}"] = np.abs(A[:, m])
    for label, t, mode in plan:
        v = speed(spec, A, t, p)
        samples[f"v_t{t!r}"] = v
        rows.append({"label": label, "time_s": float(t), "mode": mode, "r": pearson(v, np.abs(A[:, mode]))})
    return CorrelationResult(rows, samples)


@dataclass
class SweepTable:
    columns: tuple
    data: np.ndarray  # (n_s, n_cols)

    def column(self, name):
        return self.data[:, self.columns.index(name)]

    @property
    def max_truncation_deviation(self) -> float:
        return float(np.max(self.column("trunc_rel_dev")))

    def to_csv(self, fh=None, header_lines=()):
        out = io.StringIO() if fh is None else fh
        for line in header_lines:
            out.write(f"# {line}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.data:
            w.writerow([repr(float(x)) for x in row])
        return out.getvalue() if fh is None else None


SWEEP_COLUMNS = ("s", "D_0", "D_tau2", "D_tau1", "v_0", "v_tau2", "v_tau1", "abs_a1", "abs_a2", "abs_aN", "v_tau2_trunc", "trunc_rel_dev")


def s_sweep(spec: Spectrum, ctx: StateFamilyContext, s_grid, p=2, *, trunc_modes=(2, 5)) -> SweepTable:
    """Distances, speeds and overlaps along the rotated family |s>.

    ``v_tau2_trunc`` keeps only modes ``trunc_modes[0]..trunc_modes[1]``
    (inclusive) at t = tau_2; ``trunc_rel_dev`` is its relative deviation
    from the full speed.
    """
    p = parse_norm(p)
    s_grid = np.asarray(s_grid, dtype=float)
    states = np.array([rotated_state(ctx, s) for s in s_grid])
    rho = np.einsum("ni,nj->nij", states, states.conj())
    A = overlaps(spec, rho)
    tau = spec.timescales
    ts = np.array([0.0, tau[1], tau[0]])
    D = schatten_norm(_deviation(spec, A, ts), p)
    V = schatten_norm(_deviation(spec, A, ts, derivative=True), p)
    lo, hi = trunc_modes
    modes = np.arange(lo, min(hi, spec.n_modes) + 1)
    v_tr = schatten_norm(_deviation(spec, A, tau[1], derivative=True, modes=modes), p)
    with np.errstate(invalid="ignore", divide="ignore"):
        dev = np.abs(v_tr - V[:, 1]) / V[:, 1]
    N = spec.n_modes
    data = np.column_stack([s_grid, D, V, np.abs(A[:, 1]), np.abs(A[:, 2]), np.abs(A[:, N]), v_tr, dev])
    return SweepTable(SWEEP_COLUMNS, data)
