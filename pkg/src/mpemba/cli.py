"""Command-line entry point: ``mpemba <command> [options]``.

Every command writes its data files into ``--out`` (default: ``$MPEMBA_OUT``
or the current directory).  CSV files start with ``# `` comment lines that
record the version, command line and full configuration; JSON files carry
the same information under a leading ``"header"`` key.

Exit status: 0 on success, 1 on usage or input errors, 2 on numerical failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import re
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    ME,
    MULTIME,
    PhaseDiagram,
    classify_pair,
    crossing_histogram,
    phase_diagram,
    read_pair_records,
    s_sweep,
    speed_overlap_correlation,
)
from .errors import MpembaError, NumericalError
from .gates import decompose as decompose_target
from .gates import fidelity, mle_reconstruct, simulate_tomography, tomography_setup
from .model import JUMP_CONVENTIONS, IonParams, basis_state, ion_liouvillian, rotated_state, state_family_context
from .operators import as_density_matrix, exp_evolve, parse_norm
from .relaxation import GridSpec, trajectory
from .spectral import decompose

ENV_OUT = "MPEMBA_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


# ---------------------------------------------------------------------------
# argument helpers


def parse_angle(text: str) -> float:
    """Radians from ``"2.35"``, ``"0.75pi"`` or ``"pi"``."""
    t = text.strip().lower().replace(" ", "")
    m = re.fullmatch(r"([-+]?[0-9.eE+-]*)\*?pi", t)
    if m:
        coef = m.group(1)
        return float(coef or 1.0) * np.pi if coef not in ("-", "+") else float(coef + "1") * np.pi
    return float(t)


def parse_state(text: str, ctx_factory):
    """``ket0``/``ket1``/``ket2`` or an angle of the rotated family."""
    t = text.strip().lower()
    if re.fullmatch(r"ket[0-2]", t):
        return basis_state(int(t[3])), t
    s = parse_angle(t)
    return rotated_state(ctx_factory(), s), f"s={s!r}"


def parse_target(text: str) -> np.ndarray:
    parts = [p.strip().replace("i", "j") for p in text.split(",")]
    if len(parts) != 3:
        raise UsageError("--target needs three comma-separated amplitudes")
    try:
        return np.array([complex(p) for p in parts])
    except ValueError as exc:
        raise UsageError(f"bad amplitude in --target: {exc}") from None


def _common(parser):
    g = parser.add_argument_group("model and grid")
    g.add_argument("--config", help="JSON file with omega1_khz, omega2_ratio, gamma1_khz, gamma2_khz, jump_convention")
    g.add_argument("--omega1-khz", type=float)
    g.add_argument("--omega2-ratio", type=float)
    g.add_argument("--gamma1-khz", type=float)
    g.add_argument("--gamma2-khz", type=float)
    g.add_argument("--convention", choices=JUMP_CONVENTIONS)
    g.add_argument("--norm", default="2", help="Schatten index: 1, 2 or inf (default 2)")
    g.add_argument("--t-max", type=float, default=3.0, help="grid end in units of tau_1 (default 3)")
    g.add_argument("--n-points", type=int, default=2000, help="grid samples including t=0 (default 2000)")
    o = parser.add_argument_group("output")
    o.add_argument("--out", default=None, help=f"output directory (default ${ENV_OUT} or .)")
    o.add_argument("--no-timestamp", action="store_true", help="omit the generation time from headers")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mpemba", description="Relaxation, Mpemba statistics and qutrit tomography for a driven three-level ion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        _common(sp)
        return sp

    add("spectrum", "eigenvalues, timescales and eigenmatrices of the generator")

    sp = add("trajectory", "distance, speed and geometric speed of one or two initial states")
    sp.add_argument("--s", required=True, help="rotation angle (e.g. 0.75pi) or ket0/ket1/ket2")
    sp.add_argument("--s2", help="second state; also classifies the pair")

    sp = add("sweep-s", "distances, speeds and overlaps along the rotated family")
    sp.add_argument("--n", type=int, default=201, help="number of s values on [0, pi] (default 201)")

    sp = add("classify", "count distance-curve crossings for a pair of states")
    sp.add_argument("--s-f", required=True, help="first state (angle or ketK)")
    sp.add_argument("--s-c", required=True, help="second state (angle or ketK)")

    def mc(sp, default_pairs):
        sp.add_argument("--pairs", type=int, default=default_pairs)
        sp.add_argument("--seed", type=int, required=True)
        sp.add_argument("--workers", type=int, default=None, help="processes (default: all cores)")

    sp = add("phase-diagram", "classify Haar-random pairs of pure states")
    mc(sp, 50000)

    sp = add("histogram", "crossing-time histograms of the ME and MultiME classes")
    sp.add_argument("--input", help="phase-diagram CSV to read instead of running a new one")
    sp.add_argument("--bins", type=int, default=50)
    sp.add_argument("--pairs", type=int, default=50000)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int, default=None)

    sp = add("correlate", "correlation of speeds with mode overlaps over Haar states")
    sp.add_argument("--states", type=int, default=5000)
    sp.add_argument("--seed", type=int, required=True)

    sp = add("decompose", "two-rotation preparation plan for a qutrit target")
    sp.add_argument("--target", required=True, help="a,b,c amplitudes, complex allowed (e.g. 1,0.5j,0)")
    sp.add_argument("--normalize", action="store_true", help="rescale the target to unit norm")

    sp = add("tomo-sim", "simulate tomography of a state and reconstruct it")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--target", help="pure target a,b,c")
    src.add_argument("--s", help="rotation angle or ketK (default: s_star)")
    sp.add_argument("--time", type=float, default=0.0, help="evolve under the model first, in units of tau_1")
    sp.add_argument("--shots", type=int, default=0, help="shots per setting; 0 means exact probabilities")
    sp.add_argument("--seed", type=int, help="required when --shots > 0")
    sp.add_argument("--bootstrap", type=int, default=0, help="resamples for error bars")
    return parser


# ---------------------------------------------------------------------------
# run context


class Run:
    def __init__(self, args, argv):
        self.args = args
        self.argv = argv
        self.params = self._params(args)
        self.norm = parse_norm(args.norm)
        out = args.out or os.environ.get(ENV_OUT) or "."
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self._spec = None
        self._ctx = None
        self.written = []

    @staticmethod
    def _params(args) -> IonParams:
        cfg = {}
        if args.config:
            try:
                cfg = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {args.config}: {exc}") from None
        for key in ("omega1_khz", "omega2_ratio", "gamma1_khz", "gamma2_khz"):
            val = getattr(args, key)
            if val is not None:
                cfg[key] = val
        if args.convention:
            cfg["jump_convention"] = args.convention
        return IonParams.from_config(cfg)

    @property
    def spec(self):
        if self._spec is None:
            self._spec = decompose(ion_liouvillian(self.params))
        return self._spec

    def ctx(self):
        if self._ctx is None:
            self._ctx = state_family_context(self.spec)
        return self._ctx

    @property
    def grid(self) -> GridSpec:
        return GridSpec(t_max=self.args.t_max * self.spec.timescales[0], n_points=self.args.n_points)

    def config(self) -> dict:
        skip = {"command", "out", "no_timestamp", "config"}
        opts = {k: v for k, v in vars(self.args).items() if k not in skip}
        return {"model_rad_per_s": asdict(self.params), "norm_p": str(self.norm), "options": opts}

    def header(self) -> dict:
        h = {
            "artifact": "mpemba",
            "version": __version__,
            "command": " ".join(["mpemba"] + _without_out(self.argv)),
            "config": self.config(),
        }
        if not self.args.no_timestamp:
            h["generated"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        return h

    def header_lines(self, extra=()):
        h = self.header()
        lines = [f"{h['artifact']} {h['version']}", f"command: {h['command']}", "config: " + json.dumps(h["config"], sort_keys=True)]
        lines += list(extra)
        if "generated" in h:
            lines.append(f"generated: {h['generated']}")
        return lines

    def write_csv(self, name, obj, extra=(), method="to_csv"):
        path = self.out / name
        with open(path, "w", newline="") as fh:
            getattr(obj, method)(fh, header_lines=self.header_lines(extra))
        self.written.append(path)
        return path

    def write_json(self, name, payload):
        path = self.out / name
        doc = {"header": self.header(), **payload}
        path.write_text(json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n")
        self.written.append(path)
        return path


def _without_out(argv):
    """The command line minus ``--out``, so output bytes do not depend on the directory."""
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
        elif tok == "--out":
            skip = True
        elif not tok.startswith("--out="):
            out.append(tok)
    return out


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _cmat(A):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(A)]


def _record_dict(rec):
    return {
        "class": rec.label,
        "n_crossings": rec.n_crossings,
        "crossing_times_s": list(rec.crossing_times),
        "farther": rec.farther,
        "d0_f": rec.d0_f,
        "d0_c": rec.d0_c,
        "delta_a1": rec.delta_a1,
        "delta_a2": rec.delta_a2,
        "delta_a8": rec.delta_a8,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_spectrum(run: Run):
    spec = run.spec
    run.write_json("spectrum.json", spec.to_dict())
    lam = spec.eigenvalues
    print(f"{len(lam)} eigenvalues; tau_1 = {spec.timescales[0]:.6g} s, tau_N = {spec.timescales[-1]:.6g} s")


def cmd_trajectory(run: Run):
    a = run.args
    states = [parse_state(a.s, run.ctx)]
    if a.s2:
        states.append(parse_state(a.s2, run.ctx))
    trajs = []
    for k, (psi, tag) in enumerate(states, start=1):
        tr = trajectory(run.spec, psi, run.grid, run.norm)
        trajs.append(tr)
        run.write_csv(f"trajectory_{k}.csv", tr, extra=[f"state: {tag}"])
    if len(states) == 2:
        rec = classify_pair(run.spec, states[0][0], states[1][0], run.grid, run.norm)
        run.write_json("trajectory_pair.json", {"states": [t for _, t in states], **_record_dict(rec)})
        print(f"{rec.label}: {rec.n_crossings} crossing(s)")


def cmd_sweep_s(run: Run):
    ctx = run.ctx()
    grid = np.linspace(0.0, np.pi, run.args.n)
    table = s_sweep(run.spec, ctx, grid, run.norm)
    extra = [f"alpha1: {ctx.alpha1!r}", f"alpha2: {ctx.alpha2!r}", f"s_star: {ctx.s_star!r}"]
    run.write_csv("sweep_s.csv", table, extra=extra)
    print(f"s_star = {ctx.s_star:.6f} rad ({ctx.s_star / np.pi:.4f} pi)")


def cmd_classify(run: Run):
    a = run.args
    (pf, tf), (pc, tc) = parse_state(a.s_f, run.ctx), parse_state(a.s_c, run.ctx)
    rec = classify_pair(run.spec, pf, pc, run.grid, run.norm)
    tau = run.spec.timescales
    payload = {"states": [tf, tc], "tau1_s": float(tau[0]), "tau2_s": float(tau[1]), **_record_dict(rec)}
    run.write_json("classify.json", payload)
    times = ", ".join(f"{t:.6g}" for t in rec.crossing_times)
    print(f"class={rec.label} crossings={rec.n_crossings} [{times}]")


def _run_phase_diagram(run: Run, pairs, seed, workers) -> PhaseDiagram:
    if pairs < 1:
        raise UsageError("--pairs must be positive")
    return phase_diagram(run.spec, pairs, seed, run.grid, run.norm, workers=workers)


def cmd_phase_diagram(run: Run):
    a = run.args
    pd = _run_phase_diagram(run, a.pairs, a.seed, a.workers)
    run.write_csv("phase_diagram.csv", pd, extra=[f"seed: {a.seed}"])
    run.write_json("phase_diagram.json", {"summary": pd.summary()})
    q = pd.quadrant_stats()
    print(f"{len(pd.records)} pairs: {pd.class_counts()}")
    for key, st in q.items():
        fr = ", ".join(f"{k}={v:.3f}" for k, v in st["fractions"].items())
        print(f"  {key}: n={st['count']} {fr}")


def cmd_histogram(run: Run):
    a = run.args
    tau = run.spec.timescales
    if a.input:
        with open(a.input) as fh:
            records = read_pair_records(fh)
        pd = PhaseDiagram(records, float(tau[0]), float(tau[-1]), a.seed, run.norm)
        source = f"input: {a.input}"
    else:
        if a.seed is None:
            raise UsageError("histogram needs --seed when no --input is given")
        pd = _run_phase_diagram(run, a.pairs, a.seed, a.workers)
        source = f"seed: {a.seed}"
    for label in (ME, MULTIME):
        h = crossing_histogram(pd, label, a.bins)
        extra = [source, f"class: {label}", f"n_records: {h.n_records}", f"all_before_tau1: {h.all_before_tau1}"]
        run.write_csv(f"histogram_{label}.csv", h, extra=extra)
        print(f"{label}: {h.n_records} pairs, all crossings before tau_1: {h.all_before_tau1}")


def cmd_correlate(run: Run):
    a = run.args
    res = speed_overlap_correlation(run.spec, a.states, a.seed, run.norm)
    extra = [f"seed: {a.seed}", f"n_states: {a.states}"]
    run.write_csv("correlate.csv", res, extra=extra)
    run.write_csv("correlate_samples.csv", res, extra=extra, method="samples_csv")
    for row in res.rows:
        print(f"{row['label']}: r = {row['r']}")


def _target(text, normalize=False):
    v = parse_target(text)
    n = np.linalg.norm(v)
    if n == 0:
        raise UsageError("target is the zero vector")
    return v / n if normalize else v


def cmd_decompose(run: Run):
    plan = decompose_target(_target(run.args.target, run.args.normalize))
    err = float(np.linalg.norm(plan.prepared_state() - np.asarray(plan.target)))
    run.write_json("gateplan.json", {"plan": plan.to_dict(), "state_error": err})
    print(f"gamma={plan.gamma:.6f} phi={plan.phi:.6f} gamma'={plan.gamma_p:.6f} phi'={plan.phi_p:.6f} phi_L1={plan.phi_l1:.6f} phi_L2={plan.phi_l2:.6f}")


def cmd_tomo_sim(run: Run):
    a = run.args
    if a.shots < 0:
        raise UsageError("--shots must be nonnegative")
    if a.shots > 0 and a.seed is None:
        raise UsageError("--seed is required with --shots > 0")
    if a.target:
        psi, tag = _target(a.target, normalize=True), f"target: {a.target}"
    elif a.s:
        psi, tag = parse_state(a.s, run.ctx)
    else:
        psi, tag = rotated_state(run.ctx(), run.ctx().s_star), "s_star"
    rho = as_density_matrix(psi)
    if a.time:
        rho = exp_evolve(ion_liouvillian(run.params), rho, a.time * run.spec.timescales[0])
    data = simulate_tomography(rho, tomography_setup(), shots=a.shots or None, seed=a.seed)
    run.write_csv("tomo_counts.csv", data, extra=[f"state: {tag}", f"shots: {a.shots or 'exact'}", f"seed: {a.seed}"])
    res = mle_reconstruct(data, bootstrap=a.bootstrap, seed=a.seed)
    payload = {
        "state": tag,
        "true_rho": _cmat(rho),
        "rho": _cmat(res.rho),
        "fidelity": fidelity(rho, res.rho),
        "iterations": res.iterations,
        "converged": res.converged,
        "errorbars": None if res.errorbars is None else _cmat(res.errorbars),
    }
    run.write_json("tomo_reconstruction.json", payload)
    print(f"fidelity = {payload['fidelity']:.6f} after {res.iterations} iterations")


COMMANDS = {
    "spectrum": cmd_spectrum,
    "trajectory": cmd_trajectory,
    "sweep-s": cmd_sweep_s,
    "classify": cmd_classify,
    "phase-diagram": cmd_phase_diagram,
    "histogram": cmd_histogram,
    "correlate": cmd_correlate,
    "decompose": cmd_decompose,
    "tomo-sim": cmd_tomo_sim,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.n_points < 2 or args.t_max <= 0:
            raise UsageError("--n-points must be >= 2 and --t-max positive")
        run = Run(args, argv)
        COMMANDS[args.command](run)
    except NumericalError as exc:
        print(f"mpemba: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (UsageError, MpembaError, ValueError, OSError) as exc:
        print(f"mpemba: error: {exc}", file=sys.stderr)
        return 1
    for path in run.written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
