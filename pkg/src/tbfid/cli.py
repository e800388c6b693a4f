"""Command line interface: ``tbfid <subcommand> ...``.

Exit codes: 0 success, 1 validation/usage error, 2 numerical-accuracy error
(or a failed ``verify`` suite), 3 undefined postselection.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import math
import sys
import time
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from . import branching, excitation, kernel, oracle, sweep as sweep_mod
from .excitation import PulseSpec
from .model import (
    BranchingParams,
    CollectionParams,
    DetectionProbs,
    EmitterParams,
    NumericalAccuracyError,
    ParameterSet,
    PostselectionError,
    Target,
    TargetState,
    TbfidError,
    ValidationError,
    derive_detection_probs,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_POSTSELECTION = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit with 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _dump(obj, out: Optional[str] = None) -> None:
    text = json.dumps(obj, indent=2, default=_json_default)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


# --- parameter handling -------------------------------------------------------

_FLAG_FIELDS = {
    "gamma": "gamma_ns", "gamma_d": "gamma_d_ns", "delta_ghz": "delta_ghz", "t_bin": "t_bin_ns",
    "beta_par": "beta_par", "beta_perp": "beta_perp", "beta_par_prime": "beta_par_prime",
    "beta_perp_prime": "beta_perp_prime", "eta": "eta", "xi2": "xi2", "xi3": "xi3",
}


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("parameters (override --params/--preset)")
    g.add_argument("--params", help="JSON parameter file")
    g.add_argument("--preset", help=f"scenario preset: {', '.join(sorted(sweep_mod.PRESETS))}")
    g.add_argument("--gamma", type=float, help="decay rate γ, 1/ns")
    g.add_argument("--gamma-d", type=float, help="pure dephasing rate γ_d, 1/ns")
    g.add_argument("--delta-ghz", type=float, help="detuning Δ/2π, GHz")
    g.add_argument("--t-bin", type=float, help="round period T, ns")
    for name in ("beta_par", "beta_perp", "beta_par_prime", "beta_perp_prime"):
        g.add_argument("--" + name.replace("_", "-"), type=float)
    g.add_argument("--eta", type=float, help="setup efficiency η")
    g.add_argument("--xi2", type=float, help="filter transmission, resonant photons")
    g.add_argument("--xi3", type=float, help="filter transmission, off-resonant photons")
    g.add_argument("--save-params", metavar="PATH", help="write the resolved parameters as JSON")


def _load_params(args) -> ParameterSet:
    if args.params and args.preset:
        raise ValidationError("use either --params or --preset, not both")
    if args.params:
        path = Path(args.params)
        if not path.is_file():
            raise ValidationError(f"parameter file {path} does not exist")
        base = ParameterSet.from_json(path.read_text(encoding="utf-8")).to_dict()
    elif args.preset:
        base = sweep_mod.preset(args.preset).params.to_dict()
    else:
        base = ParameterSet().to_dict()
    for flag, fieldname in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            base[fieldname] = v
    if getattr(args, "filtered", False) and getattr(args, "xi3", None) is None:
        base["xi3"] = 0.0
    ps = ParameterSet.from_dict(base)
    if getattr(args, "save_params", None):
        Path(args.save_params).write_text(ps.to_json() + "\n", encoding="utf-8")
    return ps


def _pulse(args, params: EmitterParams) -> PulseSpec:
    shape = getattr(args, "pulse", None)
    if shape is None:
        if args.preset and sweep_mod.preset(args.preset).pulse_t_fwhm is not None and args.t_fwhm is None:
            return sweep_mod.preset(args.preset).pulse()
        shape = "gaussian" if args.t_fwhm is not None else "square"
    if shape == "gaussian":
        if args.t_fwhm is None:
            raise ValidationError("gaussian pulse needs --t-fwhm")
        return PulseSpec.gaussian(args.t_fwhm, truncation_factor=args.truncation)
    if args.duration is not None:
        return PulseSpec.square(args.duration)
    return PulseSpec.optimal_square(params.delta)


def _add_pulse_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pulse", choices=("gaussian", "square"))
    p.add_argument("--t-fwhm", type=float, help="gaussian FWHM, ns")
    p.add_argument("--duration", type=float, help="square pulse length, ns (default √3π/Δ)")
    p.add_argument("--truncation", type=float, default=3.2, help="gaussian window / FWHM")
    p.add_argument("--grid", type=int, default=excitation.DEFAULT_GRID, help="RK4 steps per pulse window")


# --- subcommands ----------------------------------------------------------------

def cmd_fidelity(args) -> int:
    ps = _load_params(args)
    tgt = TargetState(args.target, args.n)
    ch = args.channel
    if ch == "phonon":
        rep = kernel.phonon_fidelity(ps.emitter(), tgt)
        _dump(rep.to_dict())
    elif ch == "overhauser":
        val = kernel.kernel_fidelity(kernel.kernel_overhauser(args.delta21), tgt)
        _dump({"target": tgt.kind.value, "n": tgt.n_photons, "exact": val, "first_order": 1.0,
               "components": {"delta21": args.delta21}})
    elif ch == "excitation":
        em = ps.emitter()
        rep = excitation.excitation_report(_pulse(args, em), em, ps.collection(), tgt, args.grid)
        _dump(rep.to_dict())
    elif ch == "branching":
        rep = branching.branching_fidelity(ps.detection_probs(), tgt, ps.branching(), ps.collection().is_filtered)
        _dump(rep.to_dict())
    else:  # combined
        em = ps.emitter()
        rep = sweep_mod.combined_fidelity(args.n, em, ps.branching(), ps.collection(), _pulse(args, em), tgt,
                                          args.grid)
        d = rep.to_dict()
        ratio = sweep_mod.preset(args.preset).ratio() if args.preset else None
        if ratio is not None:
            fo = sweep_mod.combined_first_order(args.n, em, ratio)
            d["first_order"] = fo.value
            d["components"]["first_order_per_photon"] = fo._asdict()
        _dump(d)
    return EXIT_OK


def cmd_excitation(args) -> int:
    ps = _load_params(args)
    em, c = ps.emitter(), ps.collection()
    amps = excitation.excitation_amplitudes(_pulse(args, em), em, args.grid)
    d = excitation.detection_factors(amps, c)
    cs = [amps.c0, amps.c1, amps.c2, amps.c3]
    try:
        first = excitation.excitation_fidelity_first_order(args.n, em, c)
    except ValidationError:
        first = None
    _dump({
        "c": [[z.real, z.imag] for z in cs],
        "c_abs2": [abs(z) ** 2 for z in cs],
        "phi": list(amps.phis),
        "d": [d.d1, d.d2, d.d3],
        "error_estimate": amps.error_estimate,
        "fidelity": {
            "ghz": excitation.excitation_fidelity(d, TargetState(Target.GHZ, args.n)),
            "cluster": excitation.excitation_fidelity(d, TargetState(Target.CLUSTER, args.n)),
            "first_order": first,
        },
    })
    return EXIT_OK


def cmd_branching(args) -> int:
    ps = _load_params(args)
    tgt = TargetState(args.target, args.n)
    b, c = ps.branching(), ps.collection()
    rep = branching.branching_fidelity(derive_detection_probs(b, c), tgt, b, args.filtered or c.is_filtered)
    _dump(rep.to_dict())
    return EXIT_OK


def cmd_oracle(args) -> int:
    tgt = TargetState(args.target, args.n)
    ps = _load_params(args)
    if args.model == "ideal":
        op = oracle.ideal_round(tgt)
    elif args.model == "branching":
        op = oracle.branching_round(ps.detection_probs(), tgt)
    elif args.model == "phonon":
        op = oracle._phonon_round(ps.emitter().indistinguishability, tgt)
    else:
        op = oracle._overhauser_round(ps.emitter(), (0.0, 0.0, args.delta21), tgt, 3)
    state = oracle.run_protocol(op, args.n)
    fid, succ = oracle.conditional_fidelity(state, tgt)
    _dump({"fidelity": fid, "success": succ, "n_terms": len(state)})
    return EXIT_OK


def cmd_stabilizers(args) -> int:
    state = oracle.run_protocol(oracle.ideal_round(TargetState(Target.CLUSTER, max(args.n, 1))), args.n)
    _dump([round(v, 12) + 0.0 for v in oracle.stabilizer_check(state, args.n)])
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ValidationError(f"sweep config {path} does not exist")
        try:
            cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid sweep config: {exc}") from None
        res = sweep_mod.sweep(sweep_mod.SweepGrid.from_dict(cfg), cfg.get("objective", args.objective))
        text = res.to_csv()
        summary = {"argmax": list(res.argmax), "best": res.best}
    elif args.preset:
        cs = sweep_mod.curves(args.n_max, sweep_mod.preset(args.preset), grid=args.grid)
        text = cs.to_csv()
        summary = {t: {"crossing_0.5": cs.crossing(t), "crossing_0.5_first_order": cs.crossing(t, column="first_order")}
                   for t in ("ghz", "cluster")}
    elif args.fig5:
        res = sweep_mod.sweep(sweep_mod.fig5_grid(grid=args.grid), args.objective)
        text = res.to_csv()
        summary = {"argmax": list(res.argmax), "best": res.best}
    else:
        raise ValidationError("sweep needs --config, --preset or --fig5")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="")
        _dump(summary)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- verification suites -----------------------------------------------------------

def _random_probs(rng) -> tuple:
    beta = BranchingParams(*rng.dirichlet([1.0, 1.0, 1.0, 1.0]))
    coll = CollectionParams(*rng.uniform(0.0, 1.0, 3))
    return beta, coll, derive_detection_probs(beta, coll)


def _suite_overhauser(rng):
    worst, where = 0.0, None
    for _ in range(10):
        shifts = tuple(rng.uniform(-20, 20, 3))
        em = EmitterParams(rng.uniform(0.5, 5), 0.0, 10.0, 20.0)
        for n in range(1, 7):
            for kind in Target:
                tgt = TargetState(kind, n)
                for val in (kernel.kernel_fidelity(kernel.kernel_overhauser(shifts[2] - shifts[1]), tgt),
                            oracle.kernel_oracle("overhauser", em, n, tgt, shifts)):
                    if abs(val - 1) > worst:
                        worst, where = abs(val - 1), {"shifts": shifts, "n": n, "target": kind.value}
    return worst, 1e-12, where


def _suite_phonon(rng):
    worst, where = 0.0, None
    for _ in range(8):
        gamma = rng.uniform(0.5, 5)
        em = EmitterParams(gamma, gamma * rng.uniform(0, 0.2), 10.0, 20.0)
        for n in range(1, 7):
            for kind in Target:
                tgt = TargetState(kind, n)
                a = kernel.phonon_fidelity(em, tgt).exact
                b = oracle.kernel_oracle("phonon", em, n, tgt)
                if abs(a - b) > worst:
                    worst, where = abs(a - b), {"gamma": em.gamma, "gamma_d": em.gamma_d, "n": n}
    return worst, 1e-10, where


def _suite_branching(rng, tuples: int = 50):
    worst, where = 0.0, None
    for _ in range(tuples):
        beta, coll, p = _random_probs(rng)
        for n in range(1, 5):
            for kind in Target:
                tgt = TargetState(kind, n)
                rep = branching.branching_fidelity(p, tgt)
                fid, succ = oracle.conditional_fidelity(oracle.run_protocol(oracle.branching_round(p, tgt), n), tgt)
                err = max(abs(rep.exact - fid), abs(rep.components["success"] - succ))
                if err > worst:
                    worst, where = err, {"p": p.as_tuple(), "n": n, "target": kind.value,
                                         "formula": "branching_fidelity/transfer_matrix"}
    return worst, 1e-10, where


def _suite_stabilizers(rng):
    worst, where = 0.0, None
    for n in range(1, 9):
        state = oracle.run_protocol(oracle.ideal_round(TargetState(Target.CLUSTER, n)), n)
        vals = oracle.stabilizer_check(state, n)
        err = max(abs(v - 1) for v in vals)
        if err > worst:
            worst, where = err, {"n": n}
    return worst, 1e-12, where


def _suite_decomposition(rng):
    worst, where = 0.0, None
    for _ in range(20):
        _, _, p = _random_probs(rng)
        res = oracle.decomposition_check(p)
        err = max(res.residual, abs(res.two_qubit_error_probability - p.p_perp_prime * p.p_par))
        if err > worst:
            worst, where = err, {"p": p.as_tuple()}
    return worst, 1e-12, where


SUITES = {
    "overhauser": _suite_overhauser,
    "phonon": _suite_phonon,
    "branching": _suite_branching,
    "stabilizers": _suite_stabilizers,
    "decomposition": _suite_decomposition,
}


@contextlib.contextmanager
def _mutation(name: Optional[str]):
    """Deliberately corrupt one analytic formula (self-test of the suites)."""
    if name is None:
        yield
        return
    if name != "branching":
        raise ValidationError(f"unknown mutation target {name!r}")
    original = branching.transfer_matrix

    def corrupted(p, target):
        m = original(p, target).m.copy()
        m[0, 1] *= 0.5
        return branching.TransferMatrix(m)

    branching.transfer_matrix = corrupted
    try:
        yield
    finally:
        branching.transfer_matrix = original


def verify(seed: int = 0, mutate: Optional[str] = None, stream=None) -> bool:
    """Run all oracle-vs-analytic suites; print one line per suite."""
    stream = stream or sys.stdout
    ok = True
    with _mutation(mutate):
        for name, suite in SUITES.items():
            rng = np.random.default_rng([seed, len(name)])
            t0 = time.perf_counter()
            worst, tol, where = suite(rng)
            passed = worst <= tol
            ok &= passed
            line = f"{'PASS' if passed else 'FAIL'} {name:14s} max residual {worst:.3e} (tol {tol:.0e}) " \
                   f"[{time.perf_counter() - t0:.2f} s]"
            if not passed:
                line += " failing tuple: " + json.dumps(where, default=_json_default)
            print(line, file=stream)
    return ok


def cmd_verify(args) -> int:
    return EXIT_OK if verify(args.seed, args.mutate) else EXIT_NUMERICAL


# --- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tbfid", description="Fidelity of time-bin GHZ and cluster states from a quantum emitter.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("fidelity", help="fidelity of one error channel or of all combined")
    p.add_argument("--channel", choices=("phonon", "overhauser", "excitation", "branching", "combined"),
                   default="phonon")
    p.add_argument("--target", choices=("ghz", "cluster"), default="ghz")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--delta21", type=float, default=0.0, help="Overhauser shift Δ21, rad/ns")
    p.add_argument("--filtered", action="store_true", help="block off-resonant photons (ξ3 = 0 unless given)")
    _add_param_flags(p)
    _add_pulse_flags(p)
    p.set_defaults(func=cmd_fidelity)

    p = sub.add_parser("excitation", help="excitation amplitudes, detection factors and fidelities")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--filtered", action="store_true")
    _add_param_flags(p)
    _add_pulse_flags(p)
    p.set_defaults(func=cmd_excitation)

    p = sub.add_parser("branching", help="branching-error fidelity report")
    p.add_argument("--target", choices=("ghz", "cluster"), default="ghz")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--filtered", action="store_true")
    _add_param_flags(p)
    p.set_defaults(func=cmd_branching)

    p = sub.add_parser("oracle", help="brute-force protocol enumeration")
    p.add_argument("--target", choices=("ghz", "cluster"), default="ghz")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--model", choices=("ideal", "branching", "phonon", "overhauser"), default="branching")
    p.add_argument("--delta21", type=float, default=0.0)
    p.add_argument("--filtered", action="store_true")
    _add_param_flags(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("stabilizers", help="cluster stabilizer expectations of the ideal protocol state")
    p.add_argument("--n", type=int, default=4)
    p.set_defaults(func=cmd_stabilizers)

    p = sub.add_parser("sweep", help="two-axis sweep (CSV) or per-N curves of a preset")
    p.add_argument("--config", help="sweep JSON config")
    p.add_argument("--preset", help="emit per-N curves for this scenario preset")
    p.add_argument("--fig5", action="store_true", help="run the built-in γT_FWHM × Δ/γ grid")
    p.add_argument("--objective", choices=("combined", "excitation_only"), default="combined")
    p.add_argument("--n-max", type=int, default=20)
    p.add_argument("--grid", type=int, default=sweep_mod.SWEEP_GRID)
    p.add_argument("--out", help="CSV output path (summary JSON goes to stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the oracle-vs-analytic suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mutate", choices=("branching",), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as exc:
        print(f"tbfid: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalAccuracyError, oracle.StateOverflowError) as exc:
        print(f"tbfid: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PostselectionError as exc:
        print(f"tbfid: undefined postselection: {exc}", file=sys.stderr)
        return EXIT_POSTSELECTION
    except TbfidError as exc:
        print(f"tbfid: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
