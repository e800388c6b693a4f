"""Combined fidelities, parameter sweeps, N-curves and scenario presets.

The combined fidelity is the product of the three channel fidelities
(dephasing × excitation × branching).  This is an approximation that treats
the channels as independent; no joint model is attempted.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import branching, excitation, kernel
from .excitation import PulseSpec
from .model import (
    BranchingParams,
    CollectionParams,
    EmitterParams,
    FidelityReport,
    ParameterSet,
    Target,
    TargetState,
    TbfidError,
    ValidationError,
    branching_ratio,
    derive_detection_probs,
)

SQRT3PI_8 = math.sqrt(3.0) * math.pi / 8.0
SWEEP_GRID = 2000
AXIS_NAMES = ("gamma_t_fwhm", "t_fwhm", "delta_over_gamma", "gamma", "gamma_d")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TBFID_THREADS", "1")))
    except ValueError:
        return 1


def fmt(x) -> str:
    """Locale-independent number formatting with 12 significant digits."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return format(x, ".12g")


# --- combined fidelity ------------------------------------------------------

def combined_fidelity(
    n: int,
    params: EmitterParams,
    b: BranchingParams,
    c: CollectionParams,
    pulse: PulseSpec,
    target: TargetState,
    grid: int = excitation.DEFAULT_GRID,
    check: bool = True,
) -> FidelityReport:
    """Product of the exact dephasing, excitation and branching fidelities."""
    tgt = TargetState(target.kind, n)
    f_ph = kernel.phonon_fidelity(params, tgt)
    d = excitation.detection_factors(excitation.excitation_amplitudes(pulse, params, grid, check), c)
    f_exc = excitation.excitation_fidelity(d, tgt)
    f_br = branching.branching_fidelity(derive_detection_probs(b, c), tgt)
    first = combined_first_order(n, params, branching_ratio(b))
    comps = {
        "phonon": f_ph.exact,
        "excitation": f_exc,
        "branching": f_br.exact,
        "branching_success": f_br.components["success"],
        "excitation_success_per_round": d.success,
        "indistinguishability": params.indistinguishability,
    }
    return FidelityReport(tgt.kind, n, f_ph.exact * f_exc * f_br.exact, first.value, comps)


class FirstOrderBreakdown(NamedTuple):
    value: float
    dephasing: float
    branching: float
    excitation: float

    @property
    def per_photon_infidelity(self) -> float:
        return self.dephasing + self.branching + self.excitation


def combined_first_order(n: int, params: EmitterParams, branching_B: float) -> FirstOrderBreakdown:
    """1 + 1/(4(B+1)) − N(γ_d/(γ+2γ_d) + 1/(2(B+1)) + (√3π/8)γ/Δ).

    Returns the value together with the three per-photon infidelities.
    """
    if branching_B < 0:
        raise ValidationError("branching ratio must be >= 0")
    deph = params.gamma_d / (params.gamma + 2.0 * params.gamma_d)
    if math.isinf(branching_B):
        br, offset = 0.0, 0.0
    else:
        br, offset = 1.0 / (2.0 * (branching_B + 1.0)), 1.0 / (4.0 * (branching_B + 1.0))
    exc = SQRT3PI_8 * params.gamma / params.delta
    return FirstOrderBreakdown(1.0 + offset - n * (deph + br + exc), deph, br, exc)


def optimize_gaussian_width(
    params: EmitterParams,
    c: CollectionParams,
    target: TargetState,
    bounds_gamma_t: Sequence[float] = (0.02, 1.0),
    grid: int = 800,
) -> float:
    """T_FWHM (ns) maximising the excitation fidelity at fixed γ and Δ.

    Bounded scalar search over log(γT_FWHM).
    """
    def neg(logx):
        pulse = PulseSpec.gaussian(math.exp(logx) / params.gamma)
        amps = excitation.excitation_amplitudes(pulse, params, grid, check=False)
        return -excitation.excitation_fidelity(excitation.detection_factors(amps, c), target)

    lo, hi = (math.log(x) for x in bounds_gamma_t)
    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-4})
    return math.exp(res.x) / params.gamma


# --- two-axis sweeps --------------------------------------------------------

@dataclass(frozen=True)
class SweepAxis:
    name: str
    lo: float
    hi: float
    points: int
    scale: str = "log"

    def __post_init__(self):
        if self.name not in AXIS_NAMES:
            raise ValidationError(f"unknown sweep axis {self.name!r}; choose from {AXIS_NAMES}")
        if self.points < 2:
            raise ValidationError("each sweep axis needs at least 2 points")
        if self.scale not in ("log", "linear"):
            raise ValidationError("axis scale must be 'log' or 'linear'")
        if self.scale == "log" and (self.lo <= 0 or self.hi <= 0):
            raise ValidationError("log axis bounds must be positive")

    def values(self) -> np.ndarray:
        if self.scale == "log":
            return np.geomspace(self.lo, self.hi, self.points)
        return np.linspace(self.lo, self.hi, self.points)


@dataclass(frozen=True)
class SweepGrid:
    """Up to two axes plus the fixed parameter block.

    ``params`` provides every quantity not set by an axis; ``n`` and
    ``target`` fix the state being optimised.
    """

    axes: Sequence[SweepAxis]
    params: ParameterSet = field(default_factory=ParameterSet)
    n: int = 5
    target: Target = Target.GHZ
    t_fwhm: float = 0.06
    grid: int = SWEEP_GRID

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 2:
            raise ValidationError("a sweep has one or two axes")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ValidationError("sweep axes must be distinct")

    @classmethod
    def from_dict(cls, data: dict) -> "SweepGrid":
        try:
            axes = [SweepAxis(a["name"], float(a["min"]), float(a["max"]), int(a["points"]),
                              a.get("scale", "log")) for a in data["axes"]]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed sweep axes: {exc}") from None
        params = ParameterSet.from_dict(data.get("params", {}))
        return cls(axes, params, int(data.get("n", 5)), Target.parse(data.get("target", "ghz")),
                   float(data.get("t_fwhm_ns", 0.06)), int(data.get("grid", SWEEP_GRID)))


@dataclass
class SweepResult:
    axes: List[SweepAxis]
    values: List[np.ndarray]
    table: np.ndarray  # objective, NaN where a cell failed
    cells: List[dict]  # row-major cell records
    argmax: tuple
    best: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        cols = [a.name for a in self.axes] + ["gamma_ns", "t_fwhm_ns", "indistinguishability",
                                              "f_phonon", "f_excitation", "f_branching", "fidelity", "error"]
        w.writerow(cols)
        for cell in self.cells:
            w.writerow([fmt(cell.get(c)) if c != "error" else cell.get("error", "") for c in cols])
        return buf.getvalue()


def _resolve_cell(grid: SweepGrid, point: Dict[str, float]):
    p = grid.params
    em = p.emitter()
    delta = em.delta
    gamma = point.get("gamma", em.gamma)
    if "delta_over_gamma" in point:
        gamma = delta / point["delta_over_gamma"]
    gamma_d = point.get("gamma_d", em.gamma_d)
    t_fwhm = point.get("t_fwhm", grid.t_fwhm)
    if "gamma_t_fwhm" in point:
        t_fwhm = point["gamma_t_fwhm"] / gamma
    return EmitterParams(gamma, gamma_d, delta, max(em.t_bin, 10.0 / gamma)), t_fwhm


def _evaluate_cell(grid: SweepGrid, objective: str, point: Dict[str, float]) -> dict:
    rec = dict(point)
    try:
        em, t_fwhm = _resolve_cell(grid, point)
        rec.update(gamma_ns=em.gamma, t_fwhm_ns=t_fwhm, indistinguishability=em.indistinguishability)
        tgt = TargetState(grid.target, grid.n)
        c = grid.params.collection()
        amps = excitation.excitation_amplitudes(PulseSpec.gaussian(t_fwhm), em, grid.grid, check=False)
        f_exc = excitation.excitation_fidelity(excitation.detection_factors(amps, c), tgt)
        rec["f_excitation"] = f_exc
        if objective == "excitation_only":
            rec["fidelity"] = f_exc
        else:
            f_ph = kernel.phonon_fidelity(em, tgt).exact
            f_br = branching.branching_fidelity(grid.params.detection_probs(), tgt).exact
            rec.update(f_phonon=f_ph, f_branching=f_br, fidelity=f_ph * f_exc * f_br)
    except TbfidError as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["fidelity"] = math.nan
    return rec


def sweep(grid: SweepGrid, objective: str = "combined", threads: Optional[int] = None) -> SweepResult:
    """Evaluate the objective on every grid cell and locate the maximum.

    Cells are independent; with ``threads > 1`` (default from the
    ``TBFID_THREADS`` environment variable) they are evaluated concurrently
    and merged by index, so the result does not depend on scheduling.  Failed
    cells are recorded with an ``error`` entry and NaN fidelity.  Ties are
    broken towards the lowest row-major index.
    """
    if objective not in ("excitation_only", "combined"):
        raise ValidationError(f"unknown objective {objective!r}")
    values = [a.values() for a in grid.axes]
    shape = tuple(len(v) for v in values)
    points = []
    for idx in np.ndindex(*shape):
        points.append({a.name: float(values[k][i]) for k, (a, i) in enumerate(zip(grid.axes, idx))})
    threads = _threads() if threads is None else max(1, int(threads))
    if threads == 1:
        cells = [_evaluate_cell(grid, objective, pt) for pt in points]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(lambda pt: _evaluate_cell(grid, objective, pt), points))
    table = np.array([c["fidelity"] for c in cells], dtype=float).reshape(shape)
    if np.all(np.isnan(table)):
        raise TbfidError("every sweep cell failed")
    flat = int(np.nanargmax(table))  # first occurrence on ties
    argmax = np.unravel_index(flat, shape)
    return SweepResult(list(grid.axes), values, table, cells, tuple(int(i) for i in argmax), cells[flat])


# --- N curves ---------------------------------------------------------------

class CurveRow(NamedTuple):
    n: int
    target: str
    f_phonon: float
    f_excitation: float
    f_branching: float
    fidelity: float
    first_order: float


@dataclass
class CurveSet:
    rows: List[CurveRow]

    def for_target(self, target) -> List[CurveRow]:
        t = Target.parse(target).value
        return [r for r in self.rows if r.target == t]

    def crossing(self, target, level: float = 0.5, column: str = "fidelity") -> Optional[int]:
        """Largest N whose value is still ≥ level before the curve first drops below it,
        or None if it never drops below within the computed range."""
        prev = None
        for r in self.for_target(target):
            if getattr(r, column) < level:
                return prev
            prev = r.n
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(CurveRow._fields)
        for r in self.rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])
        return buf.getvalue()


@dataclass(frozen=True)
class Scenario:
    """Parameter block plus pulse; ``branching_B`` overrides B in first-order formulas."""

    name: str
    params: ParameterSet
    pulse_t_fwhm: Optional[float] = None  # ns; None → optimal square pulse
    branching_B: Optional[float] = None
    description: str = ""

    @classmethod
    def from_dict(cls, name: str, data: dict) -> "Scenario":
        unknown = set(data) - {"params", "pulse_t_fwhm_ns", "branching_B", "description"}
        if unknown:
            raise ValidationError(f"unknown scenario field(s): {sorted(unknown)}")
        return cls(name, ParameterSet.from_dict(data.get("params", {})), data.get("pulse_t_fwhm_ns"),
                   data.get("branching_B"), data.get("description", ""))

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "pulse_t_fwhm_ns": self.pulse_t_fwhm,
                "branching_B": self.branching_B, "description": self.description}

    def pulse(self) -> PulseSpec:
        if self.pulse_t_fwhm is None:
            return PulseSpec.optimal_square(self.params.emitter().delta)
        return PulseSpec.gaussian(self.pulse_t_fwhm)

    def ratio(self) -> float:
        if self.branching_B is not None:
            return self.branching_B
        return branching_ratio(self.params.branching())


def curves(n_max: int, scenario: Scenario, targets: Sequence = (Target.GHZ, Target.CLUSTER),
           grid: int = excitation.DEFAULT_GRID, check: bool = True) -> CurveSet:
    """Per-N channel breakdown for the given scenario (one ODE solve in total)."""
    if not 1 <= n_max <= 10 ** 4:
        raise ValidationError("n_max must be in [1, 10000]")
    p = scenario.params
    em, c = p.emitter(), p.collection()
    probs = p.detection_probs()
    d = excitation.detection_factors(excitation.excitation_amplitudes(scenario.pulse(), em, grid, check), c)
    ratio = scenario.ratio()
    rows = []
    for t in targets:
        t = Target.parse(t)
        for n in range(1, n_max + 1):
            tgt = TargetState(t, n)
            f_ph = kernel.phonon_fidelity(em, tgt).exact
            f_exc = excitation.excitation_fidelity(d, tgt)
            f_br = branching.branching_fidelity(probs, tgt).exact
            fo = combined_first_order(n, em, ratio).value
            rows.append(CurveRow(n, t.value, f_ph, f_exc, f_br, f_ph * f_exc * f_br, fo))
    return CurveSet(rows)


# --- presets ----------------------------------------------------------------

def _load_presets() -> Dict[str, Scenario]:
    out = {}
    for entry in sorted(resources.files(__package__).joinpath("presets").iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            sc = Scenario.from_dict(entry.name[:-5], json.loads(entry.read_text(encoding="utf-8")))
            out[sc.name] = sc
    return out


PRESETS: Dict[str, Scenario] = _load_presets()


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def fig5_grid(points: int = 20, grid: int = SWEEP_GRID) -> SweepGrid:
    """γT_FWHM ∈ [0.05, 1] × Δ/γ ∈ [5, 60], both logarithmic, at Δ = 2π·16 GHz."""
    return SweepGrid(
        [SweepAxis("delta_over_gamma", 5.0, 60.0, points), SweepAxis("gamma_t_fwhm", 0.05, 1.0, points)],
        PRESETS["fig5"].params,
        n=5,
        target=Target.GHZ,
        grid=grid,
    )
