"""Physical parameter blocks, unit conventions and derived detection probabilities.

Units
-----
Rates are stored in 1/ns, detunings as angular frequencies in rad/ns and times
in ns.  The JSON parameter format (see :class:`ParameterSet`) takes detunings
in GHz and converts with ``delta = 2*pi*delta_ghz``.
"""
from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping, Optional, Sequence, Union

PROB_TOL = 1e-12
RENORM_TOL = 1e-9


class TbfidError(Exception):
    """Base class of all library errors."""


class ValidationError(TbfidError, ValueError):
    """An input violates a documented invariant."""


class NumericalAccuracyError(TbfidError, ArithmeticError):
    """A numerical routine failed to reach the requested accuracy.

    Attributes
    ----------
    estimate : float
        The error estimate that exceeded the tolerance.
    """

    def __init__(self, message: str, estimate: float = math.nan):
        super().__init__(message)
        self.estimate = estimate


class PostselectionError(TbfidError, ZeroDivisionError):
    """The postselection probability vanishes, so a conditional value is undefined."""


def _check_unit_interval(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")


class Target(str, enum.Enum):
    """Kind of multi-photon target state."""

    GHZ = "ghz"
    CLUSTER = "cluster"

    @classmethod
    def parse(cls, value: Union[str, "Target"]) -> "Target":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(f"unknown target {value!r}; expected 'ghz' or 'cluster'") from None


@dataclass(frozen=True)
class TargetState:
    """Target state kind together with the photon number N."""

    kind: Target
    n_photons: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Target.parse(self.kind))
        if isinstance(self.n_photons, bool) or int(self.n_photons) != self.n_photons:
            raise ValidationError(f"n_photons must be an integer, got {self.n_photons!r}")
        object.__setattr__(self, "n_photons", int(self.n_photons))
        if self.n_photons < 1:
            raise ValidationError(f"n_photons must be >= 1, got {self.n_photons}")

    @property
    def is_ghz(self) -> bool:
        return self.kind is Target.GHZ


@dataclass(frozen=True)
class EmitterParams:
    """Rates of the emitter.

    Parameters
    ----------
    gamma : float
        Radiative decay rate of the optically excited state, 1/ns.
    gamma_d : float
        Pure-dephasing rate, 1/ns.
    delta : float
        Angular detuning of the unwanted (off-resonant) transition, rad/ns.
    t_bin : float
        Full period T of one protocol round, ns.  Only used for the
        ``gamma * t_bin >= 10`` sanity warning: all fidelities assume the
        emission has fully decayed before the next pulse.
    """

    gamma: float
    gamma_d: float
    delta: float
    t_bin: float = 10.0

    def __post_init__(self):
        for name in ("gamma", "gamma_d", "delta", "t_bin"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or math.isnan(v) or math.isinf(v):
                raise ValidationError(f"{name} must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.gamma <= 0:
            raise ValidationError(f"gamma must be > 0, got {self.gamma}")
        if self.gamma_d < 0:
            raise ValidationError(f"gamma_d must be >= 0, got {self.gamma_d}")
        if self.delta <= 0:
            raise ValidationError(f"delta must be > 0, got {self.delta}")
        if self.t_bin <= 0:
            raise ValidationError(f"t_bin must be > 0, got {self.t_bin}")
        if self.gamma * self.t_bin < 10:
            warnings.warn(
                f"gamma*t_bin = {self.gamma * self.t_bin:.3g} < 10: emission does not fully "
                "decay within a time bin; the fidelity formulas assume it does",
                stacklevel=3,
            )

    @property
    def delta_tilde(self) -> float:
        """Detuning in units of the decay rate, Δ/γ."""
        return self.delta / self.gamma

    @property
    def indistinguishability(self) -> float:
        """I = γ / (γ + 2γ_d)."""
        return self.gamma / (self.gamma + 2.0 * self.gamma_d)


@dataclass(frozen=True)
class BranchingParams:
    """Decay probabilities of the optically excited state.

    ``beta_par``/``beta_perp`` are emissions into the collected mode on the
    vertical (wanted) and diagonal (spin-flipping) transitions;
    the primed fields are the corresponding emissions into uncollected modes.
    The four must sum to one.  Sums off by at most 1e-9 are renormalised with a
    warning; larger deviations are rejected.
    """

    beta_par: float
    beta_perp: float
    beta_par_prime: float
    beta_perp_prime: float

    def __post_init__(self):
        names = ("beta_par", "beta_perp", "beta_par_prime", "beta_perp_prime")
        vals = []
        for name in names:
            v = float(getattr(self, name))
            _check_unit_interval(name, v)
            vals.append(v)
        total = math.fsum(vals)
        if abs(total - 1.0) > PROB_TOL:
            if abs(total - 1.0) > RENORM_TOL:
                raise ValidationError(
                    f"branching probabilities must sum to 1, got {total!r} "
                    f"(beta_par={vals[0]}, beta_perp={vals[1]}, "
                    f"beta_par_prime={vals[2]}, beta_perp_prime={vals[3]})"
                )
            warnings.warn(f"renormalising branching probabilities (sum {total!r})", stacklevel=3)
            vals = [v / total for v in vals]
        for name, v in zip(names, vals):
            object.__setattr__(self, name, v)

    def as_tuple(self) -> tuple:
        return (self.beta_par, self.beta_perp, self.beta_par_prime, self.beta_perp_prime)


@dataclass(frozen=True)
class CollectionParams:
    """Setup efficiency and frequency-filter transmissions.

    ``eta2 = eta*xi2`` is the detection efficiency of resonant photons and
    ``eta3 = eta*xi3`` that of photons at the off-resonant frequency.
    """

    eta: float = 1.0
    xi2: float = 1.0
    xi3: float = 1.0

    def __post_init__(self):
        for name in ("eta", "xi2", "xi3"):
            v = float(getattr(self, name))
            _check_unit_interval(name, v)
            object.__setattr__(self, name, v)

    @property
    def eta2(self) -> float:
        return self.eta * self.xi2

    @property
    def eta3(self) -> float:
        return self.eta * self.xi3

    @property
    def is_filtered(self) -> bool:
        """True when off-resonant light is suppressed relative to resonant light."""
        return self.xi3 < self.xi2


@dataclass(frozen=True)
class DetectionProbs:
    """Per-decay probabilities to detect (unprimed) or lose (primed) the photon."""

    p_par: float
    p_perp: float
    p_par_prime: float
    p_perp_prime: float

    def __post_init__(self):
        for name in ("p_par", "p_perp", "p_par_prime", "p_perp_prime"):
            v = float(getattr(self, name))
            _check_unit_interval(name, v)
            object.__setattr__(self, name, v)
        total = math.fsum(self.as_tuple())
        if abs(total - 1.0) > PROB_TOL:
            raise ValidationError(f"detection probabilities must sum to 1, got {total!r}")

    def as_tuple(self) -> tuple:
        return (self.p_par, self.p_perp, self.p_par_prime, self.p_perp_prime)

    @classmethod
    def ideal(cls) -> "DetectionProbs":
        return cls(1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class FidelityReport:
    """Result record shared by the fidelity routines.

    Attributes
    ----------
    exact : float
        Exact (conditional) fidelity of the channel.
    first_order : float or None
        First-order perturbative estimate, when one exists.
    components : dict
        Additional named values (success probability, unconditional fidelity,
        per-channel factors, ...).
    """

    target: Target
    n_photons: int
    exact: float
    first_order: Optional[float] = None
    components: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "target": self.target.value,
            "n": self.n_photons,
            "exact": self.exact,
            "first_order": self.first_order,
            "components": dict(self.components),
        }


def derive_detection_probs(b: BranchingParams, c: CollectionParams) -> DetectionProbs:
    """Detection and loss probabilities after collection and filtering.

    ``p_par = eta2*beta_par``, ``p_perp = eta3*beta_perp``; everything not
    detected ends up in the corresponding primed (lost) probability.

    Examples
    --------
    >>> p = derive_detection_probs(BranchingParams(0.945, 0.05, 0.0025, 0.0025),
    ...                            CollectionParams(1.0, 1.0, 0.02))
    >>> round(p.p_perp, 12), round(p.p_perp_prime, 12)
    (0.001, 0.0515)
    """
    p_par = c.eta2 * b.beta_par
    p_perp = c.eta3 * b.beta_perp
    p_par_prime = b.beta_par_prime + (1.0 - c.eta2) * b.beta_par
    p_perp_prime = b.beta_perp_prime + (1.0 - c.eta3) * b.beta_perp
    return DetectionProbs(p_par, p_perp, p_par_prime, p_perp_prime)


def branching_ratio(b: Union[BranchingParams, Sequence[float]]) -> float:
    """Branching ratio B = (β∥+β∥′)/(β⊥+β⊥′).

    Accepts a :class:`BranchingParams` or a raw 4-sequence
    ``(beta_par, beta_perp, beta_par_prime, beta_perp_prime)``; the raw form is
    only range-checked, so quoted parameter sets that do not sum to one can
    still be evaluated.  Returns ``math.inf`` when the diagonal probabilities
    vanish.
    """
    if isinstance(b, BranchingParams):
        vals = b.as_tuple()
    else:
        vals = tuple(float(v) for v in b)
        if len(vals) != 4:
            raise ValidationError("expected four branching probabilities")
        for name, v in zip(("beta_par", "beta_perp", "beta_par_prime", "beta_perp_prime"), vals):
            _check_unit_interval(name, v)
    num = vals[0] + vals[2]
    den = vals[1] + vals[3]
    if den == 0.0:
        return math.inf
    return num / den


@dataclass(frozen=True)
class ParameterSet:
    """Flat JSON parameter object as read and written by the command line tool.

    Values are kept exactly as given (detuning in GHz) so that writing and
    re-reading a file is lossless; use :meth:`emitter`, :meth:`branching` and
    :meth:`collection` to obtain the validated physical blocks.
    """

    gamma_ns: float = 3.2
    gamma_d_ns: float = 0.06
    delta_ghz: float = 16.0
    t_bin_ns: float = 10.0
    beta_par: float = 1.0
    beta_perp: float = 0.0
    beta_par_prime: float = 0.0
    beta_perp_prime: float = 0.0
    eta: float = 1.0
    xi2: float = 1.0
    xi3: float = 1.0

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ParameterSet":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown parameter field(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for k, v in data.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValidationError(f"parameter {k} must be a number, got {v!r}")
            kwargs[k] = float(v)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ParameterSet":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON parameter file: {exc}") from None
        if not isinstance(data, dict):
            raise ValidationError("parameter file must contain a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def emitter(self) -> EmitterParams:
        return EmitterParams(self.gamma_ns, self.gamma_d_ns, 2.0 * math.pi * self.delta_ghz, self.t_bin_ns)

    def branching(self) -> BranchingParams:
        return BranchingParams(self.beta_par, self.beta_perp, self.beta_par_prime, self.beta_perp_prime)

    def collection(self) -> CollectionParams:
        return CollectionParams(self.eta, self.xi2, self.xi3)

    def detection_probs(self) -> DetectionProbs:
        return derive_detection_probs(self.branching(), self.collection())
