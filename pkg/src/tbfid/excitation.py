"""Excitation errors: driven two-level dynamics with emission during the pulse.

A laser pulse Ω(t) drives the resonant transition (spin state 1 → excited
state 2) and, with the same field, the unwanted transition (spin state 0 →
excited state 3) detuned by Δ.  Each transition is a driven two-level system
whose wavefunction, truncated at one emitted photon, reads

    c_g(t)|g⟩ + c_e(t)|e⟩ + ∫dt_e [φ_g(t, t_e)|g⟩ + φ_e(t, t_e)|e⟩] a†(t_e)|∅⟩.

In dimensionless time τ = γt the amplitudes obey

    dc_e/dτ = i Ω̃/2 c_g − (1/2 + iΔ̃) c_e,      dc_g/dτ = i Ω̃/2 c_e,

and after an emission at τ_e the pair (φ_g, φ_e) follows the same equations
from φ_g = i exp(−iΔ̃τ_e) c_e(τ_e), φ_e = 0.

Integration
-----------
The system is linear, so a fixed-step classical RK4 step is a 2x2 matrix
S_k.  Forward products give c(τ_k); backward products P_k = S_{n-1}···S_k give
the propagator from τ_k to the end of the pulse, so that
φ(τ_p, τ_k) = P_k[:, 0] φ_g(τ_k, τ_k).  This evaluates the two-time problem in
O(n) operations and is algebraically identical to restarting an RK4
integration from every grid point.  The outer integral over τ_e uses
composite Simpson quadrature, which matches the fourth order of the
integrator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.integrate import simpson
from scipy.special import erf

from .model import (
    CollectionParams,
    EmitterParams,
    FidelityReport,
    NumericalAccuracyError,
    PostselectionError,
    TargetState,
    ValidationError,
)

DEFAULT_GRID = 4000
MIN_GRID = 200
CONVERGENCE_TOL = 1e-6
SQRT3PI = math.sqrt(3.0) * math.pi


@dataclass(frozen=True)
class PulseSpec:
    """Temporal shape of the excitation pulse.

    Parameters
    ----------
    shape : {'gaussian', 'square'}
    t_fwhm : float, optional
        Full width at half maximum of the intensity envelope, ns (gaussian).
    duration : float, optional
        Pulse length, ns (square).
    truncation_factor : float
        A gaussian pulse is applied on the window ``[0, truncation_factor*t_fwhm]``
        centred on its peak.
    area_target : float
        Pulse area on the resonant transition, ``∫Ω dt`` over the applied window.
    """

    shape: str
    t_fwhm: Optional[float] = None
    duration: Optional[float] = None
    truncation_factor: float = 3.2
    area_target: float = math.pi

    def __post_init__(self):
        shape = str(self.shape).lower()
        object.__setattr__(self, "shape", shape)
        if shape == "gaussian":
            if self.t_fwhm is None or not self.t_fwhm > 0:
                raise ValidationError("gaussian pulse needs t_fwhm > 0")
            if not self.truncation_factor > 0:
                raise ValidationError("truncation_factor must be > 0")
        elif shape == "square":
            if self.duration is None or not self.duration > 0:
                raise ValidationError("square pulse needs duration > 0")
        else:
            raise ValidationError(f"unknown pulse shape {self.shape!r}")
        if not math.isfinite(self.area_target) or self.area_target < 0:
            raise ValidationError("area_target must be finite and >= 0")

    @classmethod
    def gaussian(cls, t_fwhm: float, truncation_factor: float = 3.2, area_target: float = math.pi):
        return cls("gaussian", t_fwhm=t_fwhm, truncation_factor=truncation_factor, area_target=area_target)

    @classmethod
    def square(cls, duration: float, area_target: float = math.pi):
        return cls("square", duration=duration, area_target=area_target)

    @classmethod
    def optimal_square(cls, delta: float):
        """Square π-pulse of length √3π/Δ, which makes the off-resonant transition
        complete a full 2π Rabi cycle."""
        return cls.square(SQRT3PI / delta)

    def window(self, gamma: float = 1.0) -> float:
        """Dimensionless window length τ_p = γ T_p."""
        if self.shape == "square":
            return gamma * self.duration
        return gamma * self.truncation_factor * self.t_fwhm

    def rabi(self, gamma: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
        """Return Ω̃(τ) = Ω(τ/γ)/γ, calibrated to the target area on the window."""
        tau_p = self.window(gamma)
        if self.shape == "square":
            amp = self.area_target / tau_p
            return lambda tau: np.full_like(np.asarray(tau, dtype=float), amp)
        tau_f = gamma * self.t_fwhm
        a = 4.0 * math.log(2.0) / tau_f ** 2
        # area of the truncated gaussian on [0, tau_p], centred at tau_p/2
        unit_area = math.sqrt(math.pi / a) * erf(math.sqrt(a) * tau_p / 2.0)
        amp = self.area_target / unit_area
        centre = tau_p / 2.0
        return lambda tau: amp * np.exp(-a * (np.asarray(tau, dtype=float) - centre) ** 2)


class TwoLevelSolution(NamedTuple):
    """End-of-pulse amplitudes and integrated emission weights of one transition."""

    c_g: complex
    c_e: complex
    phi_g: float
    phi_e: float
    error_estimate: float = 0.0


def _step_matrices(om: np.ndarray, delta_tilde: float, h: float):
    """Classical RK4 one-step matrices for y' = A(τ) y, vectorised over steps.

    ``om`` has shape (n, 3): Ω̃ at τ_k, τ_k + h/2 and τ_k + h.
    """
    n = om.shape[0]
    eye = np.eye(2, dtype=complex)

    def amat(o):
        m = np.zeros((n, 2, 2), dtype=complex)
        m[:, 0, 1] = 0.5j * o
        m[:, 1, 0] = 0.5j * o
        m[:, 1, 1] = -(0.5 + 1j * delta_tilde)
        return m

    a1, a2, a3 = amat(om[:, 0]), amat(om[:, 1]), amat(om[:, 2])
    k1 = a1
    k2 = a2 @ (eye + 0.5 * h * k1)
    k3 = a2 @ (eye + 0.5 * h * k2)
    k4 = a3 @ (eye + h * k3)
    return eye + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _solve_fixed(rabi, tau_p: float, delta_tilde: float, n: int) -> TwoLevelSolution:
    if n % 2:
        n += 1  # Simpson wants an even number of intervals
    tau = np.linspace(0.0, tau_p, n + 1)
    h = tau_p / n
    om = np.stack([rabi(tau[:-1]), rabi(tau[:-1] + 0.5 * h), rabi(tau[1:])], axis=1)
    s = _step_matrices(om, delta_tilde, h)
    s00, s01, s10, s11 = (s[:, i, j].tolist() for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))

    ce = [0j] * (n + 1)
    g, e = 1 + 0j, 0j
    for k in range(n):
        g, e = s00[k] * g + s01[k] * e, s10[k] * g + s11[k] * e
        ce[k + 1] = e

    # first column of the propagator from τ_k to τ_p, accumulated backwards
    pg = [0j] * (n + 1)
    pe = [0j] * (n + 1)
    a, b, c, d = 1 + 0j, 0j, 0j, 1 + 0j
    pg[n], pe[n] = a, c
    for k in range(n - 1, -1, -1):
        a, b = a * s00[k] + b * s10[k], a * s01[k] + b * s11[k]
        c, d = c * s00[k] + d * s10[k], c * s01[k] + d * s11[k]
        pg[k], pe[k] = a, c

    with np.errstate(invalid="ignore", over="ignore"):  # divergence is reported by the caller
        source = 1j * np.exp(-1j * delta_tilde * tau) * np.asarray(ce)
        phi_g = np.abs(np.asarray(pg) * source) ** 2
        phi_e = np.abs(np.asarray(pe) * source) ** 2
    return TwoLevelSolution(g, e, float(simpson(phi_g, x=tau)), float(simpson(phi_e, x=tau)))


def _finite(sol: TwoLevelSolution, grid: int) -> TwoLevelSolution:
    if not all(np.isfinite(x) for x in sol[:4]):
        raise NumericalAccuracyError(
            f"two-level solve diverged at grid {grid}; the step is too coarse for the detuning", math.inf
        )
    return sol


def solve_two_level(
    pulse: PulseSpec,
    delta_tilde: float,
    grid: int = DEFAULT_GRID,
    gamma: float = 1.0,
    check: bool = True,
    tol: float = CONVERGENCE_TOL,
) -> TwoLevelSolution:
    """Integrate one driven transition over the pulse window.

    Parameters
    ----------
    pulse : PulseSpec
        Pulse with times in ns; ``gamma`` converts them to τ = γt.  With the
        default ``gamma=1`` the pulse times are read as dimensionless.
    delta_tilde : float
        Detuning Δ/γ of the transition from the laser.
    grid : int
        Number of RK4 steps over the window (≥ 200).
    check : bool
        If true, also solve on ``2*grid`` steps, return the fine solution and
        raise :class:`NumericalAccuracyError` if the Richardson error estimate
        ``max|x_n − x_2n|/15`` exceeds ``tol``.

    Returns
    -------
    TwoLevelSolution
        ``(c_g, c_e, phi_g, phi_e, error_estimate)`` at the end of the pulse,
        where ``phi_*`` are the emission weights ∫dτ_e|φ_*(τ_p, τ_e)|².
    """
    grid = int(grid)
    if grid < MIN_GRID:
        raise ValidationError(f"grid must be >= {MIN_GRID}, got {grid}")
    if not math.isfinite(delta_tilde):
        raise ValidationError("delta_tilde must be finite")
    tau_p = pulse.window(gamma)
    rabi = pulse.rabi(gamma)
    coarse = _finite(_solve_fixed(rabi, tau_p, delta_tilde, grid), grid)
    if not check:
        return coarse
    fine = _finite(_solve_fixed(rabi, tau_p, delta_tilde, 2 * grid), 2 * grid)
    est = max(abs(x - y) for x, y in zip(coarse[:4], fine[:4])) / 15.0
    if not est <= tol:
        raise NumericalAccuracyError(
            f"two-level solve not converged at grid {grid}: error estimate {est:.3e} > {tol:.1e}", est
        )
    return fine._replace(error_estimate=est)


@dataclass(frozen=True)
class ExcitationAmplitudes:
    """End-of-pulse amplitudes and during-pulse emission weights.

    Index convention: 1/2 are the ground/excited amplitudes of the resonant
    transition (spin 1 starts in 1 and should end in 2), 0/3 those of the
    off-resonant transition (spin 0 should stay in 0).
    """

    c0: complex
    c1: complex
    c2: complex
    c3: complex
    phi0: float
    phi1: float
    phi2: float
    phi3: float
    error_estimate: float = 0.0

    @property
    def populations(self) -> tuple:
        return tuple(abs(c) ** 2 for c in (self.c0, self.c1, self.c2, self.c3))

    @property
    def phis(self) -> tuple:
        return (self.phi0, self.phi1, self.phi2, self.phi3)

    def norms(self) -> tuple:
        """(resonant, detuned) norms |c_g|²+|c_e|²+phi_g+phi_e."""
        p0, p1, p2, p3 = self.populations
        return (p1 + p2 + self.phi1 + self.phi2, p0 + p3 + self.phi0 + self.phi3)

    def check_norm(self, tol: float = 1e-6) -> None:
        for label, nrm in zip(("resonant", "detuned"), self.norms()):
            if nrm > 1.0 + tol:
                raise ValidationError(f"{label} branch norm {nrm:.9f} exceeds 1")


def excitation_amplitudes(
    pulse: PulseSpec, params: EmitterParams, grid: int = DEFAULT_GRID, check: bool = True
) -> ExcitationAmplitudes:
    """Solve both transitions with the same pulse.

    The resonant transition (Δ̃ = 0) gives (c1, c2, Φ1, Φ2) and the transition
    detuned by Δ̃ = Δ/γ gives (c0, c3, Φ0, Φ3).
    """
    res = solve_two_level(pulse, 0.0, grid, gamma=params.gamma, check=check)
    det = solve_two_level(pulse, params.delta_tilde, grid, gamma=params.gamma, check=check)
    amps = ExcitationAmplitudes(
        c0=det.c_g, c1=res.c_g, c2=res.c_e, c3=det.c_e,
        phi0=det.phi_g, phi1=res.phi_g, phi2=res.phi_e, phi3=det.phi_e,
        error_estimate=max(res.error_estimate, det.error_estimate),
    )
    amps.check_norm()
    return amps


def square_pulse_closed_form(delta_tilde: float) -> dict:
    """First-order analytic populations for the optimal square pulse.

    Returns a dict with keys ``c0..c3`` (populations |c_i|²) and
    ``phi0..phi3`` (|Φ_i|²), as functions of Δ̃ = Δ/γ.
    """
    x = SQRT3PI / delta_tilde
    pi2 = math.pi ** 2
    dt2 = delta_tilde ** 2
    return {
        "c0": 1.0,
        "c1": x / 2.0,
        "c2": 1.0 - x / 2.0,
        "c3": 0.0,
        "phi0": 13.0 * x / 128.0 * (1.0 - x / 2.0),
        "phi1": 3.0 * x / 8.0 - 3.0 * pi2 / (2.0 * dt2) * (3.0 / 8.0 - 1.0 / pi2),
        "phi2": x / 8.0 * (1.0 - x / 2.0),
        "phi3": 3.0 / 16.0 * (x / 8.0 - 3.0 * pi2 / (16.0 * dt2)),
    }


@dataclass(frozen=True)
class DetectionFactors:
    """Per-round factors entering the excitation-error fidelity.

    ``d1`` is the coherent (off-diagonal) weight, ``d2`` the weight of correct
    single-photon detections and ``d3`` that of detections at the wrong
    frequency; ``d2 + d3`` is the per-round success probability.
    """

    d1: float
    d2: float
    d3: float

    @property
    def success(self) -> float:
        return self.d2 + self.d3


def detection_factors(a: ExcitationAmplitudes, c: CollectionParams) -> DetectionFactors:
    """Assemble D1, D2, D3 from the amplitudes and collection efficiencies."""
    c0, c1, c2, c3 = a.populations
    f0, f1, f2, f3 = a.phis
    eta2, eta3 = c.eta2, c.eta3
    d1 = eta2 * c0 * c2
    d2 = eta2 * (c0 * c2 + c0 * f2 + f0 * c2 + f0 * f2) + eta2 * (1.0 - eta3) * (
        c2 * c3 + f2 * c3 + f3 * c2 + f3 * f2
    )
    d3 = eta3 * (
        c3 * c1 + c3 * f1 + f3 * c1 + f3 * f1 + c3 * c2 + c3 * f2 + f3 * c2 + f3 * f2
    )
    return DetectionFactors(d1, d2, d3)


def excitation_fidelity(d: DetectionFactors, target: TargetState) -> float:
    """Conditional fidelity under excitation errors.

    GHZ: ½(D1ᴺ + D2ᴺ)/(D2+D3)ᴺ; cluster: 2⁻ᴺ((D1+D2)/(D2+D3))ᴺ.
    """
    s = d.d2 + d.d3
    if s <= 0.0:
        raise PostselectionError("D2 + D3 = 0: no round can produce a detected photon")
    n = target.n_photons
    if target.is_ghz:
        return 0.5 * ((d.d1 / s) ** n + (d.d2 / s) ** n)
    return ((d.d1 + d.d2) / (2.0 * s)) ** n


def excitation_fidelity_first_order(n: int, params: EmitterParams, c: CollectionParams) -> float:
    """First-order fidelity for the optimal square pulse.

    ``1 − Nγ√3π/(256Δ)·(29 + 3(1 + ξ3/ξ2))``, which reduces to
    ``1 − N√3πγ/(8Δ)`` for perfect filters (ξ3 = 0).
    """
    ratio = params.gamma / params.delta
    if ratio >= 0.2:
        raise ValidationError(f"first-order excitation formula needs γ/Δ < 0.2, got {ratio:.3g}")
    if c.xi2 <= 0.0:
        raise ValidationError("xi2 must be > 0 for the first-order excitation formula")
    return 1.0 - n * ratio * SQRT3PI / 256.0 * (29.0 + 3.0 * (1.0 + c.xi3 / c.xi2))


def excitation_report(
    pulse: PulseSpec,
    params: EmitterParams,
    c: CollectionParams,
    target: TargetState,
    grid: int = DEFAULT_GRID,
    check: bool = True,
) -> FidelityReport:
    """Solve, assemble the detection factors and evaluate the fidelity."""
    amps = excitation_amplitudes(pulse, params, grid, check)
    d = detection_factors(amps, c)
    exact = excitation_fidelity(d, target)
    try:
        first = excitation_fidelity_first_order(target.n_photons, params, c)
    except ValidationError:
        first = None
    comps = {"d1": d.d1, "d2": d.d2, "d3": d.d3, "success_per_round": d.success,
             "error_estimate": amps.error_estimate}
    return FidelityReport(target.kind, target.n_photons, exact, first, comps)
