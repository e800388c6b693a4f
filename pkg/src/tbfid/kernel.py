"""Fidelities for error channels that never flip the emitter spin.

For such channels each round contributes a 2x2 overlap kernel ``k[u][v]``
(u, v in {early, late}) between the actual and the ideal single-photon
emission, traced over the environment.  Because rounds are uncorrelated the
N-photon fidelities factorise:

* GHZ:      F = 1/4 * sum_{u,v} k[u][v]**N
* cluster:  F = (1/4 * sum_{u,v} k[u][v])**N
"""
from __future__ import annotations

import numpy as np

from .model import EmitterParams, FidelityReport, TargetState, ValidationError

HERMITIAN_TOL = 1e-12
EARLY, LATE = 0, 1


class Kernel:
    """Immutable 2x2 complex overlap kernel.

    Parameters
    ----------
    k : array_like, shape (2, 2)
        Kernel entries indexed ``[u, v]`` with 0 = early, 1 = late.
    """

    __slots__ = ("_k",)

    def __init__(self, k):
        arr = np.array(k, dtype=complex)
        if arr.shape != (2, 2):
            raise ValidationError(f"kernel must be 2x2, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("kernel entries must be finite")
        if np.max(np.abs(arr - arr.conj().T)) > HERMITIAN_TOL:
            raise ValidationError("kernel is not Hermitian: k[l][e] != conj(k[e][l])")
        diag = arr.diagonal().real
        if np.any(diag < -HERMITIAN_TOL) or np.any(diag > 1 + HERMITIAN_TOL):
            raise ValidationError(f"kernel diagonal must lie in [0, 1], got {diag}")
        if abs(arr[0, 1]) > np.sqrt(max(diag[0] * diag[1], 0.0)) + HERMITIAN_TOL:
            raise ValidationError("kernel violates the Cauchy-Schwarz bound |k_el| <= sqrt(k_ee k_ll)")
        arr.setflags(write=False)
        self._k = arr

    @property
    def k(self) -> np.ndarray:
        return self._k

    def __getitem__(self, idx):
        return self._k[idx]

    def __eq__(self, other):
        return isinstance(other, Kernel) and np.array_equal(self._k, other._k)

    def __hash__(self):
        return hash(self._k.tobytes())

    def __repr__(self):
        return f"Kernel({self._k.tolist()!r})"


def _clamp(x: float) -> float:
    if -1e-12 <= x < 0.0:
        return 0.0
    if 1.0 < x <= 1.0 + 1e-12:
        return 1.0
    return x


def kernel_fidelity(k: Kernel, target: TargetState) -> float:
    """Unconditional N-photon fidelity for a non-spin-mixing kernel.

    Examples
    --------
    >>> from tbfid.model import TargetState
    >>> round(kernel_fidelity(kernel_phonon(1.0, 0.05), TargetState("ghz", 10)), 4)
    0.6928
    """
    if not isinstance(k, Kernel):
        k = Kernel(k)
    n = target.n_photons
    if target.is_ghz:
        val = 0.25 * np.sum(k.k ** n)
    else:
        val = (0.25 * np.sum(k.k)) ** n
    if abs(val.imag) > 1e-12:
        raise ValidationError(f"kernel fidelity has imaginary part {val.imag:.3e}")
    return _clamp(float(val.real))


def indistinguishability(gamma: float, gamma_d: float) -> float:
    """Single-photon indistinguishability I = γ/(γ+2γ_d)."""
    if gamma <= 0 or gamma_d < 0:
        raise ValidationError("need gamma > 0 and gamma_d >= 0")
    return gamma / (gamma + 2.0 * gamma_d)


def kernel_phonon(gamma: float, gamma_d: float) -> Kernel:
    """Kernel for Markovian pure dephasing: unit diagonal, off-diagonal I."""
    i = indistinguishability(gamma, gamma_d)
    return Kernel([[1.0, i], [i, 1.0]])


def kernel_overhauser(delta21: float) -> Kernel:
    """Kernel for a static Overhauser shift ``delta21`` (rad/ns).

    The shift multiplies early and late emission by the same phase
    ``exp(i*delta21*(t' - t''))``, which is removed by the time integrals, so
    every entry is exactly one irrespective of ``delta21``.
    """
    delta21 = float(delta21)
    if not np.isfinite(delta21):
        raise ValidationError("delta21 must be finite")
    return Kernel(np.ones((2, 2)))


def phonon_fidelity(params: EmitterParams, target: TargetState) -> FidelityReport:
    """Exact and first-order fidelity under pure dephasing.

    The exact value is ``(1 + I**N)/2`` (GHZ) or ``((1 + I)/2)**N`` (cluster);
    the first-order value ``1 - N(1 - I)/2`` is shared by both targets.
    """
    i = params.indistinguishability
    exact = kernel_fidelity(kernel_phonon(params.gamma, params.gamma_d), target)
    first = 1.0 - target.n_photons * (1.0 - i) / 2.0
    return FidelityReport(target.kind, target.n_photons, exact, first, {"indistinguishability": i})
