"""Branching errors: decay of the excited state into the wrong spin state.

Each excited-state decay either returns the spin to the state it came from
(vertical transition, probability β∥ + β∥′) or flips it (diagonal transition,
β⊥ + β⊥′).  After collection and filtering a decay is detected with
probability p∥ or p⊥ and lost with p∥′ or p⊥′ (:class:`~tbfid.model.DetectionProbs`).

Three quantities are provided:

* the postselection (success) probability from the 2x2 transfer matrix M,
* the exact unconditional and conditional fidelity from a 16x16 transfer
  superoperator (see :func:`unconditional_fidelity`),
* the published closed forms and first-order expansions.

The published unconditional closed forms keep only the dominant coherent
paths and are therefore lower bounds accurate to O(p⊥p⊥′); they are reported
alongside the exact value.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .model import (
    BranchingParams,
    DetectionProbs,
    FidelityReport,
    PostselectionError,
    TargetState,
    ValidationError,
    branching_ratio,
)

N_MAX = 10 ** 6

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0)


def spin_rotation(target: TargetState) -> np.ndarray:
    """Spin rotation closing each round: X for GHZ, Hadamard for cluster states."""
    return _X if target.is_ghz else _H


def _check_n(n: int) -> int:
    n = int(n)
    if n < 1 or n > N_MAX:
        raise ValidationError(f"photon number must be in [1, {N_MAX}], got {n}")
    return n


class TransferMatrix:
    """Per-round detection/transition probabilities.

    ``m[i, j]`` is the probability that a round starting in spin state j ends
    in state i and yields at least one detected photon.
    """

    __slots__ = ("_m",)

    def __init__(self, m):
        arr = np.array(m, dtype=float)
        if arr.shape != (2, 2):
            raise ValidationError(f"transfer matrix must be 2x2, got {arr.shape}")
        if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
            raise ValidationError("transfer-matrix entries must lie in [0, 1]")
        if np.any(arr.sum(axis=0) > 1 + 1e-12):
            raise ValidationError("transfer-matrix column sums must not exceed 1")
        arr.setflags(write=False)
        self._m = arr

    @property
    def m(self) -> np.ndarray:
        return self._m

    def __getitem__(self, idx):
        return self._m[idx]

    def __repr__(self):
        return f"TransferMatrix({self._m.tolist()!r})"


def transfer_matrix(p: DetectionProbs, target: TargetState) -> TransferMatrix:
    """Transfer matrix of one protocol round (index 0/1 = spin state)."""
    pp, pq, ppp, pqp = p.as_tuple()
    if target.is_ghz:
        m = [[pp, pp * (pq + pqp) + ppp * pq],
             [pq, pp + 2.0 * pq * pqp + pq ** 2]]
    else:
        a = (pp + pq ** 2 + pq * pp + pqp * pp + pq * ppp + 2.0 * pq * pqp) / 2.0
        b = (pp + pq) / 2.0
        m = [[b, a], [b, a]]
    return TransferMatrix(m)


def success_probability(m: TransferMatrix, n: int) -> float:
    """Probability that every one of n rounds yields a detected photon,
    ``(1 1) Mⁿ (1/2, 1/2)ᵀ``."""
    n = _check_n(n)
    mat = m.m if isinstance(m, TransferMatrix) else TransferMatrix(m).m
    val = float(np.ones(2) @ np.linalg.matrix_power(mat, n) @ np.full(2, 0.5))
    return min(max(val, 0.0), 1.0)


# --- exact fidelity ---------------------------------------------------------
#
# A round is: emission attempt (early bin), spin flip X, emission attempt
# (late bin), closing rotation R.  An emission attempt acts only on spin 1 and
# has five outcomes, each a 2x2 Kraus operator on the spin.  An outcome pair
# (early, late) with exactly one detected photon contributes to the fidelity;
# its logical value is the time bin of the detected photon, everything else
# about it (lost photons with their time bin, polarisation of the detected
# photon) is environment that the fidelity traces over.

_HALF_OUTCOMES = ("none", "det_par", "lost_par", "det_perp", "lost_perp")


def _half_round_kraus(p: DetectionProbs) -> dict:
    pp, pq, ppp, pqp = p.as_tuple()
    stay0 = np.array([[1, 0], [0, 0]], dtype=complex)
    keep1 = np.array([[0, 0], [0, 1]], dtype=complex)
    flip = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|
    return {
        "none": stay0,
        "det_par": math.sqrt(pp) * keep1,
        "lost_par": math.sqrt(ppp) * keep1,
        "det_perp": math.sqrt(pq) * flip,
        "lost_perp": math.sqrt(pqp) * flip,
    }


def _round_terms(p: DetectionProbs, rot: np.ndarray) -> dict:
    """Group round Kraus operators by environment label and detected bin."""
    half = _half_round_kraus(p)
    terms: dict = {}
    for early in _HALF_OUTCOMES:
        for late in _HALF_OUTCOMES:
            detected = [(b, o) for b, o in (("e", early), ("l", late)) if o.startswith("det")]
            if len(detected) != 1:
                continue
            kraus = rot @ half[late] @ _X @ half[early]
            if not kraus.any():
                continue
            bin_, outcome = detected[0]
            env = (
                outcome,
                early if early.startswith("lost") else None,
                late if late.startswith("lost") else None,
            )
            slot = terms.setdefault(env, {})
            slot[bin_] = slot.get(bin_, 0) + kraus
    return terms


def _ideal_round_ops(rot: np.ndarray) -> dict:
    return {"e": rot @ np.array([[0, 1], [0, 0]], dtype=complex),
            "l": rot @ np.array([[0, 0], [1, 0]], dtype=complex)}


def _fidelity_superoperator(p: DetectionProbs, rot: np.ndarray) -> np.ndarray:
    ideal = _ideal_round_ops(rot)
    sup = np.zeros((16, 16), dtype=complex)
    for by_bin in _round_terms(p, rot).values():
        t = sum(np.kron(ideal[b].conj(), k) for b, k in by_bin.items())
        sup += np.kron(t, t.conj())
    return sup


def unconditional_fidelity(p: DetectionProbs, target: TargetState) -> float:
    """Exact unconditional fidelity including all branching paths.

    For a given sequence of environment labels the overlap with the ideal
    state is ``w·T_N···T_1 u`` with ``T = Σ_bin conj(A_bin) ⊗ B_bin``
    (A ideal, B actual round operator), ``u = conj(ψ0) ⊗ ψ0`` and
    ``w = Σ_s e_s ⊗ e_s``.  Summing the squared overlap over all label
    sequences gives ``(w⊗w)·𝒯ᴺ(u⊗conj u)`` with ``𝒯 = Σ_env T ⊗ conj(T)``.
    """
    n = _check_n(target.n_photons)
    sup = _fidelity_superoperator(p, spin_rotation(target))
    psi0 = np.full(2, 1 / math.sqrt(2.0), dtype=complex)
    u = np.kron(psi0.conj(), psi0)
    w = np.array([1, 0, 0, 1], dtype=complex)
    val = np.kron(w, w) @ np.linalg.matrix_power(sup, n) @ np.kron(u, u.conj())
    return float(min(max(val.real, 0.0), 1.0))


def closed_form_unconditional(p: DetectionProbs, target: TargetState) -> float:
    """Published closed-form unconditional fidelity (dominant paths only).

    GHZ: ((p∥ + p⊥′p⊥)ᴺ + p∥ᴺ(3 + p⊥′))/4;
    cluster: (p∥ + p⊥p⊥′/4)ᴺ⁻¹ (p∥ + p⊥p⊥′/4 + p∥p⊥′/4).
    """
    n = _check_n(target.n_photons)
    pp, pq, ppp, pqp = p.as_tuple()
    if target.is_ghz:
        return ((pp + pqp * pq) ** n + pp ** n * (3.0 + pqp)) / 4.0
    base = pp + pq * pqp / 4.0
    return base ** (n - 1) * (base + pp * pqp / 4.0)


def branching_first_order(n: int, b: BranchingParams, filtered: bool) -> float:
    """First-order conditional fidelity (identical for GHZ and cluster states).

    Unfiltered: 1 − N(3β⊥ + β⊥′)/2 + β⊥′/4.
    Filtered (diagonal photons rejected): 1 − (N − ½)(β⊥ + β⊥′)/2.
    """
    n = _check_n(n)
    bq, bqp = b.beta_perp, b.beta_perp_prime
    if filtered:
        return 1.0 - (n - 0.5) * (bq + bqp) / 2.0
    return 1.0 - n * (3.0 * bq + bqp) / 2.0 + bqp / 4.0


def branching_first_order_ratio(n: int, ratio: float) -> float:
    """Filtered first-order fidelity written with the branching ratio B:
    1 − (N − ½)/(2(B + 1))."""
    n = _check_n(n)
    if ratio < 0:
        raise ValidationError("branching ratio must be >= 0")
    return 1.0 - (n - 0.5) / (2.0 * (ratio + 1.0))


def branching_fidelity(
    p: DetectionProbs,
    target: TargetState,
    b: Optional[BranchingParams] = None,
    filtered: Optional[bool] = None,
) -> FidelityReport:
    """Exact conditional fidelity under branching errors.

    Parameters
    ----------
    p : DetectionProbs
    target : TargetState
    b : BranchingParams, optional
        If given, the first-order value is included in the report.
    filtered : bool, optional
        Which first-order formula to use; defaults to ``p_perp == 0``-style
        detection (``True`` when no diagonal photon can be detected).

    Returns
    -------
    FidelityReport
        ``exact`` is the conditional fidelity; ``components`` carries
        ``unconditional``, ``success``, and the closed-form counterparts.
    """
    n = target.n_photons
    success = success_probability(transfer_matrix(p, target), n)
    if success <= 0.0:
        raise PostselectionError("success probability is zero")
    unc = unconditional_fidelity(p, target)
    cf = closed_form_unconditional(p, target)
    first = None
    if b is not None:
        if filtered is None:
            filtered = p.p_perp < b.beta_perp or b.beta_perp == 0.0
        first = branching_first_order(n, b, filtered)
    comps = {
        "unconditional": unc,
        "success": success,
        "closed_form_unconditional": cf,
        "closed_form_conditional": cf / success,
    }
    if b is not None:
        comps["branching_ratio"] = branching_ratio(b)
    return FidelityReport(target.kind, n, unc / success, first, comps)
