import math

import numpy as np
import pytest

from tbfid.branching import (
    TransferMatrix,
    branching_fidelity,
    branching_first_order,
    branching_first_order_ratio,
    closed_form_unconditional,
    success_probability,
    transfer_matrix,
    unconditional_fidelity,
)
from tbfid.model import (
    BranchingParams,
    CollectionParams,
    DetectionProbs,
    PostselectionError,
    TargetState,
    ValidationError,
    derive_detection_probs,
)

QD = BranchingParams(0.945, 0.05, 0.0025, 0.0025)


def test_transfer_matrix_ideal():
    assert np.array_equal(transfer_matrix(DetectionProbs.ideal(), TargetState("ghz", 1)).m, np.eye(2))
    assert np.allclose(transfer_matrix(DetectionProbs.ideal(), TargetState("cluster", 1)).m, 0.5)


def test_transfer_matrix_ghz_entries():
    p = DetectionProbs(0.945, 0.05, 0.0025, 0.0025)
    m = transfer_matrix(p, TargetState("ghz", 1)).m
    assert m[0, 0] == 0.945 and m[1, 0] == 0.05
    assert m[1, 1] == pytest.approx(0.945 + 2 * 0.05 * 0.0025 + 0.05 ** 2)
    assert m[0, 1] == pytest.approx(0.945 * (0.05 + 0.0025) + 0.0025 * 0.05)


def test_success_probability_trivial():
    assert success_probability(TransferMatrix(np.eye(2)), 17) == 1.0
    assert success_probability(TransferMatrix(np.zeros((2, 2))), 3) == 0.0
    with pytest.raises(ValidationError):
        success_probability(TransferMatrix(np.eye(2)), 0)
    with pytest.raises(ValidationError):
        TransferMatrix([[0.8, 0.0], [0.3, 1.0]])


def test_success_probability_large_n():
    m = transfer_matrix(derive_detection_probs(QD, CollectionParams(1, 1, 0.02)), TargetState("ghz", 1))
    p = success_probability(m, 10 ** 6)
    assert 0.0 <= p < 1e-100 or p == 0.0


def test_ideal_branching_fidelity():
    for kind in ("ghz", "cluster"):
        r = branching_fidelity(DetectionProbs.ideal(), TargetState(kind, 6))
        assert r.exact == pytest.approx(1.0, abs=1e-14)
        assert r.components["success"] == 1.0


def test_postselection_error():
    with pytest.raises(PostselectionError):
        branching_fidelity(DetectionProbs(0, 0, 1, 0), TargetState("ghz", 2))


def test_closed_forms_are_lower_bounds_close_to_exact():
    rng = np.random.default_rng(3)
    for _ in range(30):
        b = BranchingParams(*rng.dirichlet([20, 1, 1, 1]))
        c = CollectionParams(*rng.uniform(0.5, 1.0, 3))
        p = derive_detection_probs(b, c)
        for kind in ("ghz", "cluster"):
            for n in (1, 3, 6):
                t = TargetState(kind, n)
                exact = unconditional_fidelity(p, t)
                cf = closed_form_unconditional(p, t)
                assert cf <= exact + 1e-14
                assert exact - cf <= 2 * n * p.p_perp * p.p_perp_prime + 1e-14


def test_closed_form_exact_without_diagonal_losses():
    # with p⊥′ = 0 or p⊥ = 0 the dropped paths vanish for the GHZ state
    for p in (DetectionProbs(0.8, 0.1, 0.1, 0.0), DetectionProbs(0.8, 0.0, 0.1, 0.1)):
        for n in range(1, 6):
            t = TargetState("ghz", n)
            assert unconditional_fidelity(p, t) == pytest.approx(closed_form_unconditional(p, t), abs=1e-14)


def test_fig7_unfiltered_first_order():
    r = branching_fidelity(derive_detection_probs(QD, CollectionParams()), TargetState("ghz", 5), QD, filtered=False)
    assert r.first_order == pytest.approx(1 - 5 * (3 * 0.05 + 0.0025) / 2 + 0.0025 / 4, abs=1e-12)
    assert r.first_order == pytest.approx(0.619375, abs=1e-9)


def test_first_order_examples():
    assert branching_first_order(5, QD, False) == pytest.approx(0.619375, abs=1e-12)
    assert branching_first_order(5, QD, True) == pytest.approx(0.881875, abs=1e-12)
    for n in (1, 10):
        assert branching_first_order(n, BranchingParams(0.9, 0, 0.1, 0), True) == 1.0
        assert branching_first_order(n, BranchingParams(0.9, 0, 0.1, 0), False) == 1.0


def test_first_order_ratio_form_matches_beta_form():
    for n in (1, 5, 12):
        b = QD
        ratio = (b.beta_par + b.beta_par_prime) / (b.beta_perp + b.beta_perp_prime)
        assert branching_first_order_ratio(n, ratio) == pytest.approx(branching_first_order(n, b, True), abs=1e-12)


def test_filtered_beats_unfiltered():
    rng = np.random.default_rng(5)
    for _ in range(20):
        b = BranchingParams(*rng.dirichlet([10, 1, 1, 1]))
        for n in range(1, 30):
            assert branching_first_order(n, b, True) >= branching_first_order(n, b, False)


def _first_order_gaps(xi3, filtered):
    p = derive_detection_probs(QD, CollectionParams(1, 1, xi3))
    gaps = []
    for kind in ("ghz", "cluster"):
        for n in range(1, 20):
            fo = branching_first_order(n, QD, filtered)
            if fo >= 0.9:
                gaps.append(abs(branching_fidelity(p, TargetState(kind, n)).exact - fo))
    return gaps


@pytest.mark.parametrize("xi3", [0.0, 0.02])
def test_exact_agrees_with_first_order_where_high_filtered(xi3):
    gaps = _first_order_gaps(xi3, True)
    assert gaps and max(gaps) <= 0.02


@pytest.mark.xfail(strict=True, reason="unfiltered first-order form overestimates the per-photon error "
                                       "(3p⊥/2 vs exact ≈ p⊥): gap 0.0248 at N=1")
def test_exact_agrees_with_first_order_where_high_unfiltered():
    gaps = _first_order_gaps(1.0, False)
    assert gaps and max(gaps) <= 0.02


def test_unfiltered_closed_form_matches_exact_at_one_photon():
    p = derive_detection_probs(QD, CollectionParams())
    r = branching_fidelity(p, TargetState("ghz", 1))
    assert r.exact == pytest.approx(r.components["closed_form_conditional"], abs=1e-12)
    assert r.exact == pytest.approx(0.9491872596440376, abs=1e-12)


def test_report_components():
    p = derive_detection_probs(QD, CollectionParams(1, 1, 0.02))
    r = branching_fidelity(p, TargetState("cluster", 4), QD)
    comps = r.components
    assert r.exact == pytest.approx(comps["unconditional"] / comps["success"])
    assert comps["closed_form_conditional"] == pytest.approx(comps["closed_form_unconditional"] / comps["success"])
    assert r.first_order == pytest.approx(branching_first_order(4, QD, True))
