"""Randomised invariants of the analytic models (hypothesis)."""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tbfid import oracle
from tbfid.branching import branching_first_order, success_probability, transfer_matrix, TransferMatrix
from tbfid.kernel import Kernel, kernel_fidelity, kernel_overhauser, kernel_phonon
from tbfid.model import (
    BranchingParams,
    CollectionParams,
    DetectionProbs,
    ParameterSet,
    TargetState,
    derive_detection_probs,
)

unit = st.floats(0.0, 1.0, allow_nan=False)
targets = st.sampled_from(["ghz", "cluster"])


@st.composite
def betas(draw):
    w = draw(st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4))
    assume(sum(w) > 1e-3)
    s = sum(w)
    return BranchingParams(*(x / s for x in w))


@st.composite
def collections(draw):
    return CollectionParams(draw(unit), draw(unit), draw(unit))


@given(betas(), collections())
def test_detection_probs_are_a_distribution(b, c):
    p = derive_detection_probs(b, c)
    assert all(0.0 <= x <= 1.0 for x in p.as_tuple())
    assert sum(p.as_tuple()) == pytest.approx(1.0, abs=1e-12)


@given(betas())
def test_lossless_collection_is_identity(b):
    p = derive_detection_probs(b, CollectionParams())
    assert p.as_tuple() == pytest.approx(b.as_tuple(), abs=1e-15)


@given(betas(), collections(), unit, st.sampled_from(["eta", "xi2"]))
def test_p_par_monotone_in_collection(b, c, x, which):
    lo, hi = sorted((getattr(c, which), x))
    kw = {"eta": c.eta, "xi2": c.xi2, "xi3": c.xi3}
    p_lo = derive_detection_probs(b, CollectionParams(**{**kw, which: lo})).p_par
    p_hi = derive_detection_probs(b, CollectionParams(**{**kw, which: hi})).p_par
    assert p_hi >= p_lo - 1e-15


@given(st.floats(0.0, 0.99), st.floats(0.0, 1.0), collections())
def test_p_par_monotone_in_beta_par(bp, shift, c):
    rest = 1.0 - bp
    lo = BranchingParams(bp, rest / 3, rest / 3, rest / 3)
    bp2 = bp + shift * rest
    rest2 = 1.0 - bp2
    hi = BranchingParams(bp2, rest2 / 3, rest2 / 3, rest2 / 3)
    assert derive_detection_probs(hi, c).p_par >= derive_detection_probs(lo, c).p_par - 1e-15


@st.composite
def kernels(draw):
    a, d = draw(unit), draw(unit)
    r = draw(unit) * math.sqrt(a * d)
    phase = draw(st.floats(0, 2 * math.pi))
    off = r * complex(math.cos(phase), math.sin(phase))
    return Kernel([[a, off], [off.conjugate(), d]])


@given(kernels())
def test_one_photon_targets_agree(k):
    assert kernel_fidelity(k, TargetState("ghz", 1)) == pytest.approx(kernel_fidelity(k, TargetState("cluster", 1)),
                                                                      abs=1e-14)


@given(st.floats(-1e3, 1e3), st.integers(1, 500), targets)
def test_overhauser_fidelity_is_one(d21, n, kind):
    assert kernel_fidelity(kernel_overhauser(d21), TargetState(kind, n)) == 1.0


@given(st.floats(0.1, 10.0), st.floats(0.0, 1.0), st.integers(1, 200))
def test_phonon_ghz_above_cluster(gamma, ratio, n):
    k = kernel_phonon(gamma, gamma * ratio)
    assert kernel_fidelity(k, TargetState("ghz", n)) >= kernel_fidelity(k, TargetState("cluster", n)) - 1e-14


@given(st.lists(unit, min_size=4, max_size=4), st.integers(1, 60))
def test_success_probability_nonincreasing(raw, n):
    m = np.array(raw, dtype=float).reshape(2, 2)
    cols = m.sum(axis=0)
    m = m / np.maximum(cols, 1.0)
    t = TransferMatrix(m)
    assert success_probability(t, n + 1) <= success_probability(t, n) + 1e-15


@given(betas(), collections(), targets, st.integers(1, 40))
def test_physical_success_nonincreasing(b, c, kind, n):
    t = transfer_matrix(derive_detection_probs(b, c), TargetState(kind, 1))
    assert success_probability(t, n + 1) <= success_probability(t, n) + 1e-15


@given(betas(), st.integers(1, 100))
def test_filtered_first_order_not_worse(b, n):
    assume(b.beta_perp > 0)
    assert branching_first_order(n, b, True) >= branching_first_order(n, b, False) - 1e-14


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4), targets, st.integers(1, 4))
def test_oracle_preserves_norm(w, kind, n):
    assume(sum(w) > 1e-3)
    p = DetectionProbs(*(x / sum(w) for x in w))
    state = oracle.run_protocol(oracle.branching_round(p, TargetState(kind, n)), n, prune=0.0)
    assert state.norm2() == pytest.approx(1.0, abs=1e-12)


finite_pos = st.floats(1e-6, 1e6, allow_nan=False, allow_infinity=False)


@given(st.tuples(finite_pos, st.floats(0, 1e3), st.floats(-1e4, 1e4), finite_pos,
                 unit, unit, unit, unit, unit, unit, unit))
def test_parameter_set_json_round_trip(values):
    ps = ParameterSet(*values)
    again = ParameterSet.from_json(ps.to_json())
    assert again == ps
    assert again.to_json() == ps.to_json()
