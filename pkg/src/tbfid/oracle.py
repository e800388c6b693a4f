"""Brute-force enumeration of the protocol state.

The state after n rounds is stored as a sparse map from labels
``(spin, (round_1_modes, ..., round_n_modes))`` to complex amplitudes, where
each ``round_j_modes`` is a sorted tuple of ``(ModeSymbol, slot)`` pairs
describing the photons/environment excitations created in that round.
Distinct labels are orthogonal.  Continuous emission-time integrals are
replaced by discrete orthonormal mode symbols (optionally carrying a time
slot), which is exact for every error model implemented here because each of
them reduces to single-mode overlaps.

The fidelity follows the operational definition: in every round exactly one
*detected* symbol must be present, its time bin is the logical value, and all
remaining information (lost photons, phonons, polarisation and time slot of
the detected photon) is environment that is traced over.
"""
from __future__ import annotations

import cmath
import enum
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .branching import spin_rotation
from .model import (
    DetectionProbs,
    EmitterParams,
    PostselectionError,
    Target,
    TargetState,
    TbfidError,
    ValidationError,
)

log = logging.getLogger(__name__)

DEFAULT_CAP = 10 ** 7
PRUNE_TOL = 1e-15
MAX_ROUNDS = 8


class StateOverflowError(TbfidError, OverflowError):
    """The enumerated state exceeded the configured amplitude cap."""


class MappingError(ValidationError):
    """A state component cannot be mapped to the logical qubit basis."""


class ModeSymbol(str, enum.Enum):
    """Orthogonal single-excitation modes created during one round."""

    VACUUM = "vacuum"
    DET_RES_EARLY = "det_res_early"
    DET_RES_LATE = "det_res_late"
    DET_DIAG_EARLY = "det_diag_early"
    DET_DIAG_LATE = "det_diag_late"
    LOST_PAR_EARLY = "lost_par_early"
    LOST_PAR_LATE = "lost_par_late"
    LOST_PERP_EARLY = "lost_perp_early"
    LOST_PERP_LATE = "lost_perp_late"
    PHONON_EARLY = "phonon_early"
    PHONON_LATE = "phonon_late"
    PULSE_PHOTON_RES = "pulse_photon_res"
    PULSE_PHOTON_DIAG = "pulse_photon_diag"

    @property
    def is_detected(self) -> bool:
        return self.value.startswith("det_")

    @property
    def time_bin(self) -> str:
        return "e" if self.value.endswith("early") else "l"

    @property
    def polarisation(self) -> str:
        return self.value.split("_")[1]


S = ModeSymbol
Mode = Tuple[ModeSymbol, int]


def _modes(symbols: Iterable) -> Tuple[Mode, ...]:
    out = []
    for s in symbols:
        if isinstance(s, tuple):
            sym, slot = ModeSymbol(s[0]), int(s[1])
        else:
            sym, slot = ModeSymbol(s), 0
        if sym is not ModeSymbol.VACUUM:
            out.append((sym, slot))
    return tuple(sorted(out, key=lambda m: (m[0].value, m[1])))


@dataclass(frozen=True)
class Branch:
    spin_in: int
    spin_out: int
    amplitude: complex
    modes: Tuple[Mode, ...]


class RoundOperator:
    """One protocol round as a list of branches.

    Parameters
    ----------
    pre_rotation : sequence of (spin_in, spin_out, amplitude, symbols)
        Branches before the closing spin rotation.
    rotation : ndarray, shape (2, 2)
        Closing rotation R, applied to ``spin_out``.
    """

    def __init__(self, pre_rotation: Sequence, rotation: np.ndarray):
        self.pre_rotation = [Branch(int(a), int(b), complex(c), _modes(d)) for a, b, c, d in pre_rotation]
        self.rotation = np.asarray(rotation, dtype=complex)
        for spin in (0, 1):
            w = sum(abs(b.amplitude) ** 2 for b in self.pre_rotation if b.spin_in == spin)
            if w > 1 + 1e-9:
                raise ValidationError(f"branch weights for spin-in {spin} sum to {w} > 1")
        branches = []
        for b in self.pre_rotation:
            for s in (0, 1):
                r = self.rotation[s, b.spin_out]
                if r != 0:
                    branches.append(Branch(b.spin_in, s, b.amplitude * r, b.modes))
        self.branches: List[Branch] = branches
        self._by_spin = {s: [b for b in branches if b.spin_in == s] for s in (0, 1)}

    def for_spin(self, spin: int) -> List[Branch]:
        return self._by_spin[spin]

    def weights(self) -> Dict[int, float]:
        return {s: sum(abs(b.amplitude) ** 2 for b in self.pre_rotation if b.spin_in == s) for s in (0, 1)}


class SparseState:
    """Sparse amplitude map over ``(spin, per-round modes)`` labels.

    Internally each label is an integer: the per-round mode tuples are indexed
    in ``alphabet`` and the round indices form the digits of ``keys`` (round 1
    most significant).  :attr:`amplitudes` gives the decoded label map.
    """

    def __init__(self, spins: np.ndarray, keys: np.ndarray, amps: np.ndarray,
                 alphabet: Sequence[Tuple[Mode, ...]], n_rounds: int):
        self.spins = np.asarray(spins, dtype=np.int64)
        self.keys = np.asarray(keys, dtype=np.int64)
        self.amps = np.asarray(amps, dtype=complex)
        self.alphabet = tuple(alphabet)
        self.n_rounds = int(n_rounds)
        self._digits = None

    def digits(self) -> np.ndarray:
        """Alphabet index of every round, shape (terms, rounds)."""
        if self._digits is None:
            base = max(len(self.alphabet), 1)
            out = np.zeros((len(self.keys), self.n_rounds), dtype=np.int64)
            k = self.keys.copy()
            for j in range(self.n_rounds - 1, -1, -1):
                k, out[:, j] = np.divmod(k, base)
            out.flags.writeable = False
            self._digits = out
        return self._digits

    @property
    def amplitudes(self) -> Dict[tuple, complex]:
        digs = self.digits()
        return {
            (int(s), tuple(self.alphabet[d] for d in row)): complex(a)
            for s, row, a in zip(self.spins, digs, self.amps)
        }

    def norm2(self) -> float:
        return _weight(self.amps)

    def __len__(self):
        return len(self.amps)


def ideal_round(target: TargetState) -> RoundOperator:
    """Ideal round: spin 1 emits early, spin 0 emits late, then R."""
    return RoundOperator(
        [(0, 1, 1.0, [S.DET_RES_LATE]), (1, 0, 1.0, [S.DET_RES_EARLY])],
        spin_rotation(target),
    )


def branching_round(p: DetectionProbs, target: TargetState) -> RoundOperator:
    """All fourteen branches of one round with branching errors.

    A spin in 0 is excited only in the late half; a spin in 1 is excited in the
    early half and, if it decays diagonally to 0 and is flipped back to 1, once
    more in the late half.
    """
    pp, pq, ppp, pqp = p.as_tuple()
    r = math.sqrt
    branches = [
        (0, 1, r(pp), [S.DET_RES_LATE]),
        (0, 1, r(ppp), [S.LOST_PAR_LATE]),
        (0, 0, r(pq), [S.DET_DIAG_LATE]),
        (0, 0, r(pqp), [S.LOST_PERP_LATE]),
        (1, 0, r(pp), [S.DET_RES_EARLY]),
        (1, 0, r(ppp), [S.LOST_PAR_EARLY]),
    ]
    for early_sym, early_p in ((S.DET_DIAG_EARLY, pq), (S.LOST_PERP_EARLY, pqp)):
        branches += [
            (1, 1, r(early_p * pp), [early_sym, S.DET_RES_LATE]),
            (1, 1, r(early_p * ppp), [early_sym, S.LOST_PAR_LATE]),
            (1, 0, r(early_p * pq), [early_sym, S.DET_DIAG_LATE]),
            (1, 0, r(early_p * pqp), [early_sym, S.LOST_PERP_LATE]),
        ]
    return RoundOperator(branches, spin_rotation(target))


def _weight(amps: np.ndarray) -> float:
    """Σ|a|² with numpy's pairwise summation."""
    return float(np.sum(amps.real ** 2) + np.sum(amps.imag ** 2))


def _merge(labels: np.ndarray, values: np.ndarray, space: int):
    """Sum ``values`` over equal ``labels``; returns (sorted unique labels, sums).

    Uses a dense bincount when the label space is small compared with the
    number of entries, and a sort otherwise.
    """
    if space <= max(1 << 22, 8 * len(labels)):
        counts = np.bincount(labels, minlength=space)
        uniq = np.flatnonzero(counts)
        re = np.bincount(labels, weights=values.real, minlength=space)[uniq]
        im = np.bincount(labels, weights=values.imag, minlength=space)[uniq]
        return uniq, re + 1j * im
    uniq, inv = np.unique(labels, return_inverse=True)
    sums = np.bincount(inv, weights=values.real, minlength=len(uniq)) + 1j * np.bincount(
        inv, weights=values.imag, minlength=len(uniq))
    return uniq, sums


def run_protocol(op: RoundOperator, n: int, cap: int = DEFAULT_CAP, prune: float = PRUNE_TOL) -> SparseState:
    """Apply ``op`` n times to (|0⟩ + |1⟩)/√2 ⊗ vacuum.

    Identical labels produced by different branch sequences are merged after
    every round (coherent sum); amplitudes below ``prune`` are dropped.
    """
    if n < 0 or n > MAX_ROUNDS:
        raise ValidationError(f"oracle supports 0 <= n <= {MAX_ROUNDS}, got {n}")
    alphabet = sorted({b.modes for b in op.branches}, key=lambda ms: tuple((m[0].value, m[1]) for m in ms))
    base = max(len(alphabet), 1)
    if 2 * float(base) ** n >= 2.0 ** 62:
        raise StateOverflowError("label space too large for integer encoding")
    index = {ms: i for i, ms in enumerate(alphabet)}
    br_in = np.array([b.spin_in for b in op.branches], dtype=np.int64)
    br_out = np.array([b.spin_out for b in op.branches], dtype=np.int64)
    br_amp = np.array([b.amplitude for b in op.branches], dtype=complex)
    br_dig = np.array([index[b.modes] for b in op.branches], dtype=np.int64)

    spins = np.array([0, 1], dtype=np.int64)
    keys = np.zeros(2, dtype=np.int64)
    amps = np.full(2, 1 / math.sqrt(2.0), dtype=complex)
    for j in range(n):
        parts_s, parts_k, parts_a = [], [], []
        for bi in range(len(br_amp)):
            sel = spins == br_in[bi]
            if not sel.any():
                continue
            parts_s.append(np.full(int(sel.sum()), br_out[bi]))
            parts_k.append(keys[sel] * base + br_dig[bi])
            parts_a.append(amps[sel] * br_amp[bi])
        s = np.concatenate(parts_s)
        k = np.concatenate(parts_k)
        a = np.concatenate(parts_a)
        uniq, merged = _merge(k * 2 + s, a, 2 * base ** (j + 1))
        if len(uniq) > cap:
            raise StateOverflowError(f"state exceeded {cap} amplitudes in round {j + 1}")
        keep = np.abs(merged) >= prune
        if not keep.all():
            log.debug("round %d: pruned %d amplitudes below %g", j + 1, int((~keep).sum()), prune)
        spins, keys, amps = uniq[keep] % 2, uniq[keep] // 2, merged[keep]
    return SparseState(spins, keys, amps, alphabet, n)


def _split_round(modes: Tuple[Mode, ...]):
    """Return (bin, environment) for a round with exactly one detected mode, else None."""
    detected = [m for m in modes if m[0].is_detected]
    if len(detected) != 1:
        return None
    sym, slot = detected[0]
    env = (sym.polarisation, slot, tuple(m for m in modes if not m[0].is_detected))
    return sym.time_bin, env


def _ideal_logical(target: TargetState) -> Dict[tuple, complex]:
    ideal = run_protocol(ideal_round(target), target.n_photons)
    return {
        (spin, tuple(_split_round(r)[0] for r in lab)): amp
        for (spin, lab), amp in ideal.amplitudes.items()
    }


def success_weight(state: SparseState) -> float:
    """Total weight of components with at least one detected photon in every round."""
    has_det = np.array([any(m[0].is_detected for m in ms) for ms in state.alphabet] or [False])
    ok = has_det[state.digits()].all(axis=1)
    return _weight(state.amps[ok])


def unconditional_fidelity(state: SparseState, target: TargetState) -> float:
    """Σ over environment configurations of |⟨ideal|state_config⟩|².

    A component contributes only if each round holds exactly one detected
    photon; components are grouped by their environment record and each group
    is projected on the ideal state coherently.
    """
    n = target.n_photons
    if state.n_rounds != n:
        raise ValidationError("state round count differs from the target photon number")
    ideal = _ideal_logical(target)
    ref = np.zeros(2 ** (n + 1), dtype=complex)
    for (spin, bins), amp in ideal.items():
        ref[int(str(spin) + "".join("0" if b == "e" else "1" for b in bins), 2)] = amp

    splits = [_split_round(ms) for ms in state.alphabet]
    valid = np.array([s is not None for s in splits] or [False])
    late = np.array([s is not None and s[0] == "l" for s in splits] or [False], dtype=np.int64)
    envs = sorted({s[1] for s in splits if s is not None}, key=repr)
    env_index = {e: i for i, e in enumerate(envs)}
    env_id = np.array([env_index[s[1]] if s is not None else 0 for s in splits] or [0], dtype=np.int64)

    digs = state.digits()
    ok = valid[digs].all(axis=1)
    digs, spins, amps = digs[ok], state.spins[ok], state.amps[ok]
    logical = spins.copy()
    env_key = np.zeros(len(amps), dtype=np.int64)
    for j in range(n):
        logical = logical * 2 + late[digs[:, j]]
        env_key = env_key * max(len(envs), 1) + env_id[digs[:, j]]
    contrib = ref[logical].conj() * amps
    _, groups = _merge(env_key, contrib, max(len(envs), 1) ** n)
    return _weight(groups)


def conditional_fidelity(state: SparseState, target: TargetState) -> Tuple[float, float]:
    """Return ``(conditional fidelity, success probability)``."""
    success = success_weight(state)
    if success <= 0.0:
        raise PostselectionError("no component has a detected photon in every round")
    return unconditional_fidelity(state, target) / success, success


# --- logical basis ----------------------------------------------------------

def logical_vector(state: SparseState, target: TargetState) -> np.ndarray:
    """Map an ideal-protocol state to an (N+1)-qubit vector.

    Qubit order is spin, photon_N, ..., photon_1 (most significant first).
    Cluster: spin relabelled 0↔1, early photon → 0, late photon → −1 (the basis
    change under which a round reads |+⟩⟨0|a₀† + |−⟩⟨1|a₁†).
    GHZ: early photon → 1, late photon → 0, spin unchanged, so the state reads
    (|0…0⟩ + |1…1⟩)/√2.
    """
    n = state.n_rounds
    vec = np.zeros(2 ** (n + 1), dtype=complex)
    cluster = target.kind is Target.CLUSTER
    for (spin, lab), amp in state.amplitudes.items():
        bits = [1 - spin if cluster else spin]
        sign = 1.0
        for r in reversed(lab):  # photon_N first
            if len(r) != 1 or not r[0][0] in (S.DET_RES_EARLY, S.DET_RES_LATE) or r[0][1] != 0:
                raise MappingError(f"round modes {r} are not a single ideal time-bin photon")
            early = r[0][0] is S.DET_RES_EARLY
            if cluster:
                bits.append(0 if early else 1)
                if not early:
                    sign = -sign
            else:
                bits.append(1 if early else 0)
        idx = int("".join(map(str, bits)), 2)
        vec[idx] += sign * amp
    return vec


def _pauli_expectation(vec: np.ndarray, n_qubits: int, xs: Sequence[int], zs: Sequence[int]) -> float:
    psi = vec.reshape((2,) * n_qubits)
    phi = psi.copy()
    for q in zs:
        sl = [slice(None)] * n_qubits
        sl[q] = 1
        phi[tuple(sl)] *= -1
    for q in xs:
        phi = np.flip(phi, axis=q)
    return float(np.vdot(psi, phi).real)


def stabilizer_generators(n: int) -> List[Tuple[List[int], List[int]]]:
    """(X qubits, Z qubits) of the linear-cluster generators on qubits 0..n."""
    gens = []
    for i in range(n + 1):
        zs = [q for q in (i - 1, i + 1) if 0 <= q <= n]
        gens.append(([i], zs))
    return gens


def stabilizer_check(state: SparseState, n: Optional[int] = None, target: Optional[TargetState] = None) -> List[float]:
    """Expectation values ⟨g_0⟩, …, ⟨g_N⟩ of the linear-cluster generators.

    ``g_0 = X_0 Z_1``, ``g_i = Z_{i-1} X_i Z_{i+1}``, ``g_N = Z_{N-1} X_N``,
    with qubit 0 the spin.  ``target`` selects the logical mapping (default:
    cluster).
    """
    n = state.n_rounds if n is None else n
    if n != state.n_rounds:
        raise ValidationError("n does not match the state's round count")
    target = target or TargetState(Target.CLUSTER, max(n, 1))
    vec = logical_vector(state, target)
    nrm = np.vdot(vec, vec).real
    if nrm <= 0:
        raise MappingError("state has no weight in the logical subspace")
    vec = vec / math.sqrt(nrm)
    return [_pauli_expectation(vec, n + 1, xs, zs) for xs, zs in stabilizer_generators(n)]


def ghz_overlap(state: SparseState) -> float:
    """|⟨GHZ|ψ⟩|² with GHZ = (|0…0⟩ + |1…1⟩)/√2 in the GHZ logical mapping."""
    n = state.n_rounds
    vec = logical_vector(state, TargetState(Target.GHZ, max(n, 1)))
    return float(abs((vec[0] + vec[-1]) / math.sqrt(2.0)) ** 2)


# --- two-qubit error decomposition -----------------------------------------

@dataclass(frozen=True)
class DecompositionResult:
    residual: float
    two_qubit_error_probability: float
    branch_amplitude: float


def _photon_ops():
    """Operators on one truncated photon round: basis (vacuum, e, l)."""
    ce = np.zeros((3, 3))
    ce[1, 0] = 1.0
    cl = np.zeros((3, 3))
    cl[2, 0] = 1.0
    z = np.diag([1.0, 1.0, -1.0])
    return ce, cl, z


def decomposition_check(p: DetectionProbs) -> DecompositionResult:
    """Verify the two-qubit error identity for the dominant branching error.

    The error branch of a cluster round in which the spin decays diagonally
    and unobserved in the early half and then emits correctly in the late half
    acts as Õ† = |−⟩⟨1| a_l† (the lost photon is environment).  The identity

        O†_{j+1} Õ†_j = −a†_{l,j} a_{e,j} Z_{j+1} O†_{j+1} O†_j

    states that this error equals ideal generation followed by a bit flip on
    photon j and a phase flip on photon j+1.  Both sides are built on
    spin ⊗ photon_j ⊗ photon_{j+1} acting on the photon vacuum; the max-norm
    residual is returned together with the weight of the error branch taken
    from :func:`branching_round`.
    """
    target = TargetState(Target.CLUSTER, 2)
    h = spin_rotation(target)
    ce, cl, z = _photon_ops()
    i3 = np.eye(3)
    ket0, ket1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    plus, minus = h @ ket0, h @ ket1
    o_spin_e = np.outer(plus, ket1)   # |+><1| with an early photon
    o_spin_l = np.outer(minus, ket0)  # |-><0| with a late photon

    def on_j(spin_op, ph):
        return np.kron(spin_op, np.kron(ph, i3))

    def on_j1(spin_op, ph):
        return np.kron(spin_op, np.kron(i3, ph))

    eye2 = np.eye(2)
    o_j = on_j(o_spin_e, ce) + on_j(o_spin_l, cl)
    o_j1 = on_j1(o_spin_e, ce) + on_j1(o_spin_l, cl)
    o_err = on_j(np.outer(minus, ket1), cl)
    flip_j = on_j(eye2, cl @ ce.T)  # a†_l a_e on photon j
    z_j1 = on_j1(eye2, z)
    vac = np.zeros((9, 9))
    vac[0, 0] = 1.0
    proj = np.kron(eye2, vac)
    lhs = o_j1 @ o_err @ proj
    rhs = -flip_j @ z_j1 @ o_j1 @ o_j @ proj
    residual = float(np.max(np.abs(lhs - rhs)))

    amp = 0.0
    for b in branching_round(p, target).pre_rotation:
        names = {m[0] for m in b.modes}
        if b.spin_in == 1 and names == {S.LOST_PERP_EARLY, S.DET_RES_LATE}:
            amp = abs(b.amplitude)
    return DecompositionResult(residual, amp ** 2, amp)


# --- non-spin-mixing channels ------------------------------------------------

def _phonon_round(indist: float, target: TargetState) -> RoundOperator:
    a, b = math.sqrt(indist), math.sqrt(max(1.0 - indist, 0.0))
    return RoundOperator(
        [
            (0, 1, a, [S.DET_RES_LATE]),
            (0, 1, b, [S.DET_RES_LATE, S.PHONON_LATE]),
            (1, 0, a, [S.DET_RES_EARLY]),
            (1, 0, b, [S.DET_RES_EARLY, S.PHONON_EARLY]),
        ],
        spin_rotation(target),
    )


def _overhauser_round(params: EmitterParams, shifts: Sequence[float], target: TargetState, slots: int) -> RoundOperator:
    """Emission into ``slots`` time slots of each bin with the shift phase exp(−iΔ21 t).

    Spin-dependent phases exp(−iΔ_s T/2) are applied in both halves of the
    round, so the echo structure is explicit rather than assumed.
    """
    d0, d1, d2 = shifts
    d21 = d2 - d1
    half = params.t_bin / 2.0
    edges = np.linspace(0.0, half, slots + 1)
    w = np.exp(-params.gamma * edges[:-1]) - np.exp(-params.gamma * edges[1:])
    w = w / w.sum()
    mids = 0.5 * (edges[:-1] + edges[1:])
    ph0, ph1 = cmath.exp(-1j * d0 * half), cmath.exp(-1j * d1 * half)
    branches = []
    for k in range(slots):
        emit = math.sqrt(w[k]) * cmath.exp(-1j * d21 * mids[k])
        # spin 0: idle in the early half, excited after the flip
        branches.append((0, 1, ph0 * ph1 * emit, [(S.DET_RES_LATE, k)]))
        # spin 1: excited in the early half, idle after the flip
        branches.append((1, 0, ph1 * emit * ph0, [(S.DET_RES_EARLY, k)]))
    return RoundOperator(branches, spin_rotation(target))


def kernel_oracle(
    model: str,
    params: EmitterParams,
    n: int,
    target: TargetState,
    shifts: Sequence[float] = (0.0, 0.0, 0.0),
    slots: int = 3,
) -> float:
    """Enumerate a non-spin-mixing channel and return the conditional fidelity.

    Parameters
    ----------
    model : {'phonon', 'overhauser'}
        ``phonon`` splits every emission into a coherent part of weight I and a
        part of weight 1 − I tagged by a phonon in the same time bin.
        ``overhauser`` applies static level shifts ``shifts = (Δ0, Δ1, Δ2)``.
    """
    if n > 6:
        raise ValidationError("kernel_oracle supports n <= 6")
    tgt = TargetState(target.kind, n)
    if model == "phonon":
        op = _phonon_round(params.indistinguishability, tgt)
    elif model == "overhauser":
        op = _overhauser_round(params, shifts, tgt, slots)
    else:
        raise ValidationError(f"unknown kernel model {model!r}")
    fid, _ = conditional_fidelity(run_protocol(op, n), tgt)
    return fid
