"""Nominal no-eavesdropper channel models and count generation.

Point-to-point model (frozen by golden tests): a single-photon channel
with transmittance eta = eta_a * eta_b feeding two threshold detectors
with independent per-gate dark count probability p_d.  An arriving
photon clicks the detector selected by the Born rule (after an optional
misalignment flip); a simultaneous dark count in the other detector
makes a double click, resolved to a uniform random bit.  With no photon,
one or two dark counts still produce a detection with a uniform bit.

Relay model (two-sender setup): the standard linear-optics partial
Bell-state measurement click probability, evaluated on the emitted
states.  The announcement probability is bilinear in the two Bloch
vectors, so it extends from emitted angles to arbitrary (virtual)
states; the angle arguments are the full encoded angles, never rescaled
here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

from .errors import DomainError
from .mdi_estimator import MdiObservedCounts, MdiTagging, mdi_signal_states
from .pm_estimator import PmObservedCounts, PmTagging, pm_signal_states
from .qubit_algebra import (
    PHASE_ERROR_PAIRS,
    BlochVector,
    QubitState,
    bloch_from_state,
    virtual_states_pm,
)

__all__ = [
    "ChannelParams",
    "ExpectedCounts",
    "pm_outcome_probability",
    "mdi_click_probability",
    "mdi_click_probability_bloch",
    "expected_counts",
    "sample_counts",
    "sample_pm_virtual_counts",
]

LOSS_DB_PER_KM = 0.2


@dataclass(frozen=True)
class ChannelParams:
    """Optical channel and detector parameters.

    eta_a and eta_b are per-arm single-photon transmittances; the
    point-to-point setting uses their product (receiver arm 1 by
    convention), the relay setting uses them separately.
    """

    eta_a: float
    eta_b: float = 1.0
    dark_count_prob: float = 0.0
    misalignment: float = 0.0

    def __post_init__(self):
        for name in ("eta_a", "eta_b"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.dark_count_prob < 1.0:
            raise DomainError("dark_count_prob must lie in [0, 1)")
        if not 0.0 <= self.misalignment < 1.0:
            raise DomainError("misalignment must lie in [0, 1)")

    @classmethod
    def pm_from_loss(cls, loss_db: float, dark_count_prob: float = 0.0,
                     misalignment: float = 0.0) -> "ChannelParams":
        """Whole channel loss on the single sender-to-receiver arm."""
        if loss_db < 0:
            raise DomainError("loss_db must be non-negative")
        return cls(10.0 ** (-loss_db / 10.0), 1.0, dark_count_prob, misalignment)

    @classmethod
    def mdi_from_loss(cls, loss_db: float, dark_count_prob: float = 0.0) -> "ChannelParams":
        """Total loss split evenly between the two arms into the relay."""
        if loss_db < 0:
            raise DomainError("loss_db must be non-negative")
        arm = 10.0 ** (-loss_db / 20.0)
        return cls(arm, arm, dark_count_prob)

    @classmethod
    def pm_from_distance(cls, km: float, dark_count_prob: float = 0.0,
                         misalignment: float = 0.0,
                         loss_db_per_km: float = LOSS_DB_PER_KM) -> "ChannelParams":
        return cls.pm_from_loss(km * loss_db_per_km, dark_count_prob, misalignment)

    @classmethod
    def mdi_from_distance(cls, km: float, dark_count_prob: float = 0.0,
                          loss_db_per_km: float = LOSS_DB_PER_KM) -> "ChannelParams":
        return cls.mdi_from_loss(km * loss_db_per_km, dark_count_prob)

    @property
    def eta(self) -> float:
        return self.eta_a * self.eta_b


def _born(bloch: BlochVector, basis: str, outcome: int) -> float:
    if basis == "Z":
        component = bloch.s_z
    elif basis == "X":
        component = bloch.s_x
    else:
        raise DomainError(f"unknown basis {basis!r}")
    if outcome not in (0, 1):
        raise DomainError("outcome must be 0 or 1")
    return (1.0 + (1.0 if outcome == 0 else -1.0) * component) / 2.0


def pm_outcome_probability(state, basis: str, outcome: int,
                           params: ChannelParams) -> float:
    """P(detection with given bit | emitted state, receiver basis).

    state is a QubitState, a BlochVector, or a planar angle in radians.
    """
    if isinstance(state, BlochVector):
        bloch = state
    elif isinstance(state, QubitState):
        bloch = bloch_from_state(state)
    else:
        bloch = bloch_from_state(QubitState.planar(float(state)))
    born = _born(bloch, basis, outcome)
    ideal = (1.0 - params.misalignment) * born + params.misalignment * (1.0 - born)
    p_d = params.dark_count_prob
    return params.eta * (ideal * (1.0 - p_d) + p_d / 2.0) + (
        1.0 - params.eta
    ) * p_d * (1.0 - p_d / 2.0)


def mdi_click_probability_bloch(bloch_a: BlochVector, bloch_b: BlochVector,
                                params: ChannelParams, bell: str = "psi_minus") -> float:
    """Announcement probability for one emitted state pair, from Bloch vectors."""
    if bell == "psi_minus":
        sign = -1.0
    elif bell == "psi_plus":
        sign = 1.0
    else:
        raise DomainError(f"relay model announces psi projections only, not {bell!r}")
    zz = bloch_a.s_z * bloch_b.s_z
    xx = bloch_a.s_x * bloch_b.s_x
    # roundoff can land an exact zero a hair below it
    sin_sq = max((1.0 - zz + sign * xx) / 2.0, 0.0)
    cos_term = max(1.0 + zz, 0.0)
    eta_a, eta_b, p_d = params.eta_a, params.eta_b, params.dark_count_prob
    both = eta_a * eta_b / 2.0
    inner = (
        both * sin_sq
        + p_d * both * cos_term
        + p_d * (1.0 - eta_a) * eta_b
        + p_d * eta_a * (1.0 - eta_b)
        + 2.0 * p_d * p_d * (1.0 - eta_a) * (1.0 - eta_b)
    )
    return (1.0 - p_d) ** 2 * inner


def mdi_click_probability(theta_a: float, theta_b: float, params: ChannelParams,
                          bell: str = "psi_minus") -> float:
    """Announcement probability for one emitted angle pair.

    Angles are the full encoded values; sin^2(theta_a -+ theta_b) selects
    the minus sign for the psi-minus announcement.
    """
    return mdi_click_probability_bloch(
        bloch_from_state(QubitState.planar(theta_a)),
        bloch_from_state(QubitState.planar(theta_b)),
        params,
        bell,
    )


@dataclass(frozen=True)
class ExpectedCounts:
    """Exact expectations of every observable count, plus breakdowns.

    counts carries the protocol-appropriate ObservedCounts with
    real-valued fields.  n_phase_errors is the expectation of the
    counterfactual phase-error count, taken directly over the virtual
    states through the same channel (the reference value estimators are
    judged against).  error_rate is the expected bit-error fraction of
    the sifted key (0 when nothing is sifted).
    """

    counts: object
    n_phase_errors: float
    error_rate: float
    detected_breakdown: Mapping = field(default_factory=dict)
    tagged_breakdown: Mapping = field(default_factory=dict)


def _pm_expected(config, tagging: PmTagging, params: ChannelParams,
                 n_tot: float) -> ExpectedCounts:
    states = pm_signal_states(config.delta)
    v0, v1, w0, w1 = virtual_states_pm(states[0], states[1])
    if abs(w0 - tagging.vir_weights[0]) > 1e-9:
        raise DomainError("tagging was built for a different angle perturbation")
    p_state = (config.p_0z, config.p_1z, config.p_0x)
    p_za = config.p_0z + config.p_1z

    detected = {}
    for j, state in enumerate(states):
        for basis, p_basis in (("Z", config.p_zb), ("X", config.p_xb)):
            for outcome in (0, 1):
                detected[(j, basis, outcome)] = (
                    n_tot
                    * p_state[j]
                    * p_basis
                    * pm_outcome_probability(state, basis, outcome, params)
                )

    n_sifted = sum(detected[(j, "Z", o)] for j in (0, 1) for o in (0, 1))
    n_bit_errors = detected[(0, "Z", 1)] + detected[(1, "Z", 0)]
    n_x = {(j, o): detected[(j, "X", o)] for j in range(3) for o in (0, 1)}
    n_detected_total = sum(detected.values()) - detected[(2, "Z", 0)] - detected[(2, "Z", 1)]

    tagged = {}
    n_tag = {}
    for alpha in (0, 1):
        for tag in ("pos", "neg"):
            total = 0.0
            for j in range(3):
                cond = tagging.p_tag_given_state.get((j, alpha, tag))
                if cond is None:
                    continue
                contribution = n_x[(j, 1 - alpha)] * cond
                tagged[(j, alpha, tag)] = contribution
                total += contribution
            n_tag[(alpha, tag)] = total

    n_ph = 0.0
    for alpha, vir in ((0, v0), (1, v1)):
        weight = (w0, w1)[alpha]
        n_ph += (
            n_tot
            * p_za
            * config.p_zb
            * weight
            * pm_outcome_probability(vir, "X", 1 - alpha, params)
        )

    counts = PmObservedCounts(
        n_tag=n_tag,
        n_sifted=n_sifted,
        n_bit_errors=n_bit_errors,
        n_detected_total=n_detected_total,
        n_x_outcomes=n_x,
    )
    error_rate = n_bit_errors / n_sifted if n_sifted > 0 else 0.0
    return ExpectedCounts(counts, n_ph, error_rate, detected, tagged)


def _mdi_pair_probs(config):
    p_a = (config.p_z_alice / 2.0, config.p_z_alice / 2.0, 1.0 - config.p_z_alice)
    p_b = (config.p_z_bob / 2.0, config.p_z_bob / 2.0, 1.0 - config.p_z_bob)
    return p_a, p_b


@lru_cache(maxsize=256)
def _mdi_click_tables(delta: float, outcomes: tuple, params: ChannelParams):
    """Selection-independent click probabilities, cached for sweeps.

    Returns the per-(outcome, j, s) signal click probability and, per
    outcome, the weighted virtual click sum entering the phase-error
    expectation.
    """
    alice, bob = mdi_signal_states(delta)
    signal = {
        (omega, j, s): mdi_click_probability(alice[j].theta, bob[s].theta, params, omega)
        for omega in outcomes
        for j in range(3)
        for s in range(3)
    }
    va0, va1, wa0, wa1 = virtual_states_pm(alice[0], alice[1])
    vb0, vb1, wb0, wb1 = virtual_states_pm(bob[0], bob[1])
    vir_a, vir_b = (va0, va1), (vb0, vb1)
    w_a, w_b = (wa0, wa1), (wb0, wb1)
    virtual = {
        omega: sum(
            w_a[a] * w_b[b]
            * mdi_click_probability_bloch(vir_a[a], vir_b[b], params, omega)
            for a, b in PHASE_ERROR_PAIRS[omega]
        )
        for omega in outcomes
    }
    return signal, virtual


def _mdi_expected(config, tagging: MdiTagging, params: ChannelParams,
                  n_tot: float) -> ExpectedCounts:
    p_key = config.p_z_alice * config.p_z_bob * config.p_k_given_z
    if abs((1.0 - p_key) - tagging.p_test) > 1e-9:
        raise DomainError("tagging was built for a different configuration")
    p_a, p_b = _mdi_pair_probs(config)
    outcomes = tuple(tagging.decompositions)
    signal_clicks, virtual_clicks = _mdi_click_tables(config.delta, outcomes, params)

    detected = {}
    n_announced = {}
    n_test = {}
    n_sifted = 0.0
    n_bit_errors = 0.0
    for omega in outcomes:
        total = 0.0
        for j in range(3):
            for s in range(3):
                expectation = n_tot * p_a[j] * p_b[s] * signal_clicks[(omega, j, s)]
                detected[(omega, j, s)] = expectation
                total += expectation
                if j < 2 and s < 2:
                    kept = expectation * config.p_k_given_z
                    n_sifted += kept
                    if j == s:
                        n_bit_errors += kept
                    n_test[(omega, j, s)] = expectation - kept
                else:
                    n_test[(omega, j, s)] = expectation
        n_announced[omega] = total

    tagged = {}
    n_tag = {}
    for omega in outcomes:
        for tag in ("pos", "neg"):
            total = 0.0
            for j in range(3):
                for s in range(3):
                    cond = tagging.p_tag_given_state.get((j, s, omega, tag))
                    if cond is None:
                        continue
                    contribution = n_test[(omega, j, s)] * cond
                    tagged[(j, s, omega, tag)] = contribution
                    total += contribution
            n_tag[(omega, tag)] = total

    n_ph = sum(
        n_tot * p_key * virtual_clicks[omega] for omega in outcomes
    )

    counts = MdiObservedCounts(
        n_tag=n_tag,
        n_sifted=n_sifted,
        n_bit_errors=n_bit_errors,
        n_announced=n_announced,
        n_test=n_test,
    )
    error_rate = n_bit_errors / n_sifted if n_sifted > 0 else 0.0
    return ExpectedCounts(counts, n_ph, error_rate, detected, tagged)


def expected_counts(protocol: str, config, tagging, params: ChannelParams,
                    n_tot: float) -> ExpectedCounts:
    """Exact per-count expectations for a block of n_tot emitted rounds."""
    if n_tot < 0 or not math.isfinite(n_tot):
        raise DomainError("n_tot must be non-negative and finite")
    if protocol == "pm":
        return _pm_expected(config, tagging, params, n_tot)
    if protocol == "mdi":
        return _mdi_expected(config, tagging, params, n_tot)
    raise DomainError(f"unknown protocol {protocol!r}")


def _require_integer_rounds(n_tot) -> int:
    if n_tot < 0 or int(n_tot) != n_tot:
        raise DomainError("n_tot must be a non-negative integer for sampling")
    return int(n_tot)


def _draw(rng: np.random.Generator, n_tot: int, cells: list) -> np.ndarray:
    probs = np.array([p for p, _ in cells], dtype=float)
    if np.any(probs < -1e-12):
        raise DomainError("negative cell probability")
    probs = np.clip(probs, 0.0, None)
    remainder = 1.0 - probs.sum()
    if remainder < -1e-9:
        raise DomainError("cell probabilities exceed 1")
    probs = np.append(probs, max(remainder, 0.0))
    return rng.multinomial(n_tot, probs / probs.sum())


def _pm_cells(config, tagging: PmTagging, params: ChannelParams):
    """Terminal per-round cells: (probability, action) pairs.

    Tags for a detected test-basis round only matter for the family
    matching the opposite bit, so each outcome draws one tag family;
    marginalizing the unread family preserves every reported count.
    """
    states = pm_signal_states(config.delta)
    p_state = (config.p_0z, config.p_1z, config.p_0x)
    cells = []
    for j, state in enumerate(states):
        for outcome in (0, 1):
            p_z_out = p_state[j] * config.p_zb * pm_outcome_probability(
                state, "Z", outcome, params
            )
            counted = j < 2
            cells.append((p_z_out, ("z", j, outcome, counted)))
            p_x_out = p_state[j] * config.p_xb * pm_outcome_probability(
                state, "X", outcome, params
            )
            alpha = 1 - outcome
            p_pos = tagging.p_tag_given_state.get((j, alpha, "pos"), 0.0)
            p_neg = tagging.p_tag_given_state.get((j, alpha, "neg"), 0.0)
            for tag, weight in (("pos", p_pos), ("neg", p_neg),
                                (None, 1.0 - p_pos - p_neg)):
                cells.append((p_x_out * weight, ("x", j, outcome, tag)))
    return cells


def _sample_pm(config, tagging: PmTagging, params: ChannelParams, n_tot: int,
               rng: np.random.Generator) -> PmObservedCounts:
    cells = _pm_cells(config, tagging, params)
    draws = _draw(rng, n_tot, cells)
    n_tag: dict = {}
    n_x: dict = {}
    n_sifted = 0
    n_bit_errors = 0
    n_detected_total = 0
    for count, (_, action) in zip(draws, cells):
        count = int(count)
        kind = action[0]
        if kind == "z":
            _, j, outcome, counted = action
            if counted:
                n_sifted += count
                n_detected_total += count
                if outcome != j:
                    n_bit_errors += count
        else:
            _, j, outcome, tag = action
            n_detected_total += count
            key = (j, outcome)
            n_x[key] = n_x.get(key, 0) + count
            if tag is not None:
                alpha = 1 - outcome
                tag_key = (alpha, tag)
                n_tag[tag_key] = n_tag.get(tag_key, 0) + count
    return PmObservedCounts(
        n_tag=n_tag,
        n_sifted=n_sifted,
        n_bit_errors=n_bit_errors,
        n_detected_total=n_detected_total,
        n_x_outcomes=n_x,
    )


def _sample_mdi(config, tagging: MdiTagging, params: ChannelParams, n_tot: int,
                rng: np.random.Generator) -> MdiObservedCounts:
    alice, bob = mdi_signal_states(config.delta)
    p_a, p_b = _mdi_pair_probs(config)
    outcomes = tuple(tagging.decompositions)
    cells = []
    for j in range(3):
        for s in range(3):
            p_pair = p_a[j] * p_b[s]
            for omega in outcomes:
                q = mdi_click_probability(alice[j].theta, bob[s].theta, params, omega)
                p_keep = config.p_k_given_z if (j < 2 and s < 2) else 0.0
                cells.append((p_pair * q * p_keep, ("key", omega, j, s)))
                p_test = p_pair * q * (1.0 - p_keep)
                p_pos = tagging.p_tag_given_state.get((j, s, omega, "pos"), 0.0)
                p_neg = tagging.p_tag_given_state.get((j, s, omega, "neg"), 0.0)
                for tag, weight in (("pos", p_pos), ("neg", p_neg),
                                    (None, 1.0 - p_pos - p_neg)):
                    cells.append((p_test * weight, ("test", omega, j, s, tag)))
    draws = _draw(rng, n_tot, cells)
    n_tag: dict = {}
    n_announced: dict = {}
    n_test: dict = {}
    n_sifted = 0
    n_bit_errors = 0
    for count, (_, action) in zip(draws, cells):
        count = int(count)
        if action[0] == "key":
            _, omega, j, s = action
            n_announced[omega] = n_announced.get(omega, 0) + count
            n_sifted += count
            if j == s:
                n_bit_errors += count
        else:
            _, omega, j, s, tag = action
            n_announced[omega] = n_announced.get(omega, 0) + count
            key = (omega, j, s)
            n_test[key] = n_test.get(key, 0) + count
            if tag is not None:
                tag_key = (omega, tag)
                n_tag[tag_key] = n_tag.get(tag_key, 0) + count
    return MdiObservedCounts(
        n_tag=n_tag,
        n_sifted=n_sifted,
        n_bit_errors=n_bit_errors,
        n_announced=n_announced,
        n_test=n_test,
    )


def sample_counts(protocol: str, config, tagging, params: ChannelParams,
                  n_tot, seed) -> object:
    """One Monte Carlo draw of a full protocol block, deterministic per seed."""
    n = _require_integer_rounds(n_tot)
    rng = np.random.default_rng(seed)
    if protocol == "pm":
        return _sample_pm(config, tagging, params, n, rng)
    if protocol == "mdi":
        return _sample_mdi(config, tagging, params, n, rng)
    raise DomainError(f"unknown protocol {protocol!r}")


def pm_virtual_cells(config, tagging: PmTagging, params: ChannelParams):
    """Cells of the source-equivalent protocol that exposes phase errors.

    Key rounds are replaced by their entanglement-based equivalent: the
    sender keeps an ancilla, measures it in the test basis, and thereby
    emits one of the two virtual states; a detected opposite-bit test
    outcome on such a round is a phase error.  Test rounds tag exactly as
    in the real protocol.  Rounds pairing the test state with a key-basis
    measurement are never used and occupy a single inert cell.
    """
    states = pm_signal_states(config.delta)
    v0, v1, w0, w1 = virtual_states_pm(states[0], states[1])
    p_state = (config.p_0z, config.p_1z, config.p_0x)
    p_za = config.p_0z + config.p_1z
    cells = []
    for alpha, vir in ((0, v0), (1, v1)):
        weight = (w0, w1)[alpha]
        p_round = p_za * config.p_zb * weight
        for outcome in (0, 1):
            p = p_round * pm_outcome_probability(vir, "X", outcome, params)
            cells.append((p, ("vir", alpha, outcome)))
    for j, state in enumerate(states):
        p_round = p_state[j] * config.p_xb
        for outcome in (0, 1):
            p_out = p_round * pm_outcome_probability(state, "X", outcome, params)
            alpha = 1 - outcome
            p_pos = tagging.p_tag_given_state.get((j, alpha, "pos"), 0.0)
            p_neg = tagging.p_tag_given_state.get((j, alpha, "neg"), 0.0)
            for tag, weight in (("pos", p_pos), ("neg", p_neg),
                                (None, 1.0 - p_pos - p_neg)):
                cells.append((p_out * weight, ("x", j, outcome, tag)))
    return cells


def sample_pm_virtual_counts(config, tagging: PmTagging, params: ChannelParams,
                             n_tot, seed) -> tuple:
    """Joint draw of the phase-error count and the tagged counts.

    Returns (n_phase_errors, counts); counts.n_sifted holds the detected
    key-round total and n_bit_errors is not simulated (0).
    """
    n = _require_integer_rounds(n_tot)
    rng = np.random.default_rng(seed)
    cells = pm_virtual_cells(config, tagging, params)
    draws = _draw(rng, n, cells)
    n_ph = 0
    n_tag: dict = {}
    n_x: dict = {}
    n_sifted = 0
    n_detected_total = 0
    for count, (_, action) in zip(draws, cells):
        count = int(count)
        if action[0] == "vir":
            _, alpha, outcome = action
            n_sifted += count
            n_detected_total += count
            if outcome == 1 - alpha:
                n_ph += count
        else:
            _, j, outcome, tag = action
            n_detected_total += count
            key = (j, outcome)
            n_x[key] = n_x.get(key, 0) + count
            if tag is not None:
                n_tag[(1 - outcome, tag)] = n_tag.get((1 - outcome, tag), 0) + count
    counts = PmObservedCounts(
        n_tag=n_tag,
        n_sifted=n_sifted,
        n_bit_errors=0,
        n_detected_total=n_detected_total,
        n_x_outcomes=n_x,
    )
    return n_ph, counts
