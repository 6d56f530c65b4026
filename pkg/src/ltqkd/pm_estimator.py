"""Prepare-and-measure estimation: tagging and the phase-error bound.

The sender emits three pure states (two key states and one test state).
Detected test-basis rounds are probabilistically tagged so that the
averaged tagged emissions equal the positive and negative parts of each
virtual state's signed decomposition; counting tags then turns phase-error
estimation into a pair of nested random-sampling bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .errors import DomainError, EmptyTagSet
from .qubit_algebra import (
    PosNegDecomposition,
    QubitState,
    bloch_from_state,
    decompose,
    virtual_states_pm,
)
from .sampling_bounds import g_lower, g_upper

__all__ = [
    "PmTagging",
    "PmObservedCounts",
    "pm_signal_states",
    "pm_decompositions",
    "pm_tagging",
    "pm_phase_error_bound",
]

TAGS = ("pos", "neg")


def pm_signal_states(delta: float) -> tuple[QubitState, QubitState, QubitState]:
    """Three emitted states at angles (0, kappa*pi/2, kappa*pi/4), kappa = 1 + delta/pi."""
    kappa = 1.0 + delta / math.pi
    return (
        QubitState.planar(0.0),
        QubitState.planar(kappa * math.pi / 2.0),
        QubitState.planar(kappa * math.pi / 4.0),
    )


def pm_decompositions(delta: float):
    """Signed decompositions of both virtual states onto the emitted triple.

    Returns ((dec_vir0, dec_vir1), (weight_vir0, weight_vir1)) where the
    weights are the ancilla-outcome probabilities conditioned on a key
    round, before any basis-selection scaling.
    """
    states = pm_signal_states(delta)
    basis = [bloch_from_state(s) for s in states]
    v0, v1, w0, w1 = virtual_states_pm(states[0], states[1])
    return (decompose(v0, basis), decompose(v1, basis)), (w0, w1)


def _check_prob(name: str, value: float, *, closed_top: bool = False) -> None:
    top_ok = value <= 1.0 if closed_top else value < 1.0
    if not (0.0 < value and top_ok):
        raise DomainError(f"{name} must be a probability in the open unit interval")


@dataclass(frozen=True)
class PmObservedCounts:
    """Observed (or expected) event counts of one protocol run.

    n_tag maps (ancilla outcome alpha, tag) to the number of detected
    tagged events whose test-basis outcome was the opposite bit (the only
    combination the estimator uses).  n_x_outcomes holds the per-state
    detected test-basis outcome counts, and n_detected_total the detected
    rounds excluding the unused test-state/key-basis combination; both
    feed the martingale-route estimators only.  Real values are allowed
    so nominal expected counts can flow through unchanged.
    """

    n_tag: Mapping
    n_sifted: float
    n_bit_errors: float
    n_detected_total: float = 0.0
    n_x_outcomes: Mapping = field(default_factory=dict)

    def __post_init__(self):
        values = [self.n_sifted, self.n_bit_errors, self.n_detected_total]
        values += list(self.n_tag.values()) + list(self.n_x_outcomes.values())
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise DomainError("counts must be non-negative and finite")
        if self.n_bit_errors > self.n_sifted:
            raise DomainError("n_bit_errors cannot exceed n_sifted")


@dataclass(frozen=True)
class PmTagging:
    """Tagging probabilities and the sampling ratios derived from them.

    p_tag holds the absolute per-round tag probabilities p_t_alpha (the
    largest values compatible with every conditional staying below 1);
    p_tag_given_state maps (state j, alpha, tag) to the conditional
    probability of assigning that tag to a detected test-basis round.
    tilde_vir / tilde_pos_given_neg are the random-sampling ratios:
    tilde_vir[alpha] is the chance a draw from the combined
    virtual-or-pos-tagged population is virtual, and tilde_pos_given_neg
    the analogous ratio correcting for the negative part.
    """

    p_tag: Mapping
    p_tag_given_state: Mapping
    tilde_vir: tuple
    tilde_pos_given_neg: tuple
    vir_weights: tuple
    decompositions: tuple


def pm_tagging(config, decompositions, vir_weights) -> PmTagging:
    """Assemble tag probabilities per the signed decompositions.

    Args:
        config: protocol configuration carrying p_0z, p_1z, p_0x, p_zb,
            p_xb.  The two key-state probabilities must be equal (the
            virtual-state construction assumes an equal-amplitude key
            superposition) and each group must sum to 1.
        decompositions: (vir0, vir1) PosNegDecomposition over state
            indices 0, 1, 2.
        vir_weights: ancilla outcome weights of the two virtual states.

    Raises:
        DomainError: inconsistent probabilities.
        EmptyTagSet: a decomposition reports weight on an empty index set.
    """
    p_state = (config.p_0z, config.p_1z, config.p_0x)
    for name, value in zip(("p_0z", "p_1z", "p_0x", "p_zb", "p_xb"),
                           p_state + (config.p_zb, config.p_xb)):
        _check_prob(name, value)
    if abs(sum(p_state) - 1.0) > 1e-9:
        raise DomainError("p_0z + p_1z + p_0x must sum to 1")
    if abs(config.p_zb + config.p_xb - 1.0) > 1e-9:
        raise DomainError("p_zb + p_xb must sum to 1")
    if abs(config.p_0z - config.p_1z) > 1e-12:
        raise DomainError("p_0z must equal p_1z")
    if abs(vir_weights[0] + vir_weights[1] - 1.0) > 1e-9:
        raise DomainError("virtual weights must sum to 1")

    p_za = config.p_0z + config.p_1z
    p_tag: dict = {}
    p_cond: dict = {}
    tilde_vir = []
    tilde_pn = []
    for alpha, dec in enumerate(decompositions):
        totals = {"pos": dec.c_pos, "neg": dec.c_neg}
        sets = {"pos": dec.s_pos, "neg": dec.s_neg}
        for tag in TAGS:
            members = sets[tag]
            if not members:
                if totals[tag] > 1e-10:
                    raise EmptyTagSet(f"tag ({alpha}, {tag}) has weight but no states")
                p_tag[(alpha, tag)] = 0.0
                continue
            p_t = min(
                p_state[j] * config.p_xb / dec.p_given_t[(j, tag)] for j in members
            )
            p_tag[(alpha, tag)] = p_t
            for j in members:
                cond = p_t * dec.p_given_t[(j, tag)] / (p_state[j] * config.p_xb)
                if cond > 1.0 + 1e-12:
                    raise DomainError("tag conditional escaped the unit interval")
                p_cond[(j, alpha, tag)] = min(cond, 1.0)
        p_vir = p_za * config.p_zb * vir_weights[alpha]
        p_pos = p_tag[(alpha, "pos")]
        tilde_vir.append(p_vir / (p_vir + p_pos / dec.c_pos))
        if dec.c_neg <= 1e-10:
            tilde_pn.append(0.0)
        else:
            p_neg = p_tag[(alpha, "neg")]
            tilde_pn.append(1.0 - p_neg / (p_neg + p_pos * dec.c_neg / dec.c_pos))

    for alpha in (0, 1):
        achieved = [p_cond.get((j, alpha, tag)) for j in range(3) for tag in TAGS]
        if not any(c is not None and abs(c - 1.0) < 1e-12 for c in achieved):
            raise DomainError("no state saturates the tag probability")
    return PmTagging(
        p_tag=p_tag,
        p_tag_given_state=p_cond,
        tilde_vir=tuple(tilde_vir),
        tilde_pos_given_neg=tuple(tilde_pn),
        vir_weights=tuple(vir_weights),
        decompositions=tuple(decompositions),
    )


def pm_phase_error_bound(counts: PmObservedCounts, tagging: PmTagging, eps: float,
                         suppress_deviations: bool = False) -> float:
    """Random-sampling upper bound on the phase-error count.

    Per ancilla outcome, the negative tag count first lower-bounds the
    contamination to subtract from the positive tag count (clamped at 0),
    and the result upper-bounds the virtual count; the total failure
    probability eps is split over the four bound applications.  With
    suppress_deviations every application runs at failure probability 1,
    collapsing each bound to its exact expectation ratio (asymptotic
    evaluation on expected counts).
    """
    if not 0.0 < eps <= 1.0:
        raise DomainError("eps must lie in (0, 1]")
    eps_app = 1.0 if suppress_deviations else eps / 4.0
    total = 0.0
    for alpha in (0, 1):
        n_pos = counts.n_tag.get((alpha, "pos"), 0.0)
        n_neg = counts.n_tag.get((alpha, "neg"), 0.0)
        p_tilde_pn = tagging.tilde_pos_given_neg[alpha]
        inner = n_pos
        if p_tilde_pn > 0.0:
            inner -= g_lower(n_neg, p_tilde_pn, eps_app)
        inner = max(inner, 0.0)
        total += g_upper(inner, tagging.tilde_vir[alpha], eps_app)
    return total
