"""Measurement-device-independent estimation: pair tagging and the phase-error bound.

Both parties emit three-state ensembles toward an untrusted middle node
that announces a Bell outcome.  Announced test rounds (any round except a
kept key round) are tagged per state pair so the tagged populations match
the positive and negative parts of the joint phase-error operator's
signed decomposition, one decomposition per announcement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .errors import DomainError, EmptyTagSet
from .qubit_algebra import (
    QubitState,
    bloch_from_state,
    decompose,
    mdi_joint_coefficients,
    virtual_states_pm,
)
from .sampling_bounds import g_lower, g_upper

__all__ = [
    "MdiTagging",
    "MdiObservedCounts",
    "mdi_signal_states",
    "mdi_decompositions",
    "mdi_tagging",
    "mdi_phase_error_bound",
]

TAGS = ("pos", "neg")


def mdi_signal_states(delta: float):
    """Both parties' emitted triples; the second party mirrors the test angle.

    Angles are (0, kappa*pi/2, +kappa*pi/4) and (0, kappa*pi/2, -kappa*pi/4)
    with kappa = 1 + delta/pi.
    """
    kappa = 1.0 + delta / math.pi
    alice = (
        QubitState.planar(0.0),
        QubitState.planar(kappa * math.pi / 2.0),
        QubitState.planar(kappa * math.pi / 4.0),
    )
    bob = (
        QubitState.planar(0.0),
        QubitState.planar(kappa * math.pi / 2.0),
        QubitState.planar(-kappa * math.pi / 4.0),
    )
    return alice, bob


def mdi_decompositions(delta: float, bell_outcomes=("psi_minus",)):
    """Joint signed decompositions of the phase-error operator per announcement.

    Returns {bell_outcome: (PosNegDecomposition over state pairs,
    p_phase_error_given_key)}.
    """
    alice, bob = mdi_signal_states(delta)
    out = {}
    basis_a = [bloch_from_state(s) for s in alice]
    basis_b = [bloch_from_state(s) for s in bob]
    va0, va1, wa0, wa1 = virtual_states_pm(alice[0], alice[1])
    vb0, vb1, wb0, wb1 = virtual_states_pm(bob[0], bob[1])
    decs_a = (decompose(va0, basis_a), decompose(va1, basis_a))
    decs_b = (decompose(vb0, basis_b), decompose(vb1, basis_b))
    for omega in bell_outcomes:
        out[omega] = mdi_joint_coefficients(
            decs_a, decs_b, (wa0, wa1), (wb0, wb1), omega
        )
    return out


@dataclass(frozen=True)
class MdiObservedCounts:
    """Observed (or expected) event counts of one protocol run.

    n_tag maps (announcement, tag) to tagged announced-test-round counts,
    n_announced maps each announcement to its total announced rounds, and
    n_test maps (announcement, alice state, bob state) to announced test
    rounds per emitted pair; the latter two feed the martingale-route
    estimators only.  Real values are allowed so nominal expected counts
    can flow through unchanged.
    """

    n_tag: Mapping
    n_sifted: float
    n_bit_errors: float
    n_announced: Mapping = field(default_factory=dict)
    n_test: Mapping = field(default_factory=dict)

    def __post_init__(self):
        values = [self.n_sifted, self.n_bit_errors]
        for mapping in (self.n_tag, self.n_announced, self.n_test):
            values += list(mapping.values())
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise DomainError("counts must be non-negative and finite")
        if self.n_bit_errors > self.n_sifted:
            raise DomainError("n_bit_errors cannot exceed n_sifted")


@dataclass(frozen=True)
class MdiTagging:
    """Pair-tagging probabilities and the derived sampling ratios.

    p_tag_given_test maps (announcement, tag) to the tag probability
    conditioned on the round being a test round; p_tag holds the same
    quantity on the absolute per-emitted-round scale (times p_test),
    which is the scale the sampling ratios tilde_ph and
    tilde_pos_given_neg compare against the absolute phase-error
    probability p_phase[announcement].  p_tag_given_state maps
    (alice state, bob state, announcement, tag) to the conditional
    tagging probability applied to an announced test round of that pair,
    and p_test_given_pair maps (alice state, bob state) to the chance
    that pair's round is released for testing.
    """

    p_tag: Mapping
    p_tag_given_test: Mapping
    p_tag_given_state: Mapping
    p_test_given_pair: Mapping
    tilde_ph: Mapping
    tilde_pos_given_neg: Mapping
    p_phase: Mapping
    p_test: float
    decompositions: Mapping


def _pair_probability(config, j: int, s: int) -> float:
    p_a = (config.p_z_alice / 2.0, config.p_z_alice / 2.0, 1.0 - config.p_z_alice)
    p_b = (config.p_z_bob / 2.0, config.p_z_bob / 2.0, 1.0 - config.p_z_bob)
    return p_a[j] * p_b[s]


def _test_given_pair(config, j: int, s: int) -> float:
    if j < 2 and s < 2:
        return 1.0 - config.p_k_given_z
    return 1.0


def mdi_tagging(config, decompositions) -> MdiTagging:
    """Assemble pair-tag probabilities for each announcement.

    Args:
        config: protocol configuration carrying p_z_alice, p_z_bob and
            p_k_given_z (the chance a both-key-basis announced round is
            kept for key rather than released for testing).
        decompositions: {announcement: (PosNegDecomposition over pairs,
            p_phase_error_given_key)}.

    Raises:
        DomainError: parameters outside their domains, or p_k_given_z so
            large no announced key-basis test rounds remain while a tag
            set needs them.
        EmptyTagSet: a decomposition reports weight on an empty pair set.
    """
    for name in ("p_z_alice", "p_z_bob"):
        value = getattr(config, name)
        if not 0.0 < value < 1.0:
            raise DomainError(f"{name} must be a probability in the open unit interval")
    if not 0.0 < config.p_k_given_z <= 1.0:
        raise DomainError("p_k_given_z must lie in (0, 1]")

    p_key = config.p_z_alice * config.p_z_bob * config.p_k_given_z
    p_test = 1.0 - p_key
    if p_test <= 0.0:
        raise DomainError("every round is a key round; no test rounds remain")

    p_tag: dict = {}
    p_tag_given_test: dict = {}
    p_cond: dict = {}
    tilde_ph: dict = {}
    tilde_pn: dict = {}
    p_phase: dict = {}
    p_test_given_pair = {
        (j, s): _test_given_pair(config, j, s) for j in range(3) for s in range(3)
    }
    for omega, (dec, p_ph_given_key) in decompositions.items():
        sets = {"pos": dec.s_pos, "neg": dec.s_neg}
        totals = {"pos": dec.c_pos, "neg": dec.c_neg}
        for tag in TAGS:
            members = sets[tag]
            if not members:
                if totals[tag] > 1e-10:
                    raise EmptyTagSet(f"tag ({omega}, {tag}) has weight but no pairs")
                p_tag[(omega, tag)] = 0.0
                p_tag_given_test[(omega, tag)] = 0.0
                continue
            p_t_given_test = min(
                _pair_probability(config, j, s)
                * _test_given_pair(config, j, s)
                / (p_test * dec.p_given_t[((j, s), tag)])
                for (j, s) in members
            )
            p_tag[(omega, tag)] = p_test * p_t_given_test
            p_tag_given_test[(omega, tag)] = p_t_given_test
            for (j, s) in members:
                pair_test = _pair_probability(config, j, s) * _test_given_pair(config, j, s)
                if pair_test == 0.0:
                    p_cond[(j, s, omega, tag)] = 0.0
                    continue
                cond = (
                    p_test
                    * p_t_given_test
                    * dec.p_given_t[((j, s), tag)]
                    / pair_test
                )
                if cond > 1.0 + 1e-12:
                    raise DomainError("tag conditional escaped the unit interval")
                p_cond[(j, s, omega, tag)] = min(cond, 1.0)
        p_ph = p_key * p_ph_given_key
        p_phase[omega] = p_ph
        p_pos = p_tag[(omega, "pos")]
        if p_pos == 0.0:
            tilde_ph[omega] = 1.0
            tilde_pn[omega] = 0.0
            continue
        tilde_ph[omega] = p_ph / (p_ph + p_pos / dec.c_pos)
        p_neg = p_tag.get((omega, "neg"), 0.0)
        if dec.c_neg <= 1e-10 or p_neg == 0.0:
            tilde_pn[omega] = 0.0
        else:
            tilde_pn[omega] = 1.0 - p_neg / (p_neg + p_pos * dec.c_neg / dec.c_pos)
    return MdiTagging(
        p_tag=p_tag,
        p_tag_given_test=p_tag_given_test,
        p_tag_given_state=p_cond,
        p_test_given_pair=p_test_given_pair,
        tilde_ph=tilde_ph,
        tilde_pos_given_neg=tilde_pn,
        p_phase=p_phase,
        p_test=p_test,
        decompositions=dict(decompositions),
    )


def mdi_phase_error_bound(counts: MdiObservedCounts, tagging: MdiTagging,
                          eps_per_announcement: Mapping,
                          suppress_deviations: bool = False) -> float:
    """Random-sampling upper bound on the total phase-error count.

    Each announcement contributes an independent nested bound whose
    failure budget eps_per_announcement[announcement] splits evenly over
    its two bound applications; the caller sums budgets for the total.
    With suppress_deviations every application runs at failure
    probability 1, collapsing each bound to its exact expectation ratio
    (asymptotic evaluation on expected counts).
    """
    total = 0.0
    for omega in tagging.decompositions:
        eps = eps_per_announcement[omega]
        if not 0.0 < eps <= 1.0:
            raise DomainError("eps must lie in (0, 1]")
        if not tagging.tilde_ph[omega] < 1.0:
            raise DomainError(
                f"announcement {omega!r} has no tagged sample; bound undefined"
            )
        eps_app = 1.0 if suppress_deviations else eps / 2.0
        n_pos = counts.n_tag.get((omega, "pos"), 0.0)
        n_neg = counts.n_tag.get((omega, "neg"), 0.0)
        p_tilde_pn = tagging.tilde_pos_given_neg[omega]
        inner = n_pos
        if p_tilde_pn > 0.0:
            inner -= g_lower(n_neg, p_tilde_pn, eps_app)
        inner = max(inner, 0.0)
        total += g_upper(inner, tagging.tilde_ph[omega], eps_app)
    return total
