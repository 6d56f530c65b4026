"""Secret-key length, failure-probability budget, and parameter search.

The pipeline for one operating point is: decompose the virtual states
over the emitted ones, derive tagging probabilities, push the nominal
channel through to expected counts, upper-bound the phase-error count by
the chosen estimation route, and convert to a key length.  Everything is
deterministic; the optimizer is a nested grid so re-runs are
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .channel_sim import ChannelParams, expected_counts
from .concentration import phase_errors_azuma, phase_errors_kato
from .errors import DomainError
from .mdi_estimator import mdi_decompositions, mdi_phase_error_bound, mdi_tagging
from .pm_estimator import pm_decompositions, pm_phase_error_bound, pm_tagging
from .qubit_algebra import PHASE_ERROR_PAIRS

__all__ = [
    "ProtocolConfig",
    "KeyRateResult",
    "EpsilonBudget",
    "METHODS",
    "binary_entropy",
    "epsilon_budget",
    "secret_key_length",
    "compute_rate",
    "optimize_rate",
    "sweep_rates",
]

METHODS = ("random-sampling", "azuma", "kato")

# hard caps keeping every grid point strictly inside the probability simplex
_PROB_FLOOR = 0.02
_PROB_CEIL = 0.98


def binary_entropy(x: float) -> float:
    """Shannon entropy of a bit, in bits; h(0) = h(1) = 0."""
    if not 0.0 <= x <= 1.0:
        raise DomainError("binary entropy argument must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


class EpsilonBudget(NamedTuple):
    estimation: float
    privacy: float
    secrecy: float


def epsilon_budget(eps_s: float, eps_c: float) -> EpsilonBudget:
    """Split the secrecy target evenly between estimation and amplification.

    estimation = privacy = eps_s**2 / 4, so that
    sqrt(2) * sqrt(estimation + privacy) recovers eps_s exactly; secrecy
    is the total failure probability eps_c + eps_s.
    """
    for name, value in (("eps_s", eps_s), ("eps_c", eps_c)):
        if not 0.0 < value < 1.0:
            raise DomainError(f"{name} must lie in (0, 1)")
    quarter = eps_s * eps_s / 4.0
    return EpsilonBudget(quarter, quarter, eps_c + eps_s)


def secret_key_length(n_s: float, n_ph_upper: float, lambda_ec: float,
                      eps_c: float, xi: float) -> float:
    """Extractable key length; never negative.

    The phase-error ratio is clamped to [0, 1/2]: beyond 1/2 the entropy
    term already certifies nothing.
    """
    if n_s < 0 or n_ph_upper < 0:
        raise DomainError("counts must be non-negative")
    if n_s == 0:
        return 0.0
    ratio = min(max(n_ph_upper / n_s, 0.0), 0.5)
    length = (
        n_s * (1.0 - binary_entropy(ratio))
        - lambda_ec
        - math.log2(1.0 / eps_c)
        - math.log2(1.0 / xi)
    )
    return max(length, 0.0)


@dataclass(frozen=True)
class ProtocolConfig:
    """Operating point of one protocol run.

    Point-to-point runs use the five selection probabilities
    (p_0z, p_1z, p_0x, p_zb, p_xb); relay runs use the per-party key
    basis probabilities and the keep probability p_k_given_z, plus the
    announced Bell set.  Unused fields stay None.
    """

    protocol: str
    n_tot: float
    delta: float = 0.0
    eps_c: float = 1e-8
    eps_s: float = 1e-8
    f: float = 1.16
    p_0z: float = None
    p_1z: float = None
    p_0x: float = None
    p_zb: float = None
    p_xb: float = None
    p_z_alice: float = None
    p_z_bob: float = None
    p_k_given_z: float = None
    bell_outcomes: tuple = ("psi_minus",)

    def __post_init__(self):
        if self.protocol not in ("pm", "mdi"):
            raise DomainError(f"unknown protocol {self.protocol!r}")
        if not (math.isfinite(self.n_tot) and self.n_tot >= 1):
            raise DomainError("n_tot must be at least 1")
        for name in ("eps_c", "eps_s"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise DomainError(f"{name} must lie in (0, 1)")
        if not self.f >= 0.0:
            raise DomainError("f must be non-negative")
        if self.protocol == "pm":
            self._check_pm()
        else:
            self._check_mdi()

    def _check_pm(self):
        fields = ("p_0z", "p_1z", "p_0x", "p_zb", "p_xb")
        for name in fields:
            value = getattr(self, name)
            if value is None:
                raise DomainError(f"{name} is required for the pm protocol")
            if not 0.0 < value < 1.0:
                raise DomainError(f"{name} must be a probability in the open unit interval")
        if abs(self.p_0z + self.p_1z + self.p_0x - 1.0) > 1e-9:
            raise DomainError("p_0z + p_1z + p_0x must sum to 1")
        if abs(self.p_zb + self.p_xb - 1.0) > 1e-9:
            raise DomainError("p_zb + p_xb must sum to 1")

    def _check_mdi(self):
        for name in ("p_z_alice", "p_z_bob"):
            value = getattr(self, name)
            if value is None:
                raise DomainError(f"{name} is required for the mdi protocol")
            if not 0.0 < value < 1.0:
                raise DomainError(f"{name} must be a probability in the open unit interval")
        if self.p_k_given_z is None:
            raise DomainError("p_k_given_z is required for the mdi protocol")
        if not 0.0 < self.p_k_given_z <= 1.0:
            raise DomainError("p_k_given_z must lie in (0, 1]")
        if not self.bell_outcomes:
            raise DomainError("at least one announced Bell outcome is required")
        for outcome in self.bell_outcomes:
            if outcome not in PHASE_ERROR_PAIRS:
                raise DomainError(f"unknown Bell outcome {outcome!r}")

    @classmethod
    def pm(cls, n_tot: float, p_za: float = 0.5, p_zb: float = 0.5,
           **kwargs) -> "ProtocolConfig":
        """Symmetric point-to-point config from the two key-basis rates."""
        return cls(
            protocol="pm",
            n_tot=n_tot,
            p_0z=p_za / 2.0,
            p_1z=p_za / 2.0,
            p_0x=1.0 - p_za,
            p_zb=p_zb,
            p_xb=1.0 - p_zb,
            **kwargs,
        )

    @classmethod
    def mdi(cls, n_tot: float, p_z_alice: float = 0.5, p_z_bob: float = 0.5,
            p_k_given_z: float = 0.5, **kwargs) -> "ProtocolConfig":
        return cls(
            protocol="mdi",
            n_tot=n_tot,
            p_z_alice=p_z_alice,
            p_z_bob=p_z_bob,
            p_k_given_z=p_k_given_z,
            **kwargs,
        )

    def probabilities(self) -> dict:
        """The tunable selection probabilities, for result echoing."""
        if self.protocol == "pm":
            return {
                "p_0z": self.p_0z,
                "p_1z": self.p_1z,
                "p_0x": self.p_0x,
                "p_zb": self.p_zb,
                "p_xb": self.p_xb,
            }
        return {
            "p_z_alice": self.p_z_alice,
            "p_z_bob": self.p_z_bob,
            "p_k_given_z": self.p_k_given_z,
        }


@dataclass(frozen=True)
class KeyRateResult:
    key_length: float
    rate: float
    n_ph_upper: float
    n_sifted: float
    lambda_ec: float
    error_rate: float
    method: str
    probabilities: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise DomainError("rate escaped [0, 1]")
        if self.key_length > self.n_sifted + 1e-6:
            raise DomainError("key length cannot exceed the sifted key")


def _build_decompositions(config: ProtocolConfig):
    if config.protocol == "pm":
        decs, weights = pm_decompositions(config.delta)
        return decs, weights
    return mdi_decompositions(config.delta, config.bell_outcomes)


def _bound_phase_errors(config: ProtocolConfig, tagging, bundles, counts,
                        method: str, eps_est: float,
                        suppress_deviations: bool) -> float:
    eps_cap = min(eps_est, 1.0) if suppress_deviations else eps_est
    if config.protocol == "pm":
        decs, weights = bundles
        pairs = ((decs[0], weights[0]), (decs[1], weights[1]))
        if method == "random-sampling":
            return pm_phase_error_bound(counts, tagging, eps_cap, suppress_deviations)
        if method == "azuma":
            eps_a = 1.0 if suppress_deviations else eps_est / 8.0
            bound, _ = phase_errors_azuma("pm", counts, pairs, config, eps_a)
            return bound
        eps_k = 1.0 if suppress_deviations else eps_est / 8.0
        bound, _ = phase_errors_kato(
            "pm", counts, pairs, config, counts.n_x_outcomes, eps_k
        )
        return bound
    n_outcomes = len(config.bell_outcomes)
    if method == "random-sampling":
        per_omega = {
            omega: eps_cap / n_outcomes for omega in config.bell_outcomes
        }
        return mdi_phase_error_bound(counts, tagging, per_omega, suppress_deviations)
    if method == "azuma":
        eps_a = 1.0 if suppress_deviations else eps_est / (9.0 * n_outcomes)
        bound, _ = phase_errors_azuma("mdi", counts, bundles, config, eps_a)
        return bound
    eps_k = 1.0 if suppress_deviations else eps_est / (9.0 * n_outcomes)
    bound, _ = phase_errors_kato(
        "mdi", counts, bundles, config, counts.n_test, eps_k
    )
    return bound


def _rate_from_parts(config: ProtocolConfig, tagging, bundles, channel: ChannelParams,
                     method: str, suppress_deviations: bool) -> KeyRateResult:
    expected = expected_counts(
        config.protocol, config, tagging, channel, config.n_tot
    )
    budget = epsilon_budget(config.eps_s, config.eps_c)
    n_ph = _bound_phase_errors(
        config, tagging, bundles, expected.counts, method, budget.estimation,
        suppress_deviations,
    )
    n_sifted = expected.counts.n_sifted
    lambda_ec = n_sifted * config.f * binary_entropy(min(expected.error_rate, 1.0))
    length = secret_key_length(
        n_sifted, n_ph, lambda_ec, config.eps_c, budget.privacy
    )
    return KeyRateResult(
        key_length=length,
        rate=length / config.n_tot,
        n_ph_upper=n_ph,
        n_sifted=n_sifted,
        lambda_ec=lambda_ec,
        error_rate=expected.error_rate,
        method=method,
        probabilities=config.probabilities(),
    )


def compute_rate(config: ProtocolConfig, channel: ChannelParams, method: str,
                 suppress_deviations: bool = False) -> KeyRateResult:
    """Key rate of one fully specified operating point.

    With suppress_deviations every statistical deviation term runs at
    failure probability 1, evaluating the asymptotic rate on expected
    counts (the finite log terms of the key-length formula remain).
    """
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}")
    bundles = _build_decompositions(config)
    if config.protocol == "pm":
        decs, weights = bundles
        tagging = pm_tagging(config, decs, weights)
    else:
        tagging = mdi_tagging(config, bundles)
    return _rate_from_parts(config, tagging, bundles, channel, method,
                            suppress_deviations)


def _grid(lo: float, hi: float, points: int) -> np.ndarray:
    return np.linspace(lo, hi, points)


def optimize_rate(config: ProtocolConfig, channel: ChannelParams, method: str,
                  suppress_deviations: bool = False, points: int = 20,
                  refinements: int = 2) -> KeyRateResult:
    """Best key rate over the tunable selection probabilities.

    Deterministic nested grid: a coarse points-per-dimension grid over
    the probability box, then the stated number of refinement passes
    re-gridding one coarse step around the incumbent.  Grid points whose
    tagging degenerates (no estimation possible) are skipped; if nothing
    yields a positive key the best zero-rate point is returned.
    """
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}")
    bundles = _build_decompositions(config)

    if config.protocol == "pm":
        names = ("p_za", "p_zb")

        def make(vector):
            return ProtocolConfig.pm(
                config.n_tot,
                p_za=vector[0],
                p_zb=vector[1],
                delta=config.delta,
                eps_c=config.eps_c,
                eps_s=config.eps_s,
                f=config.f,
            )
    else:
        names = ("p_z_alice", "p_z_bob", "p_k_given_z")

        def make(vector):
            return ProtocolConfig.mdi(
                config.n_tot,
                p_z_alice=vector[0],
                p_z_bob=vector[1],
                p_k_given_z=vector[2],
                delta=config.delta,
                eps_c=config.eps_c,
                eps_s=config.eps_s,
                f=config.f,
                bell_outcomes=config.bell_outcomes,
            )

    def evaluate(vector):
        candidate = make(vector)
        try:
            if candidate.protocol == "pm":
                decs, weights = bundles
                tagging = pm_tagging(candidate, decs, weights)
            else:
                tagging = mdi_tagging(candidate, bundles)
            return _rate_from_parts(
                candidate, tagging, bundles, channel, method, suppress_deviations
            )
        except DomainError:
            return None

    dims = len(names)
    bounds = [(_PROB_FLOOR, _PROB_CEIL)] * dims
    best = None
    best_vector = None
    for _ in range(refinements + 1):
        axes = [_grid(lo, hi, points) for lo, hi in bounds]
        for flat_index in np.ndindex(*(points,) * dims):
            vector = tuple(float(axes[d][flat_index[d]]) for d in range(dims))
            result = evaluate(vector)
            if result is None:
                continue
            if best is None or result.key_length > best.key_length:
                best = result
                best_vector = vector
        if best_vector is None:
            break
        new_bounds = []
        for d, (lo, hi) in enumerate(bounds):
            step = (hi - lo) / (points - 1)
            center = best_vector[d]
            new_bounds.append(
                (max(center - step, _PROB_FLOOR), min(center + step, _PROB_CEIL))
            )
        bounds = new_bounds
    if best is None:
        zeroed = make((0.5,) * dims)
        return KeyRateResult(
            key_length=0.0,
            rate=0.0,
            n_ph_upper=0.0,
            n_sifted=0.0,
            lambda_ec=0.0,
            error_rate=0.0,
            method=method,
            probabilities=zeroed.probabilities(),
        )
    return best


def sweep_rates(config: ProtocolConfig, losses, method: str,
                dark_count_prob: float = 0.0, misalignment: float = 0.0,
                optimize: bool = True, jobs: int = 1) -> list:
    """Key-rate results over a list of channel losses, in input order.

    Each loss point is independent; with jobs > 1 the points are farmed
    out to worker processes and merged back in order.
    """
    tasks = [
        (config, float(loss), method, dark_count_prob, misalignment, optimize)
        for loss in losses
    ]
    if jobs <= 1 or len(tasks) <= 1:
        return [_sweep_point(task) for task in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sweep_point, tasks))


def _sweep_point(task) -> KeyRateResult:
    config, loss_db, method, dark_count_prob, misalignment, optimize = task
    if config.protocol == "pm":
        channel = ChannelParams.pm_from_loss(loss_db, dark_count_prob, misalignment)
    else:
        channel = ChannelParams.mdi_from_loss(loss_db, dark_count_prob)
    if optimize:
        return optimize_rate(config, channel, method)
    return compute_rate(config, channel, method)
