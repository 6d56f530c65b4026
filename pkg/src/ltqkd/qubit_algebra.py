"""Bloch-vector algebra for the emitted qubit states.

The estimation rests on writing never-sent "virtual" states as signed
linear combinations of the three states actually emitted.  Everything
here is small dense linear algebra: Bloch vectors live in the fixed
component order (S_Z, S_X, S_Y), density operators are 2x2.

States may be planar (angle theta in the ZX great circle) or general
(amplitude/phase triple in the lab Y basis).  Three arbitrary pure
states always span a plane of the Bloch ball; the decomposition runs in
that plane's own frame, so tilted planes need no special casing beyond
finding the frame.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CollinearStates,
    DegenerateStates,
    DomainError,
    PlaneMismatch,
    SingularBasis,
)

__all__ = [
    "QubitState",
    "BlochVector",
    "PosNegDecomposition",
    "PHASE_ERROR_PAIRS",
    "bloch_from_state",
    "virtual_states_pm",
    "choose_phi",
    "find_common_plane",
    "decompose",
    "mdi_joint_coefficients",
    "density_operator",
]

# coefficients this small are floating-point noise, not signal
ZERO_COEFF = 1e-10

# ancilla-outcome pairs that constitute a phase error, per relay announcement
PHASE_ERROR_PAIRS = {
    "psi_minus": ((0, 0), (1, 1)),
    "phi_minus": ((0, 0), (1, 1)),
    "psi_plus": ((0, 1), (1, 0)),
    "phi_plus": ((0, 1), (1, 0)),
}

_PAULI = (
    np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),   # sigma_Z
    np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),    # sigma_X
    np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),  # sigma_Y
)


@dataclass(frozen=True)
class QubitState:
    """A pure qubit state, either planar (theta) or general (u, gamma, phi).

    Planar: cos(theta)|0> + sin(theta)|1>, theta in (-pi, pi].
    General: exp(i*gamma) (sqrt(u)|0_Y> + exp(i*phi) sqrt(1-u)|1_Y>), with
    |0_Y>, |1_Y> the +-1 eigenstates of sigma_Y.  A planar theta state is
    the general state (u=1/2, gamma=-theta, phi=2*theta).
    """

    theta: float | None = None
    u: float | None = None
    gamma: float | None = None
    phi: float | None = None

    def __post_init__(self):
        planar = self.theta is not None
        general = self.u is not None
        if planar == general:
            raise DomainError("specify either theta or (u, gamma, phi)")
        if planar:
            if not -math.pi < self.theta <= math.pi:
                raise DomainError("theta must lie in (-pi, pi]")
        else:
            if self.gamma is None or self.phi is None:
                raise DomainError("general form needs u, gamma and phi")
            if not 0.0 <= self.u <= 1.0:
                raise DomainError("u must lie in [0, 1]")

    @classmethod
    def planar(cls, theta: float) -> "QubitState":
        return cls(theta=float(theta))

    @classmethod
    def general(cls, u: float, gamma: float, phi: float) -> "QubitState":
        return cls(u=float(u), gamma=float(gamma), phi=float(phi))

    def y_basis_params(self) -> tuple[float, float, float]:
        """(u, gamma, phi) of the state expressed in the lab Y basis."""
        if self.theta is not None:
            return 0.5, -self.theta, 2.0 * self.theta
        return self.u, self.gamma, self.phi

    def amplitudes(self) -> np.ndarray:
        """Complex amplitudes (a, b) in the computational Z basis."""
        if self.theta is not None:
            return np.array([math.cos(self.theta), math.sin(self.theta)], dtype=complex)
        a = math.sqrt(self.u)
        b = cmath.exp(1j * self.phi) * math.sqrt(1.0 - self.u)
        ket0_y = np.array([1.0, 1.0j]) / math.sqrt(2.0)
        ket1_y = np.array([1.0, -1.0j]) / math.sqrt(2.0)
        return cmath.exp(1j * self.gamma) * (a * ket0_y + b * ket1_y)


@dataclass(frozen=True)
class BlochVector:
    s_z: float
    s_x: float
    s_y: float = 0.0

    def __post_init__(self):
        if self.norm() > 1.0 + 1e-12:
            raise DomainError("Bloch vector lies outside the unit ball")

    @classmethod
    def from_array(cls, arr) -> "BlochVector":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.s_z, self.s_x, self.s_y])

    def norm(self) -> float:
        return math.sqrt(self.s_z ** 2 + self.s_x ** 2 + self.s_y ** 2)


def density_operator(bloch: BlochVector) -> np.ndarray:
    """2x2 density operator (I + S . sigma)/2 for a Bloch vector."""
    rho = np.eye(2, dtype=complex)
    for component, pauli in zip(bloch.as_array(), _PAULI):
        rho = rho + component * pauli
    return rho / 2.0


def bloch_from_state(state: QubitState) -> BlochVector:
    """Bloch vector of a pure state; planar states map to (cos 2t, sin 2t, 0)."""
    if state.theta is not None:
        return BlochVector(math.cos(2.0 * state.theta), math.sin(2.0 * state.theta), 0.0)
    a, b = state.amplitudes()
    ab = np.conj(a) * b
    return BlochVector(abs(a) ** 2 - abs(b) ** 2, 2.0 * ab.real, 2.0 * ab.imag)


def _bloch_of_amplitudes(v: np.ndarray) -> BlochVector:
    n = np.vdot(v, v).real
    ab = np.conj(v[0]) * v[1]
    return BlochVector(
        (abs(v[0]) ** 2 - abs(v[1]) ** 2) / n,
        2.0 * ab.real / n,
        2.0 * ab.imag / n,
    )


def virtual_states_pm(
    state0: QubitState, state1: QubitState, phi: float = 0.0
) -> tuple[BlochVector, BlochVector, float, float]:
    """Virtual states hidden in an equal-weight key-basis superposition.

    The two key states define (|psi_0> +- e^{i phi} |psi_1>)/norm, the states
    Alice would effectively send upon measuring her ancilla in X.  Returns
    their Bloch vectors and the conditional weights
    p_vir_alpha = (1 + (-1)^alpha Re(e^{i phi} <psi_0|psi_1>))/2.

    Raises:
        DegenerateStates: the inputs coincide up to a phase, so one weight
            vanishes and that virtual state is unnormalizable.
    """
    a0 = state0.amplitudes()
    a1 = state1.amplitudes()
    overlap = complex(np.vdot(a0, a1))
    if abs(abs(overlap) - 1.0) < 1e-12:
        raise DegenerateStates("key states are identical up to phase")
    rotation = cmath.exp(1j * phi)
    v0 = a0 + rotation * a1
    v1 = a0 - rotation * a1
    w0 = float(np.vdot(v0, v0).real) / 4.0
    w1 = float(np.vdot(v1, v1).real) / 4.0
    return _bloch_of_amplitudes(v0), _bloch_of_amplitudes(v1), w0, w1


def choose_phi(states) -> float:
    """Relative phase that keeps the virtual states inside the states' plane.

    Takes the three emitted states (key pair first); only the key pair
    enters the formula.  For planar states the result is exactly 0.
    """
    u0, gamma0, phi0 = states[0].y_basis_params()
    u1, gamma1, phi1 = states[1].y_basis_params()
    del u0, u1
    return gamma0 - gamma1 + (phi0 - phi1) / 2.0


def find_common_plane(blochs) -> tuple[BlochVector, float]:
    """Unit normal of the plane through three Bloch endpoints and the
    common projection of the states onto it.

    Raises:
        CollinearStates: endpoints are collinear within 1e-10, no unique plane.
    """
    b0, b1, b2 = (b.as_array() for b in blochs)
    normal = np.cross(b1 - b0, b2 - b0)
    length = np.linalg.norm(normal)
    if length < 1e-10:
        raise CollinearStates("state endpoints are collinear")
    normal = normal / length
    projection = float(normal @ b0)
    # orient towards non-negative projection; break ties by the largest entry
    if projection < 0.0:
        normal, projection = -normal, -projection
    elif projection == 0.0 and normal[np.argmax(np.abs(normal))] < 0.0:
        normal = -normal
    spread = max(abs(float(normal @ b) - projection) for b in (b0, b1, b2))
    if spread > 1e-10:
        raise CollinearStates("projections onto the plane normal disagree")
    return BlochVector.from_array(normal), projection


@dataclass(frozen=True)
class PosNegDecomposition:
    """Signed decomposition target = sum_j c_j rho_j, split by coefficient sign.

    c_pos - c_neg = 1 (trace preservation); p_given_t normalizes |c_j| within
    each sign class, which is exactly the tag-conditional state mixture.
    """

    coeffs: dict
    c_pos: float
    c_neg: float
    s_pos: frozenset
    s_neg: frozenset
    p_given_t: dict = field(default_factory=dict)

    @classmethod
    def from_coefficients(cls, coeffs: dict) -> "PosNegDecomposition":
        cleaned = {j: float(c) for j, c in coeffs.items()}
        s_pos = frozenset(j for j, c in cleaned.items() if c > ZERO_COEFF)
        s_neg = frozenset(j for j, c in cleaned.items() if c < -ZERO_COEFF)
        c_pos = sum(cleaned[j] for j in s_pos)
        c_neg = -sum(cleaned[j] for j in s_neg)
        p_given_t = {}
        for j in s_pos:
            p_given_t[(j, "pos")] = cleaned[j] / c_pos
        for j in s_neg:
            p_given_t[(j, "neg")] = -cleaned[j] / c_neg
        if abs(c_pos - c_neg - 1.0) > 1e-10:
            raise DomainError("coefficients do not preserve the trace")
        return cls(cleaned, c_pos, c_neg, s_pos, s_neg, p_given_t)


def _plane_frame(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Right-handed in-plane axes; reduces to (Z, X) when the normal is +-Y."""
    ref = np.array([1.0, 0.0, 0.0])
    if abs(normal @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    z_axis = ref - (ref @ normal) * normal
    z_axis = z_axis / np.linalg.norm(z_axis)
    x_axis = np.cross(normal, z_axis)
    return z_axis, x_axis


def decompose(target: BlochVector, basis_states, plane=None) -> PosNegDecomposition:
    """Write the target operator as a signed mixture of the three basis states.

    The 3x3 system has rows (1, S_Z~, S_X~)/2 per basis state, expressed in
    the plane's own frame, so planar and tilted triples share one code path.

    Args:
        target: Bloch vector of the operator to reconstruct (must lie in the
            basis plane).
        basis_states: three BlochVectors spanning the plane.
        plane: optional (normal, projection) from find_common_plane, to reuse
            an already computed frame.

    Raises:
        SingularBasis: basis matrix not invertible (|det| < 1e-12).
        PlaneMismatch: target's normal component differs from the common one.
    """
    if plane is None:
        plane = find_common_plane(basis_states)
    normal_vec, s_y_tilde = plane
    normal = normal_vec.as_array()
    t = target.as_array()
    if abs(float(normal @ t) - s_y_tilde) > 1e-8:
        raise PlaneMismatch("target does not lie in the basis states' plane")
    z_axis, x_axis = _plane_frame(normal)
    rows = []
    for b in basis_states:
        arr = b.as_array()
        rows.append([1.0, float(arr @ z_axis), float(arr @ x_axis)])
    smat = 0.5 * np.array(rows).T  # columns are the basis states
    if abs(np.linalg.det(smat)) < 1e-12:
        raise SingularBasis("basis states are linearly dependent")
    t_vec = 0.5 * np.array([1.0, float(t @ z_axis), float(t @ x_axis)])
    coeffs = np.linalg.solve(smat, t_vec)

    residual = -density_operator(target)
    for c, b in zip(coeffs, basis_states):
        residual = residual + c * density_operator(b)
    if np.max(np.abs(residual)) > 1e-10:
        raise SingularBasis("reconstruction failed; basis is too ill-conditioned")
    return PosNegDecomposition.from_coefficients(dict(enumerate(coeffs)))


def mdi_joint_coefficients(
    alice_decomps,
    bob_decomps,
    alice_weights,
    bob_weights,
    bell_outcome: str,
) -> tuple[PosNegDecomposition, float]:
    """Joint decomposition of the phase-error operator over the 9 state pairs.

    A phase error is a same-parity ancilla pair (alpha = beta) when the relay
    announces psi-/phi-, and an opposite-parity pair for psi+/phi+.  The
    phase-error operator is the weight-mixed tensor product of the per-party
    virtual decompositions over those pairs.

    Args:
        alice_decomps: (vir0, vir1) PosNegDecomposition for Alice, indexed by
            her state labels.
        bob_decomps: same for Bob.
        alice_weights: (p_vir0|K, p_vir1|K) ancilla outcome weights.
        bob_weights: same for Bob.
        bell_outcome: one of "psi_minus", "psi_plus", "phi_minus", "phi_plus".

    Returns:
        (joint decomposition over (j, s) index pairs, p_ph|K).
    """
    try:
        pairs = PHASE_ERROR_PAIRS[bell_outcome]
    except KeyError:
        raise DomainError(f"unknown Bell outcome {bell_outcome!r}") from None
    p_ph = sum(alice_weights[a] * bob_weights[b] for a, b in pairs)
    if p_ph <= 0.0:
        raise DomainError("phase-error pairs carry no weight")
    joint: dict = {}
    for a, b in pairs:
        scale = alice_weights[a] * bob_weights[b] / p_ph
        for j, cj in alice_decomps[a].coeffs.items():
            for s, cs in bob_decomps[b].coeffs.items():
                key = (j, s)
                joint[key] = joint.get(key, 0.0) + scale * cj * cs
    return PosNegDecomposition.from_coefficients(joint), float(p_ph)
