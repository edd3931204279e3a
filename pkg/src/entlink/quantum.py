"""Exact two-qubit polarization-state arithmetic.

Density matrices are 4x4 complex arrays in the basis order
|HH>, |HV>, |VH>, |VV>.  Measurement settings are linear-polarizer angles in
degrees relative to H; outcome "+" projects onto cos(t)|H> + sin(t)|V> and
outcome "-" onto the orthogonal direction (t + 90 deg).

Everything here is a pure function over immutable values and is safe to call
concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10

TSIRELSON = 2.0 * np.sqrt(2.0)

#: (|HH> + |VV>)/sqrt(2)
PHI_PLUS_VEC = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2.0)
PHI_PLUS = np.outer(PHI_PLUS_VEC, PHI_PLUS_VEC).astype(complex)

ALICE = "A"
BOB = "B"

#: Fixed polarizer angles (degrees from H) for each measurement label.
#: A_k is the key basis; the rest enter the CHSH estimate.
SETTING_ANGLES = {
    "A_k": 0.0,
    "A_0": -22.5,
    "A_1": -67.5,
    "B_0": 0.0,
    "B_1": -45.0,
}

ALICE_LABELS = ("A_k", "A_0", "A_1")
BOB_LABELS = ("B_0", "B_1")

#: CHSH combination S = E(A0,B0) + E(A0,B1) - E(A1,B0) + E(A1,B1)
CHSH_TERMS = (
    ("A_0", "B_0", +1.0),
    ("A_0", "B_1", +1.0),
    ("A_1", "B_0", -1.0),
    ("A_1", "B_1", +1.0),
)


@dataclass(frozen=True)
class MeasurementSetting:
    """A polarization measurement: party, label, and analyzer angle."""

    party: str
    label: str
    angle_deg: float = field(init=False)

    def __post_init__(self):
        if self.label not in SETTING_ANGLES:
            raise ValueError(f"unknown setting label {self.label!r}")
        expected_party = ALICE if self.label.startswith("A") else BOB
        if self.party != expected_party:
            raise ValueError(f"label {self.label!r} belongs to party {expected_party!r}")
        object.__setattr__(self, "angle_deg", SETTING_ANGLES[self.label])


def validate_density_matrix(rho: np.ndarray) -> np.ndarray:
    """Check shape, hermiticity, unit trace and positivity; return a copy."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"density matrix must be 4x4, got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > TRACE_TOL or abs(np.trace(rho).imag) > TRACE_TOL:
        raise ValueError("density matrix trace is not 1")
    eigvals = np.linalg.eigvalsh(rho)
    if np.min(eigvals) < -PSD_TOL:
        raise ValueError(f"density matrix has negative eigenvalue {np.min(eigvals):.3e}")
    return rho


@dataclass(frozen=True)
class TwoQubitState:
    """Validated 4x4 density matrix of the polarization-entangled pair."""

    rho: np.ndarray

    def __post_init__(self):
        rho = validate_density_matrix(self.rho)
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    def alice_marginal(self) -> np.ndarray:
        """2x2 reduced state of Alice's photon (partial trace over Bob)."""
        r = self.rho.reshape(2, 2, 2, 2)
        return np.trace(r, axis1=1, axis2=3)

    def bob_marginal(self) -> np.ndarray:
        """2x2 reduced state of Bob's photon (partial trace over Alice)."""
        r = self.rho.reshape(2, 2, 2, 2)
        return np.trace(r, axis1=0, axis2=2)


def phi_plus_state() -> TwoQubitState:
    return TwoQubitState(PHI_PLUS)


def werner_from_fidelity(fidelity: float) -> TwoQubitState:
    """One-parameter source model: |phi+> mixed with white noise.

    Returns p |phi+><phi+| + (1-p) I/4 with p = (4F - 1)/3, the unique
    isotropic state whose overlap with |phi+> equals ``fidelity``.
    """
    if not 0.25 <= fidelity <= 1.0:
        raise ValueError(f"fidelity must lie in [0.25, 1], got {fidelity}")
    p = (4.0 * fidelity - 1.0) / 3.0
    rho = p * PHI_PLUS + (1.0 - p) * np.eye(4) / 4.0
    return TwoQubitState(rho)


def _plus_vector(theta_deg: float) -> np.ndarray:
    t = np.deg2rad(theta_deg)
    return np.array([np.cos(t), np.sin(t)])


def outcome_projectors(theta_deg: float) -> tuple[np.ndarray, np.ndarray]:
    """2x2 projectors for the "+" and "-" outcomes of an analyzer angle."""
    v_plus = _plus_vector(theta_deg)
    v_minus = _plus_vector(theta_deg + 90.0)
    return np.outer(v_plus, v_plus), np.outer(v_minus, v_minus)


def joint_outcome_probs(state: TwoQubitState, theta_a_deg: float, theta_b_deg: float) -> np.ndarray:
    """Born-rule probabilities for outcome pairs (++, +-, -+, --).

    Probabilities are clipped of eigensolver noise (tiny negatives) and sum
    to 1 within 1e-12.
    """
    pa = outcome_projectors(theta_a_deg)
    pb = outcome_projectors(theta_b_deg)
    probs = np.empty(4)
    for a in (0, 1):
        for b in (0, 1):
            op = np.kron(pa[a], pb[b])
            probs[2 * a + b] = np.real(np.trace(op @ state.rho))
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


def correlation_at(state: TwoQubitState, theta_a_deg: float, theta_b_deg: float) -> float:
    """Correlation coefficient E = p(++) + p(--) - p(+-) - p(-+)."""
    p = joint_outcome_probs(state, theta_a_deg, theta_b_deg)
    return float(p[0] + p[3] - p[1] - p[2])


def chsh_expected(state: TwoQubitState) -> float:
    """CHSH parameter of the state at the fixed protocol settings."""
    return float(
        sum(
            sign * correlation_at(state, SETTING_ANGLES[a], SETTING_ANGLES[b])
            for a, b, sign in CHSH_TERMS
        )
    )


def qber_expected(state: TwoQubitState) -> float:
    """Key-basis error rate Q = (1 - E(A_k, B_0)) / 2."""
    e = correlation_at(state, SETTING_ANGLES["A_k"], SETTING_ANGLES["B_0"])
    return (1.0 - e) / 2.0


def fidelity_to_bell(state: TwoQubitState) -> float:
    """Overlap <phi+| rho |phi+>."""
    return float(np.real(PHI_PLUS_VEC @ state.rho @ PHI_PLUS_VEC))


def concurrence(state: TwoQubitState) -> float:
    """Wootters concurrence: max(0, l1 - l2 - l3 - l4) over the spin-flipped spectrum."""
    sy = np.array([[0.0, -1.0j], [1.0j, 0.0]])
    flip = np.kron(sy, sy)
    r = state.rho @ flip @ state.rho.conj() @ flip
    eigvals = np.linalg.eigvals(r).real
    lam = np.sqrt(np.clip(np.sort(eigvals)[::-1], 0.0, None))
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def depolarize_bob(state: TwoQubitState, strength: float) -> TwoQubitState:
    """One-sided depolarizing map on Bob's photon.

    rho -> (1 - s) rho + s (rho_A (x) I/2); models polarization scrambling in
    the free-space arm without touching Alice's photon.
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"depolarization strength must lie in [0, 1], got {strength}")
    if strength == 0.0:
        return state
    mixed = np.kron(state.alice_marginal(), np.eye(2) / 2.0)
    return TwoQubitState((1.0 - strength) * state.rho + strength * mixed)


def state_to_json(state: TwoQubitState) -> str:
    """Serialize as row-major arrays of [re, im] pairs."""
    rows = [[[float(z.real), float(z.imag)] for z in row] for row in state.rho]
    return json.dumps(rows)


def state_from_json(text: str) -> TwoQubitState:
    rows = json.loads(text)
    rho = np.array([[complex(re, im) for re, im in row] for row in rows])
    return TwoQubitState(rho)
