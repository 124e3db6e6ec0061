"""Two-level atom operator algebra and the Bloch-ball representation.

Operators are plain 2x2 complex numpy arrays in the basis (excited, ground),
so that sigma_z = P_+ - P_- = diag(1, -1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

# --- Tolerances -------------------------------------------------------
TOLERANCES = MappingProxyType(
    {
        "hermitian": 1e-12,
        "trace": 1e-12,
        "eigenvalue_floor": -1e-9,
        "bloch_slack": 1e-9,
        "fraction_sum": 1e-12,
        "condition_limit": 1e12,
        "positivity_warning": -1e-9,
    }
)
# ---------------------------------------------------------------------

Operator2 = np.ndarray
Vec3 = np.ndarray
Mat3 = np.ndarray


class FluorsqueezeError(Exception):
    """Base class for every error raised by the package."""


class InvalidStateError(FluorsqueezeError):
    pass


class ParameterError(FluorsqueezeError):
    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(f"{v.key}: {v.message}" for v in self.violations)
        super().__init__(msg or "invalid parameters")


class NumericalError(FluorsqueezeError):
    pass


class SingularMatrixError(NumericalError):
    pass


class UnstableDynamicsError(NumericalError):
    pass


class IntegrationError(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


class ScenarioError(FluorsqueezeError):
    pass


class RecordMismatchError(FluorsqueezeError):
    pass


class OptimizationError(FluorsqueezeError):
    pass


IDENTITY = np.eye(2, dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_X = SIGMA_MINUS + SIGMA_PLUS
SIGMA_Y = 1j * (SIGMA_MINUS - SIGMA_PLUS)
SIGMA_Z = SIGMA_PLUS @ SIGMA_MINUS - SIGMA_MINUS @ SIGMA_PLUS
P_PLUS = SIGMA_PLUS @ SIGMA_MINUS
P_MINUS = SIGMA_MINUS @ SIGMA_PLUS
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)

for _op in (IDENTITY, SIGMA_MINUS, SIGMA_PLUS, SIGMA_X, SIGMA_Y, SIGMA_Z, P_PLUS, P_MINUS):
    _op.setflags(write=False)


def is_hermitian(m: Operator2, tol: float = TOLERANCES["hermitian"]) -> bool:
    return bool(np.max(np.abs(m - m.conj().T)) <= tol)


def sigma_phi(phi: float) -> Operator2:
    """e^{i phi} sigma_- + e^{-i phi} sigma_+ = cos(phi) sigma_x + sin(phi) sigma_y."""
    if not math.isfinite(phi):
        raise ValueError(f"angle must be finite, got {phi}")
    op = np.exp(1j * phi) * SIGMA_MINUS + np.exp(-1j * phi) * SIGMA_PLUS
    op.setflags(write=False)
    return op


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    @classmethod
    def from_array(cls, v) -> "BlochVector":
        v = np.asarray(v, dtype=float)
        if v.shape != (3,):
            raise ValueError(f"expected a 3-vector, got shape {v.shape}")
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> Vec3:
        return np.array([self.x, self.y, self.z], dtype=float)

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def is_valid(self, slack: float = TOLERANCES["bloch_slack"]) -> bool:
        return all(map(math.isfinite, (self.x, self.y, self.z))) and self.norm <= 1.0 + slack

    def expectation(self, theta: float) -> float:
        """Tr[sigma_theta rho] for the state this vector represents."""
        return self.x * math.cos(theta) + self.y * math.sin(theta)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: Operator2

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (2, 2) or not np.all(np.isfinite(m)):
            raise InvalidStateError(f"density matrix must be a finite 2x2 array, got shape {m.shape}")
        if not is_hermitian(m):
            raise InvalidStateError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > TOLERANCES["trace"]:
            raise InvalidStateError(f"density matrix trace is {np.trace(m).real:.3e}, not 1")
        eigs = np.linalg.eigvalsh(m)
        if eigs[0] < TOLERANCES["eigenvalue_floor"]:
            raise InvalidStateError(f"density matrix has negative eigenvalue {eigs[0]:.3e}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))


def rho_from_bloch(v: BlochVector) -> DensityMatrix:
    """rho = (1 + x.sigma) / 2."""
    if not v.is_valid():
        raise InvalidStateError(f"Bloch vector {v} lies outside the unit ball (|v| = {v.norm:.12g})")
    m = 0.5 * (IDENTITY + v.x * SIGMA_X + v.y * SIGMA_Y + v.z * SIGMA_Z)
    return DensityMatrix(m)


def bloch_of(op) -> Vec3:
    """Components Tr[sigma_i op] of an arbitrary 2x2 operator, real part taken."""
    m = np.asarray(op)
    return np.array([np.real(np.trace(s @ m)) for s in PAULI])


def bloch_from_rho(rho: DensityMatrix) -> BlochVector:
    return BlochVector.from_array(bloch_of(rho.matrix))


def as_density(state) -> DensityMatrix:
    """Accept a DensityMatrix, a BlochVector or a raw 2x2 array."""
    if isinstance(state, DensityMatrix):
        return state
    if isinstance(state, BlochVector):
        return rho_from_bloch(state)
    return DensityMatrix(np.asarray(state))
