"""Feedback-modified Liouvillian of the driven two-level atom.

Everything is written in the rotating frame. In Bloch coordinates the a priori
evolution reads dx/dt = -A x + b.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .core_types import (
    IDENTITY,
    P_MINUS,
    P_PLUS,
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Z,
    TOLERANCES,
    BlochVector,
    Mat3,
    Operator2,
    ParameterError,
    SingularMatrixError,
    Vec3,
    as_density,
    sigma_phi,
)

logger = logging.getLogger(__name__)

CONTROL_FIELDS = ("omega_rabi", "delta_omega", "theta1", "theta2", "c", "phi")
ANGLE_FIELDS = ("theta1", "theta2", "phi")


@dataclass(frozen=True)
class ModelParams:
    gamma: float = 1.0
    k_d: float = 0.0
    n_bar: float = 0.0
    omega_rabi: float = 0.0
    delta_omega: float = 0.0
    a0sq: float = 0.1
    a1sq: float = 0.45
    a2sq: float = 0.45
    theta1: float = 0.0
    theta2: float = 0.0
    c: float = 0.0
    phi: float = 0.0

    @property
    def alpha1(self) -> float:
        return math.sqrt(max(self.a1sq, 0.0))

    @property
    def alpha2(self) -> float:
        return math.sqrt(max(self.a2sq, 0.0))

    @property
    def delta_omega_c(self) -> float:
        """Detuning shifted by the feedback loop."""
        return self.delta_omega + self.c * self.gamma * self.alpha1 * math.cos(self.theta1 - self.phi)

    def fraction(self, channel: int) -> float:
        return {1: self.a1sq, 2: self.a2sq}[_check_channel(channel)]

    def theta(self, channel: int) -> float:
        return {1: self.theta1, 2: self.theta2}[_check_channel(channel)]

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def without_feedback(self) -> "ModelParams":
        return self.replace(c=0.0)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_channel(channel: int) -> int:
    if channel not in (1, 2):
        raise ValueError(f"channel must be 1 or 2, got {channel!r}")
    return channel


@dataclass(frozen=True)
class Violation:
    key: str
    message: str
    severity: str = "error"

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def validate(p: ModelParams, strict: bool = False) -> list[Violation]:
    """Check the parameter constraints; returns an empty list when everything holds.

    In non-strict mode |alpha_0|^2 = 0 is reported as a warning only, which is
    what the frozen-atom configuration needs.
    """
    out: list[Violation] = []

    for name, value in p.as_dict().items():
        if not math.isfinite(value):
            out.append(Violation(name, f"must be finite, got {value}"))
    if out:
        return out

    if p.gamma <= 0:
        out.append(Violation("gamma", f"must be > 0, got {p.gamma}"))
    for name in ("k_d", "n_bar", "omega_rabi", "c"):
        value = getattr(p, name)
        if value < 0:
            out.append(Violation(name, f"must be >= 0, got {value}"))

    for name in ("a0sq", "a2sq"):
        value = getattr(p, name)
        if value < 0:
            out.append(Violation(name, f"must be >= 0, got {value}"))
    if p.a1sq <= 0:
        out.append(Violation("a1sq", f"|α₁|²>0 required, got {p.a1sq}"))

    total = p.a0sq + p.a1sq + p.a2sq
    if abs(total - 1.0) > TOLERANCES["fraction_sum"]:
        out.append(Violation("a0sq+a1sq+a2sq", f"fractions sum {total:.12g}, must be 1"))

    if p.a0sq == 0:
        if strict:
            out.append(Violation("a0sq", "|α₀|²>0 required"))
        else:
            out.append(Violation("a0sq", "|α₀|²=0 accepted outside strict mode", "warning"))
    return out


def errors_only(violations: list[Violation]) -> list[Violation]:
    return [v for v in violations if v.severity == "error"]


def require_valid(p: ModelParams, strict: bool = False) -> ModelParams:
    violations = validate(p, strict)
    errs = errors_only(violations)
    if errs:
        raise ParameterError(errs)
    for v in violations:
        logger.warning("Parameter warning for %s: %s", v.key, v.message)
    return p


# ---------------------------------------------------------------------
# Operator form
# ---------------------------------------------------------------------


def _anti(a: Operator2, b: Operator2) -> Operator2:
    return a @ b + b @ a


def feedback_jump(p: ModelParams) -> Operator2:
    """alpha_1 sigma_- - i c sigma_phi, the jump operator dressed by the loop."""
    alpha1 = p.alpha1 * np.exp(1j * p.theta1)
    return alpha1 * SIGMA_MINUS - 1j * p.c * sigma_phi(p.phi)


def liouvillian_apply(p: ModelParams, rho) -> Operator2:
    r = as_density(rho).matrix
    g = p.gamma
    a = p.alpha1
    h = 0.5 * p.delta_omega_c * SIGMA_Z + 0.5 * p.omega_rabi * SIGMA_X

    out = -1j * (h @ r - r @ h)
    out += g * p.k_d * (SIGMA_Z @ r @ SIGMA_Z - r)
    out += g * p.n_bar * (SIGMA_PLUS @ r @ SIGMA_MINUS - 0.5 * _anti(P_MINUS, r))
    out += g * (p.n_bar + 1.0 - a * a) * (SIGMA_MINUS @ r @ SIGMA_PLUS - 0.5 * _anti(P_PLUS, r))

    j = feedback_jump(p)
    k = (a * a - 2.0 * p.c * a * math.sin(p.theta1 - p.phi)) * P_PLUS + p.c**2 * IDENTITY
    out += g * (j @ r @ j.conj().T) - 0.5 * g * _anti(k, r)
    return out


# ---------------------------------------------------------------------
# Bloch form
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BlochAffine:
    A: Mat3
    b: Vec3

    def drift(self, x) -> Vec3:
        return -self.A @ np.asarray(x, dtype=float) + self.b


def bloch_affine(p: ModelParams) -> BlochAffine:
    g, c, a = p.gamma, p.c, p.alpha1
    th, ph = p.theta1, p.phi
    base = 0.5 + p.n_bar + 2.0 * p.k_d
    # Symmetric off-diagonal part produced by the loop; the c^2 coefficient
    # is the one fixed by the operator form of L.
    off = -g * (c * a * math.cos(th + ph) + c * c * math.sin(2.0 * ph))
    dwc = p.delta_omega_c

    a11 = g * (base + 2.0 * c * a * math.cos(th) * math.sin(ph) + 2.0 * c * c * math.sin(ph) ** 2)
    a22 = g * (base - 2.0 * c * a * math.sin(th) * math.cos(ph) + 2.0 * c * c * math.cos(ph) ** 2)
    a33 = g * (1.0 + 2.0 * p.n_bar - 2.0 * c * a * math.sin(th - ph) + 2.0 * c * c)
    A = np.array(
        [
            [a11, dwc + off, 0.0],
            [-dwc + off, a22, p.omega_rabi],
            [0.0, -p.omega_rabi, a33],
        ]
    )
    b = np.array([0.0, 0.0, -g * (1.0 - 2.0 * c * a * math.sin(th - ph))])
    A.setflags(write=False)
    b.setflags(write=False)
    return BlochAffine(A, b)


def relaxation_rates(p: ModelParams) -> np.ndarray:
    """Eigenvalues of A; the a priori state relaxes iff all real parts are positive."""
    return np.linalg.eigvals(bloch_affine(p).A)


def is_stable(p: ModelParams) -> bool:
    return bool(np.all(relaxation_rates(p).real > 0.0))


def _checked_solve(A: Mat3, rhs: Vec3, what: str) -> Vec3:
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > TOLERANCES["condition_limit"]:
        raise SingularMatrixError(f"{what}: condition number {cond:.3e}")
    return np.linalg.solve(A, rhs)


def equilibrium(p: ModelParams) -> BlochVector:
    """Stationary point of dx/dt = -A x + b."""
    aff = bloch_affine(p)
    x = _checked_solve(aff.A, aff.b, "no unique stationary state")
    v = BlochVector.from_array(x)
    if not v.is_valid():
        logger.warning("Stationary Bloch vector has norm %.12g > 1", v.norm)
    return v


def prior_evolution(p: ModelParams, x0, times) -> np.ndarray:
    """A priori Bloch trajectory eta_t from x0, one row per requested time."""
    aff = bloch_affine(p)
    x_eq = equilibrium(p).as_array()
    dev = np.asarray(x0.as_array() if isinstance(x0, BlochVector) else x0, dtype=float) - x_eq
    times = np.asarray(times, dtype=float)
    return np.array([x_eq + expm(-aff.A * t) @ dev for t in times]).reshape(times.shape + (3,))


def frozen_atom_params(c: float, gamma: float = 1.0) -> ModelParams:
    """Ideal configuration in which the atom is frozen in a pure state.

    Delta omega = 0, phi = 0, theta_1 = pi/2, |alpha_1| = 1, alpha_0 = alpha_2 = 0
    and no dephasing or thermal noise. Omega is chosen so that the stationary
    state is pure with 2c sin(theta_1) = 1 + z_eq.
    """
    if not 0.0 < c < 1.0 or c == 0.5:
        raise ValueError(f"frozen atom needs 0 < c < 1 and c != 1/2, got {c}")
    omega = gamma * abs(1.0 - 2.0 * c) * math.sqrt(c * (1.0 - c))
    return ModelParams(
        gamma=gamma,
        omega_rabi=omega,
        a0sq=0.0,
        a1sq=1.0,
        a2sq=0.0,
        theta1=math.pi / 2,
        theta2=math.pi / 2,
        c=c,
        phi=0.0,
    )
