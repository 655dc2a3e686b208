"""Physical parameters, interaction matrices, and 2x2 tensor calculus.

Everything is specialized to d = 2 space dimensions: the dilatation
coefficient is kappa = 2*mu/d + lambda = mu + lambda, the compliance is
A(tau) = dev(tau)/(2*mu) + tr(tau)/(d^2*kappa)*I, and the interaction
matrices R1, R2 couple (u, w) accelerations and (tr sigma, p) rates.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NonPSD, UnsupportedEssentialData

_I2 = np.eye(2)


def tr2(tau):
    """Trace of a 2x2 tensor (batched over leading axes)."""
    tau = np.asarray(tau, dtype=float)
    return tau[..., 0, 0] + tau[..., 1, 1]


def dev2(tau):
    """Deviatoric part tau - tr(tau)/2 * I (keeps any skew part)."""
    tau = np.asarray(tau, dtype=float)
    return tau - 0.5 * tr2(tau)[..., None, None] * _I2


def skw2(tau):
    """Skew-symmetric part (tau - tau^T)/2."""
    tau = np.asarray(tau, dtype=float)
    return 0.5 * (tau - np.swapaxes(tau, -1, -2))


def sym2(tau):
    """Symmetric part (tau + tau^T)/2."""
    tau = np.asarray(tau, dtype=float)
    return 0.5 * (tau + np.swapaxes(tau, -1, -2))


def tensor_ops(tau):
    """Return (tr, dev, skw) of a 2x2 tensor."""
    return tr2(tau), dev2(tau), skw2(tau)


def _check_spd_2x2(K):
    K = np.asarray(K, dtype=float)
    if K.shape != (2, 2):
        raise NonPSD(f"K must be 2x2, got shape {K.shape}")
    if abs(K[0, 1] - K[1, 0]) > 1e-12 * max(1.0, abs(K).max()):
        raise NonPSD("K must be symmetric")
    ev = np.linalg.eigvalsh(K)
    if ev[0] <= 0.0:
        raise NonPSD(f"K must be positive definite, eigenvalues {ev}")
    return K


@dataclass(frozen=True)
class ModelParams:
    """Poroelastic material data (Tables 1 and 2 style aggregates).

    Densities are supplied directly as (rho_u, rho_f, rho_w); when phi and
    nu_tort are also given, the relation rho_w = rho_f * nu / phi is checked
    as a warning only.
    """

    mu: float
    lam: float
    alpha: float
    s0: float
    K: np.ndarray
    rho_u: float
    rho_f: float
    rho_w: float
    phi: Optional[float] = None
    nu_tort: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.K, (int, float)):
            object.__setattr__(self, "K", float(self.K) * np.eye(2))
        object.__setattr__(self, "K", _check_spd_2x2(self.K))
        if self.mu <= 0.0:
            raise NonPSD(f"mu must be > 0, got {self.mu}")
        if self.lam < 0.0 or self.s0 < 0.0:
            raise NonPSD("lambda and s0 must be >= 0")
        if min(self.rho_u, self.rho_f, self.rho_w) < 0.0:
            raise NonPSD("densities must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise NonPSD(f"alpha must lie in [0, 1], got {self.alpha}")
        det_r1 = self.rho_u * self.rho_w - self.rho_f**2
        if det_r1 < -1e-12 * max(1.0, self.rho_u * self.rho_w):
            raise NonPSD(f"density matrix R1 indefinite: det = {det_r1}")
        if self.phi is not None and not 0.0 < self.phi < 1.0:
            raise NonPSD(f"porosity must lie in (0, 1), got {self.phi}")
        if self.phi is not None and self.nu_tort is not None:
            expected = self.rho_f * self.nu_tort / self.phi
            if not np.isclose(expected, self.rho_w, rtol=1e-8):
                warnings.warn(
                    f"rho_w = {self.rho_w} inconsistent with rho_f*nu/phi = {expected}",
                    stacklevel=2,
                )

    @property
    def kappa(self) -> float:
        # kappa = 2*mu/d + lambda with d = 2
        return self.mu + self.lam

    @property
    def K_inv(self) -> np.ndarray:
        a, b, c = self.K[0, 0], self.K[0, 1], self.K[1, 1]
        det = a * c - b * b
        return np.array([[c, -b], [-b, a]]) / det


def compliance_apply(params: ModelParams, tau):
    """Compliance action A(tau) = dev(tau)/(2 mu) + tr(tau)/(4 kappa) * I."""
    tau = np.asarray(tau, dtype=float)
    return dev2(tau) / (2.0 * params.mu) + (
        tr2(tau) / (4.0 * params.kappa)
    )[..., None, None] * _I2


def stiffness_apply(params: ModelParams, tau):
    """Stiffness action C(tau) = 2 mu dev(tau) + kappa tr(tau) * I."""
    tau = np.asarray(tau, dtype=float)
    return 2.0 * params.mu * dev2(tau) + (
        params.kappa * tr2(tau)
    )[..., None, None] * _I2


@dataclass(frozen=True)
class InteractionMatrices:
    """R1 couples (u, w) accelerations, R2 couples (tr sigma, p) rates."""

    R1: np.ndarray
    R2: np.ndarray


def build_interaction_matrices(params: ModelParams) -> InteractionMatrices:
    """Assemble and validate R1, R2 (both must be symmetric PSD)."""
    r1 = np.array(
        [[params.rho_u, params.rho_f], [params.rho_f, params.rho_w]], dtype=float
    )
    d = 2.0
    dk = d * params.kappa
    r2 = (1.0 / dk) * np.array(
        [
            [1.0 / d, params.alpha],
            [params.alpha, params.s0 * dk + d * params.alpha**2],
        ]
    )
    for name, m in (("R1", r1), ("R2", r2)):
        ev = np.linalg.eigvalsh(m)
        if ev[0] < -1e-12 * max(1.0, abs(ev[1])):
            raise NonPSD(f"{name} has a negative eigenvalue: {ev}")
    return InteractionMatrices(R1=r1, R2=r2)


@dataclass(frozen=True)
class PenaltySpec:
    """Skew-symmetry penalty eps(T) = gamma * h_T^r (r = 2 at lowest order)."""

    gamma: float = 1.0
    r: int = 2

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise NonPSD(f"penalty gamma must be > 0, got {self.gamma}")
        if self.r < 1:
            raise NonPSD(f"penalty exponent r must be >= 1, got {self.r}")

    def eps(self, h_T):
        return self.gamma * np.asarray(h_T, dtype=float) ** self.r


@dataclass(frozen=True)
class BoundaryData:
    """Boundary data; only homogeneous traction and normal flux are supported.

    u_d(x, t) is the solid-velocity trace on Gamma_d (u_d = d/dt of the
    displacement data) and p_d(x, t) the pressure trace on Gamma_p.  Non-zero
    t_bar or w_n would require a lifting that is not implemented, so any
    non-None value is rejected.
    """

    u_d: Optional[Callable] = None
    p_d: Optional[Callable] = None
    t_bar: Optional[Callable] = None
    w_n: Optional[Callable] = None

    def __post_init__(self):
        if self.t_bar is not None or self.w_n is not None:
            raise UnsupportedEssentialData(
                "non-zero traction/normal-flux data requires a lifting "
                "that is not implemented; t_bar and w_n must be None (zero)"
            )


@dataclass(frozen=True)
class LoadFunctions:
    """Right-hand sides of the first-order system; None means zero."""

    f: Optional[Callable] = None  # body force (x, t) -> R^2
    h: Optional[Callable] = None  # fluid body force (x, t) -> R^2
    g: Optional[Callable] = None  # fluid source (x, t) -> R
    eta: Optional[Callable] = None  # tensor source (x, t) -> R^{2x2}


@dataclass(frozen=True)
class InitialState:
    """Initial fields; None means zero. sigma0 must be symmetric pointwise."""

    d0: Optional[Callable] = None
    u0: Optional[Callable] = None
    w0: Optional[Callable] = None
    sigma0: Optional[Callable] = None
    p0: Optional[Callable] = None
