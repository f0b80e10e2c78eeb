"""Generalized gamma hypermodel machinery.

The conditionally Gaussian coefficient model with a generalized gamma
hyperprior on the variances leads to a MAP objective whose variance block
separates componentwise.  This module owns that block: the parameter
container, the variance update map (closed forms where they exist, a
sorted ODE sweep plus safeguarded root polish otherwise), the convexity
threshold, the compatibility rescaling used when handing off between two
parameter sets, the data-sensitivity scales, and penalty/objective
evaluation.

Componentwise, with scaled variables xi = theta/vartheta and
z = |alpha|/sqrt(vartheta), the stationary variance solves

    r * xi**(r+1) - eta * xi - z**2 / 2 = 0,        eta = r*beta - 3/2,

and equals phi(z) where phi solves the initial value problem

    phi'(z) = 2 z phi / (2 r^2 phi**(r+1) + z^2),   phi(0) = (eta/r)**(1/r).

All updates here refine the root to relative residual <= 1e-12, so the
result does not depend on the integrator used for the initial guess.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linops import LinearMap, column_norms_squared

#: Residual tolerance for the stationarity equation after polishing.
ROOT_RTOL = 1e-12


class ParameterError(ValueError):
    """Raised for inadmissible hyperparameter combinations."""


@dataclass(frozen=True)
class HyperParams:
    """One generalized gamma parameter set (r, beta, componentwise scales).

    Admissibility requires eta/r > 0 so that the zero-coefficient variance
    (eta/r)**(1/r) exists and is positive; the boundary eta == 0 (with
    r > 0) is additionally accepted because penalty evaluation and the
    variance update remain well defined there for nonzero coefficients.
    Solvers that need a strictly positive variance floor must check
    :attr:`strictly_admissible`.
    """

    r: float
    beta: float
    theta_scale: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        r = float(self.r)
        beta = float(self.beta)
        scale = np.atleast_1d(np.asarray(self.theta_scale, dtype=float))
        if r == 0.0:
            raise ParameterError("r must be nonzero")
        if beta <= 0.0:
            raise ParameterError(f"beta must be positive, got {beta}")
        eta = r * beta - 1.5
        if eta / r < 0.0:
            raise ParameterError(
                f"inadmissible (r, beta) = ({r}, {beta}): eta/r = {eta / r:.3g} < 0; "
                "need eta > 0 for r > 0 and eta < 0 for r < 0"
            )
        if scale.ndim != 1 or scale.size == 0:
            raise ParameterError("theta_scale must be a nonempty vector")
        if not np.isfinite(scale).all() or np.any(scale <= 0.0):
            raise ParameterError("theta_scale entries must be positive and finite")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta_scale", scale.copy())
        self.theta_scale.setflags(write=False)

    @classmethod
    def from_eta(cls, r: float, eta: float, theta_scale=1.0) -> "HyperParams":
        """Construct from (r, eta) with beta = (eta + 3/2)/r."""
        if r == 0.0:
            raise ParameterError("r must be nonzero")
        return cls(r=r, beta=(eta + 1.5) / r, theta_scale=np.atleast_1d(theta_scale))

    @property
    def eta(self) -> float:
        return self.r * self.beta - 1.5

    @property
    def strictly_admissible(self) -> bool:
        return self.eta / self.r > 0.0

    def with_scale(self, theta_scale) -> "HyperParams":
        return HyperParams(self.r, self.beta, np.atleast_1d(theta_scale))


@dataclass(frozen=True)
class PenaltyValue:
    total: float
    per_component: np.ndarray


def phi_zero(params: HyperParams) -> float:
    """Scaled variance at a zero coefficient: (eta/r)**(1/r)."""
    ratio = params.eta / params.r
    if ratio == 0.0:
        if params.r < 0:
            raise ParameterError("phi(0) undefined for eta = 0 with r < 0")
        return 0.0
    return float(ratio ** (1.0 / params.r))


# ---------------------------------------------------------------------------
# stationarity equation solvers


def _xi_closed_form(z2: np.ndarray, r: float, eta: float) -> np.ndarray | None:
    """Exact xi for the parameter choices that admit one, else None.

    z2 is z**2; covers r = 1, r = -1 and the eta = 0 boundary.
    """
    if r == 1.0:
        return 0.5 * (eta + np.sqrt(eta * eta + 2.0 * z2))
    if r == -1.0:
        return (1.0 + 0.5 * z2) / (-eta)
    if eta == 0.0:
        return (0.5 * z2 / r) ** (1.0 / (r + 1.0))
    return None


def _stationarity_residual(xi, z2, r, eta):
    """r*xi^(r+1) - eta*xi - z^2/2 and a positive scale for relative tests."""
    lead = r * xi ** (r + 1.0)
    res = lead - eta * xi - 0.5 * z2
    scale = np.abs(lead) + np.abs(eta) * xi + 0.5 * z2
    return res, np.maximum(scale, 1e-300)


def _phi_ode_sweep(z_sorted: np.ndarray, r: float, eta: float, xi0: float) -> np.ndarray:
    """Integrate the xi initial value problem through sorted z values.

    Classical fourth-order Runge-Kutta with step h = min(gap/8,
    0.05*(1+z)) across consecutive gaps; a single trajectory serves all
    components.  Accuracy only needs to be good enough to seed the root
    polish.
    """

    def slope(z: float, xi: float) -> float:
        return 2.0 * z * xi / (2.0 * r * r * xi ** (r + 1.0) + z * z)

    out = np.empty(len(z_sorted))
    z, xi = 0.0, xi0
    for i, zt in enumerate(z_sorted):
        gap = zt - z
        while z < zt:
            h = min(zt - z, max(gap / 8.0, 1e-300), 0.05 * (1.0 + z))
            k1 = slope(z, xi)
            k2 = slope(z + 0.5 * h, xi + 0.5 * h * k1)
            k3 = slope(z + 0.5 * h, xi + 0.5 * h * k2)
            k4 = slope(z + h, xi + h * k3)
            xi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            z += h
        z = zt
        out[i] = xi
    return out


def _polish_xi(xi_guess: np.ndarray, z2: np.ndarray, r: float, eta: float) -> np.ndarray:
    """Safeguarded Newton/bisection on the stationarity equation.

    The root is the unique one at or above phi(0), where the equation's
    left side is strictly increasing; Newton steps leaving the bracket
    fall back to bisection.
    """
    lo = np.full_like(xi_guess, (eta / r) ** (1.0 / r) if eta != 0.0 else 0.0)
    hi = np.maximum(2.0 * xi_guess, 2.0 * lo + 1e-30)
    res_hi, _ = _stationarity_residual(hi, z2, r, eta)
    for _ in range(200):
        grow = res_hi < 0.0
        if not grow.any():
            break
        hi[grow] *= 2.0
        res_hi[grow], _ = _stationarity_residual(hi[grow], z2[grow], r, eta)
    xi = np.clip(xi_guess, lo, hi)

    for _ in range(100):
        res, scale = _stationarity_residual(xi, z2, r, eta)
        if np.all(np.abs(res) <= ROOT_RTOL * scale):
            break
        pos = res > 0.0
        hi = np.where(pos, xi, hi)
        lo = np.where(pos, lo, xi)
        deriv = r * (r + 1.0) * xi**r - eta
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(deriv > 0.0, res / np.where(deriv > 0.0, deriv, 1.0), 0.0)
        nxt = xi - step
        bad = (deriv <= 0.0) | (nxt <= lo) | (nxt >= hi) | ~np.isfinite(nxt)
        xi = np.where(bad, 0.5 * (lo + hi), nxt)
    return xi


def _xi_from_z(z: np.ndarray, params: HyperParams) -> np.ndarray:
    """Scaled variance xi = phi(|z|) for a batch of scaled coefficients."""
    r, eta = params.r, params.eta
    z = np.abs(np.asarray(z, dtype=float))
    z2 = z * z
    closed = _xi_closed_form(z2, r, eta)
    if closed is not None:
        return closed

    xi = np.empty_like(z)
    xi0 = phi_zero(params)
    zero = z == 0.0
    xi[zero] = xi0
    if (~zero).any():
        order = np.argsort(z[~zero], kind="stable")
        z_act = z[~zero][order]
        guesses = _phi_ode_sweep(z_act, r, eta, xi0)
        polished = _polish_xi(guesses, z_act * z_act, r, eta)
        tmp = np.empty_like(z_act)
        tmp[order] = polished
        xi[~zero] = tmp
    return xi


def theta_update(alpha_j: float, scale_j: float, params: HyperParams) -> float:
    """Stationary variance for one component at coefficient value alpha_j."""
    if scale_j <= 0.0 or not np.isfinite(scale_j):
        raise ParameterError(f"scale must be positive and finite, got {scale_j}")
    z = abs(float(alpha_j)) / math.sqrt(scale_j)
    return float(scale_j * _xi_from_z(np.array([z]), params)[0])


def theta_update_batch(alpha, scales, params: HyperParams) -> np.ndarray:
    """Vectorized :func:`theta_update`; one ODE sweep over sorted gaps."""
    alpha = np.asarray(alpha, dtype=float)
    scales = np.asarray(scales, dtype=float)
    if alpha.shape != scales.shape:
        raise ValueError(
            f"alpha and scales must have matching shapes: {alpha.shape} vs {scales.shape}"
        )
    if np.any(scales <= 0.0) or not np.isfinite(scales).all():
        raise ParameterError("scales must be positive and finite")
    z = np.abs(alpha) / np.sqrt(scales)
    return scales * _xi_from_z(z, params)


# ---------------------------------------------------------------------------
# thresholds, compatibility, sensitivities


def convexity_threshold(params: HyperParams, j: int | None = None):
    """Variance level below which the componentwise objective is convex.

    Infinite for r >= 1 (globally convex regime); otherwise
    theta_scale_j * (eta / (r |r - 1|))**(1/r).  Returns the full vector
    when ``j`` is None.
    """
    r, eta = params.r, params.eta
    scale = params.theta_scale if j is None else params.theta_scale[j]
    if r >= 1.0:
        if eta <= 0.0:
            raise ParameterError(
                f"convexity threshold undefined for r = {r} with eta = {eta:.3g} <= 0"
            )
        return np.full_like(scale, np.inf) if j is None else math.inf
    if eta == 0.0:
        return np.zeros_like(scale) if j is None else 0.0
    level = (eta / (r * abs(r - 1.0))) ** (1.0 / r)
    return scale * level


def compatible_scale(params1: HyperParams, r2: float, beta2: float) -> np.ndarray:
    """Scales for a second parameter set matching the zero-coefficient
    variance of the first: scale1 * phi1(0) = scale2 * phi2(0)."""
    probe = HyperParams(r2, beta2)
    phi2 = phi_zero(probe)
    if phi2 == 0.0:
        raise ParameterError("second parameter set has zero variance at the origin")
    return params1.theta_scale * (phi_zero(params1) / phi2)


def sensitivity_weights(forward_dict: LinearMap, c: float = 1.0) -> np.ndarray:
    """Scales inversely proportional to squared column norms of the
    forward-times-dictionary map, so no atom is favored by its gain."""
    if c <= 0.0:
        raise ParameterError(f"sensitivity constant must be positive, got {c}")
    norms2 = column_norms_squared(forward_dict)
    if np.any(norms2 == 0.0):
        bad = int(np.flatnonzero(norms2 == 0.0)[0])
        raise ValueError(
            f"degenerate column {bad}: atom is invisible to the data (zero norm)"
        )
    return c / norms2


# ---------------------------------------------------------------------------
# penalty and objective


def penalty(alpha, theta, params: HyperParams) -> PenaltyValue:
    """Componentwise variance penalty

    alpha^2/(2 theta) - eta*log(theta/scale) + (theta/scale)^r.
    """
    alpha = np.asarray(alpha, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0.0):
        raise ValueError("penalty requires strictly positive variances")
    scale = np.broadcast_to(params.theta_scale, theta.shape)
    ratio = theta / scale
    per = 0.5 * alpha**2 / theta - params.eta * np.log(ratio) + ratio**params.r
    return PenaltyValue(total=float(per.sum()), per_component=per)


def objective(alpha, theta, b, forward_dict: LinearMap, params: HyperParams) -> float:
    """Half squared data misfit plus the variance penalty."""
    residual = np.asarray(b, dtype=float) - forward_dict.apply(np.asarray(alpha, dtype=float))
    return 0.5 * float(residual @ residual) + penalty(alpha, theta, params).total
