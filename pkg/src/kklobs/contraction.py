"""Scalar contracting maps sigma(z, y), their bounds, and the implicit zero psi.

A ContractionMap carries sigma together with its partial derivatives and the
declared slope bounds: -beta <= d(sigma)/dz <= -alpha < 0 and
|d(sigma)/dy| >= gamma on the region of use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .errors import BracketFailure, SignError

PSI_TOL = 1e-12
_NEWTON_CAP = 50


@dataclass(frozen=True)
class ContractionMap:
    """sigma: R x R -> R with derivatives and declared contraction bounds."""

    sigma: Callable
    dsigma_dz: Callable
    dsigma_dy: Callable
    z_partial: Callable  # (j, z, y) -> d^j sigma / dz^j
    declared_alpha: float
    declared_beta: float
    declared_gamma: float
    name: str = ""

    def __post_init__(self):
        if not (0 < self.declared_alpha <= self.declared_beta):
            raise ValueError("need 0 < alpha <= beta")
        if self.declared_gamma <= 0:
            raise ValueError("gamma must be positive")


@dataclass(frozen=True)
class BoundsReport:
    """Sampled extrema of the partials versus the declared bounds."""

    alpha_hat: float
    beta_hat: float
    gamma_hat: float
    passed: bool
    sample_count: int
    z_range: tuple
    y_range: tuple


def builtin_linear(a: float) -> ContractionMap:
    """sigma(z, y) = a (z - y) with a < 0."""
    if a >= 0:
        raise SignError(f"linear slope must be negative, got {a}")
    a = float(a)

    def sigma(z, y):
        return a * (np.asarray(z, dtype=float) - y)

    def _const(z, y, value):
        shape = np.broadcast(np.asarray(z), np.asarray(y)).shape
        return np.full(shape, value) if shape else value

    def dz(z, y):
        return _const(z, y, a)

    def dy(z, y):
        return _const(z, y, -a)

    def z_partial(j, z, y):
        if j == 0:
            return sigma(z, y)
        return _const(z, y, a if j == 1 else 0.0)

    return ContractionMap(
        sigma=sigma,
        dsigma_dz=dz,
        dsigma_dy=dy,
        z_partial=z_partial,
        declared_alpha=abs(a),
        declared_beta=abs(a),
        declared_gamma=abs(a),
        name=f"linear(a={a:g})",
    )


def _tanh_derivative_polys(max_order: int) -> list[Polynomial]:
    """Polynomials p_j with d^j/dx^j tanh(x) = p_j(tanh x), j = 0..max_order."""
    polys = [Polynomial([0.0, 1.0]), Polynomial([1.0, 0.0, -1.0])]
    for _ in range(2, max_order + 1):
        polys.append(polys[-1].deriv() * Polynomial([1.0, 0.0, -1.0]))
    return polys


def builtin_tanh_blend(
    a_fast: float, a_slow: float, max_partial_order: int = 9
) -> ContractionMap:
    """sigma(z, y) = a_fast (z-y) + (a_slow - a_fast) tanh(z-y).

    Fast slope a_fast for large |z-y|, slow slope a_slow near z = y; requires
    a_fast < a_slow < 0.
    """
    if not (a_fast < a_slow < 0):
        raise SignError(f"need a_fast < a_slow < 0, got ({a_fast}, {a_slow})")
    a_fast, a_slow = float(a_fast), float(a_slow)
    c = a_slow - a_fast
    polys = _tanh_derivative_polys(max_partial_order)

    def sigma(z, y):
        d = np.asarray(z, dtype=float) - y
        return a_fast * d + c * np.tanh(d)

    def dz(z, y):
        d = np.asarray(z, dtype=float) - y
        return a_fast + c * polys[1](np.tanh(d))

    def dy(z, y):
        return -dz(z, y)

    def z_partial(j, z, y):
        if j == 0:
            return sigma(z, y)
        d = np.asarray(z, dtype=float) - y
        if j == 1:
            return a_fast + c * polys[1](np.tanh(d))
        if j >= len(polys):
            raise ValueError(f"z-partials precomputed up to order {len(polys) - 1}")
        return c * polys[j](np.tanh(d))

    return ContractionMap(
        sigma=sigma,
        dsigma_dz=dz,
        dsigma_dy=dy,
        z_partial=z_partial,
        declared_alpha=abs(a_slow),
        declared_beta=abs(a_fast),
        declared_gamma=abs(a_slow),
        name=f"tanh_blend(a_fast={a_fast:g}, a_slow={a_slow:g})",
    )


def contraction_from_config(cfg: dict) -> ContractionMap:
    """Build a ContractionMap from its JSON descriptor."""
    kind = cfg.get("kind")
    if kind == "linear":
        return builtin_linear(cfg["a"])
    if kind == "tanh_blend":
        return builtin_tanh_blend(cfg["a_fast"], cfg["a_slow"])
    raise ValueError(f"unknown contraction kind {kind!r}")


def estimate_bounds(
    cm: ContractionMap, z_range, y_range, grid=(64, 64)
) -> BoundsReport:
    """Sample the partials over a (z, y) box and compare with declared bounds."""
    gz, gy = (grid, grid) if np.isscalar(grid) else grid
    if gz < 2 or gy < 2:
        raise ValueError("grid must be >= 2 per axis")
    zs = np.linspace(z_range[0], z_range[1], gz)
    ys = np.linspace(y_range[0], y_range[1], gy)
    Z, Y = np.meshgrid(zs, ys, indexing="ij")
    dz = np.asarray(cm.dsigma_dz(Z, Y), dtype=float)
    dy = np.asarray(cm.dsigma_dy(Z, Y), dtype=float)
    alpha_hat = float(-dz.max())
    beta_hat = float(-dz.min())
    gamma_hat = float(np.abs(dy).min())
    passed = (
        bool(np.all(dz < 0))
        and alpha_hat >= cm.declared_alpha * (1 - 1e-6)
        and beta_hat <= cm.declared_beta * (1 + 1e-6)
        and gamma_hat >= cm.declared_gamma * (1 - 1e-6)
    )
    return BoundsReport(
        alpha_hat=alpha_hat,
        beta_hat=beta_hat,
        gamma_hat=gamma_hat,
        passed=passed,
        sample_count=int(Z.size),
        z_range=(float(z_range[0]), float(z_range[1])),
        y_range=(float(y_range[0]), float(y_range[1])),
    )


def solve_psi(cm: ContractionMap, y: float, tol: float = PSI_TOL) -> float:
    """Unique zero of z -> sigma(z, y), found by bracketing plus safeguarded Newton.

    sigma is strictly decreasing in z, so a sign change brackets the single root.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = float(y)
    s0 = float(cm.sigma(y, y))
    if abs(s0) <= tol:
        return y
    # sigma decreases in z: positive value means the root lies above.
    direction = 1.0 if s0 > 0 else -1.0
    reach_cap = 1e6 / cm.declared_alpha
    step = min(max(1.0, abs(s0) / cm.declared_beta), reach_cap)
    lo, s_lo = y, s0
    while True:
        z_far = lo + direction * step
        s_far = float(cm.sigma(z_far, y))
        if s_far == 0.0:
            return z_far
        if np.sign(s_far) != np.sign(s0):
            break
        lo, s_lo = z_far, s_far
        step *= 2.0
        if abs(z_far - y) > reach_cap:
            raise BracketFailure(
                f"no sign change within {reach_cap:g} of y={y:g}; sigma is not contracting"
            )
    # orient bracket as (z_pos with sigma>0, z_neg with sigma<0)
    if direction > 0:
        z_pos, z_neg = lo, z_far
    else:
        z_pos, z_neg = z_far, lo
    z = 0.5 * (z_pos + z_neg)
    for _ in range(_NEWTON_CAP):
        s = float(cm.sigma(z, y))
        if abs(s) <= tol:
            return z
        if s > 0:
            z_pos = z
        else:
            z_neg = z
        slope = float(cm.dsigma_dz(z, y))
        z_next = z - s / slope if slope < 0 else None
        inside = z_next is not None and (
            min(z_pos, z_neg) < z_next < max(z_pos, z_neg)
        )
        z = z_next if inside else 0.5 * (z_pos + z_neg)
    # Newton budget exhausted; finish with plain bisection.
    for _ in range(200):
        s = float(cm.sigma(z, y))
        if abs(s) <= tol:
            return z
        if s > 0:
            z_pos = z
        else:
            z_neg = z
        z = 0.5 * (z_pos + z_neg)
    return z


def kappa(cm: ContractionMap, y: float, tol: float = PSI_TOL) -> float:
    """Reciprocal slope 1 / (d sigma/dz) at the zero psi(y); finite and negative."""
    psi = solve_psi(cm, y, tol)
    return 1.0 / float(cm.dsigma_dz(psi, y))
