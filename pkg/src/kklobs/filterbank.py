"""Banks of output filters: linear ż = Az + By or parallel contracting scalars.

A nonlinear bank integrates ż_i = k λ_i σ_i(z_i, y) for distinct positive
gains λ_i; the linear bank is the matrix form with A Hurwitz diagonal. Both
expose ``rhs(z, y)`` with batched broadcasting over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .contraction import ContractionMap, contraction_from_config
from .dynsys import DynamicalSystem, Trajectory, _step_times, sample_output
from .errors import DuplicateLambda, GapUnderflow, NonFinite, SignError


def _check_lambdas(lambdas) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("lambdas must be a non-empty vector")
    if np.any(lam <= 0):
        raise SignError("lambdas must be strictly positive")
    if len(np.unique(lam)) != lam.size:
        raise DuplicateLambda(f"lambdas must be pairwise distinct, got {lam.tolist()}")
    return lam


@dataclass(frozen=True)
class LinearBank:
    """ż = A z + B y with A = a·diag(λ) and B = -a·λ, i.e. ż_i = a λ_i (z_i - y)."""

    A: np.ndarray
    B: np.ndarray
    a: float
    lambdas: np.ndarray

    kind = "linear"

    @property
    def m_f(self) -> int:
        return self.B.size

    @property
    def gain(self) -> float:
        return 1.0

    @property
    def alpha_min(self) -> float:
        return abs(self.a)

    @property
    def beta_max(self) -> float:
        return abs(self.a)

    def rhs(self, z: np.ndarray, y) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return z @ self.A.T + np.multiply.outer(np.asarray(y, dtype=float), self.B)

    def descriptor(self) -> dict:
        return {"kind": "linear", "a": self.a, "lambdas": self.lambdas.tolist()}


@dataclass(frozen=True)
class NonlinearBank:
    """Parallel contracting scalars ż_i = k λ_i σ_i(z_i, y)."""

    sigmas: tuple
    lambdas: np.ndarray
    k: float

    kind = "nonlinear"

    def __post_init__(self):
        object.__setattr__(self, "lambdas", _check_lambdas(self.lambdas))
        object.__setattr__(self, "sigmas", tuple(self.sigmas))
        if self.k <= 0:
            raise SignError("global gain k must be positive")
        if len(self.sigmas) != self.lambdas.size:
            raise ValueError("need one ContractionMap per lambda")

    @property
    def m_f(self) -> int:
        return self.lambdas.size

    @property
    def gain(self) -> float:
        return self.k

    @property
    def alpha_min(self) -> float:
        return min(cm.declared_alpha for cm in self.sigmas)

    @property
    def beta_max(self) -> float:
        return max(cm.declared_beta for cm in self.sigmas)

    def rhs(self, z: np.ndarray, y) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        cols = [
            self.k * self.lambdas[i] * self.sigmas[i].sigma(z[..., i], y)
            for i in range(self.m_f)
        ]
        return np.stack(cols, axis=-1)

    def descriptor(self) -> dict:
        names = [cm.name for cm in self.sigmas]
        return {
            "kind": "nonlinear",
            "sigma": names[0] if len(set(names)) == 1 else names,
            "lambdas": self.lambdas.tolist(),
            "k": self.k,
        }


FilterBank = Union[LinearBank, NonlinearBank]


def linear_bank_from(a: float, lambdas) -> LinearBank:
    """Diagonal linear bank replicating ż_i = a λ_i (z_i - y) per row."""
    if a >= 0:
        raise SignError(f"linear bank slope must be negative, got {a}")
    lam = _check_lambdas(lambdas)
    A = float(a) * np.diag(lam)
    B = -float(a) * lam
    return LinearBank(A=A, B=B, a=float(a), lambdas=lam)


def nonlinear_bank(sigma, lambdas, k: float = 1.0) -> NonlinearBank:
    """Nonlinear bank; a single ContractionMap is replicated across filters."""
    lam = _check_lambdas(lambdas)
    if isinstance(sigma, ContractionMap):
        sigmas = (sigma,) * lam.size
    else:
        sigmas = tuple(sigma)
    return NonlinearBank(sigmas=sigmas, lambdas=lam, k=float(k))


def bank_from_config(cfg: dict) -> FilterBank:
    """Build a bank from its JSON descriptor."""
    kind = cfg.get("kind")
    if kind == "linear":
        return linear_bank_from(cfg["a"], cfg["lambdas"])
    if kind == "nonlinear":
        sigma = contraction_from_config(cfg["sigma"])
        return nonlinear_bank(sigma, cfg["lambdas"], cfg.get("k", 1.0))
    raise ValueError(f"unknown bank kind {kind!r}")


@dataclass
class OutputSignal:
    """Measured output y(t): trajectory-backed interpolant or closed form,
    plus an optional additive measurement noise."""

    source: Union[Trajectory, Callable[[float], float]]
    noise: Optional[Callable[[float], float]] = None

    def measure(self, t):
        if isinstance(self.source, Trajectory):
            y = sample_output(self.source, t)
        else:
            y = self.source(t)
        if self.noise is not None:
            y = y + self.noise(t)
        return y


def sinusoidal_noise(amplitude: float, angular_frequency: float) -> Callable:
    """nu(t) = amplitude * sin(angular_frequency * t)."""

    def nu(t):
        return amplitude * np.sin(angular_frequency * t)

    return nu


def step_filter(
    bank: FilterBank, z: np.ndarray, signal: OutputSignal, t: float, dt: float
) -> np.ndarray:
    """One RK4 step of the bank driven by the signal, sampled at stage times."""
    z = np.asarray(z, dtype=float)
    y0 = signal.measure(t)
    y_half = signal.measure(t + 0.5 * dt)
    y1 = signal.measure(t + dt)
    k1 = bank.rhs(z, y0)
    k2 = bank.rhs(z + (0.5 * dt) * k1, y_half)
    k3 = bank.rhs(z + (0.5 * dt) * k2, y_half)
    k4 = bank.rhs(z + dt * k3, y1)
    return z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def run_filter(
    bank: FilterBank,
    signal: OutputSignal,
    z0: np.ndarray,
    t0: float,
    t1: float,
    dt: float,
) -> Trajectory:
    """Integrate the driven bank; outputs column stores the measured signal."""
    z = np.asarray(z0, dtype=float)
    times = _step_times(t0, t1, dt)
    states = np.empty((len(times),) + z.shape)
    states[0] = z
    for j in range(1, len(times)):
        h = times[j] - times[j - 1]
        z = step_filter(bank, z, signal, times[j - 1], h)
        if not np.all(np.isfinite(z)):
            raise NonFinite(
                f"filter state left finite range at t={times[j]:.6g}",
                time=float(times[j]),
            )
        states[j] = z
    measured = np.array([signal.measure(t) for t in times])
    return Trajectory(times=times, states=states, outputs=measured)


def coupled_step(
    system: DynamicalSystem,
    bank: FilterBank,
    x: np.ndarray,
    z: np.ndarray,
    t: float,
    dt: float,
    noise: Optional[Callable] = None,
):
    """One RK4 step of the plant-filter interconnection, batched over rows.

    The filter sees y = h(x) + nu(t) at the RK4 stage times; the plant is
    noise-free.
    """

    def rates(xs, zs, s):
        dx = system.f(xs)
        y = system.h(xs)
        if noise is not None:
            y = y + noise(s)
        return dx, bank.rhs(zs, y)

    k1x, k1z = rates(x, z, t)
    k2x, k2z = rates(x + (0.5 * dt) * k1x, z + (0.5 * dt) * k1z, t + 0.5 * dt)
    k3x, k3z = rates(x + (0.5 * dt) * k2x, z + (0.5 * dt) * k2z, t + 0.5 * dt)
    k4x, k4z = rates(x + dt * k3x, z + dt * k3z, t + dt)
    x_next = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    z_next = z + (dt / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
    return x_next, z_next


def co_simulate_final(
    system: DynamicalSystem,
    bank: FilterBank,
    x0s: np.ndarray,
    z0s: np.ndarray,
    t1: float,
    dt: float,
    noise: Optional[Callable] = None,
):
    """Batched plant+filter run keeping only final states.

    Returns (x_final, z_final, ok) where ok flags rows that stayed finite;
    non-finite rows are frozen at their last finite value.
    """
    x = np.array(x0s, dtype=float, copy=True)
    z = np.array(z0s, dtype=float, copy=True)
    ok = np.ones(len(x), dtype=bool)
    times = _step_times(0.0, t1, dt)
    for j in range(1, len(times)):
        h = times[j] - times[j - 1]
        xn, zn = coupled_step(system, bank, x[ok], z[ok], times[j - 1], h, noise)
        finite = np.all(np.isfinite(xn), axis=1) & np.all(np.isfinite(zn), axis=1)
        idx = np.flatnonzero(ok)
        x[idx[finite]] = xn[finite]
        z[idx[finite]] = zn[finite]
        if not np.all(finite):
            ok[idx[~finite]] = False
            if not np.any(ok):
                break
    return x, z, ok


@dataclass(frozen=True)
class RateReport:
    """Log-gap decay slope of two filter solutions under one signal."""

    fitted_rate: float
    bound_rate: float  # k * min(lambda) * min(alpha): guaranteed decay
    rate_upper: float  # k * max(lambda) * max(beta): fastest possible decay
    passed: bool
    window: tuple
    n_points: int


def contraction_rate_check(
    bank: FilterBank,
    signal: OutputSignal,
    z0_a: np.ndarray,
    z0_b: np.ndarray,
    horizon: float,
    dt: float,
    gap_window=(1e-8, 1e-1),
) -> RateReport:
    """Fit the decay rate of |z_a - z_b| and compare with the contraction bound."""
    z0_a = np.asarray(z0_a, dtype=float)
    z0_b = np.asarray(z0_b, dtype=float)
    gap0 = float(np.linalg.norm(z0_a - z0_b))
    if gap0 < 1e-12:
        raise GapUnderflow(f"initial gap {gap0:g} below 1e-12")
    times = _step_times(0.0, horizon, dt)
    z = np.stack([z0_a, z0_b])
    gaps = np.empty(len(times))
    gaps[0] = gap0
    for j in range(1, len(times)):
        z = step_filter(bank, z, signal, times[j - 1], times[j] - times[j - 1])
        gaps[j] = np.linalg.norm(z[0] - z[1])
    lo, hi = gap_window
    below = np.flatnonzero(gaps < lo)
    last = below[0] if below.size else len(gaps)
    mask = np.zeros(len(gaps), dtype=bool)
    mask[:last] = gaps[:last] <= hi
    if mask.sum() < 10:
        raise GapUnderflow("fewer than 10 samples inside the gap window")
    t_fit = times[mask]
    slope, _ = np.polyfit(t_fit, np.log(gaps[mask]), 1)
    lam = bank.lambdas
    bound_rate = bank.gain * float(lam.min()) * bank.alpha_min
    rate_upper = bank.gain * float(lam.max()) * bank.beta_max
    passed = slope <= -bound_rate * (1 - 0.05)
    return RateReport(
        fitted_rate=float(slope),
        bound_rate=bound_rate,
        rate_upper=rate_upper,
        passed=passed,
        window=(float(t_fit[0]), float(t_fit[-1])),
        n_points=int(mask.sum()),
    )
