"""Plant dynamics: flows, output sampling, Lie derivatives, invariance checks.

Vector fields and output maps follow the batched numpy convention: ``f`` maps
``(..., n) -> (..., n)`` and ``h`` maps ``(..., n) -> (...)``, so a single call
integrates one state or a whole grid of states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial.distance import cdist

from .errors import Degenerate, NonFinite, OutOfRange, StencilOutOfDomain

DEFAULT_DT = 1e-3
STENCIL_SPACING = 1e-2
STENCIL_HALF_WIDTH = 4


@dataclass(frozen=True)
class DynamicalSystem:
    """Autonomous plant dx/dt = f(x) with scalar output y = h(x)."""

    n: int
    f: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    name: str = ""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box lo[i] < hi[i]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be 1-d arrays of equal length")
        if not np.all(self.lo < self.hi):
            raise ValueError("box requires lo[i] < hi[i] for all i")

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> bool:
        pts = np.asarray(pts, dtype=float)
        return bool(
            np.all(pts >= self.lo - tol) and np.all(pts <= self.hi + tol)
        )

    def inflate(self, frac: float) -> "Box":
        half = 0.5 * (self.hi - self.lo) * frac
        return Box(self.lo - half, self.hi + half)

    def grid(self, counts) -> np.ndarray:
        """Regular grid of points, shape (prod(counts), dim), row-major order."""
        counts = np.broadcast_to(np.asarray(counts, dtype=int), (self.dim,))
        axes = [np.linspace(self.lo[i], self.hi[i], counts[i]) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def spacing(self) -> np.ndarray:
        """Span per axis; divide by (count-1) for grid spacing."""
        return self.hi - self.lo


@dataclass
class Trajectory:
    """Time-indexed states with the scalar signal attached to them.

    For plant runs ``outputs[j] = h(states[j])``; for filter runs the outputs
    column holds the measured signal that drove the filter.
    """

    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    _spline: Optional[CubicSpline] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.outputs = np.asarray(self.outputs, dtype=float)
        if not (len(self.times) == len(self.states) == len(self.outputs)):
            raise ValueError("times, states, outputs must have equal length")

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    def final_state(self) -> np.ndarray:
        return self.states[-1]


def rk4_step(f: Callable, x: np.ndarray, h: float) -> np.ndarray:
    """One classical Runge-Kutta step for an autonomous field."""
    k1 = f(x)
    k2 = f(x + (0.5 * h) * k1)
    k3 = f(x + (0.5 * h) * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _step_times(t0: float, t1: float, dt: float) -> np.ndarray:
    """Node times from t0 to t1 with step |dt|; last node is exactly t1."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    span = t1 - t0
    if span == 0.0:
        return np.array([t0])
    nfull = int(abs(span) / dt + 1e-9)
    sign = 1.0 if span > 0 else -1.0
    times = t0 + sign * dt * np.arange(nfull + 1)
    if abs(times[-1] - t1) > 1e-12 * max(1.0, abs(t1)):
        times = np.append(times, t1)
    else:
        times[-1] = t1
    return times


def integrate_flow(
    system: DynamicalSystem,
    x0: np.ndarray,
    t0: float = 0.0,
    t1: float = 1.0,
    dt: float = DEFAULT_DT,
) -> Trajectory:
    """Fixed-step RK4 flow of the plant; backward integration when t1 < t0."""
    x = np.asarray(x0, dtype=float)
    times = _step_times(t0, t1, dt)
    states = np.empty((len(times),) + x.shape)
    states[0] = x
    for j in range(1, len(times)):
        h = times[j] - times[j - 1]
        x = rk4_step(system.f, x, h)
        if not np.all(np.isfinite(x)):
            raise NonFinite(
                f"state left finite range at t={times[j]:.6g}", time=float(times[j])
            )
        states[j] = x
    outputs = system.h(states)
    return Trajectory(times=times, states=states, outputs=outputs)


def sample_output(traj: Trajectory, t) -> float:
    """Cubic-spline interpolation of the stored outputs; exact at grid nodes."""
    lo, hi = sorted((traj.t0, traj.t1))
    slack = 1e-9 * max(1.0, hi - lo)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < lo - slack) or np.any(t_arr > hi + slack):
        raise OutOfRange(f"t={t} outside stored span [{lo:.6g}, {hi:.6g}]")
    if traj._spline is None:
        times, outputs = traj.times, traj.outputs
        if times[0] > times[-1]:  # backward run; spline needs increasing knots
            times, outputs = times[::-1], outputs[::-1]
        traj._spline = CubicSpline(times, outputs)
    val = traj._spline(np.clip(t_arr, lo, hi))
    return float(val) if np.isscalar(t) or t_arr.ndim == 0 else val


def fd_weights(order: int, offsets: np.ndarray, spacing: float) -> np.ndarray:
    """Central finite-difference weights for the given derivative order.

    Solves the moment conditions sum_j w_j o_j^p = p! * delta(p, order) on the
    integer offsets, then rescales by spacing**order.
    """
    offsets = np.asarray(offsets, dtype=float)
    npts = offsets.size
    if order >= npts:
        raise ValueError("stencil too short for requested derivative order")
    V = np.vander(offsets, npts, increasing=True).T  # V[p, j] = o_j**p
    rhs = np.zeros(npts)
    rhs[order] = float(math.factorial(order))
    w = np.linalg.solve(V, rhs)
    return w / spacing**order


def flow_stencil_states(
    system: DynamicalSystem,
    xs: np.ndarray,
    spacing: float = STENCIL_SPACING,
    half_width: int = STENCIL_HALF_WIDTH,
    dt: float = DEFAULT_DT,
) -> np.ndarray:
    """Flow nodes X(x, j*spacing) for j = -half_width..half_width.

    ``xs`` has shape (N, n); the result has shape (2*half_width+1, N, n).
    Raises StencilOutOfDomain if any leg leaves the finite range.
    """
    xs = np.asarray(xs, dtype=float)
    nodes = np.empty((2 * half_width + 1,) + xs.shape)
    nodes[half_width] = xs
    nsub = max(1, int(np.ceil(spacing / dt)))
    for direction in (-1, 1):
        x = xs.copy()
        for j in range(1, half_width + 1):
            h = direction * spacing / nsub
            for _ in range(nsub):
                x = rk4_step(system.f, x, h)
            if not np.all(np.isfinite(x)):
                raise StencilOutOfDomain(
                    f"stencil leg at offset {direction * j * spacing:+.4g} left finite range"
                )
            nodes[half_width + direction * j] = x
    return nodes


def flow_output_derivatives(
    system: DynamicalSystem,
    xs: np.ndarray,
    g: Callable[[np.ndarray], np.ndarray],
    orders,
    spacing: float = STENCIL_SPACING,
    half_width: int = STENCIL_HALF_WIDTH,
    dt: float = DEFAULT_DT,
) -> np.ndarray:
    """Derivatives d^k/dt^k g(X(x, t)) at t=0 for each requested order k.

    ``xs``: (N, n) batch; ``g`` batched (..., n) -> (...). Result (len(orders), N).
    """
    xs = np.asarray(xs, dtype=float)
    nodes = flow_stencil_states(system, xs, spacing, half_width, dt)
    vals = np.stack([np.asarray(g(nodes[j]), dtype=float) for j in range(len(nodes))])
    offsets = np.arange(-half_width, half_width + 1)
    out = np.empty((len(orders), xs.shape[0]))
    for i, k in enumerate(orders):
        if k == 0:
            out[i] = vals[half_width]
        else:
            w = fd_weights(k, offsets, spacing)
            out[i] = w @ vals
    return out


def flow_time_derivative(
    system: DynamicalSystem,
    x: np.ndarray,
    g: Callable[[np.ndarray], float],
    order: int = 1,
    spacing: float = STENCIL_SPACING,
    half_width: int = STENCIL_HALF_WIDTH,
    dt: float = DEFAULT_DT,
) -> float:
    """Scalar-function variant of flow_output_derivatives for one point."""
    x = np.asarray(x, dtype=float)
    nodes = flow_stencil_states(system, x[None, :], spacing, half_width, dt)[:, 0, :]
    vals = np.array([float(g(node)) for node in nodes])
    if order == 0:
        return float(vals[half_width])
    w = fd_weights(order, np.arange(-half_width, half_width + 1), spacing)
    return float(w @ vals)


def lie_derivatives(
    system: DynamicalSystem,
    x: np.ndarray,
    order: int,
    dt: float = STENCIL_SPACING,
    half_width: int = STENCIL_HALF_WIDTH,
    dt_int: float = DEFAULT_DT,
) -> np.ndarray:
    """(h, L_f h, ..., L_f^{order-1} h)(x) from the output along the flow.

    ``dt`` is the stencil node spacing. Entry 0 is h(x) evaluated directly.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    x = np.asarray(x, dtype=float)
    vals = flow_output_derivatives(
        system, x[None, :], system.h, range(order), dt, half_width, dt_int
    )[:, 0]
    vals[0] = float(system.h(x))
    return vals


def lie_derivatives_grid(
    system: DynamicalSystem,
    xs: np.ndarray,
    order: int,
    dt: float = STENCIL_SPACING,
    half_width: int = STENCIL_HALF_WIDTH,
    dt_int: float = DEFAULT_DT,
) -> np.ndarray:
    """Batched lie_derivatives: xs (N, n) -> (N, order)."""
    vals = flow_output_derivatives(
        system, xs, system.h, range(order), dt, half_width, dt_int
    )
    vals[0] = np.asarray(system.h(np.asarray(xs, dtype=float)), dtype=float)
    return vals.T


@dataclass(frozen=True)
class InvarianceReport:
    """Result of a grid sweep: tight bounding box of visited states."""

    visited: Box
    contained: bool
    nonfinite_count: int
    horizon: float
    grid_points: int


def check_forward_invariance(
    system: DynamicalSystem,
    X0: Box,
    X: Box,
    horizon: float,
    grid: int = 20,
    dt: float = DEFAULT_DT,
) -> InvarianceReport:
    """Simulate a grid over X0 and test containment of all visited states in X.

    Failure is data (contained=False), not an exception; non-finite excursions
    are counted and force a fail.
    """
    pts = X0.grid(grid)
    lo = pts.min(axis=0).copy()
    hi = pts.max(axis=0).copy()
    x = pts.copy()
    alive = np.ones(len(pts), dtype=bool)
    nonfinite = 0
    times = _step_times(0.0, horizon, dt)
    for j in range(1, len(times)):
        x[alive] = rk4_step(system.f, x[alive], times[j] - times[j - 1])
        finite = np.all(np.isfinite(x), axis=1)
        newly_dead = alive & ~finite
        if np.any(newly_dead):
            nonfinite += int(newly_dead.sum())
            alive &= finite
            if not np.any(alive):
                break
        lo = np.minimum(lo, x[alive].min(axis=0))
        hi = np.maximum(hi, x[alive].max(axis=0))
    visited = Box(lo, np.maximum(hi, lo + 1e-15))
    contained = (
        nonfinite == 0
        and bool(np.all(visited.lo >= X.lo) and np.all(visited.hi <= X.hi))
    )
    return InvarianceReport(
        visited=visited,
        contained=contained,
        nonfinite_count=nonfinite,
        horizon=horizon,
        grid_points=len(pts),
    )


def min_lipschitz_ratio(
    xs: np.ndarray, gs: np.ndarray, min_sep: float, block: int = 1024
) -> float:
    """min over pairs with |x_a-x_b| >= min_sep of |g_a-g_b| / |x_a-x_b|.

    Blocked over row chunks so memory stays O(block * N) for large point sets.
    """
    if min_sep <= 0:
        raise ValueError("min_sep must be strictly positive")
    xs = np.asarray(xs, dtype=float)
    gs = np.asarray(gs, dtype=float)
    n = len(xs)
    if n < 2:
        raise Degenerate("need at least two points")
    best = np.inf
    found = False
    for i0 in range(0, n - 1, block):
        xi = xs[i0 : i0 + block]
        gi = gs[i0 : i0 + block]
        dx = cdist(xi, xs[i0:])
        dg = cdist(gi, gs[i0:])
        rows = np.arange(len(xi))[:, None]
        cols = np.arange(n - i0)[None, :]
        mask = (cols > rows) & (dx >= min_sep)
        if np.any(mask):
            found = True
            best = min(best, float(np.min(dg[mask] / dx[mask])))
    if not found:
        raise Degenerate("no pair satisfies the separation floor")
    return best


def injectivity_margin(points, min_sep: float) -> float:
    """Empirical Lipschitz-injectivity constant over sampled (x, g(x)) pairs.

    Returns min over pairs with |x_a - x_b| >= min_sep of
    |g(x_a) - g(x_b)| / |x_a - x_b| in Euclidean norms.
    """
    xs = np.asarray([np.atleast_1d(p[0]) for p in points], dtype=float)
    gs = np.asarray([np.atleast_1d(p[1]) for p in points], dtype=float)
    return min_lipschitz_ratio(xs, gs, min_sep)


def _duffing_f(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.stack([x[..., 1], -0.2 * x[..., 0] - x[..., 0] ** 3], axis=-1)


def _duffing_h(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float)[..., 0]


_PLANTS: dict[str, Callable[[], DynamicalSystem]] = {}


def register_plant(name: str, factory: Callable[[], DynamicalSystem]) -> None:
    """Plugin point: make a plant constructible by name."""
    _PLANTS[name] = factory


def make_plant(name: str) -> DynamicalSystem:
    try:
        return _PLANTS[name]()
    except KeyError:
        raise KeyError(f"unknown plant {name!r}; registered: {sorted(_PLANTS)}") from None


def duffing() -> DynamicalSystem:
    """Undamped softening-free Duffing oscillator with position output."""
    return DynamicalSystem(n=2, f=_duffing_f, h=_duffing_h, name="duffing")


register_plant("duffing", duffing)
