"""Numerical construction of the immersion map as a washed-out (x, z) dataset.

Each grid point of the initial box is co-simulated with the filter bank long
enough for the filters to forget their initialization; the stored pairs then
approximate the graph of the map, and nearest-neighbor lookups over the two
columns realize the forward map and its left-inverse.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from .dynsys import Box, DynamicalSystem, min_lipschitz_ratio
from .errors import Degenerate
from .filterbank import FilterBank, co_simulate_final

WASHOUT_EFOLDS = 20.0
EXTRAPOLATION_FACTOR = 3.0
_TIE_TOL = 1e-12


def _query_workers() -> int:
    return int(os.environ.get("KKL_THREADS", "1"))


class LookupResult(NamedTuple):
    value: np.ndarray
    distance: float
    index: int
    extrapolated: bool


@dataclass
class KklDataset:
    """Stored (x, z) pairs with nearest-neighbor indexes over both columns."""

    xs: np.ndarray
    zs: np.ndarray
    meta: dict
    x_index: cKDTree = field(init=False, repr=False, compare=False)
    z_index: cKDTree = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.zs = np.asarray(self.zs, dtype=float)
        if len(self.xs) == 0:
            raise ValueError("dataset must be non-empty")
        if len(self.xs) != len(self.zs):
            raise ValueError("x and z columns must pair up")
        self.x_index = cKDTree(self.xs)
        self.z_index = cKDTree(self.zs)

    def __len__(self) -> int:
        return len(self.xs)

    @property
    def n(self) -> int:
        return self.xs.shape[1]

    @property
    def m_f(self) -> int:
        return self.zs.shape[1]

    @property
    def pairs(self):
        return list(zip(self.xs, self.zs))

    @property
    def x_spacing(self) -> float:
        """Grid spacing of the generating initial-condition grid (max axis)."""
        return float(self.meta["grid_spacing"])

    @property
    def z_spacing(self) -> float:
        """Median nearest-neighbor distance of the stored z cloud."""
        cached = self.meta.get("z_spacing")
        if cached is None:
            d, _ = self.z_index.query(self.zs, k=2, workers=_query_workers())
            cached = float(np.median(d[:, 1]))
            self.meta["z_spacing"] = cached
        return float(cached)


def generate_dataset(
    system: DynamicalSystem,
    bank: FilterBank,
    X0: Box,
    grid,
    dt: float,
    z0_value: float = 0.0,
    washout: Optional[float] = None,
) -> KklDataset:
    """Co-simulate a grid of initial conditions and store washed-out pairs.

    The washout time defaults to 20 e-folds of the slowest filter,
    t_l = 20 / (k * min(lambda)); filters start at z = z0_value.
    """
    counts = np.broadcast_to(np.asarray(grid, dtype=int), (X0.dim,))
    if np.any(counts < 2):
        raise ValueError("grid must be >= 2 per dimension")
    t_l = washout if washout is not None else WASHOUT_EFOLDS / (
        bank.gain * float(bank.lambdas.min())
    )
    x0s = X0.grid(counts)
    z0s = np.full((len(x0s), bank.m_f), float(z0_value))
    xs, zs, ok = co_simulate_final(system, bank, x0s, z0s, t_l, dt)
    skipped = int((~ok).sum())
    meta = {
        "plant": system.name,
        "bank": bank.descriptor(),
        "grid": counts.tolist(),
        "X0": {"lo": X0.lo.tolist(), "hi": X0.hi.tolist()},
        "washout": float(t_l),
        "dt": float(dt),
        "z0_value": float(z0_value),
        "skipped_nonfinite": skipped,
        "grid_spacing": float(np.max(X0.spacing / (counts - 1))),
    }
    return KklDataset(xs=xs[ok], zs=zs[ok], meta=meta)


def _nearest(tree: cKDTree, stored: np.ndarray, q: np.ndarray) -> tuple[float, int]:
    """Nearest stored point with ties broken by lowest insertion index."""
    k = min(4, len(stored))
    d, i = tree.query(q, k=k)
    d = np.atleast_1d(d)
    i = np.atleast_1d(i)
    tied = d <= d[0] + _TIE_TOL * (1.0 + d[0])
    return float(d[0]), int(i[tied].min())


def T_lookup(ds: KklDataset, x: np.ndarray) -> LookupResult:
    """z-column of the nearest stored x; distance flags extrapolation."""
    x = np.asarray(x, dtype=float)
    dist, idx = _nearest(ds.x_index, ds.xs, x)
    return LookupResult(
        value=ds.zs[idx].copy(),
        distance=dist,
        index=idx,
        extrapolated=dist > EXTRAPOLATION_FACTOR * ds.x_spacing,
    )


def Tinv_lookup(ds: KklDataset, z: np.ndarray) -> LookupResult:
    """x-column of the nearest stored z; mirror of T_lookup."""
    z = np.asarray(z, dtype=float)
    dist, idx = _nearest(ds.z_index, ds.zs, z)
    return LookupResult(
        value=ds.xs[idx].copy(),
        distance=dist,
        index=idx,
        extrapolated=dist > EXTRAPOLATION_FACTOR * ds.z_spacing,
    )


def t_lookup_batch(ds: KklDataset, xs: np.ndarray):
    """Bulk forward lookup: (N, n) -> (values (N, m_f), distances (N,))."""
    d, i = ds.x_index.query(np.asarray(xs, dtype=float), workers=_query_workers())
    return ds.zs[i], d


def tinv_lookup_batch(ds: KklDataset, zs: np.ndarray):
    """Bulk inverse lookup: (N, m_f) -> (values (N, n), distances (N,))."""
    d, i = ds.z_index.query(np.asarray(zs, dtype=float), workers=_query_workers())
    return ds.xs[i], d


def dataset_injectivity_margin(ds: KklDataset, min_sep: float) -> float:
    """Empirical Lipschitz-injectivity constant of the dataset's x -> z pairing."""
    if len(ds) < 2:
        raise Degenerate("single-point dataset")
    return min_lipschitz_ratio(ds.xs, ds.zs, min_sep)


def save_dataset(ds: KklDataset, path: str) -> None:
    """Write pairs as CSV (17 significant digits) with a JSON meta sidecar."""
    header = ",".join(
        [f"x{i + 1}" for i in range(ds.n)] + [f"z{i + 1}" for i in range(ds.m_f)]
    )
    data = np.hstack([ds.xs, ds.zs])
    np.savetxt(path, data, fmt="%.17e", delimiter=",", header=header, comments="")
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(ds.meta, fh, indent=2, sort_keys=True)


def load_dataset(path: str) -> KklDataset:
    """Read a dataset written by save_dataset and rebuild its indexes."""
    with open(_meta_path(path), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = len(meta["X0"]["lo"])
    return KklDataset(xs=data[:, :n], zs=data[:, n:], meta=meta)


def _meta_path(path: str) -> str:
    base, ext = os.path.splitext(path)
    return base + ".meta.json"
