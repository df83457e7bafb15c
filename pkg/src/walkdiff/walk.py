"""Scaled random walks Y_{k+1} = Y_k + a_N(Y_k) X_{k+1} and their interpolation.

Scale factors are solved on demand through a memoizing solver handle;
attainable boundaries are absorbing (the scale factor vanishes there, so the
state never moves again).  Batch simulation vectorizes across paths, chunked
into fixed-size blocks each driven by its own counter-based stream, so results
are bit-identical for any worker-thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, NonFiniteInput
from .measures import IncrementMeasure, quantile
from .rng import RngStream
from .scale import BoundScale, ScaleFactorTable, ScaleSolver

_CHUNK = 1024


@dataclass
class WalkPath:
    N: int
    start: float
    states: np.ndarray
    absorbed_at: Optional[int] = None

    def __len__(self):
        return len(self.states) - 1


def _interval_of(scale_fn):
    if isinstance(scale_fn, BoundScale):
        return scale_fn.solver.qf.spec.interval
    if isinstance(scale_fn, ScaleFactorTable):
        l = scale_fn.boundary_values.get("left", (-math.inf, 0.0))[0]
        r = scale_fn.boundary_values.get("right", (math.inf, 0.0))[0]
        return (l, r)
    return getattr(scale_fn, "interval", (-math.inf, math.inf))


def _snap(y: float, l: float, r: float) -> float:
    if math.isfinite(l) and abs(y - l) <= 1e-13 * max(1.0, abs(l)):
        return l
    if math.isfinite(r) and abs(y - r) <= 1e-13 * max(1.0, abs(r)):
        return r
    return min(max(y, l), r)


def step(scale_fn, y: float, x_increment: float) -> float:
    """One walk transition y -> y + a_N(y) * x."""
    if math.isnan(y) or math.isnan(x_increment):
        raise NonFiniteInput("walk step arguments must not be NaN")
    l, r = _interval_of(scale_fn)
    if y < l or y > r:
        raise DomainError(f"state {y!r} outside [{l}, {r}]")
    if y == l or y == r:
        return y
    a = scale_fn.scale_at(y)
    return _snap(y + a * x_increment, l, r)


def simulate_path(solver: ScaleSolver, mu: IncrementMeasure, N: int, steps: int,
                  rng: Optional[RngStream] = None, increments=None) -> WalkPath:
    """One walk of ``steps`` transitions; increments may be forced explicitly."""
    if increments is None and rng is None:
        raise DomainError("simulate_path needs an rng or an explicit increment sequence")
    fn = solver.for_N(N)
    l, r = solver.qf.spec.interval
    m = solver.qf.spec.start_point
    states = np.empty(steps + 1)
    states[0] = m
    absorbed_at = None
    y = m
    for k in range(steps):
        if y == l or y == r:
            if absorbed_at is None:
                absorbed_at = k
            states[k + 1] = y
            continue
        x = increments[k] if increments is not None else quantile(mu, rng.uniform())
        y = step(fn, y, float(x))
        states[k + 1] = y
    if absorbed_at is None and (states[-1] == l or states[-1] == r):
        absorbed_at = steps
    return WalkPath(N=N, start=m, states=states, absorbed_at=absorbed_at)


def interpolate(path: WalkPath, t: float) -> float:
    """Linear interpolation Y_t between integer indices."""
    K = len(path)
    if math.isnan(t) or t < 0.0 or t > K:
        raise DomainError(f"time {t!r} outside [0, {K}]")
    k = int(math.floor(t))
    if k == K:
        return float(path.states[K])
    frac = t - k
    return float(path.states[k] + frac * (path.states[k + 1] - path.states[k]))


# ---------------------------------------------------------------------------
# batch simulation
# ---------------------------------------------------------------------------

def _simulate_chunk(solver, mu, N, steps, start, size, rng, full):
    l, r = solver.qf.spec.interval
    states = np.full(size, start)
    if full:
        out = np.empty((size, steps + 1))
        out[:, 0] = states
    snap_l = 1e-13 * max(1.0, abs(l)) if math.isfinite(l) else None
    snap_r = 1e-13 * max(1.0, abs(r)) if math.isfinite(r) else None
    for k in range(steps):
        a, _, _, _, _ = solver.solve_many(states, N)
        u = rng.uniform(size)
        x = np.asarray(quantile(mu, u))
        states = states + a * x
        if snap_l is not None:
            states = np.where(np.abs(states - l) <= snap_l, l, states)
        if snap_r is not None:
            states = np.where(np.abs(states - r) <= snap_r, r, states)
        states = np.clip(states, l, r)
        if full:
            out[:, k + 1] = states
    return out if full else states


def simulate_paths(solver: ScaleSolver, mu: IncrementMeasure, N: int, steps: int,
                   n_paths: int, seed: int, threads: int = 1,
                   full: bool = False, stream_base: int = 0) -> np.ndarray:
    """Final states (or full paths) of ``n_paths`` independent walks.

    Paths are processed in fixed chunks of 1024, one RNG stream per chunk,
    merged in chunk order: the output does not depend on ``threads``.
    ``stream_base`` offsets the stream ids so different experiment arms under
    one seed stay independent.
    """
    sizes = [min(_CHUNK, n_paths - i) for i in range(0, n_paths, _CHUNK)]
    start = solver.qf.spec.start_point

    def run(idx_size):
        idx, size = idx_size
        rng = RngStream(seed, stream_base + idx)
        return _simulate_chunk(solver, mu, N, steps, start, size, rng, full)

    jobs = list(enumerate(sizes))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    return np.concatenate(parts, axis=0)
