"""One-step Skorokhod embedding of walk increments into the diffusion.

The step from state y with scale a rides the bridge process

    L_t = y + a * b(t, W_t),      b(t, x) = E[ Fmu^{-1}(Phi(W_1)) | W_t = x ],

whose terminal value has exactly the step law K(y, a, .).  The realized step
duration has the same law as

    xi = int_0^1 a^2 b_x^2(s, W_s) / eta^2(y + a b(s, W_s)) ds,

with E[xi] = G_y(a), so only a Brownian path on a time grid is needed; the
time-change ODE is never integrated.  Because b_x can blow up as s -> 1 for
atomic laws, the integral runs in the variable v with s = 1 - e^{-v} on a
uniform v-grid.

For atomic mu, b has the closed form of a Gaussian smoothing of the quantile
staircase: with thresholds c_i = Phi^{-1}(w_1 + ... + w_i),

    b(t, x) = x_k - sum_i (x_{i+1} - x_i) * Phi((c_i - x)/sqrt(1-t)),
    b_x(t, x) = sum_i (x_{i+1} - x_i) * phi((c_i - x)/sqrt(1-t)) / sqrt(1-t) >= 0.

Density mu uses Gauss-Hermite quadrature over W_1 | W_t = x ~ N(x, 1-t).

Steps that saturate the support bound a_bar(y) land on an accessible boundary
with the probability of the corresponding support atom; such steps append the
compensation wait (1/N - Q(y)) / w, restoring mean step duration 1/N.  Once
the chain sits on an absorbing boundary every later step waits exactly 1/N
(any stopping time embeds the point mass there).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

from .errors import DomainError, GridUnderflow, InvalidCase, UnsupportedCase
from .measures import IncrementMeasure, quantile
from .models import QFunction
from .rng import RngStream
from .scale import ScaleSolver

BRIDGE_NODES = 2048
# 1 - e^{-v} must stay strictly below 1 in float64, so v < -log(2^-52)
BRIDGE_VMAX = 36.0
REFINE_REL_TOL = 1e-4
MAX_REFINEMENTS = 8
GH_NODES = 64

_SQRT2PI = math.sqrt(2.0 * math.pi)


def _phi(z):
    return np.exp(-0.5 * z * z) / _SQRT2PI


if numba is not None:

    @numba.njit(cache=True, parallel=True, fastmath=False)
    def _bx2_quad_rows(w_path, st, wts, thresholds, incr):  # pragma: no cover - jitted
        """Row-wise sum_j wts_j * b_x(s_j, W_ij)^2 for atomic mu (fused hot loop)."""
        B, n = w_path.shape
        k = thresholds.shape[0]
        out = np.empty(B)
        for i in numba.prange(B):
            acc = 0.0
            for j in range(n):
                stj = st[j]
                bx = 0.0
                for t in range(k):
                    z = (thresholds[t] - w_path[i, j]) / stj
                    bx += incr[t] * np.exp(-0.5 * z * z)
                bx = bx / (stj * _SQRT2PI)
                acc += wts[j] * bx * bx
            out[i] = acc
        return out
else:  # pragma: no cover
    _bx2_quad_rows = None


# ---------------------------------------------------------------------------
# the bridge function b
# ---------------------------------------------------------------------------

@dataclass
class BridgeFunction:
    mu: IncrementMeasure
    thresholds: Optional[np.ndarray] = None      # Phi^{-1}(cumulative weights), atomic mu
    atom_values: Optional[np.ndarray] = None
    atom_incr: Optional[np.ndarray] = None       # positive jumps x_{i+1} - x_i
    gh_nodes: Optional[np.ndarray] = field(default=None, repr=False)
    gh_weights: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def is_atomic(self):
        return self.thresholds is not None

    def terminal(self, x):
        """Limit b(1-, x) = Fmu^{-1}(Phi(x))."""
        x = np.asarray(x, dtype=float)
        if self.is_atomic:
            idx = np.searchsorted(self.thresholds, x, side="right")
            return self.atom_values[idx]
        return self.mu.density.quantile(special.ndtr(x))

    def b(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if np.any(t > 1.0):
            raise DomainError("bridge time t must lie in [0, 1]")
        st = np.sqrt(np.maximum(1.0 - t, 0.0))
        if self.is_atomic:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
                z = (self.thresholds - x[..., None]) / np.where(st == 0.0, np.nan, st)[..., None]
                out = self.atom_values[-1] - (self.atom_incr * special.ndtr(z)).sum(axis=-1)
            if np.any(st == 0.0):
                out = np.where(st == 0.0, self.terminal(x), out)
            return out
        g = self.gh_nodes
        w = self.gh_weights
        z = x[..., None] + math.sqrt(2.0) * st[..., None] * g
        vals = self.mu.density.quantile(special.ndtr(z))
        out = (w * vals).sum(axis=-1) / math.sqrt(math.pi)
        if np.any(st == 0.0):
            out = np.where(st == 0.0, self.terminal(x), out)
        return out

    def b_x(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if np.any(t >= 1.0):
            raise DomainError("b_x needs t < 1 (the derivative may diverge at t = 1)")
        st = np.sqrt(1.0 - t)
        if self.is_atomic:
            with np.errstate(under="ignore"):
                z = (self.thresholds - x[..., None]) / st[..., None]
                return (self.atom_incr * _phi(z)).sum(axis=-1) / st
        g = self.gh_nodes
        w = self.gh_weights
        z = x[..., None] + math.sqrt(2.0) * st[..., None] * g
        vals = self.mu.density.quantile(special.ndtr(z))
        out = (w * vals * math.sqrt(2.0) * g).sum(axis=-1) / (math.sqrt(math.pi) * st)
        return np.maximum(out, 0.0)


def bridge_for(mu: IncrementMeasure, gh_nodes: int = GH_NODES) -> BridgeFunction:
    if mu.is_atomic:
        xs, ws = mu.atom_arrays()
        cum = np.cumsum(ws)[:-1]
        thresholds = special.ndtri(np.clip(cum, 1e-300, 1.0 - 1e-16))
        return BridgeFunction(mu=mu, thresholds=thresholds, atom_values=xs,
                              atom_incr=np.diff(xs))
    if not mu.compact_support and mu.density.quantile_exact is None:
        # tabulated tails are too crude to ride the bridge; Case-1 fixtures
        # with unbounded support are for divergence testing only
        raise UnsupportedCase(
            "embedding needs an atomic law, a compact-support density, or an analytic quantile")
    g, w = np.polynomial.hermite.hermgauss(gh_nodes)
    return BridgeFunction(mu=mu, gh_nodes=g, gh_weights=w)


def b_eval(bf: BridgeFunction, t: float, x: float) -> float:
    if t > 1.0:
        raise DomainError("bridge time t must lie in [0, 1]")
    return float(bf.b(t, x))


def b_x_eval(bf: BridgeFunction, t: float, x: float) -> float:
    return float(bf.b_x(t, x))


# ---------------------------------------------------------------------------
# single embedded step
# ---------------------------------------------------------------------------

@dataclass
class EmbeddedStep:
    start_y: float
    scale_a: float
    endpoint: float
    duration_xi: float
    compensation_wait: float = 0.0
    bridge: Optional[tuple] = None  # (s nodes, cumulative duration, diffusion locus)


@dataclass
class EmbeddedPath:
    N: int
    taus: np.ndarray
    states: np.ndarray
    per_step: list

    def __len__(self):
        return len(self.taus) - 1


class _Grid:
    """Cached v-grid constants for one (nodes, vmax)."""

    _cache = {}

    def __new__(cls, nodes: int, vmax: float):
        key = (nodes, vmax)
        hit = cls._cache.get(key)
        if hit is not None:
            return hit
        self = super().__new__(cls)
        v = np.linspace(0.0, vmax, nodes)
        self.v = v
        self.s = np.minimum(1.0 - np.exp(-v), 1.0 - 2.0 ** -52)
        self.st = np.sqrt(1.0 - self.s)
        self.sqrt_ds = np.sqrt(np.diff(self.s))
        h = v[1] - v[0]
        wt = np.full(nodes, h)
        wt[0] = wt[-1] = 0.5 * h
        self.weights = wt * np.exp(-v)        # trapezoid in v times ds/dv
        self.tail_var = float(1.0 - self.s[-1])  # Var(W_1 - W_{s_max})
        cls._cache[key] = self
        return self


def _integrand(spec, bf, y, a, s, w_path):
    """a^2 b_x^2(s, W) / eta^2(y + a b(s, W)); shapes broadcast over the grid."""
    bx = bf.b_x(s, w_path)
    acol = a if np.isscalar(a) else (np.asarray(a)[:, None])
    num = (acol * acol) * bx * bx
    if spec.eta_constant is not None:
        return num / (spec.eta_constant ** 2)
    bb = bf.b(s, w_path)
    loc = (y if np.isscalar(y) else np.asarray(y)[:, None]) + acol * bb
    # zero-scale lanes contribute nothing; keep eta away from the boundary there
    loc = np.where(np.asarray(acol) == 0.0, spec.start_point, loc)
    with np.errstate(divide="ignore"):
        e = spec.eta_fn(loc)
        return num / (e * e)


def sample_embedded_step(qf: QFunction, bf: BridgeFunction, y: float, a: float,
                         rng: RngStream, nodes: int = BRIDGE_NODES,
                         vmax: float = BRIDGE_VMAX,
                         refine_rel_tol: float = REFINE_REL_TOL,
                         max_refinements: int = MAX_REFINEMENTS,
                         record_bridge: bool = False) -> EmbeddedStep:
    """Joint sample of (step duration, step endpoint) from state y at scale a.

    The duration integral refines by Brownian-bridge midpoint insertion until
    its relative change drops below ``refine_rel_tol``.
    """
    spec = qf.spec
    l, r = spec.interval
    if not (l < y < r):
        raise DomainError(f"state {y!r} outside ({l}, {r})")
    if a < 0.0:
        raise DomainError("scale must be nonnegative")
    grid = _Grid(nodes, vmax)
    s = grid.s.copy()
    w_path = np.concatenate([[0.0], np.cumsum(rng.normal(nodes - 1) * grid.sqrt_ds)])
    w1 = w_path[-1] + rng.normal() * math.sqrt(grid.tail_var)

    if a == 0.0:
        return EmbeddedStep(start_y=y, scale_a=0.0, endpoint=y, duration_xi=0.0)

    def xi_of(s_arr, w_arr):
        f = _integrand(spec, bf, y, a, s_arr, w_arr)
        v = -np.log1p(-s_arr)
        return float(np.trapezoid(f * np.exp(-v), v))

    xi = xi_of(s, w_path)
    # stabilisation is judged on the scale of the mean step cost a^2*E[X^2]:
    # a short realized excursion (small xi) would otherwise demand absolute
    # accuracy far beyond what any downstream statistic uses
    xi_scale = a * a * bf.mu.second_moment
    for _ in range(max_refinements):
        if record_bridge:
            break
        s_mid = 1.0 - np.exp(-0.5 * (-np.log1p(-s[:-1]) - np.log1p(-s[1:])))
        s_mid = np.minimum(s_mid, 1.0 - 2.0 ** -52)
        d1 = s_mid - s[:-1]
        d2 = s[1:] - s_mid
        dsum = d1 + d2
        # intervals collapsed at float resolution get a copied node, not a bridge
        safe = dsum > 0.0
        mean = np.where(safe, w_path[:-1] + (w_path[1:] - w_path[:-1]) * d1 / np.where(safe, dsum, 1.0),
                        w_path[:-1])
        var = np.where(safe, d1 * d2 / np.where(safe, dsum, 1.0), 0.0)
        w_mid = mean + rng.normal(len(s_mid)) * np.sqrt(var)
        s_new = np.empty(len(s) * 2 - 1)
        w_new = np.empty_like(s_new)
        s_new[0::2], s_new[1::2] = s, s_mid
        w_new[0::2], w_new[1::2] = w_path, w_mid
        xi_new = xi_of(s_new, w_new)
        done = abs(xi_new - xi) <= refine_rel_tol * max(abs(xi_new), xi_scale, 1e-12)
        s, w_path, xi = s_new, w_new, xi_new
        if done:
            break
    else:
        if not record_bridge:
            raise GridUnderflow(
                f"duration integral did not stabilise after {max_refinements} refinements")

    term = float(bf.terminal(w1))
    endpoint = y + a * term
    if math.isfinite(l) and (term == bf.mu.inf_supp or endpoint < l):
        if abs(y + a * bf.mu.inf_supp - l) <= 1e-12 * max(1.0, abs(l), abs(y)):
            endpoint = l
    if math.isfinite(r) and (term == bf.mu.sup_supp or endpoint > r):
        if abs(y + a * bf.mu.sup_supp - r) <= 1e-12 * max(1.0, abs(r), abs(y)):
            endpoint = r
    endpoint = min(max(endpoint, l), r)

    bridge = None
    if record_bridge:
        f = _integrand(spec, bf, y, a, s, w_path)
        v = -np.log1p(-s)
        seg = 0.5 * (f[:-1] * np.exp(-v[:-1]) + f[1:] * np.exp(-v[1:])) * np.diff(v)
        delta = np.concatenate([[0.0], np.cumsum(seg)])
        xi = float(delta[-1])
        locus = y + a * bf.b(s, w_path)  # the diffusion on its step clock delta
        bridge = (s, delta, locus)
    return EmbeddedStep(start_y=y, scale_a=a, endpoint=endpoint, duration_xi=xi,
                        bridge=bridge)


def compensate_boundary(mu: IncrementMeasure, q_at_boundary_finite: bool, Q_y: float,
                        N: int, endpoint_at_boundary: bool, side: str = "left") -> float:
    """Extra wait (1/w)(1/N - Q(y)) charged when a step is absorbed at the boundary."""
    if not endpoint_at_boundary:
        return 0.0
    w = mu.atom_mass_at_inf_supp if side == "left" else mu.atom_mass_at_sup_supp
    if w <= 0.0:
        raise InvalidCase("boundary compensation needs an atom at the support endpoint")
    if not q_at_boundary_finite:
        raise InvalidCase("boundary compensation defined only for accessible boundaries")
    return (1.0 / N - Q_y) / w


def _comp_mass(mu: IncrementMeasure, binding_left: bool, binding_right: bool) -> float:
    w = 0.0
    if binding_left:
        w += mu.atom_mass_at_inf_supp
    if binding_right:
        w += mu.atom_mass_at_sup_supp
    return w


def simulate_embedded_walk(qf: QFunction, bf: BridgeFunction, solver: ScaleSolver,
                           N: int, steps: int, rng: RngStream,
                           nodes: int = BRIDGE_NODES, vmax: float = BRIDGE_VMAX,
                           record_bridge: bool = False) -> EmbeddedPath:
    """Chain embedded steps: (tau_k, M_{tau_k}) distributed like the scaled walk."""
    spec = qf.spec
    l, r = spec.interval
    mu = solver.mu
    y = spec.start_point
    taus = np.zeros(steps + 1)
    states = np.empty(steps + 1)
    states[0] = y
    per_step = []
    for k in range(steps):
        if y == l or y == r:
            es = EmbeddedStep(start_y=y, scale_a=0.0, endpoint=y, duration_xi=0.0,
                              compensation_wait=1.0 / N)
        else:
            res = solver.solve(y, N)
            es = sample_embedded_step(qf, bf, y, res.a, rng, nodes=nodes, vmax=vmax,
                                      record_bridge=record_bridge)
            if (es.endpoint == l and math.isfinite(l)) or (es.endpoint == r and math.isfinite(r)):
                w = _comp_mass(mu, res.binding_left, res.binding_right)
                if w <= 0.0:
                    raise InvalidCase(
                        f"step from y={y!r} absorbed at a boundary without a support atom")
                es.compensation_wait = (1.0 / N - res.achieved_G) / w
        taus[k + 1] = taus[k] + es.duration_xi + es.compensation_wait
        y = es.endpoint
        states[k + 1] = y
        per_step.append(es)
    return EmbeddedPath(N=N, taus=taus, states=states, per_step=per_step)


# ---------------------------------------------------------------------------
# batched embedding (fixed grid)
# ---------------------------------------------------------------------------

def sample_steps_batch(qf: QFunction, bf: BridgeFunction, ys, aa, rng: RngStream,
                       nodes: int = BRIDGE_NODES, vmax: float = BRIDGE_VMAX):
    """Vectorized (xi, endpoint) samples for paired state/scale arrays."""
    spec = qf.spec
    ys = np.asarray(ys, dtype=float)
    aa = np.asarray(aa, dtype=float)
    grid = _Grid(nodes, vmax)
    B = ys.size
    dw = rng.normal((B, nodes - 1)) * grid.sqrt_ds
    w_path = np.empty((B, nodes))
    w_path[:, 0] = 0.0
    np.cumsum(dw, axis=1, out=w_path[:, 1:])
    w1 = w_path[:, -1] + rng.normal(B) * math.sqrt(grid.tail_var)
    if bf.is_atomic and spec.eta_constant is not None and _bx2_quad_rows is not None:
        quad_rows = _bx2_quad_rows(w_path, grid.st, grid.weights,
                                   bf.thresholds, bf.atom_incr)
        xi = (aa * aa) * quad_rows / (spec.eta_constant ** 2)
    else:
        f = _integrand(spec, bf, ys, aa, grid.s, w_path)
        xi = (f * grid.weights).sum(axis=1)
    if not np.all(np.isfinite(xi)):
        raise GridUnderflow("duration integrand overflowed on the fixed grid")
    term = bf.terminal(w1)
    endpoint = ys + aa * term
    return xi, endpoint, term


def simulate_embedded_batch(qf: QFunction, bf: BridgeFunction, solver: ScaleSolver,
                            N: int, steps: int, n_paths: int, seed: int,
                            nodes: int = BRIDGE_NODES, vmax: float = BRIDGE_VMAX,
                            checkpoints=None, threads: int = 1, chunk: int = 512,
                            collect_steps: bool = False, stream_base: int = 0):
    """Many embedded walks; returns (tau at checkpoints, final states[, step records]).

    ``checkpoints`` is a sorted list of step indices (default: [steps]).  With
    ``collect_steps`` the per-step durations (xi + wait) of every path are
    returned as a flat array (memory: n_paths * steps).
    """
    from concurrent.futures import ThreadPoolExecutor

    if checkpoints is None:
        checkpoints = [steps]
    checkpoints = list(checkpoints)
    spec = qf.spec
    l, r = spec.interval
    mu = solver.mu
    m = spec.start_point
    one_over_n = 1.0 / N

    def run(idx_size):
        idx, size = idx_size
        rng = RngStream(seed, stream_base + idx)
        ys = np.full(size, m)
        tau = np.zeros(size)
        cp_out = np.empty((size, len(checkpoints)))
        durations = np.empty((size, steps)) if collect_steps else None
        cp_iter = 0
        for k in range(steps):
            a, g, _, bl, br = solver.solve_many(ys, N)
            at_bound = (ys == l) | (ys == r)
            a = np.where(at_bound, 0.0, a)
            xi, endpoint, term = sample_steps_batch(qf, bf, ys, a, rng, nodes=nodes, vmax=vmax)
            endpoint = np.where(at_bound, ys, endpoint)
            hit_l = np.zeros(size, dtype=bool)
            hit_r = np.zeros(size, dtype=bool)
            if math.isfinite(l) and mu.is_atomic:
                hit_l = (~at_bound) & bl & (term == mu.inf_supp)
                endpoint = np.where(hit_l, l, endpoint)
            if math.isfinite(r) and mu.is_atomic:
                hit_r = (~at_bound) & br & (term == mu.sup_supp)
                endpoint = np.where(hit_r, r, endpoint)
            endpoint = np.clip(endpoint, l, r)
            wait = np.zeros(size)
            hit = hit_l | hit_r
            if hit.any():
                w = np.where(bl, mu.atom_mass_at_inf_supp, 0.0) + \
                    np.where(br, mu.atom_mass_at_sup_supp, 0.0)
                if np.any(hit & (w <= 0.0)):
                    raise InvalidCase("absorbed step without a support atom")
                wait = np.where(hit, (one_over_n - g) / np.where(w > 0.0, w, 1.0), 0.0)
            # steps taken at an absorbing boundary are a pure deterministic wait
            dur = np.where(at_bound, one_over_n, xi + wait)
            tau = tau + dur
            if collect_steps:
                durations[:, k] = dur
            ys = endpoint
            while cp_iter < len(checkpoints) and checkpoints[cp_iter] == k + 1:
                cp_out[:, cp_iter] = tau
                cp_iter += 1
        while cp_iter < len(checkpoints):
            cp_out[:, cp_iter] = tau
            cp_iter += 1
        return cp_out, ys, durations

    sizes = [min(chunk, n_paths - i) for i in range(0, n_paths, chunk)]
    jobs = list(enumerate(sizes))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    cp = np.concatenate([p[0] for p in parts], axis=0)
    finals = np.concatenate([p[1] for p in parts], axis=0)
    if collect_steps:
        durs = np.concatenate([p[2] for p in parts], axis=0)
        return cp, finals, durs
    return cp, finals, None
