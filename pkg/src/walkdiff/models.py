"""Driftless diffusions dM = eta(M) dW on an interval (l, r) and their q-function.

The central object is

    q(y, x) = int_y^x int_y^u 2/eta^2(z) dz du
            = int_y^x (x - z) * 2/eta^2(z) dz            (Fubini),

finite on (l, r), +inf outside [l, r], strictly convex, decreasing to zero on
(l, y) and increasing from zero on (y, r).  q(y, x) is the minimal expected
time for the diffusion started at y to embed a distribution concentrated at x,
and satisfies the base-point translation identity

    q(y, x) = q(y0, x) - q(y0, y) - q_x(y0, y) * (x - y),

which reduces every evaluation to two cached antiderivatives from a single
reference point y0:

    P(u) = int_{y0}^u 2/eta^2(z) dz        (inner antiderivative, monotone),
    O(u) = int_{y0}^u P(v) dv              (so q(y0, x) = O(x)).

Catalog models additionally carry exact closed forms for q; the quadrature
route stays available for cross-checking (``use_closed_form=False``).

Boundary accessibility follows Feller's test: a finite endpoint is accessible
iff q(y, endpoint) is finite, and the verdict does not depend on y.  An
infinite endpoint is never accessible.
"""

from __future__ import annotations

import math
import threading
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import (
    DomainError,
    InconclusiveBoundary,
    InvalidModel,
    NonFiniteInput,
    QuadratureDivergence,
)

DIVERGENCE_CAP = 1e12
BOUNDARY_PROBE_BUDGET = 60
_CAUCHY_RTOL = 1e-9
_DEFAULT_Q_TOL = 1e-9


# ---------------------------------------------------------------------------
# diffusion specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionSpec:
    """The coefficient eta, its interval and optional closed-form q."""

    name: str
    interval: tuple[float, float]
    eta_fn: Callable = field(repr=False)
    start_point: float = 0.0
    q_closed_form: Optional[Callable] = field(default=None, repr=False)
    eta_breakpoints: tuple[float, ...] = ()
    eta_constant: Optional[float] = None
    # limsup |eta(x)| / (x - l) < inf as x -> l+ (finite l); analogues at r and
    # at the infinite ends (|eta(x)|/|x|).  None = unknown, decided by probes.
    eta_ratio_left_bounded: Optional[bool] = None
    eta_ratio_right_bounded: Optional[bool] = None
    eta_ratio_plus_inf_bounded: Optional[bool] = None
    eta_ratio_minus_inf_bounded: Optional[bool] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        l, r = self.interval
        if not (l < r):
            raise InvalidModel(f"interval needs l < r, got ({l}, {r})")
        if not (l < self.start_point < r):
            raise InvalidModel(f"start point {self.start_point} outside ({l}, {r})")
        _reject_vanishing_eta(self)

    def reflected(self) -> "DiffusionSpec":
        """The diffusion -M: eta~(x) = eta(-x) on (-r, -l)."""
        l, r = self.interval
        cf = self.q_closed_form
        return DiffusionSpec(
            name=f"reflect({self.name})",
            interval=(-r, -l),
            eta_fn=lambda x, _e=self.eta_fn: _e(-np.asarray(x)),
            start_point=-self.start_point,
            q_closed_form=(None if cf is None else lambda y, x, _cf=cf: _cf(-np.asarray(y), -np.asarray(x))),
            eta_breakpoints=tuple(sorted(-b for b in self.eta_breakpoints)),
            eta_constant=self.eta_constant,
            eta_ratio_left_bounded=self.eta_ratio_right_bounded,
            eta_ratio_right_bounded=self.eta_ratio_left_bounded,
            eta_ratio_plus_inf_bounded=self.eta_ratio_minus_inf_bounded,
            eta_ratio_minus_inf_bounded=self.eta_ratio_plus_inf_bounded,
            params=dict(self.params),
        )


def eta_eval(spec: DiffusionSpec, x):
    """eta(x); zero outside the open interval (l, r)."""
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)):
        raise NonFiniteInput("eta argument is NaN")
    l, r = spec.interval
    inside = (arr > l) & (arr < r)
    with np.errstate(all="ignore"):
        vals = np.where(inside, spec.eta_fn(np.where(inside, arr, spec.start_point)), 0.0)
    return float(vals) if np.isscalar(x) else vals


def _reject_vanishing_eta(spec: DiffusionSpec):
    """Probe-based stand-in for 'eta(x) != 0 on I'; exact for piecewise models."""
    l, r = spec.interval
    lo = l if math.isfinite(l) else spec.start_point - 8.0
    hi = r if math.isfinite(r) else spec.start_point + 8.0
    probes = lo + (hi - lo) * (np.arange(1, 258) / 258.0)
    with np.errstate(all="ignore"):
        vals = np.asarray(spec.eta_fn(probes), dtype=float)
    if np.any(vals == 0.0):
        bad = probes[np.asarray(vals == 0.0)][0]
        raise InvalidModel(f"eta vanishes inside the interval (probe x={bad!r})")


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def _default_start(l: float, r: float) -> float:
    if math.isfinite(l) and math.isfinite(r):
        return 0.5 * (l + r)
    if math.isfinite(l):
        return l + 1.0
    if math.isfinite(r):
        return r - 1.0
    return 0.0


def bm(interval=(-math.inf, math.inf), m=None) -> DiffusionSpec:
    l, r = float(interval[0]), float(interval[1])
    if m is None:
        m = 0.0 if (l < 0.0 < r) else _default_start(l, r)

    def q_cf(y, x):
        y, x = np.asarray(y, dtype=float), np.asarray(x, dtype=float)
        return (x - y) ** 2

    return DiffusionSpec(
        name="bm", interval=(l, r),
        eta_fn=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        start_point=float(m), q_closed_form=q_cf, eta_constant=1.0,
        eta_ratio_left_bounded=False if math.isfinite(l) else None,
        eta_ratio_right_bounded=False if math.isfinite(r) else None,
        eta_ratio_plus_inf_bounded=True,
        eta_ratio_minus_inf_bounded=True,
    )


def two_media(A: float, interval=(-math.inf, math.inf), m=0.0) -> DiffusionSpec:
    A = float(A)
    if A == 0.0:
        raise InvalidModel("two_media needs A != 0")
    A2 = A * A

    def eta(x):
        return np.where(np.asarray(x, dtype=float) > 0.0, 1.0, A)

    def q_cf(y, x):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        q_ypos = np.where(x >= 0.0, (x - y) ** 2, y * y - 2.0 * x * y + x * x / A2)
        q_yneg = np.where(x < 0.0, (x - y) ** 2 / A2,
                          y * y / A2 - 2.0 * x * y / A2 + x * x)
        return np.where(y >= 0.0, q_ypos, q_yneg)

    l, r = float(interval[0]), float(interval[1])
    return DiffusionSpec(
        name="two_media", interval=(l, r), eta_fn=eta, start_point=float(m),
        q_closed_form=q_cf, eta_breakpoints=(0.0,),
        eta_ratio_left_bounded=False if math.isfinite(l) else None,
        eta_ratio_right_bounded=False if math.isfinite(r) else None,
        eta_ratio_plus_inf_bounded=True,
        eta_ratio_minus_inf_bounded=True,
        params={"A": A},
    )


def gbm(m=1.0) -> DiffusionSpec:
    def q_cf(y, x):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = 2.0 * (x - y) / y - 2.0 * np.log(x / y)
        return np.where(x > 0.0, val, np.inf)

    return DiffusionSpec(
        name="gbm", interval=(0.0, math.inf),
        eta_fn=lambda x: np.asarray(x, dtype=float),
        start_point=float(m), q_closed_form=q_cf,
        eta_ratio_left_bounded=True, eta_ratio_plus_inf_bounded=True,
    )


def cev(alpha: float, m=1.0) -> DiffusionSpec:
    """eta(x) = x^alpha on (0, inf); alpha=0 is BM on (0,inf), alpha=1 is GBM."""
    alpha = float(alpha)
    if alpha == 1.0:
        spec = gbm(m=m)
        return DiffusionSpec(
            name="cev", interval=spec.interval, eta_fn=spec.eta_fn,
            start_point=float(m), q_closed_form=spec.q_closed_form,
            eta_ratio_left_bounded=True, eta_ratio_plus_inf_bounded=True,
            params={"alpha": 1.0},
        )

    if alpha == 0.5:
        def q_cf(y, x):
            y = np.asarray(y, dtype=float)
            x = np.asarray(x, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = 2.0 * x * np.log(x / y) - 2.0 * (x - y)
            val = np.where(x == 0.0, 2.0 * y, val)
            return np.where(x >= 0.0, val, np.inf)
    else:
        c0 = 2.0 / (2.0 * alpha - 1.0)
        c1 = 1.0 / (2.0 * alpha - 2.0)

        def q_cf(y, x):
            y = np.asarray(y, dtype=float)
            x = np.asarray(x, dtype=float)
            p = 2.0 - 2.0 * alpha
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                val = c0 * (c1 * (x ** p - y ** p) + (x - y) * y ** (1.0 - 2.0 * alpha))
            return np.where(x >= 0.0, val, np.inf)

    return DiffusionSpec(
        name="cev", interval=(0.0, math.inf),
        eta_fn=lambda x: np.asarray(x, dtype=float) ** alpha,
        start_point=float(m), q_closed_form=q_cf,
        eta_ratio_left_bounded=(alpha >= 1.0),
        eta_ratio_plus_inf_bounded=(alpha <= 1.0),
        params={"alpha": alpha},
    )


def exp_half(m=0.0) -> DiffusionSpec:
    """eta(x) = exp(-x/2) on the whole line; the divergence fixture model."""

    def q_cf(y, x):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore"):
            return 2.0 * np.exp(y) * (np.exp(x - y) - (x - y) - 1.0)

    return DiffusionSpec(
        name="exp_half", interval=(-math.inf, math.inf),
        eta_fn=lambda x: np.exp(-np.asarray(x, dtype=float) / 2.0),
        start_point=float(m), q_closed_form=q_cf,
        eta_ratio_plus_inf_bounded=True,
        eta_ratio_minus_inf_bounded=False,
    )


_SQRT_LOG2 = math.sqrt(math.log(2.0))


def log_example(m=0.25) -> DiffusionSpec:
    """eta(x) = 2*sqrt(2)*x*(-log x)^(3/4)/sqrt(-1-2*log x) below 1/2, else 1.

    Exhibits G_y(a_bar(y)) -> 0 as y -> 0 while q(y, 0+) = inf.
    """

    def eta(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            small = 2.0 * math.sqrt(2.0) * x * (-np.log(x)) ** 0.75 / np.sqrt(-1.0 - 2.0 * np.log(x))
        return np.where(x < 0.5, small, 1.0)

    def _q0(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            small = np.sqrt(-np.log(x)) + (x - 0.5) / _SQRT_LOG2 - _SQRT_LOG2
        return np.where(x < 0.5, small, x * x - x + 0.25)

    def _q0x(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            small = 1.0 / _SQRT_LOG2 - 1.0 / (2.0 * x * np.sqrt(-np.log(x)))
        return np.where(x < 0.5, small, 2.0 * x - 1.0)

    def q_cf(y, x):
        return _q0(x) - _q0(y) - _q0x(y) * (np.asarray(x, dtype=float) - np.asarray(y, dtype=float))

    return DiffusionSpec(
        name="log_example", interval=(0.0, math.inf), eta_fn=eta,
        start_point=float(m), q_closed_form=q_cf, eta_breakpoints=(0.5,),
        eta_ratio_left_bounded=False, eta_ratio_plus_inf_bounded=True,
    )


def piecewise(breaks, pieces, interval, m) -> DiffusionSpec:
    """User-defined eta from const/power/exp atoms on a finite partition.

    ``breaks`` are the interior cut points; ``pieces`` has len(breaks)+1 atoms,
    each one of {"type": "const", "c": ...}, {"type": "power", "c", "p",
    "x0"} for c*|x-x0|^p, or {"type": "exp", "c", "s"} for c*exp(s*x).
    """
    breaks = tuple(float(b) for b in breaks)
    if any(breaks[i] >= breaks[i + 1] for i in range(len(breaks) - 1)):
        raise InvalidModel("piecewise breaks must be strictly increasing")
    if len(pieces) != len(breaks) + 1:
        raise InvalidModel("piecewise needs len(pieces) == len(breaks) + 1")

    fns = []
    for piece in pieces:
        kind = piece.get("type")
        if kind == "const":
            c = float(piece["c"])
            if c == 0.0:
                raise InvalidModel("piecewise const piece with c=0 makes eta vanish on a subinterval")
            fns.append(lambda x, c=c: np.full_like(np.asarray(x, dtype=float), c))
        elif kind == "power":
            c, p, x0 = float(piece["c"]), float(piece["p"]), float(piece.get("x0", 0.0))
            fns.append(lambda x, c=c, p=p, x0=x0: c * np.abs(np.asarray(x, dtype=float) - x0) ** p)
        elif kind == "exp":
            c, s = float(piece["c"]), float(piece["s"])
            fns.append(lambda x, c=c, s=s: c * np.exp(s * np.asarray(x, dtype=float)))
        else:
            raise InvalidModel(f"unknown piecewise atom type {kind!r}")

    def eta(x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(np.asarray(breaks), x, side="right")
        with np.errstate(all="ignore"):
            vals = [f(x) for f in fns]
        return np.choose(idx, vals)

    return DiffusionSpec(
        name="piecewise", interval=(float(interval[0]), float(interval[1])),
        eta_fn=eta, start_point=float(m), eta_breakpoints=breaks,
        params={"breaks": list(breaks), "pieces": [dict(p) for p in pieces]},
    )


_FLAG_MODELS = {
    "bm": bm,
    "gbm": gbm,
    "exp_half": exp_half,
    "log_example": log_example,
}


def catalog(name: str, *, interval=None, m=None, **params) -> DiffusionSpec:
    """Build a catalog model by name; interval/m override where the model allows."""
    if name == "bm":
        if params:
            raise InvalidModel(f"unknown bm parameters {sorted(params)}")
        kw = {}
        if interval is not None:
            kw["interval"] = tuple(interval)
        if m is not None:
            kw["m"] = m
        return bm(**kw)
    if name == "two_media":
        kw = {"A": params.pop("A")}
        if interval is not None:
            kw["interval"] = tuple(interval)
        if m is not None:
            kw["m"] = m
        if params:
            raise InvalidModel(f"unknown two_media parameters {sorted(params)}")
        return two_media(**kw)
    if name in ("gbm", "exp_half", "log_example", "cev"):
        if interval is not None:
            raise InvalidModel(f"interval is fixed for catalog model '{name}'")
        kw = dict(params)
        if m is not None:
            kw["m"] = m
        if name == "cev":
            if "alpha" not in kw:
                raise InvalidModel("cev needs parameter alpha")
            alpha = kw.pop("alpha")
            if set(kw) - {"m"}:
                raise InvalidModel(f"unknown cev parameters {sorted(set(kw) - {'m'})}")
            return cev(alpha=alpha, **kw)
        if set(kw) - {"m"}:
            raise InvalidModel(f"unknown {name} parameters {sorted(set(kw) - {'m'})}")
        builder = _FLAG_MODELS[name]
        return builder(**kw)
    if name == "piecewise":
        if interval is None or m is None:
            raise InvalidModel("piecewise model needs explicit interval and m")
        return piecewise(params["breaks"], params["pieces"], interval, m)
    raise InvalidModel(f"unknown model '{name}'")


# ---------------------------------------------------------------------------
# antiderivative caches
# ---------------------------------------------------------------------------

class _PanelCache:
    """Monotone tables of P and O at adaptive breakpoints around y0.

    Panels grow geometrically toward finite boundaries (so singular ranges of
    2/eta^2 are subdivided geometrically) and by doubling toward infinite
    ones.  Writes happen under a lock; readers always see consistent tables
    because extension only appends.
    """

    def __init__(self, spec: DiffusionSpec, y0: float, tol: float):
        self.spec = spec
        self.y0 = y0
        self.tol = tol
        self.lock = threading.RLock()
        self.breaks = [y0]
        self.P = [0.0]
        self.O = [0.0]
        l, r = spec.interval
        self._scale = max(1.0, abs(y0))
        self._pts = sorted(b for b in spec.eta_breakpoints if l < b < r)

    def _f(self, z):
        with np.errstate(divide="ignore"):
            e = self.spec.eta_fn(np.asarray(z, dtype=float))
            return 2.0 / (e * e)

    def _integrate(self, a: float, b: float, weight_end: Optional[float] = None) -> float:
        """int_a^b f(z) dz, or int_a^b f(z) * (weight_end - z) dz."""
        if a == b:
            return 0.0
        if weight_end is None:
            fn = self._f
        else:
            fn = lambda z: self._f(z) * (weight_end - z)
        inner = [p for p in self._pts if min(a, b) < p < max(a, b)]
        kwargs = dict(epsabs=0.0, epsrel=max(1e-13, self.tol * 0.05), limit=200, full_output=1)
        if inner:
            kwargs["points"] = inner
        out = integrate.quad(fn, a, b, **kwargs)
        val, abserr = out[0], out[1]
        if len(out) > 3 or not math.isfinite(val):
            if math.isfinite(val) and abserr <= max(1e-13, 20.0 * self.tol) * max(1.0, abs(val)):
                return val
            raise QuadratureDivergence(
                f"quadrature of 2/eta^2 failed on [{a}, {b}] (value {val!r}, error {abserr!r})")
        return val

    def _next_break(self, current: float, direction: int) -> float:
        l, r = self.spec.interval
        if direction > 0:
            if math.isinf(r):
                step = max(self._scale, abs(current - self.y0))
                return current + step
            return current + 0.5 * (r - current)
        if math.isinf(l):
            step = max(self._scale, abs(current - self.y0))
            return current - step
        return current - 0.5 * (current - l)

    def cover(self, x: float):
        l, r = self.spec.interval
        if not (l < x < r):
            raise DomainError(f"point {x} outside the open interval")
        with self.lock:
            guard = 0
            while self.breaks[-1] < x:
                nb = self._next_break(self.breaks[-1], +1)
                a, pa, oa = self.breaks[-1], self.P[-1], self.O[-1]
                dp = self._integrate(a, nb)
                tri = self._integrate(a, nb, weight_end=nb)
                self.breaks.append(nb)
                self.P.append(pa + dp)
                self.O.append(oa + pa * (nb - a) + tri)
                guard += 1
                if guard > 4000:
                    raise QuadratureDivergence("panel refinement budget exhausted (right)")
            guard = 0
            while self.breaks[0] > x:
                nb = self._next_break(self.breaks[0], -1)
                b, pb, ob = self.breaks[0], self.P[0], self.O[0]
                dp = self._integrate(nb, b)
                tri = self._integrate(nb, b, weight_end=b)
                self.breaks.insert(0, nb)
                # P(nb) = P(b) - dp; O(nb) = O(b) - [P(nb)*(b-nb) + tri]
                self.P.insert(0, pb - dp)
                self.O.insert(0, ob - ((pb - dp) * (b - nb) + tri))
                guard += 1
                if guard > 4000:
                    raise QuadratureDivergence("panel refinement budget exhausted (left)")

    def po(self, x: float) -> tuple[float, float]:
        """(P(x), O(x)) for x strictly inside the interval."""
        self.cover(x)
        with self.lock:
            k = bisect_right(self.breaks, x) - 1
            if k < 0:
                k = 0
            a, pa, oa = self.breaks[k], self.P[k], self.O[k]
            if a == x:
                return pa, oa
            dp = self._integrate(a, x)
            tri = self._integrate(a, x, weight_end=x)
            return pa + dp, oa + pa * (x - a) + tri

    def po_many(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xs = np.asarray(xs, dtype=float)
        out_p = np.empty_like(xs)
        out_o = np.empty_like(xs)
        order = np.argsort(xs)
        for i in order:
            out_p[i], out_o[i] = self.po(float(xs[i]))
        return out_p, out_o


# ---------------------------------------------------------------------------
# q evaluator
# ---------------------------------------------------------------------------

class QFunction:
    """Cached evaluator of q(y, x), its x-derivative and boundary limits."""

    def __init__(self, spec: DiffusionSpec, tol: float = _DEFAULT_Q_TOL,
                 use_closed_form: Optional[bool] = None, reference_point: Optional[float] = None):
        self.spec = spec
        self.tol = float(tol)
        self.reference_point = spec.start_point if reference_point is None else float(reference_point)
        l, r = spec.interval
        if not (l < self.reference_point < r):
            raise DomainError("reference point outside the interval")
        if use_closed_form is None:
            use_closed_form = spec.q_closed_form is not None
        if use_closed_form and spec.q_closed_form is None:
            raise InvalidModel(f"model '{spec.name}' has no closed-form q")
        self.use_closed_form = use_closed_form
        self._cache = _PanelCache(spec, self.reference_point, self.tol)
        self._boundary_reports = {}
        self._sanity_check()

    def _sanity_check(self):
        """Local integrability stand-in: q over a small compact must be finite."""
        l, r = self.spec.interval
        m = self.reference_point
        lo = m - 0.25 * (m - l if math.isfinite(l) else 1.0)
        hi = m + 0.25 * (r - m if math.isfinite(r) else 1.0)
        for probe in (lo, hi):
            val = self.q(m, probe)
            if not math.isfinite(val):
                raise InvalidModel(
                    f"1/eta^2 not locally integrable near x={probe!r} (q diverged on a compact)")

    # -- scalar evaluation --------------------------------------------------

    def q(self, y: float, x: float) -> float:
        l, r = self.spec.interval
        if math.isnan(y) or math.isnan(x):
            raise NonFiniteInput("q arguments must not be NaN")
        if not (l < y < r):
            raise DomainError(f"base point y={y!r} outside ({l}, {r})")
        if x < l or x > r or (math.isinf(x) and (x == l or x == r)):
            return math.inf
        if x == y:
            return 0.0
        if x == l or x == r:
            return self.boundary_value(y, "left" if x == l else "right")
        if self.use_closed_form:
            return float(self.spec.q_closed_form(y, x))
        py, oy = self._cache.po(y)
        px, ox = self._cache.po(x)
        return (ox - oy) - py * (x - y)

    def q_x(self, y: float, x: float) -> float:
        """Partial derivative in x: the inner antiderivative int_y^x 2/eta^2."""
        l, r = self.spec.interval
        if math.isnan(y) or math.isnan(x):
            raise NonFiniteInput("q_x arguments must not be NaN")
        if not (l < y < r) or not (l < x < r):
            raise DomainError("q_x needs both arguments inside the open interval")
        if x == y:
            return 0.0
        py, _ = self._cache.po(y)
        px, _ = self._cache.po(x)
        return px - py

    # -- vectorized grid evaluation ------------------------------------------

    def q_grid(self, ys, xs) -> np.ndarray:
        """Matrix q(ys[i], xs[j]); ys must lie inside the open interval."""
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        l, r = self.spec.interval
        if np.any(np.isnan(ys)) or np.any(np.isnan(xs)):
            raise NonFiniteInput("grid contains NaN")
        if np.any((ys <= l) | (ys >= r)):
            raise DomainError("grid base points must lie inside the open interval")
        if self.use_closed_form:
            with np.errstate(all="ignore"):
                out = np.asarray(self.spec.q_closed_form(ys[:, None], xs[None, :]), dtype=float)
        else:
            inside = (xs > l) & (xs < r)
            pput = np.zeros_like(xs)
            oput = np.zeros_like(xs)
            pput[inside], oput[inside] = self._cache.po_many(xs[inside])
            py, oy = self._cache.po_many(ys)
            out = (oput[None, :] - oy[:, None]) - py[:, None] * (xs[None, :] - ys[:, None])
            for j in np.nonzero(~inside)[0]:
                for i in range(len(ys)):
                    out[i, j] = self.q(float(ys[i]), float(xs[j]))
        outside = (xs[None, :] < l) | (xs[None, :] > r)
        out = np.where(outside, np.inf, out)
        return out

    def q_at(self, y: float, xs) -> np.ndarray:
        """Vector q(y, xs[j]) including boundary/outside handling."""
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        l, r = self.spec.interval
        if self.use_closed_form:
            with np.errstate(all="ignore"):
                vals = np.asarray(self.spec.q_closed_form(y, xs), dtype=float)
            vals = np.where((xs < l) | (xs > r), np.inf, vals)
            if math.isinf(l):
                vals = np.where(np.isneginf(xs), np.inf, vals)
            if math.isinf(r):
                vals = np.where(np.isposinf(xs), np.inf, vals)
            return vals
        return np.array([self.q(y, float(x)) for x in xs])

    # -- boundaries -----------------------------------------------------------

    def boundary_value(self, y: float, side: str) -> float:
        """q(y, l+) or q(y, r-) as an extended real."""
        l, r = self.spec.interval
        endpoint = l if side == "left" else r
        if math.isinf(endpoint):
            return math.inf
        if self.use_closed_form:
            with np.errstate(all="ignore"):
                val = float(self.spec.q_closed_form(y, endpoint))
            return math.inf if math.isnan(val) else val
        report = self.boundary_report(side)
        if not report.accessible:
            return math.inf
        # translate the cached limit at m to base point y via the identity
        m = self.spec.start_point
        return report.limit_value - self.q(m, y) - self.q_x(m, y) * (endpoint - y)

    def boundary_report(self, side: str) -> "BoundaryReport":
        if side not in self._boundary_reports:
            self._boundary_reports[side] = classify_boundary(self, side)
        return self._boundary_reports[side]


# module-level operation aliases matching the rest of the package

def q_eval(qf: QFunction, y: float, x: float) -> float:
    return qf.q(y, x)


def q_x_eval(qf: QFunction, y: float, x: float) -> float:
    return qf.q_x(y, x)


# ---------------------------------------------------------------------------
# boundary classification
# ---------------------------------------------------------------------------

@dataclass
class BoundaryReport:
    side: str
    limit_value: float
    accessible: bool
    probe_trace: list  # [(x, q(m, x)), ...]
    method: str  # rule_infinite_endpoint | closed_form | probe

    def summary(self) -> dict:
        return {
            "side": self.side,
            "limit_value": self.limit_value,
            "accessible": self.accessible,
            "method": self.method,
            "probes": [[float(x), float(q)] for x, q in self.probe_trace],
        }


def _probe_points(qf: QFunction, y: float, side: str, count: int):
    l, r = qf.spec.interval
    if side == "left":
        if math.isinf(l):
            return [y - max(1.0, abs(y)) * 2.0 ** k for k in range(count)]
        return [l + (y - l) * 2.0 ** (-(k + 1)) for k in range(count)]
    if math.isinf(r):
        return [y + max(1.0, abs(y)) * 2.0 ** k for k in range(count)]
    return [r - (r - y) * 2.0 ** (-(k + 1)) for k in range(count)]


def _probe_verdict(qf: QFunction, y: float, side: str, budget: int, cap: float):
    """(accessible, limit, trace) or InconclusiveBoundary."""
    trace = []
    prev = None
    calm = 0
    for x in _probe_points(qf, y, side, budget):
        val = qf.q(y, x)
        trace.append((x, val))
        if not math.isfinite(val) or val > cap:
            return False, math.inf, trace
        if prev is not None:
            inc = val - prev
            if inc <= _CAUCHY_RTOL * max(1.0, val):
                calm += 1
                if calm >= 3:
                    return True, val + max(inc, 0.0), trace
            else:
                calm = 0
        prev = val
    raise InconclusiveBoundary(
        f"{side} boundary probes hit neither the divergence cap nor the Cauchy criterion "
        f"within {budget} steps (last q={prev!r})")


def classify_boundary(qf: QFunction, side: str,
                      budget: int = BOUNDARY_PROBE_BUDGET,
                      cap: float = DIVERGENCE_CAP) -> BoundaryReport:
    """Feller accessibility of one endpoint, decided at two base points."""
    if side not in ("left", "right"):
        raise DomainError(f"side must be 'left' or 'right', got {side!r}")
    spec = qf.spec
    l, r = spec.interval
    endpoint = l if side == "left" else r
    m = spec.start_point
    y2 = m + 0.25 * ((r if math.isfinite(r) else m + 2.0) - m) if side == "left" \
        else m - 0.25 * (m - (l if math.isfinite(l) else m - 2.0))

    if math.isinf(endpoint):
        trace = [(x, qf.q(m, x)) for x in _probe_points(qf, m, side, 12)]
        return BoundaryReport(side, math.inf, False, trace, "rule_infinite_endpoint")

    if qf.use_closed_form:
        with np.errstate(all="ignore"):
            lim = float(spec.q_closed_form(m, endpoint))
            lim2 = float(spec.q_closed_form(y2, endpoint))
        lim = math.inf if math.isnan(lim) else lim
        lim2 = math.inf if math.isnan(lim2) else lim2
        if math.isfinite(lim) != math.isfinite(lim2):
            raise InconclusiveBoundary("closed-form boundary verdict differs across base points")
        trace = [(x, qf.q(m, x)) for x in _probe_points(qf, m, side, 12)]
        return BoundaryReport(side, lim, math.isfinite(lim), trace, "closed_form")

    acc, lim, trace = _probe_verdict(qf, m, side, budget, cap)
    acc2, _, _ = _probe_verdict(qf, y2, side, budget, cap)
    if acc != acc2:
        raise InconclusiveBoundary("probe verdicts differ across the two base points")
    return BoundaryReport(side, lim, acc, trace, "probe")
