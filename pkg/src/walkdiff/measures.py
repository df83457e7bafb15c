"""Centered increment laws for the walk steps.

An increment measure is either a finite list of atoms (x_i, w_i) or a named
density.  It carries its support endpoints, the atom masses sitting exactly on
those endpoints, a cached second moment, a quantile function using the
right-continuous convention

    quantile(r) = inf {x : F(x) > r},    r in (0,1),

and inverse-transform sampling.  The convention matters at jump points: for
the symmetric two-point law the quantile at r = 1/2 is the upper atom.

Densities with compact support get an analytic quantile where available and a
tabulated one (4097 Chebyshev-spaced probabilities, monotone interpolation)
otherwise.  The heavy-tailed fixture density c*exp(-|x|)/(1+x^2) is included
for divergence testing only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, InvalidMeasure
from .rng import RngStream

_QUANTILE_TABLE_SIZE = 4097
_MEAN_TOL = 1e-12
_MASS_TOL = 1e-9


@dataclass(frozen=True)
class DensityBackend:
    """Named density with pdf, support and (analytic or tabulated) quantile."""

    name: str
    params: dict
    pdf: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]
    quantile_exact: Optional[Callable[[np.ndarray], np.ndarray]] = None
    _table: tuple = field(default=None, repr=False, compare=False)

    def quantile(self, r):
        if self.quantile_exact is not None:
            return self.quantile_exact(r)
        probs, xs = self._table
        return np.interp(r, probs, xs)


@dataclass(frozen=True)
class IncrementMeasure:
    name: str
    atoms: Optional[tuple[tuple[float, float], ...]] = None  # sorted ((x, w), ...)
    density: Optional[DensityBackend] = None
    inf_supp: float = -math.inf
    sup_supp: float = math.inf
    second_moment: float = math.nan
    atom_mass_at_inf_supp: float = 0.0
    atom_mass_at_sup_supp: float = 0.0

    @property
    def is_atomic(self) -> bool:
        return self.atoms is not None

    @property
    def compact_support(self) -> bool:
        return math.isfinite(self.inf_supp) and math.isfinite(self.sup_supp)

    def atom_arrays(self):
        xs = np.array([x for x, _ in self.atoms])
        ws = np.array([w for _, w in self.atoms])
        return xs, ws

    def mean(self) -> float:
        if self.is_atomic:
            xs, ws = self.atom_arrays()
            return float(np.dot(xs, ws))
        return _density_moment(self.density, 1)

    def summary(self) -> dict:
        out = {
            "name": self.name,
            "kind": "atoms" if self.is_atomic else "density",
            "inf_supp": self.inf_supp,
            "sup_supp": self.sup_supp,
            "second_moment": self.second_moment,
            "atom_mass_at_inf_supp": self.atom_mass_at_inf_supp,
            "atom_mass_at_sup_supp": self.atom_mass_at_sup_supp,
        }
        if self.is_atomic:
            out["atoms"] = [[x, w] for x, w in self.atoms]
        else:
            out["density"] = {"name": self.density.name, **self.density.params}
        return out

    def reflected(self) -> "IncrementMeasure":
        """Pushforward under x -> -x (used to reduce Case 3 to Case 2)."""
        if self.is_atomic:
            return from_atoms([(-x, w) for x, w in self.atoms], name=f"reflect({self.name})")
        dens = self.density
        lo, hi = dens.support
        refl = DensityBackend(
            name=f"reflect({dens.name})",
            params=dens.params,
            pdf=lambda x, _p=dens.pdf: _p(-np.asarray(x)),
            support=(-hi, -lo),
            quantile_exact=(None if dens.quantile_exact is None
                            else lambda r, _q=dens.quantile_exact: -_q(1.0 - np.asarray(r))),
            _table=(None if dens._table is None
                    else (dens._table[0], -dens._table[1][::-1])),
        )
        return IncrementMeasure(
            name=f"reflect({self.name})",
            density=refl,
            inf_supp=-self.sup_supp,
            sup_supp=-self.inf_supp,
            second_moment=self.second_moment,
            atom_mass_at_inf_supp=self.atom_mass_at_sup_supp,
            atom_mass_at_sup_supp=self.atom_mass_at_inf_supp,
        )


@dataclass
class ValidationReport:
    passed: bool
    checks: list  # (name, ok, detail)

    def failed_checks(self):
        return [c for c in self.checks if not c[1]]


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def from_atoms(pairs: Sequence[Sequence[float]], name: str = "atoms") -> IncrementMeasure:
    if not pairs:
        raise InvalidMeasure("atom list is empty")
    pairs = sorted((float(x), float(w)) for x, w in pairs)
    xs = [x for x, _ in pairs]
    if len(set(xs)) != len(xs):
        raise InvalidMeasure("duplicate atom locations")
    for x, w in pairs:
        if not math.isfinite(x):
            raise InvalidMeasure(f"atom location {x} is not finite")
        if not (0.0 < w <= 1.0):
            raise InvalidMeasure(f"atom weight {w} outside (0, 1]")
    ws = np.array([w for _, w in pairs])
    second = float(np.dot(np.array(xs) ** 2, ws))
    return IncrementMeasure(
        name=name,
        atoms=tuple(pairs),
        inf_supp=xs[0],
        sup_supp=xs[-1],
        second_moment=second,
        atom_mass_at_inf_supp=pairs[0][1],
        atom_mass_at_sup_supp=pairs[-1][1],
    )


def rademacher() -> IncrementMeasure:
    return from_atoms([(-1.0, 0.5), (1.0, 0.5)], name="rademacher")


def uniform(lo: float = -1.0, hi: float = 1.0) -> IncrementMeasure:
    lo, hi = float(lo), float(hi)
    if not (lo < hi):
        raise InvalidMeasure("uniform density needs lo < hi")
    width = hi - lo
    dens = DensityBackend(
        name="uniform",
        params={"lo": lo, "hi": hi},
        pdf=lambda x: np.where((np.asarray(x) >= lo) & (np.asarray(x) <= hi), 1.0 / width, 0.0),
        support=(lo, hi),
        quantile_exact=lambda r: lo + width * np.asarray(r),
    )
    second = (hi ** 3 - lo ** 3) / (3.0 * width)
    return IncrementMeasure(
        name=f"uniform[{lo},{hi}]",
        density=dens,
        inf_supp=lo,
        sup_supp=hi,
        second_moment=second,
    )


def exp_abs_cauchy() -> IncrementMeasure:
    """Density c*exp(-|x|)/(1+x^2); symmetric, unbounded support, all moments finite.

    Divergence fixture for the embedding-cost map; not intended for walks.
    """
    half = integrate.quad(lambda x: math.exp(-x) / (1.0 + x * x), 0.0, np.inf)[0]
    c = 1.0 / (2.0 * half)

    def pdf(x):
        x = np.asarray(x, dtype=float)
        return c * np.exp(-np.abs(x)) / (1.0 + x * x)

    # CDF on the positive half on a graded grid, quantile table by inversion.
    xs_pos = np.concatenate([np.linspace(0.0, 8.0, 4001)[1:], np.geomspace(8.0, 64.0, 513)[1:]])
    xs_pos = np.unique(xs_pos)
    grid = np.concatenate([[0.0], xs_pos])
    cdf_pos = 0.5 + integrate.cumulative_trapezoid(pdf(grid), grid, initial=0.0)
    cdf_pos = np.minimum(cdf_pos / cdf_pos[-1] * (cdf_pos[-1]), 1.0)
    probs = 0.5 * (1.0 - np.cos(np.pi * np.arange(_QUANTILE_TABLE_SIZE) / (_QUANTILE_TABLE_SIZE - 1)))
    xq = np.empty_like(probs)
    upper = probs >= 0.5
    xq[upper] = np.interp(probs[upper], cdf_pos, grid)
    xq[~upper] = -np.interp(1.0 - probs[~upper], cdf_pos, grid)
    dens = DensityBackend(
        name="exp_abs_cauchy",
        params={},
        pdf=pdf,
        support=(-math.inf, math.inf),
        _table=(probs, xq),
    )
    second = 2.0 * c * integrate.quad(
        lambda x: x * x * math.exp(-x) / (1.0 + x * x), 0.0, np.inf)[0]
    return IncrementMeasure(
        name="exp_abs_cauchy",
        density=dens,
        inf_supp=-math.inf,
        sup_supp=math.inf,
        second_moment=second,
    )


_DENSITY_CATALOG = {
    "uniform": uniform,
    "exp_abs_cauchy": exp_abs_cauchy,
}


def from_density(name: str, **params) -> IncrementMeasure:
    try:
        builder = _DENSITY_CATALOG[name]
    except KeyError:
        raise InvalidMeasure(f"unknown density '{name}'") from None
    return builder(**params)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def validate_measure(mu: IncrementMeasure) -> ValidationReport:
    """Check the construction contract; failures are reported, not raised."""
    checks = []
    if mu.is_atomic:
        xs, ws = mu.atom_arrays()
        total = float(ws.sum())
        checks.append(("mass_sums_to_one", abs(total - 1.0) <= _MASS_TOL,
                       f"total mass {total!r}"))
        mean = float(np.dot(xs, ws))
        checks.append(("centered", abs(mean) <= _MEAN_TOL, f"mean {mean!r}"))
        not_dirac0 = not (len(xs) == 1 and xs[0] == 0.0)
        checks.append(("not_dirac_at_zero", not_dirac0, "mu == delta_0" if not not_dirac0 else ""))
    else:
        dens = mu.density
        lo, hi = dens.support
        a = lo if math.isfinite(lo) else -64.0
        b = hi if math.isfinite(hi) else 64.0
        mass = integrate.quad(lambda x: float(dens.pdf(x)), a, b, limit=200)[0]
        checks.append(("mass_sums_to_one", abs(mass - 1.0) <= _MASS_TOL, f"total mass {mass!r}"))
        mean = _density_moment(dens, 1)
        checks.append(("centered", abs(mean) <= 1e-9, f"mean {mean!r}"))
        checks.append(("not_dirac_at_zero", mu.second_moment > 0.0,
                       f"second moment {mu.second_moment!r}"))
    ok = all(c[1] for c in checks)
    return ValidationReport(passed=ok, checks=checks)


def quantile(mu: IncrementMeasure, r):
    """Generalized inverse F^{-1}(r) = inf{x : F(x) > r}, vectorized over r."""
    arr = np.asarray(r, dtype=float)
    if np.any((arr <= 0.0) | (arr >= 1.0)):
        raise DomainError("quantile argument must lie in (0, 1)")
    if mu.is_atomic:
        xs, ws = mu.atom_arrays()
        cum = np.cumsum(ws)
        cum[-1] = 1.0
        idx = np.searchsorted(cum, arr, side="right")
        idx = np.minimum(idx, len(xs) - 1)
        out = xs[idx]
    else:
        out = mu.density.quantile(arr)
    return float(out) if np.isscalar(r) else out


def sample_increment(mu: IncrementMeasure, rng: RngStream) -> float:
    """One draw distributed as mu (inverse transform)."""
    return float(quantile(mu, rng.uniform()))


def sample_increments(mu: IncrementMeasure, rng: RngStream, size: int) -> np.ndarray:
    u = rng.uniform(size)
    return np.asarray(quantile(mu, u))


def _density_moment(dens: DensityBackend, k: int) -> float:
    lo, hi = dens.support
    a = lo if math.isfinite(lo) else -np.inf
    b = hi if math.isfinite(hi) else np.inf
    val = integrate.quad(lambda x: (x ** k) * float(dens.pdf(x)), a, b, limit=200)[0]
    return float(val)
