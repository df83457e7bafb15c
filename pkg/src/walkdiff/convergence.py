"""Empirical verification of the limit claims.

Convergence "in probability / in distribution" is operationalized as
monotone-trend checks plus absolute thresholds at the largest N; thresholds
come from the Kolmogorov bound (KS statistics of n samples against the true
law concentrate below ~1.63/sqrt(n) at the 99% level) and Chebyshev-type
bounds for deviation probabilities.  Exact reference marginals exist for
Brownian motion (normal) and the exponential martingale model (lognormal);
everything else is compared against a fine-Euler Monte Carlo oracle whose
parameters are config-exposed.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from . import embedding, walk
from .errors import DomainError, UnsortedInput, UnsupportedModel
from .measures import IncrementMeasure
from .models import DiffusionSpec, QFunction, eta_eval
from .rng import RngStream
from .scale import ScaleSolver

EULER_STEP = 2e-4
EULER_PATHS = 200_000


@dataclass
class ConvergenceReport:
    experiment_id: str
    n_values: list
    sample_size: int
    metric: str
    values: list               # [{"N": n, "value": v}, ...]
    monotone_trend: bool
    config_hash: str
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceReport":
        return cls(**json.loads(text))

    @staticmethod
    def hash_config(config: dict) -> str:
        blob = json.dumps(config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _make_report(experiment_id, config, n_values, sample_size, metric, pairs, extras=None):
    vals = [v for _, v in pairs]
    trend = all(vals[i + 1] < vals[i] for i in range(len(vals) - 1))
    return ConvergenceReport(
        experiment_id=experiment_id,
        n_values=list(n_values),
        sample_size=sample_size,
        metric=metric,
        values=[{"N": int(n), "value": float(v)} for n, v in pairs],
        monotone_trend=bool(trend),
        config_hash=ConvergenceReport.hash_config(config),
        extras=extras or {},
    )


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov distance
# ---------------------------------------------------------------------------

def ks_statistic(sample, reference_cdf: Callable) -> float:
    """Two-sided sup |empirical - reference| via the order-statistic formula."""
    arr = np.asarray(sample, dtype=float)
    if arr.size == 0:
        raise DomainError("KS statistic needs a nonempty sample")
    if np.any(np.diff(arr) < 0.0):
        raise UnsortedInput("sample must be sorted nondecreasingly")
    F = np.asarray(reference_cdf(arr), dtype=float)
    n = arr.size
    i = np.arange(1, n + 1, dtype=float)
    d_plus = float(np.max(i / n - F))
    d_minus = float(np.max(F - (i - 1.0) / n))
    return max(d_plus, d_minus, 0.0)


# ---------------------------------------------------------------------------
# reference marginals
# ---------------------------------------------------------------------------

@dataclass
class ReferenceMarginal:
    cdf: Callable
    provenance: str  # "exact" | "euler_oracle"


def _euler_finals(spec: DiffusionSpec, t: float, step: float, paths: int, seed: int,
                  threads: int = 1) -> np.ndarray:
    l, r = spec.interval
    nsteps = max(1, int(round(t / step)))
    sqrt_h = math.sqrt(t / nsteps)
    chunk = 65536
    sizes = [min(chunk, paths - i) for i in range(0, paths, chunk)]

    def run(idx_size):
        idx, size = idx_size
        rng = RngStream(seed, idx)
        x = np.full(size, spec.start_point)
        for _ in range(nsteps):
            x = x + eta_eval(spec, x) * (sqrt_h * rng.normal(size))
            x = np.clip(x, l, r)
        return x

    jobs = list(enumerate(sizes))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    return np.sort(np.concatenate(parts))


def reference_marginal(spec: DiffusionSpec, t: float, mode: str = "auto",
                       euler_step: float = EULER_STEP, euler_paths: int = EULER_PATHS,
                       seed: int = 20_000_003, threads: int = 1) -> ReferenceMarginal:
    """CDF of M_t: exact for bm (normal) and gbm (lognormal), Euler otherwise."""
    if t <= 0.0:
        raise DomainError("reference marginal needs t > 0")
    m = spec.start_point
    exact = None
    if spec.name == "bm" and not (math.isfinite(spec.interval[0]) or math.isfinite(spec.interval[1])):
        sd = math.sqrt(t)
        exact = lambda x: special.ndtr((np.asarray(x, dtype=float) - m) / sd)
    elif spec.name in ("gbm", "cev") and spec.params.get("alpha", 1.0 if spec.name == "gbm" else None) == 1.0:
        mu_log = math.log(m) - 0.5 * t
        sd = math.sqrt(t)
        def exact(x):
            x = np.asarray(x, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                z = (np.log(np.where(x > 0.0, x, np.nan)) - mu_log) / sd
            return np.where(x <= 0.0, 0.0, special.ndtr(z))
    if mode == "exact" and exact is None:
        raise UnsupportedModel(f"no exact marginal for model '{spec.name}'")
    if exact is not None and mode in ("auto", "exact"):
        return ReferenceMarginal(cdf=exact, provenance="exact")
    finals = _euler_finals(spec, t, euler_step, euler_paths, seed, threads)
    n = finals.size

    def ecdf(x):
        return np.searchsorted(finals, np.asarray(x, dtype=float), side="right") / n

    return ReferenceMarginal(cdf=ecdf, provenance="euler_oracle")


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------

def marginal_convergence_study(spec: DiffusionSpec, mu: IncrementMeasure, n_values,
                               t: float, sample_size: int, seed: int,
                               reference: Optional[ReferenceMarginal] = None,
                               threads: int = 1, q_tol: float = 1e-9,
                               euler_step: float = EULER_STEP,
                               euler_paths: int = EULER_PATHS) -> ConvergenceReport:
    """KS distance of Y^N_{floor(Nt)} against the law of M_t, per N."""
    qf = QFunction(spec, tol=q_tol)
    solver = ScaleSolver(qf, mu)
    if reference is None:
        reference = reference_marginal(spec, t, euler_step=euler_step,
                                       euler_paths=euler_paths, threads=threads)
    pairs = []
    for run_idx, N in enumerate(n_values):
        finals = walk.simulate_paths(solver, mu, int(N), int(math.floor(N * t)),
                                     sample_size, seed=seed, threads=threads,
                                     stream_base=(run_idx + 1) << 32)
        ks = ks_statistic(np.sort(finals), reference.cdf)
        pairs.append((N, ks))
    config = {
        "experiment": "marginal", "model": spec.name, "params": spec.params,
        "m": spec.start_point, "mu": mu.name, "t": t, "N": list(map(int, n_values)),
        "samples": sample_size, "seed": seed, "reference": reference.provenance,
    }
    return _make_report("marginal", config, n_values, sample_size, "ks", pairs,
                        extras={"t": t, "reference": reference.provenance})


def drift_experiment(spec: DiffusionSpec, mu: IncrementMeasure, n_values, s: float,
                     epsilon: float, reps: int, seed: int, nodes: int = 256,
                     threads: int = 1) -> ConvergenceReport:
    """Empirical P(|tau^N(floor(N s)) - s| > eps) per N (walk-clock drift)."""
    qf = QFunction(spec)
    solver = ScaleSolver(qf, mu)
    bf = embedding.bridge_for(mu)
    pairs = []
    for run_idx, N in enumerate(n_values):
        k = int(math.floor(N * s))
        cp, _, _ = embedding.simulate_embedded_batch(
            qf, bf, solver, int(N), k, reps, seed=seed, nodes=nodes,
            checkpoints=[k], threads=threads, stream_base=(run_idx + 1) << 32)
        taus = cp[:, 0]
        prob = float(np.mean(np.abs(taus - s) > epsilon))
        pairs.append((N, prob))
    config = {
        "experiment": "drift", "model": spec.name, "params": spec.params,
        "mu": mu.name, "s": s, "epsilon": epsilon, "N": list(map(int, n_values)),
        "reps": reps, "seed": seed, "nodes": nodes,
    }
    return _make_report("drift", config, n_values, reps, "deviation_probability", pairs,
                        extras={"s": s, "epsilon": epsilon})


def stopping_time_drift(embedded_paths, s_values, epsilon: float) -> ConvergenceReport:
    """Drift probabilities from already simulated embedded paths (one N)."""
    if not embedded_paths:
        raise DomainError("need at least one embedded path")
    N = embedded_paths[0].N
    K = len(embedded_paths[0])
    vals = {}
    for s in s_values:
        k = int(math.floor(N * s))
        if k > K:
            raise DomainError(f"paths too short for s={s} (need {k} steps, have {K})")
        taus = np.array([p.taus[k] for p in embedded_paths])
        vals[s] = float(np.mean(np.abs(taus - s) > epsilon))
    pairs = [(N, vals[s]) for s in s_values]
    config = {"experiment": "drift_from_paths", "N": N, "s": list(map(float, s_values)),
              "epsilon": epsilon, "reps": len(embedded_paths)}
    report = _make_report("drift_from_paths", config, [N] * len(s_values),
                          len(embedded_paths), "deviation_probability", pairs,
                          extras={"s_values": list(map(float, s_values)), "epsilon": epsilon})
    return report


# ---------------------------------------------------------------------------
# weak law of large numbers harness
# ---------------------------------------------------------------------------

def _lln_deviations(kind: str, params: dict, n: int, reps: int, seed: int,
                    threads: int = 1) -> np.ndarray:
    """|(1/n) sum (Z_k - E Z_k)| per repetition, for the named array family."""
    if kind == "constant":
        return np.zeros(reps)
    if kind == "exp_iid":
        rng = RngStream(seed, 0)
        rows = rng.generator.standard_exponential((reps, n))
        return np.abs(rows.mean(axis=1) - 1.0)
    if kind == "pareto_clipped":
        # Pareto alpha=1 clipped at n: mean 1 + log n, uniform integrability fails
        rng = RngStream(seed, 0)
        u = rng.uniform((reps, n))
        z = np.minimum(1.0 / (1.0 - u), float(n))
        mean_n = 1.0 + math.log(n)  # E[X ^ n] for the unit Pareto tail 1/x
        return np.abs(z.mean(axis=1) - mean_n)
    if kind == "embedded_rho":
        spec = params["spec"]
        mu = params["mu"]
        nodes = params.get("nodes", 256)
        qf = QFunction(spec)
        solver = ScaleSolver(qf, mu)
        bf = embedding.bridge_for(mu)
        cp, _, _ = embedding.simulate_embedded_batch(
            qf, bf, solver, n, n, reps, seed=seed, nodes=nodes,
            checkpoints=[n], threads=threads)
        # Z_k = N rho_k with N = n: mean deviation is |tau(n) - 1|
        return np.abs(cp[:, 0] - 1.0)
    raise DomainError(f"unknown LLN array kind '{kind}'")


def lln_experiment(array_spec: dict, n_values, epsilon: float, reps: int, seed: int,
                   threads: int = 1) -> ConvergenceReport:
    """P(|(1/n) sum (Z^n_k - E Z^n_k)| > eps) for a triangular array family."""
    kind = array_spec["kind"]
    params = {k: v for k, v in array_spec.items() if k != "kind"}
    pairs = []
    for run_idx, n in enumerate(n_values):
        dev = _lln_deviations(kind, params, int(n), reps, seed + 7919 * run_idx, threads)
        pairs.append((n, float(np.mean(dev > epsilon))))
    config = {
        "experiment": "lln", "kind": kind, "epsilon": epsilon,
        "n": list(map(int, n_values)), "reps": reps, "seed": seed,
        "params": {k: str(v) for k, v in params.items()},
    }
    return _make_report("lln", config, n_values, reps, "deviation_probability", pairs,
                        extras={"epsilon": epsilon, "kind": kind})


# ---------------------------------------------------------------------------
# coupled sup-distance (walk vs diffusion on shared randomness)
# ---------------------------------------------------------------------------

def coupled_sup_distance(qf: QFunction, path: embedding.EmbeddedPath, time_grid) -> float:
    """sup_t |Y^N_{Nt} - M_t| with M rebuilt from the recorded bridge segments.

    Only for Brownian motion (eta identically 1), where the concatenated
    time-changed bridges are a genuine diffusion path on the same randomness.
    Targets beyond the path's terminal clock tau_K are ignored, so simulate
    with a margin of steps.
    """
    spec = qf.spec
    if spec.eta_constant != 1.0:
        raise UnsupportedModel("coupled sup-distance is implemented for Brownian motion only")
    t_grid = np.asarray(time_grid, dtype=float)
    if t_grid.size == 0:
        return 0.0
    if np.any(t_grid < 0.0):
        raise DomainError("time grid must be nonnegative")
    N = path.N
    K = len(path)
    walk_path = walk.WalkPath(N, float(path.states[0]), path.states)
    sup = 0.0
    targets = np.sort(t_grid)
    ti = 0
    while ti < targets.size and targets[ti] == 0.0:
        ti += 1  # |Y_0 - M_0| = 0
    for k in range(K):
        if ti >= targets.size:
            break
        es = path.per_step[k]
        tau_k = path.taus[k]
        tau_next = path.taus[k + 1]
        while ti < targets.size and targets[ti] <= tau_next:
            t = targets[ti]
            if es.bridge is not None and t <= tau_k + es.duration_xi:
                _, delta, locus = es.bridge
                j = int(np.searchsorted(delta, t - tau_k, side="right")) - 1
                j = min(max(j, 0), len(delta) - 2)
                d0, d1 = delta[j], delta[j + 1]
                frac = 0.0 if d1 == d0 else (t - tau_k - d0) / (d1 - d0)
                m_t = (1.0 - frac) * locus[j] + frac * locus[j + 1]
            else:
                m_t = es.endpoint  # waiting at an absorbing point
            y_t = walk.interpolate(walk_path, min(N * t, K))
            sup = max(sup, abs(y_t - m_t))
            ti += 1
    return float(sup)
