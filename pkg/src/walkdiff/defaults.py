"""One documented table of numeric defaults, overridable per config.

Every knob is consumed at exactly one site; see README for the map.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields


@dataclass
class Defaults:
    q_tol: float = 1e-9                # QFunction relative quadrature tolerance
    divergence_cap: float = 1e12       # extended-real cutoff for q/G divergence
    boundary_probe_budget: int = 60    # geometric probe steps per boundary
    solver_a_rtol: float = 1e-10       # bisection tolerance on the scale factor
    solver_max_iter: int = 60
    liminf_probe_points: int = 40      # probes per direction for conditions (8)/(13)/(15)
    bridge_nodes: int = 2048           # v-grid nodes for the step-duration integral
    bridge_vmax: float = 36.0
    refine_rel_tol: float = 1e-4       # grid-doubling stop for single-step sampling
    gh_nodes: int = 64                 # Gauss-Hermite nodes for density bridges
    quantile_table_size: int = 4097
    euler_step: float = 2e-4           # Euler oracle defaults (KS self-error < 0.005)
    euler_paths: int = 200000
    threads: int = 1

    def override(self, updates: dict) -> "Defaults":
        known = {f.name for f in fields(self)}
        bad = set(updates) - known
        if bad:
            raise KeyError(f"unknown tolerance keys {sorted(bad)}")
        merged = {f.name: getattr(self, f.name) for f in fields(self)}
        merged.update(updates)
        return Defaults(**merged)


DEFAULTS = Defaults()
