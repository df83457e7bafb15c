"""Batch CLI: classify, qfun, scalefactor, walk, embed, converge, lln.

Every run prints a one-line JSON summary to stdout and writes its artifacts
atomically (results are computed fully before any file is touched, and each
file lands via temp-file + rename).  Exit codes: 0 success, 1 domain errors,
2 usage/config errors.  A missing --seed is generated and reported so any run
can be reproduced post hoc.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import secrets
import sys
import tempfile

import numpy as np

from . import config as cfgmod
from . import convergence, embedding, measures, models, scale, walk
from .config import CommandConfig, ExperimentConfig, MeasureConfig, ModelConfig, parse_grid
from .errors import ConfigError, ParseError, ValidationError, WalkdiffError
from .models import QFunction
from .rng import RngStream
from .scale import ScaleSolver


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _parse_kv_params(body: str) -> dict:
    params = {}
    if not body:
        return params
    for item in body.split(","):
        if "=" not in item:
            raise ValidationError(f"malformed parameter {item!r} (need key=value)")
        key, val = item.split("=", 1)
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            parsed = val
        params[key.strip()] = parsed
    return params


def parse_model_arg(text: str) -> ModelConfig:
    """'bm', 'two_media{A=2}', 'cev{alpha=0.5}', ..."""
    text = text.strip()
    if "{" in text:
        if not text.endswith("}"):
            raise ValidationError(f"malformed model spec {text!r}")
        name, body = text[:-1].split("{", 1)
        return ModelConfig(name=name, params=_parse_kv_params(body))
    return ModelConfig(name=text)


def parse_measure_arg(text: str) -> MeasureConfig:
    """'rademacher', 'atoms:[[-1,0.5],[1,0.5]]', 'uniform{lo=-1,hi=1}', 'exp_abs_cauchy'."""
    text = text.strip()
    if text == "rademacher":
        return MeasureConfig(atoms=((-1.0, 0.5), (1.0, 0.5)))
    if text.startswith("atoms:"):
        try:
            pairs = json.loads(text[len("atoms:"):])
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed atoms spec: {exc}") from exc
        return MeasureConfig(atoms=tuple((float(x), float(w)) for x, w in pairs))
    if "{" in text:
        if not text.endswith("}"):
            raise ValidationError(f"malformed measure spec {text!r}")
        name, body = text[:-1].split("{", 1)
        return MeasureConfig(density={"name": name, **_parse_kv_params(body)})
    return MeasureConfig(density={"name": text})


def _atomic_write(path: str, data: str):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".walkdiff-")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt_float(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# command implementations: each returns (summary_extras, {path: text})
# ---------------------------------------------------------------------------

def _cmd_classify(cfg, spec, mu, seed, defaults):
    qf = QFunction(spec, tol=defaults.q_tol)
    report = scale.classify_case(qf, mu)
    boundaries = {}
    for side in ("left", "right"):
        try:
            boundaries[side] = models.classify_boundary(
                qf, side, budget=defaults.boundary_probe_budget,
                cap=defaults.divergence_cap).summary()
        except WalkdiffError as exc:
            boundaries[side] = {"side": side, "error": str(exc)}
    payload = {"case": report.summary(), "boundaries": boundaries,
               "measure": mu.summary()}
    outputs = {}
    out = cfg.command.options.get("out")
    if out:
        outputs[out] = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    extras = {"case_id": report.case_id,
              "assumption_status": report.assumption_status,
              "N0_estimate": report.n0_estimate}
    return extras, outputs


def _cmd_qfun(cfg, spec, mu, seed, defaults):
    opts = cfg.command.options
    qf = QFunction(spec, tol=defaults.q_tol)
    y = float(opts["y"])
    xs = parse_grid(opts["grid"])
    rows = [(_fmt_float(x), _fmt_float(qf.q(y, x)),
             _fmt_float(qf.q_x(y, x)) if spec.interval[0] < x < spec.interval[1] else "")
            for x in xs]
    return {"points": len(xs)}, {opts["out"]: _csv_text(["x", "q", "q_x"], rows)}


def _cmd_scalefactor(cfg, spec, mu, seed, defaults):
    opts = cfg.command.options
    qf = QFunction(spec, tol=defaults.q_tol)
    grid = np.asarray(parse_grid(opts["grid"]))
    table = scale.build_table(qf, mu, int(opts["N"]), grid)
    rows = [(_fmt_float(y), _fmt_float(a), _fmt_float(g), str(bool(e)).lower())
            for y, a, g, e in zip(table.grid, table.values, table.achieved,
                                  table.exact_equality)]
    return ({"N": int(opts["N"]), "points": len(rows)},
            {opts["out"]: _csv_text(["y", "a_N", "G", "exact_equality"], rows)})


def _cmd_walk(cfg, spec, mu, seed, defaults):
    opts = cfg.command.options
    qf = QFunction(spec, tol=defaults.q_tol)
    solver = ScaleSolver(qf, mu)
    paths = walk.simulate_paths(solver, mu, int(opts["N"]), int(opts["steps"]),
                                int(opts["paths"]), seed=seed, threads=cfg.threads,
                                full=True)
    rows = []
    for pid in range(paths.shape[0]):
        for k in range(paths.shape[1]):
            rows.append((pid, k, _fmt_float(paths[pid, k])))
    return ({"paths": paths.shape[0], "steps": paths.shape[1] - 1},
            {opts["out"]: _csv_text(["path_id", "k", "y"], rows)})


def _cmd_embed(cfg, spec, mu, seed, defaults):
    opts = cfg.command.options
    qf = QFunction(spec, tol=defaults.q_tol)
    solver = ScaleSolver(qf, mu)
    bf = embedding.bridge_for(mu, gh_nodes=defaults.gh_nodes)
    nodes = int(opts.get("grid_nodes", defaults.bridge_nodes))
    rows = []
    for pid in range(int(opts["paths"])):
        rng = RngStream(seed, pid)
        path = embedding.simulate_embedded_walk(qf, bf, solver, int(opts["N"]),
                                                int(opts["steps"]), rng, nodes=nodes,
                                                vmax=defaults.bridge_vmax)
        rows.append((pid, 0, _fmt_float(0.0), _fmt_float(path.states[0]),
                     _fmt_float(0.0), _fmt_float(0.0)))
        for k, es in enumerate(path.per_step):
            rows.append((pid, k + 1, _fmt_float(path.taus[k + 1]),
                         _fmt_float(path.states[k + 1]), _fmt_float(es.duration_xi),
                         _fmt_float(es.compensation_wait)))
    return ({"paths": int(opts["paths"]), "steps": int(opts["steps"])},
            {opts["out"]: _csv_text(["path_id", "k", "tau", "state", "xi", "wait"], rows)})


def _cmd_converge(cfg, spec, mu, seed, defaults):
    opts = cfg.command.options
    study = opts["study"]
    n_values = opts["N_values"]
    outputs = {}
    raw = None
    if study == "marginal":
        report = convergence.marginal_convergence_study(
            spec, mu, n_values, float(opts.get("t", 1.0)),
            int(opts.get("samples", 10000)), seed=seed, threads=cfg.threads,
            q_tol=defaults.q_tol,
            euler_step=float(opts.get("euler_step", defaults.euler_step)),
            euler_paths=int(opts.get("euler_paths", defaults.euler_paths)))
    elif study == "drift":
        report = convergence.drift_experiment(
            spec, mu, n_values, float(opts.get("s", 1.0)),
            float(opts.get("epsilon", 0.05)), int(opts.get("reps", 1000)),
            seed=seed, nodes=int(opts.get("grid_nodes", 256)), threads=cfg.threads)
    else:
        qf = QFunction(spec, tol=defaults.q_tol)
        solver = ScaleSolver(qf, mu)
        bf = embedding.bridge_for(mu, gh_nodes=defaults.gh_nodes)
        grid = np.linspace(0.0, 1.0, int(opts.get("grid_points", 200)))
        reps = int(opts.get("reps", 16))
        pairs = []
        for run_idx, N in enumerate(n_values):
            sups = []
            for i in range(reps):
                rng = RngStream(seed, ((run_idx + 1) << 32) + i)
                path = embedding.simulate_embedded_walk(
                    qf, bf, solver, int(N), int(math.ceil(1.5 * N)), rng,
                    nodes=int(opts.get("grid_nodes", 192)), record_bridge=True)
                sups.append(convergence.coupled_sup_distance(qf, path, grid))
            pairs.append((N, float(np.median(sups))))
        cfg_dict = {"experiment": "sup_distance", "model": spec.name,
                    "N": list(map(int, n_values)), "reps": reps, "seed": seed}
        report = convergence._make_report("sup_distance", cfg_dict, n_values, reps,
                                          "sup_path_distance", pairs)
    outputs[opts["out"]] = report.to_json() + "\n"
    if opts.get("raw_csv"):
        rows = [(v["N"], _fmt_float(v["value"])) for v in report.values]
        outputs[opts["raw_csv"]] = _csv_text(["N", "value"], rows)
    return ({"study": study, "metric": report.metric,
             "values": report.values, "monotone_trend": report.monotone_trend},
            outputs)


def _cmd_lln(cfg, spec, mu, seed, defaults):
    opts = cfg.command.options
    array_spec = {"kind": opts["array"]}
    if opts["array"] == "embedded_rho":
        array_spec["spec"] = spec
        array_spec["mu"] = mu
        array_spec["nodes"] = int(opts.get("grid_nodes", 256))
    report = convergence.lln_experiment(array_spec, opts["n_values"],
                                        float(opts["epsilon"]), int(opts["reps"]),
                                        seed=seed, threads=cfg.threads)
    return ({"kind": opts["array"], "values": report.values,
             "monotone_trend": report.monotone_trend},
            {opts["out"]: report.to_json() + "\n"})


_RUNNERS = {
    "classify": _cmd_classify,
    "qfun": _cmd_qfun,
    "scalefactor": _cmd_scalefactor,
    "walk": _cmd_walk,
    "embed": _cmd_embed,
    "converge": _cmd_converge,
    "lln": _cmd_lln,
}


def run_command(cfg: ExperimentConfig) -> dict:
    """Execute a validated config; returns the summary dict (artifacts written)."""
    spec = cfg.model.build()
    mu = cfg.measure.build()
    defaults = cfg.defaults()
    seed = cfg.seed if cfg.seed is not None else secrets.randbits(48)
    extras, outputs = _RUNNERS[cfg.command.name](cfg, spec, mu, seed, defaults)
    written = []
    for rel_path, text in outputs.items():
        path = rel_path if os.path.isabs(rel_path) else os.path.join(cfg.out_dir, rel_path)
        _atomic_write(path, text)
        written.append(path)
    summary = {"command": cfg.command.name, "status": "ok", "seed": seed,
               "model": cfg.model.name, "outputs": written}
    summary.update(extras)
    return summary


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------

def _add_common(parser):
    parser.add_argument("--config", help="TOML experiment config")
    parser.add_argument("--model", help="model spec, e.g. two_media{A=2}")
    parser.add_argument("--mu", help="measure spec, e.g. rademacher or atoms:[[-1,0.5],[1,0.5]]")
    parser.add_argument("--m", type=float, help="start point override")
    parser.add_argument("--interval", help="interval override 'l,r' (inf allowed)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--tol", type=float, help="quadrature tolerance override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="walkdiff",
        description="Scale factors embedding scaled random walks into driftless diffusions")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute the [command] block of a config file")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--threads", type=int)
    run_p.add_argument("--out-dir", dest="out_dir")

    flags = {
        "classify": [("--out", str, None)],
        "qfun": [("--y", float, None), ("--grid", str, None), ("--out", str, None)],
        "scalefactor": [("--N", int, None), ("--grid", str, None), ("--out", str, None)],
        "walk": [("--N", int, None), ("--steps", int, None), ("--paths", int, None),
                 ("--out", str, None)],
        "embed": [("--N", int, None), ("--steps", int, None), ("--paths", int, None),
                  ("--grid-nodes", int, "grid_nodes"), ("--out", str, None)],
        "converge": [("--study", str, None), ("--N-values", str, "N_values"),
                     ("--t", float, None), ("--s", float, None),
                     ("--epsilon", float, None), ("--samples", int, None),
                     ("--reps", int, None), ("--reference", str, None),
                     ("--euler-step", float, "euler_step"),
                     ("--euler-paths", int, "euler_paths"),
                     ("--grid-nodes", int, "grid_nodes"), ("--out", str, None),
                     ("--raw-csv", str, "raw_csv")],
        "lln": [("--array", str, None), ("--n-values", str, "n_values"),
                ("--epsilon", float, None), ("--reps", int, None),
                ("--grid-nodes", int, "grid_nodes"), ("--out", str, None)],
    }
    for name, entries in flags.items():
        p = sub.add_parser(name)
        _add_common(p)
        for flag, typ, dest in entries:
            kwargs = {"type": typ}
            if dest:
                kwargs["dest"] = dest
            p.add_argument(flag, **kwargs)
    return parser


def _interval_from_arg(text: str):
    parts = text.split(",")
    if len(parts) != 2:
        raise ValidationError("interval must be 'l,r'")
    return (float(parts[0]), float(parts[1]))


def _config_from_args(args) -> ExperimentConfig:
    base = None
    if args.config:
        with open(args.config, encoding="utf-8") as handle:
            base = cfgmod.parse_config(handle.read())
    if args.command == "run":
        if base is None:
            raise ParseError("run needs --config")
        cfg = base
    else:
        model = base.model if base else None
        measure = base.measure if base else None
        if getattr(args, "model", None):
            model = parse_model_arg(args.model)
        if getattr(args, "mu", None):
            measure = parse_measure_arg(args.mu)
        if model is None or measure is None:
            raise ParseError("need --model and --mu (or a --config providing them)")
        if getattr(args, "m", None) is not None:
            model = ModelConfig(model.name, dict(model.params), model.interval, float(args.m))
        if getattr(args, "interval", None):
            model = ModelConfig(model.name, dict(model.params),
                                _interval_from_arg(args.interval), model.m)
        options = dict(base.command.options) if base and base.command.name == args.command else {}
        schema = cfgmod._COMMAND_SCHEMAS[args.command]
        for key, (tag, _req) in schema.items():
            val = getattr(args, key, None)
            if val is None:
                continue
            if tag == "intlist":
                val = [int(v) for v in str(val).split(",")]
            options[key] = val
        cmd = CommandConfig(name=args.command, options=options)
        for key, (tag, required) in schema.items():
            if required and key not in options:
                raise ParseError(f"missing option '{key}' for command '{args.command}'")
        cfg = ExperimentConfig(
            model=model, measure=measure, command=cmd,
            seed=base.seed if base else None,
            threads=base.threads if base else 1,
            out_dir=base.out_dir if base else ".",
            tolerances=dict(base.tolerances) if base else {},
        )
        if getattr(args, "tol", None) is not None:
            cfg.tolerances["q_tol"] = float(args.tol)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    elif os.environ.get("WALKDIFF_THREADS"):
        cfg.threads = int(os.environ["WALKDIFF_THREADS"])
    if getattr(args, "out_dir", None):
        cfg.out_dir = args.out_dir
    cfg.measure.build()
    cfg.model.build()
    cfg.defaults()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        summary = run_command(cfg)
    except ConfigError as exc:
        print(json.dumps({"status": "error", "kind": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 2
    except WalkdiffError as exc:
        print(json.dumps({"status": "error", "kind": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
