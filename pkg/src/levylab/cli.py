"""Batch command-line interface.

Every subcommand reads a configuration from flags (plus JSON files where
structured input is needed), runs deterministically from its seed, writes
outputs atomically (temp file + rename) and prints a run manifest as JSON
on stdout.  Exit codes: 0 success, 1 validation error, 2 numeric failure,
64 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from typing import Sequence

import numpy as np

from . import __version__
from .core import (
    PathBatch,
    SchemeConfig,
    compensation_by_name,
    triplet_from_config,
)
from .diagnostics import explosion_stats, ks_distance, wasserstein1
from .embedding import doob_bound_check
from .environment import BernoulliPoisson, IIDScaled, rwre_simulate
from .errors import (
    DegenerateStateError,
    ExpressionError,
    LevylabError,
    PotentialOverflowError,
    QuadratureError,
    RangeError,
    SchemeStepError,
    ValidationError,
)
from .euler import CovariantField, IncrementPlan, euler_chain_simulate, stable_euler_field
from .expr import compile_expression
from .operators import convergence_gaps, vanishing_test_functions
from .potential import (
    CallablePotential,
    GridPotential,
    PiecewiseConstantPotential,
    potential_chain_simulate,
    zero_potential,
)
from .stable import StableField, stable_chain_simulate, stable_triplet_field

USAGE_EXIT = 64
VALIDATION_EXIT = 1
NUMERIC_EXIT = 2

_VALIDATION_ERRORS = (ValidationError, ExpressionError, RangeError,
                      FileNotFoundError, json.JSONDecodeError)
_NUMERIC_ERRORS = (QuadratureError, SchemeStepError, DegenerateStateError,
                   PotentialOverflowError, FloatingPointError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _seed_from(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get("LEVYLAB_SEED")
    if env is not None:
        return int(env)
    return 0


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".levylab-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def paths_to_csv(batch: PathBatch) -> str:
    """CSV rows path_id,t,x1..xd,alive; alive=0 rows carry nan states."""
    d = batch.dim
    header = "path_id,t," + ",".join(f"x{i + 1}" for i in range(d)) + ",alive"
    lines = [header]
    times = batch.times
    for pid in range(len(batch)):
        alive_row = times < batch.xi[pid]
        for j, t in enumerate(times):
            if alive_row[j]:
                coords = ",".join(repr(float(v)) for v in batch.states[pid, j])
                lines.append(f"{pid},{t:.9f},{coords},1")
            else:
                coords = ",".join("nan" for _ in range(d))
                lines.append(f"{pid},{t:.9f},{coords},0")
    return "\n".join(lines) + "\n"


def read_paths_csv(path: str) -> PathBatch:
    """Rebuild a batch from the CSV layout written by the simulators."""
    with open(path) as handle:
        header = handle.readline().strip().split(",")
        if header[:2] != ["path_id", "t"] or header[-1] != "alive":
            raise ValidationError(f"{path} does not look like a path CSV")
        d = len(header) - 3
        times_by_path: dict[int, list[float]] = {}
        states_by_path: dict[int, list[list[float]]] = {}
        xi_by_path: dict[int, float] = {}
        for line in handle:
            parts = line.strip().split(",")
            if len(parts) != d + 3:
                raise ValidationError(f"malformed row in {path}: {line!r}")
            pid = int(parts[0])
            t = float(parts[1])
            alive = parts[-1] == "1"
            times_by_path.setdefault(pid, []).append(t)
            states_by_path.setdefault(pid, []).append([float(v) for v in parts[2:-1]])
            if not alive and pid not in xi_by_path:
                xi_by_path[pid] = t
    if not times_by_path:
        raise ValidationError(f"{path} holds no paths")
    pids = sorted(times_by_path)
    times = np.asarray(times_by_path[pids[0]])
    states = np.stack([np.asarray(states_by_path[p]) for p in pids])
    xi = np.array([xi_by_path.get(p, np.inf) for p in pids])
    return PathBatch(times, states, xi=xi)


def _manifest(subcommand: str, seed: int, args_dict: dict, outputs: list[str],
              started: float) -> dict:
    canon = json.dumps(args_dict, sort_keys=True, default=str)
    return {
        "subcommand": subcommand,
        "seed": seed,
        "config": args_dict,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "versions": {
            "levylab": __version__,
            "numpy": np.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
        "wall_time_s": round(time.monotonic() - started, 6),
        "outputs": outputs,
    }


def _scheme_config(args, seed: int, horizon: float) -> SchemeConfig:
    grid = None
    if getattr(args, "grid_points", None):
        grid = np.linspace(0.0, horizon, int(args.grid_points))
    return SchemeConfig(
        paths=int(args.paths), seed=seed, grid=grid,
        escape_radius=float(getattr(args, "escape_radius", 1e6)),
        threads=int(args.threads),
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="levylab", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, with_paths=True):
        if with_paths:
            p.add_argument("--paths", type=int, default=1000)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--grid-points", type=int, default=101)
        p.add_argument("--out", required=True)

    p = sub.add_parser("simulate-stable", help="stable-type chain scheme")
    p.add_argument("--c-expr", default="1")
    p.add_argument("--alpha-expr", default="1")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--n", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--start", default="0")
    p.add_argument("--escape-radius", type=float, default=1e6)
    common(p)

    p = sub.add_parser("simulate-euler", help="frozen Levy-increment scheme")
    p.add_argument("--triplet-config", required=True)
    p.add_argument("--chi", choices=["chi1", "chi2"], default="chi2")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--tau", type=float, default=1e-3)
    p.add_argument("--small-jump-mode", choices=["drift-compensate", "gaussian-surrogate"],
                   default="drift-compensate")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--start", default="0")
    p.add_argument("--escape-radius", type=float, default=1e6)
    common(p)

    p = sub.add_parser("simulate-potential", help="two-point scheme in a potential")
    p.add_argument("--potential", required=True,
                   help="'zero', a CSV file, or an expression in x1")
    p.add_argument("--mesh", type=float, default=None,
                   help="with a CSV file: read (k, q_k) lattice increments at this mesh")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--start", type=float, default=0.0)
    p.add_argument("--escape-radius", type=float, default=1e6)
    common(p)

    p = sub.add_parser("simulate-rwre", help="random walks in random environments")
    p.add_argument("--env", required=True, help="iid:SIGMA or bernoulli:Q:LAMBDA")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--envs", type=int, default=1)
    p.add_argument("--start-site", type=int, default=0)
    common(p)

    p = sub.add_parser("diagnose-operator", help="operator convergence gaps")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose-clock", help="clock deviation bound check")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose-paths", help="explosion and marginal diagnostics")
    p.add_argument("files", nargs="+")
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    return parser


def _parse_start(text: str, dim: int) -> np.ndarray:
    parts = [float(v) for v in str(text).split(",")]
    if len(parts) == 1 and dim > 1:
        parts = parts * dim
    if len(parts) != dim:
        raise ValidationError(f"start point has {len(parts)} coordinates, expected {dim}")
    return np.asarray(parts)


def _load_potential(args):
    spec = args.potential
    eps = float(args.eps)
    n_steps = int(np.ceil(float(args.T) / (eps * eps)))
    if spec == "zero":
        start_site = int(round(float(args.start) / eps))
        pad = n_steps + 8
        return zero_potential(eps, start_site - pad, start_site + pad)
    if os.path.exists(spec):
        data = np.loadtxt(spec, delimiter=",", ndmin=2)
        if data.shape[1] != 2:
            raise ValidationError("potential CSV needs two columns")
        if args.mesh is not None:
            ks = data[:, 0].astype(int)
            if np.any(np.diff(ks) != 1):
                raise ValidationError("lattice potential file must list consecutive k")
            return PiecewiseConstantPotential(float(args.mesh), data[:, 1], int(ks[0]))
        return GridPotential(data[:, 0], data[:, 1])
    fn = compile_expression(spec, 1)
    return CallablePotential(lambda x: fn(x[:, None]) if x.ndim == 1 else fn(x))


def _parse_env(text: str):
    parts = text.split(":")
    if parts[0] == "iid" and len(parts) == 2:
        return IIDScaled.normal(float(parts[1]))
    if parts[0] == "bernoulli" and len(parts) == 3:
        return BernoulliPoisson(q=float(parts[1]), lam=float(parts[2]))
    raise ValidationError(f"unknown environment spec {text!r}")


def _cmd_simulate_stable(args, seed: int) -> list[str]:
    dim = int(args.dim)
    c_fn = compile_expression(args.c_expr, dim)
    a_fn = compile_expression(args.alpha_expr, dim)
    field = StableField(c=c_fn, alpha=a_fn, dim=dim)
    cfg = _scheme_config(args, seed, float(args.T))
    batch = stable_chain_simulate(field, _parse_start(args.start, dim),
                                  float(args.n), float(args.T), cfg)
    atomic_write_text(args.out, paths_to_csv(batch))
    return [args.out]


def _cmd_simulate_euler(args, seed: int) -> list[str]:
    with open(args.triplet_config) as handle:
        cfg_json = json.load(handle)
    if cfg_json.get("kind") == "stable-field":
        dim = int(cfg_json.get("dim", 1))
        field = stable_euler_field(
            StableField(
                c=compile_expression(cfg_json["c_expr"], dim),
                alpha=compile_expression(cfg_json["alpha_expr"], dim),
                dim=dim,
            ))
    else:
        triplet = triplet_from_config(cfg_json)
        field = CovariantField(triplet)
    chi = compensation_by_name(args.chi)
    plan = IncrementPlan(tau=float(args.tau), small_jump_mode=args.small_jump_mode)
    cfg = _scheme_config(args, seed, float(args.T))
    batch = euler_chain_simulate(field, chi, _parse_start(args.start, field.dim),
                                 float(args.eps), float(args.T), plan, cfg)
    atomic_write_text(args.out, paths_to_csv(batch))
    return [args.out]


def _cmd_simulate_potential(args, seed: int) -> list[str]:
    if float(args.eps) <= 0:
        raise ValidationError("--eps must be positive")
    potential = _load_potential(args)
    cfg = _scheme_config(args, seed, float(args.T))
    batch = potential_chain_simulate(potential, float(args.start), float(args.eps),
                                     float(args.T), cfg)
    atomic_write_text(args.out, paths_to_csv(batch))
    return [args.out]


def _cmd_simulate_rwre(args, seed: int) -> list[str]:
    env = _parse_env(args.env)
    cfg = _scheme_config(args, seed, float(args.T))
    runs = rwre_simulate(env, float(args.eps), int(args.start_site), float(args.T),
                         int(args.envs), cfg)
    stem, ext = os.path.splitext(args.out)
    ext = ext or ".csv"
    outputs = []
    summary = {"eps": float(args.eps), "environments": len(runs), "files": []}
    horizon = float(args.T)
    pooled = []
    for i, run in enumerate(runs):
        name = f"{stem}_env{i:03d}{ext}"
        atomic_write_text(name, paths_to_csv(run.walks))
        outputs.append(name)
        stats = explosion_stats(run.walks)
        marg = run.walks.marginal(horizon)[0][:, 0]
        pooled.append(marg)
        summary["files"].append({
            "file": name,
            "window": list(run.window),
            "exploded_fraction": stats.fraction,
            "environment_seed": run.environment_seed,
            "marginal_mean": float(np.mean(marg)) if marg.size else None,
            "marginal_var": float(np.var(marg, ddof=1)) if marg.size > 1 else None,
        })
    # Quenched statistics (per environment, averaged) against the pooled
    # (annealed) batch; reported side by side, never asserted equal.
    means = [f["marginal_mean"] for f in summary["files"] if f["marginal_mean"] is not None]
    variances = [f["marginal_var"] for f in summary["files"] if f["marginal_var"] is not None]
    all_m = np.concatenate(pooled) if pooled else np.empty(0)
    summary["quenched_mean_of_means"] = float(np.mean(means)) if means else None
    summary["quenched_mean_of_vars"] = float(np.mean(variances)) if variances else None
    summary["annealed_mean"] = float(np.mean(all_m)) if all_m.size else None
    summary["annealed_var"] = float(np.var(all_m, ddof=1)) if all_m.size > 1 else None
    summary_path = f"{stem}_summary.json"
    atomic_write_text(summary_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    outputs.append(summary_path)
    return outputs


def _field_from_json(cfg: dict):
    kind = cfg.get("kind", "constant")
    if kind == "constant":
        return CovariantField(triplet_from_config(cfg["triplet"]))
    if kind == "stable":
        dim = int(cfg.get("dim", 1))
        return stable_triplet_field(StableField(
            c=compile_expression(cfg["c_expr"], dim),
            alpha=compile_expression(cfg["alpha_expr"], dim),
            dim=dim,
        ))
    raise ValidationError(f"unknown field kind {kind!r}")


def _cmd_diagnose_operator(args, seed: int) -> list[str]:
    with open(args.config) as handle:
        cfg = json.load(handle)
    limit = _field_from_json(cfg["limit"])
    fields = [_field_from_json(f) for f in cfg["fields"]]
    chi = compensation_by_name(cfg.get("chi", "chi2"))
    low = np.asarray(cfg["box"]["low"], dtype=float)
    high = np.asarray(cfg["box"]["high"], dtype=float)
    testfns = vanishing_test_functions(low, high, limit.dim,
                                       margin=float(cfg.get("margin", 0.5)))
    reports = convergence_gaps(
        fields, limit, chi, low, high, testfns=testfns,
        grid_points=int(cfg.get("grid_points", 16)),
        jump_margin=float(cfg.get("jump_margin", 0.25)),
        labels=cfg.get("labels"),
    )
    payload = {"chi": chi.name, "reports": [r.to_dict() for r in reports]}
    atomic_write_text(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return [args.out]


def _cmd_diagnose_clock(args, seed: int) -> list[str]:
    report = doob_bound_check(float(args.eps), float(args.t), float(args.threshold),
                              int(args.trials), seed=seed)
    atomic_write_text(args.out, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return [args.out]


def _cmd_diagnose_paths(args, seed: int) -> list[str]:
    batches = [read_paths_csv(f) for f in args.files]
    payload = {"files": list(args.files), "explosion": []}
    for f, b in zip(args.files, batches):
        payload["explosion"].append({"file": f, **explosion_stats(b).to_dict()})
    if args.t is not None:
        t = float(args.t)
        marginals = [b.marginal(t)[0][:, 0] for b in batches]
        payload["marginal_time"] = t
        payload["marginal_summary"] = [
            {"file": f, "count": int(m.size), "mean": float(np.mean(m)),
             "std": float(np.std(m, ddof=1)) if m.size > 1 else None}
            for f, m in zip(args.files, marginals)
        ]
        if len(batches) == 2:
            stat, p = ks_distance(marginals[0], marginals[1])
            payload["compare"] = {
                "ks_stat": stat, "ks_p_value": p,
                "wasserstein1": wasserstein1(marginals[0], marginals[1]),
            }
    atomic_write_text(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return [args.out]


_COMMANDS = {
    "simulate-stable": _cmd_simulate_stable,
    "simulate-euler": _cmd_simulate_euler,
    "simulate-potential": _cmd_simulate_potential,
    "simulate-rwre": _cmd_simulate_rwre,
    "diagnose-operator": _cmd_diagnose_operator,
    "diagnose-clock": _cmd_diagnose_clock,
    "diagnose-paths": _cmd_diagnose_paths,
}


def run(argv: Sequence[str]) -> int:
    started = time.monotonic()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    seed = _seed_from(args)
    try:
        outputs = _COMMANDS[args.subcommand](args, seed)
    except _VALIDATION_ERRORS as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return VALIDATION_EXIT
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT
    except LevylabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_EXIT
    manifest = _manifest(args.subcommand, seed, {
        k: v for k, v in vars(args).items() if k not in ("subcommand",)
    }, outputs, started)
    print(json.dumps(manifest, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
