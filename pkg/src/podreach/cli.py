"""Command-line entry point: ``solve``, ``sweep`` and ``inspect`` driven by a JSON config.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 policy/config
mismatch, 5 corrupt artifact.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pbvi, simkit
from .belief import init
from .gmix import DimensionError, HybridMixture, NotPositiveDefiniteError
from .hsmodel import FitError, HybridModel, ModelError, build_thermostat, load_model, model_to_dict

__all__ = ["RunConfig", "ConfigError", "load_config", "main",
           "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERIC", "EXIT_MISMATCH", "EXIT_CORRUPT"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISMATCH, EXIT_CORRUPT = 0, 2, 3, 4, 5
CONFIG_SCHEMA_VERSION = 1

_THERMOSTAT_PARAMS = {"v_std", "w_std", "delta", "sub_delta", "actuation_prob", "tail"}
_SOLVER_DEFAULTS = {"horizon": 5, "belief_count": 40, "reduce_to": 20, "indicator_components": 20,
                    "seed": 0, "probe_count": 10}
_SWEEP_DEFAULTS = {"mu0_grid": [round(17.6 + 0.2 * k, 1) for k in range(22)], "n_runs": 200,
                   "stationary": False, "s2": 0.1, "q0": 0}
_INSPECT_DEFAULTS = {"mu0": 18.0, "s2": 0.1, "q0": 0, "t": 0}
_TOP_KEYS = {"schema_version", "model", "model_params", "solver", "sweep", "inspect", "output_dir"}


class ConfigError(ValueError):
    pass


class MismatchError(ValueError):
    pass


@dataclass
class RunConfig:
    """Validated run configuration."""

    model: str = "thermostat"
    model_params: dict = field(default_factory=dict)
    solver: dict = field(default_factory=lambda: dict(_SOLVER_DEFAULTS))
    sweep: dict = field(default_factory=lambda: dict(_SWEEP_DEFAULTS))
    inspect: dict = field(default_factory=lambda: dict(_INSPECT_DEFAULTS))
    output_dir: str = "out"
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict = field(default_factory=dict)

    def digest(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def build_model(self) -> HybridModel:
        if self.model == "thermostat":
            return build_thermostat(n_indicator=self.solver["indicator_components"], **self.model_params)
        path = Path(self.model)
        if not path.is_absolute():
            path = self.base_dir / path
        if not path.is_file():
            raise ConfigError(f"model file not found: {path}")
        return load_model(path)


def _section(raw: dict, name: str, defaults: dict) -> dict:
    given = raw.get(name, {})
    if not isinstance(given, dict):
        raise ConfigError(f"{name}: expected an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}: unknown key")
    out = dict(defaults)
    out.update(given)
    return out


def _positive_int(d: dict, key: str, where: str, allow_none: bool = False):
    v = d[key]
    if v is None and allow_none:
        return
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"{where}.{key}: must be a positive integer")


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
    if raw.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {CONFIG_SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    model = raw.get("model", "thermostat")
    if not isinstance(model, str) or not model:
        raise ConfigError("model: expected 'thermostat' or a model file path")
    params = raw.get("model_params", {})
    if not isinstance(params, dict):
        raise ConfigError("model_params: expected an object")
    if params and model != "thermostat":
        raise ConfigError("model_params: only valid for the builtin thermostat")
    bad = set(params) - _THERMOSTAT_PARAMS
    if bad:
        raise ConfigError(f"model_params.{sorted(bad)[0]}: unknown key")
    solver = _section(raw, "solver", _SOLVER_DEFAULTS)
    for k in ("horizon", "belief_count", "indicator_components", "probe_count"):
        _positive_int(solver, k, "solver")
    _positive_int(solver, "reduce_to", "solver", allow_none=True)
    if isinstance(solver["seed"], bool) or not isinstance(solver["seed"], int) or solver["seed"] < 0:
        raise ConfigError("solver.seed: must be a nonnegative integer")
    sweep = _section(raw, "sweep", _SWEEP_DEFAULTS)
    _positive_int(sweep, "n_runs", "sweep")
    grid = sweep["mu0_grid"]
    if (not isinstance(grid, list) or not grid
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in grid)):
        raise ConfigError("sweep.mu0_grid: expected a nonempty list of numbers")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("sweep.mu0_grid: must be strictly increasing")
    if not isinstance(sweep["stationary"], bool):
        raise ConfigError("sweep.stationary: expected true or false")
    if not sweep["s2"] > 0:
        raise ConfigError("sweep.s2: must be positive")
    inspect = _section(raw, "inspect", _INSPECT_DEFAULTS)
    if not inspect["s2"] > 0:
        raise ConfigError("inspect.s2: must be positive")
    out = raw.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError("output_dir: expected a string")
    return RunConfig(model, params, solver, sweep, inspect, out, base_dir or Path.cwd(), raw)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_config(raw, path.parent)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _out_dir(cfg: RunConfig, override: str | None) -> Path:
    d = Path(override) if override else Path(cfg.output_dir)
    if not d.is_absolute() and not override:
        d = cfg.base_dir / d
    d.mkdir(parents=True, exist_ok=True)
    return d


def _model_spec(model: HybridModel) -> dict:
    return json.loads(json.dumps(model_to_dict(model)))


def cmd_solve(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    s = cfg.solver
    model = cfg.build_model()
    t0 = time.perf_counter()
    beliefs = pbvi.sample_belief_set(model, s["belief_count"], s["horizon"], seed=s["seed"],
                                     reduce_to=s["reduce_to"])
    stack = pbvi.solve(model, beliefs, s["horizon"], reduce_to=s["reduce_to"], threads=threads,
                       model_spec=_model_spec(model))
    wall = time.perf_counter() - t0
    probes = pbvi.sample_belief_set(model, s["probe_count"], s["horizon"], seed=[s["seed"], 1],
                                    reduce_to=s["reduce_to"])
    delta = pbvi.delta_diagnostic(beliefs, probes, seed=s["seed"])
    policy_path = out / "policy.json"
    stack.save(policy_path)
    report = {
        "wall_time_s": wall,
        "gamma_sizes": stack.sizes(),
        "delta_diagnostic": delta,
        "delta_diagnostic_note": "importance-sampled estimate, not a bound",
        "horizon": s["horizon"],
        "belief_count": s["belief_count"],
        "reduce_to": s["reduce_to"],
        "seed": s["seed"],
        "config_digest": cfg.digest(),
        "policy_file": policy_path.name,
    }
    (out / "solve_report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(f"policy written to {policy_path} ({wall:.1f}s, |Gamma_0| = {stack.sizes()[0]})")
    return EXIT_OK


def _load_policy(path) -> pbvi.PolicyStack:
    if path is None:
        raise ConfigError("--policy is required for this command")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"policy file not found: {p}")
    return pbvi.PolicyStack.load(p)


def cmd_sweep(cfg: RunConfig, policy_path, out: Path, seed: int, threads: int = 1) -> int:
    stack = _load_policy(policy_path)
    model = cfg.build_model()
    T = cfg.solver["horizon"]
    sw = cfg.sweep
    if not sw["stationary"] and T != stack.horizon:
        raise MismatchError(f"config horizon {T} differs from policy horizon {stack.horizon}")
    if stack.model_spec and stack.model_spec != _model_spec(model):
        raise MismatchError("policy was solved for a different model")
    rows = simkit.sweep_mu0(model, stack, sw["mu0_grid"], T, sw["n_runs"], seed=seed, s2=sw["s2"],
                            q0=sw["q0"], stationary=sw["stationary"], threads=threads)
    path = out / f"sweep_T{T}_{cfg.digest()}.csv"
    simkit.write_sweep_csv(rows, path)
    print(f"{len(rows)} rows written to {path}")
    return EXIT_OK


def cmd_inspect(cfg: RunConfig, policy_path) -> int:
    stack = _load_policy(policy_path)
    ins = cfg.inspect
    if not 0 <= ins["t"] <= stack.horizon:
        raise MismatchError(f"inspect.t = {ins['t']} outside 0..{stack.horizon}")
    n_modes = stack.gammas[0][0].mixture.n_modes
    dim = stack.gammas[0][0].mixture.dim
    mu = np.atleast_1d(np.asarray(ins["mu0"], dtype=float))
    if mu.size != dim:
        raise ConfigError(f"inspect.mu0 must have {dim} entries")
    rho = HybridMixture.single_mode([1.0], mu[None, :], (ins["s2"] * np.eye(dim))[None])
    sigma = init(rho, q0=ins["q0"], n_modes=n_modes)
    v, u = pbvi.value(stack, sigma, ins["t"])
    print(f"mu0={ins['mu0']} t={ins['t']} value={v:.6f} action={u}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="podreach", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["solve", "sweep", "inspect"])
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--policy", help="policy file (sweep, inspect)")
    p.add_argument("--seed", type=int, help="override solver.seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg.solver["seed"] = args.seed
            # the digest names output files, so it covers the effective seed
            cfg.raw = dict(cfg.raw, solver=dict(cfg.raw.get("solver", {}), seed=args.seed))
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.command == "solve":
            return cmd_solve(cfg, _out_dir(cfg, args.out), args.threads)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.policy, _out_dir(cfg, args.out), cfg.solver["seed"], args.threads)
        return cmd_inspect(cfg, args.policy)
    except (ConfigError, ModelError, FitError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except pbvi.PolicyFormatError as e:
        print(f"corrupt artifact: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except MismatchError as e:
        print(f"mismatch: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except (FloatingPointError, np.linalg.LinAlgError, NotPositiveDefiniteError, DimensionError,
            OverflowError, ZeroDivisionError) as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
