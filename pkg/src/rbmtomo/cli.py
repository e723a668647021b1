"""Experiment runner: dataset generation, training runs, sweeps, sampler
diagnostics, and checkpoint evaluation, driven by JSON configs.

Every command is a deterministic function of (config file, flag overrides,
seed): all randomness descends from the single top-level seed through named
sub-streams, so rerunning a command reproduces its outputs byte for byte.
The summary timestamp is the one exempted field.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields as dataclass_fields

import numpy as np

from .analysis import (export_state_graph, fidelity, kl_divergence, nll,
                       transition_experiment)
from .bits import string_to_bits
from .errors import (CapacityError, ConfigError, NumericalError,
                     RbmTomoError)
from .rbm import Rbm, exact_table, load_checkpoint
from .samplers import rng_for_stream
from .states import (MeasurementDataset, OutcomeDistribution, TargetState,
                     depolarized_w_distribution, ghz, load_dataset,
                     sample_depolarized_w, sample_ghz, sample_measurements,
                     sample_w, save_dataset, tffim_ground_state,
                     toric_code_ground_state, w_state)
from .trainer import ModeSchedule, TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_NUMERICAL = 4

# named sub-streams under the top-level seed
_S_DATASET = 900
_S_CHILD = 910
_S_DIAGNOSE = 950

_STATES = ("ghz", "w", "depolarized_w", "tffim", "toric")

_KEYS_COMMON = {"seed", "out", "workers"}
_KEYS_STATE = {"state", "n", "p", "rows", "cols", "J", "h", "L"}
_KEYS_BY_COMMAND = {
    "generate": _KEYS_STATE | {"count", "filename"},
    "train": _KEYS_STATE | {"count", "dataset", "train"},
    "sweep": _KEYS_STATE | {"count", "train", "n_grid", "count_grid",
                            "arm_grid", "p_grid", "reps", "targets"},
    "diagnose": {"checkpoint", "k_list", "repetitions", "states",
                 "probability_floor", "edge_threshold"},
    "eval": _KEYS_STATE | {"checkpoint", "dataset"},
}

_TRAIN_FIELD_NAMES = {f.name for f in dataclass_fields(TrainConfig)}
_SCHEDULE_FIELD_NAMES = {f.name for f in dataclass_fields(ModeSchedule)}


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def _parse_set(item: str):
    if "=" not in item:
        raise ConfigError(f"--set needs key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _assign_dotted(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override non-object key {part!r}")
    node[parts[-1]] = value


def _check_keys(cfg: dict, command: str) -> None:
    allowed = _KEYS_BY_COMMAND[command] | _KEYS_COMMON
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown config key(s) for {command}: {', '.join(unknown)}")
    sub = cfg.get("train")
    if sub is not None:
        if not isinstance(sub, dict):
            raise ConfigError("'train' must be an object of TrainConfig keys")
        bad = sorted(set(sub) - _TRAIN_FIELD_NAMES)
        if bad:
            raise ConfigError(f"unknown train key(s): {', '.join(bad)}")
        sched = sub.get("mode_schedule")
        if isinstance(sched, dict):
            bad = sorted(set(sched) - _SCHEDULE_FIELD_NAMES)
            if bad:
                raise ConfigError(
                    f"unknown mode_schedule key(s): {', '.join(bad)}")


def _merged_config(args) -> dict:
    cfg = _load_json(args.config) if args.config else {}
    for item in args.set or []:
        key, value = _parse_set(item)
        _assign_dotted(cfg, key, value)
    for key in ("seed", "out", "workers", "state", "n", "p", "rows", "cols",
                "L", "count", "filename", "dataset", "checkpoint"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    _check_keys(cfg, args.command)
    if "seed" not in cfg:
        raise ConfigError("a seed is required (no wall-clock seeding)")
    cfg["seed"] = int(cfg["seed"])
    cfg.setdefault("out", ".")
    cfg.setdefault("workers", 1)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory not writable: {out}")
    return cfg


def _state_params(cfg: dict) -> dict:
    name = cfg.get("state")
    if name is None:
        raise ConfigError("a state name is required "
                          f"(one of {', '.join(_STATES)})")
    if name not in _STATES:
        raise ConfigError(f"unknown state {name!r}; "
                          f"choose from {', '.join(_STATES)}")
    params = {"state": name}
    if name in ("ghz", "w", "depolarized_w"):
        if "n" not in cfg:
            raise ConfigError(f"state {name} needs a qubit count n")
        params["n"] = int(cfg["n"])
    if name == "depolarized_w":
        if "p" not in cfg:
            raise ConfigError("state depolarized_w needs a noise level p")
        params["p"] = float(cfg["p"])
    if name == "tffim":
        if "rows" not in cfg or "cols" not in cfg:
            raise ConfigError("state tffim needs rows and cols")
        params["rows"] = int(cfg["rows"])
        params["cols"] = int(cfg["cols"])
        params["J"] = float(cfg.get("J", 1.0))
        params["h"] = float(cfg.get("h", 1.0))
        params["n"] = params["rows"] * params["cols"]
    if name == "toric":
        if "L" not in cfg:
            raise ConfigError("state toric needs a lattice size L")
        params["L"] = int(cfg["L"])
        params["n"] = 2 * params["L"] ** 2
    return params


def _build_state(params: dict):
    name = params["state"]
    if name == "ghz":
        return ghz(params["n"])
    if name == "w":
        return w_state(params["n"])
    if name == "depolarized_w":
        return depolarized_w_distribution(params["n"], params["p"])
    if name == "tffim":
        return tffim_ground_state(params["rows"], params["cols"],
                                  J=params["J"], h=params["h"])
    return toric_code_ground_state(params["L"])


def _target_for_metrics(state_obj) -> TargetState:
    """Fidelity target: sqrt-probability amplitudes for mixed-state data."""
    if isinstance(state_obj, TargetState):
        return state_obj
    return TargetState(n_qubits=state_obj.n_qubits,
                       amplitudes=np.sqrt(state_obj.probs))


def _sample(params: dict, state_obj, count: int,
            rng: np.random.Generator) -> MeasurementDataset:
    name = params["state"]
    if name == "ghz":
        data = sample_ghz(params["n"], count, rng)
    elif name == "w":
        data = sample_w(params["n"], count, rng)
    elif name == "depolarized_w":
        data = sample_depolarized_w(params["n"], params["p"], count, rng)
    else:
        data = sample_measurements(state_obj, count, rng)
    data.meta["state"] = name
    return data


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    sub = dict(cfg.get("train") or {})
    sched = sub.get("mode_schedule")
    if isinstance(sched, dict):
        sub["mode_schedule"] = ModeSchedule(**sched)
    sub.setdefault("seed", seed)
    return TrainConfig(**sub)


def _finite_or_raise(value: float, label: str) -> float:
    if value is not None and not np.isfinite(value):
        raise NumericalError(f"{label} is not finite: {value}")
    return value


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _summary(out: str, doc: dict) -> None:
    doc["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    _write(os.path.join(out, "summary.json"), json.dumps(doc, indent=1) + "\n")


def cmd_generate(cfg: dict) -> int:
    params = _state_params(cfg)
    if "count" not in cfg:
        raise ConfigError("generate needs a measurement count")
    count = int(cfg["count"])
    state_obj = _build_state(params)
    data = _sample(params, state_obj, count,
                   rng_for_stream(cfg["seed"], _S_DATASET))
    data.meta["seed"] = cfg["seed"]
    filename = cfg.get("filename",
                       f"{params['state']}_n{params['n']}_{count}.txt")
    path = os.path.join(cfg["out"], filename)
    save_dataset(data, path)
    print(path)
    return EXIT_OK


def _load_train_inputs(cfg: dict):
    """Dataset plus (possibly None) metric target from the config."""
    if "dataset" in cfg and "state" in cfg:
        raise ConfigError("give either a dataset path or a state, not both")
    if "dataset" in cfg:
        try:
            data = load_dataset(cfg["dataset"])
        except FileNotFoundError:
            raise ConfigError(f"dataset file not found: {cfg['dataset']}")
        return data, None
    params = _state_params(cfg)
    if "count" not in cfg:
        raise ConfigError("training from a state spec needs a count")
    state_obj = _build_state(params)
    data = _sample(params, state_obj, int(cfg["count"]),
                   rng_for_stream(cfg["seed"], _S_DATASET))
    return data, _target_for_metrics(state_obj)


def cmd_train(cfg: dict) -> int:
    data, target = _load_train_inputs(cfg)
    tc = _train_config(cfg, cfg["seed"])
    out = cfg["out"]
    t0 = time.time()
    trace = train(data, target, tc, checkpoint_dir=out)
    wall = time.time() - t0
    _write(os.path.join(out, "trace.csv"), trace.to_csv())
    last = trace.records[-1] if trace.records else None
    final = {
        "nll": _finite_or_raise(last.nll if last else None, "final NLL"),
        "fidelity": last.fidelity if last else None,
        "kl": last.kl if last else None,
        "lr": last.lr if last else tc.eta0,
        "mode_updates": trace.mode_update_count,
        "iterations": tc.n_max,
    }
    _summary(out, {"command": "train", "config": _echo(cfg),
                   "final": final, "warnings": trace.warnings,
                   "wall_time_s": round(wall, 3)})
    if last is not None and last.fidelity is not None:
        print(f"final fidelity {last.fidelity:.6f}  nll {last.nll:.6f}")
    elif last is not None:
        print(f"final nll {last.nll:.6f}")
    return EXIT_OK


def _echo(cfg: dict) -> dict:
    return {k: cfg[k] for k in sorted(cfg)}


def _arm_train_dict(base: dict | None, arm: str) -> dict:
    sub = dict(base or {})
    if arm == "mode":
        sub.setdefault("mode_schedule", {})
        sub.setdefault("mode_h_star", "analytic")
        sub["sampler"] = "cd"
    else:
        sub["sampler"] = arm
        sub["mode_schedule"] = None
    sched = sub.get("mode_schedule")
    if isinstance(sched, dict):
        sub["mode_schedule"] = ModeSchedule(**sched)
    return sub


def _run_sweep_cell(task) -> dict:
    """One (grid point, repetition) training; top level so pools can pick it.

    A single-cell single-rep sweep uses the same streams as cmd_train, so
    it reduces to cmd_train exactly, not just in distribution.
    """
    (seed, idx, rep, params, count, arm, train_dict, solo) = task
    if solo:
        rng_data = rng_for_stream(seed, _S_DATASET)
        child_seed = seed
    else:
        rng_data = rng_for_stream(seed, _S_DATASET, *idx, rep)
        child_seed = int(rng_for_stream(seed, _S_CHILD, *idx, rep)
                         .integers(2**31 - 1))
    state_obj = _build_state(params)
    data = _sample(params, state_obj, count, rng_data)
    target = _target_for_metrics(state_obj)
    sub = dict(train_dict)
    sub["seed"] = child_seed
    tc = TrainConfig(**sub)
    trace = train(data, target, tc)
    last = trace.records[-1]
    return {"idx": idx, "rep": rep, "state": params["state"],
            "n": params["n"], "count": count, "arm": arm,
            "p": params.get("p"), "fidelity": last.fidelity,
            "nll": last.nll}


def _required_measurements(counts, best_fid, target: float):
    """Smallest measurement count whose best-of-runs fidelity envelope
    reaches the target, interpolated linearly in log(count); None when the
    envelope never gets there (no extrapolation past the sampled range)."""
    env = np.maximum.accumulate(best_fid)
    if env[0] >= target:
        return float(counts[0])
    above = np.flatnonzero(env >= target)
    if above.size == 0:
        return None
    j = int(above[0])
    x0, x1 = np.log(counts[j - 1]), np.log(counts[j])
    y0, y1 = env[j - 1], env[j]
    frac = (target - y0) / (y1 - y0)
    return float(np.exp(x0 + frac * (x1 - x0)))


def cmd_sweep(cfg: dict) -> int:
    base = dict(cfg)
    n_grid = cfg.get("n_grid")
    if n_grid is None:
        n_grid = [None]
    count_grid = cfg.get("count_grid") or [cfg.get("count")]
    if count_grid == [None]:
        raise ConfigError("sweep needs count or count_grid")
    arm_grid = cfg.get("arm_grid") or ["cd"]
    for arm in arm_grid:
        if arm not in ("cd", "pcd", "pt", "mode"):
            raise ConfigError(f"unknown arm {arm!r}; "
                              "choose from cd, pcd, pt, mode")
    p_grid = cfg.get("p_grid")
    if p_grid is None:
        p_grid = [None]
    reps = int(cfg.get("reps", 1))
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    if not n_grid or not count_grid or not p_grid:
        raise ConfigError("sweep grids must be nonempty")

    tasks = []
    for i_n, n in enumerate(n_grid):
        for i_c, count in enumerate(count_grid):
            for i_a, arm in enumerate(arm_grid):
                for i_p, p in enumerate(p_grid):
                    cell_cfg = dict(base)
                    if n is not None:
                        cell_cfg["n"] = n
                    if p is not None:
                        cell_cfg["p"] = p
                    params = _state_params(cell_cfg)
                    train_dict = _arm_train_dict(cfg.get("train"), arm)
                    idx = (i_n, i_c, i_a, i_p)
                    for rep in range(reps):
                        tasks.append([cfg["seed"], idx, rep, params,
                                      int(count), arm, train_dict])
    solo = len(tasks) == 1
    tasks = [tuple(t) + (solo,) for t in tasks]

    workers = int(cfg["workers"])
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_sweep_cell, tasks))
    else:
        results = [_run_sweep_cell(t) for t in tasks]

    cell_dir = os.path.join(cfg["out"], "cells")
    os.makedirs(cell_dir, exist_ok=True)
    for r in results:
        name = "cell_" + "_".join(map(str, r["idx"])) + f"_{r['rep']}.json"
        _write(os.path.join(cell_dir, name), json.dumps(r) + "\n")

    by_cell = {}
    for r in results:
        by_cell.setdefault(r["idx"], []).append(r)
    lines = ["state,n,count,arm,p,reps,fidelity_median,fidelity_min,"
             "fidelity_max,fidelity_best,nll_median"]
    rows = []
    for idx in sorted(by_cell):
        group = by_cell[idx]
        fids = np.array([g["fidelity"] for g in group], dtype=np.float64)
        nlls = np.array([g["nll"] for g in group], dtype=np.float64)
        g0 = group[0]
        rows.append((g0, fids, nlls))
        p_txt = "" if g0["p"] is None else f"{g0['p']:g}"
        lines.append(f"{g0['state']},{g0['n']},{g0['count']},{g0['arm']},"
                     f"{p_txt},{len(group)},{np.median(fids):.10g},"
                     f"{fids.min():.10g},{fids.max():.10g},"
                     f"{fids.max():.10g},{np.median(nlls):.10g}")
    _write(os.path.join(cfg["out"], "sweep.csv"), "\n".join(lines) + "\n")

    targets = cfg.get("targets")
    if targets:
        tlines = ["state,n,arm,target,required_measurements"]
        for i_n, n in enumerate(n_grid):
            for i_a, arm in enumerate(arm_grid):
                for i_p in range(len(p_grid)):
                    counts, best = [], []
                    for i_c, count in enumerate(count_grid):
                        group = by_cell.get((i_n, i_c, i_a, i_p))
                        if group:
                            counts.append(count)
                            best.append(max(g["fidelity"] for g in group))
                    order = np.argsort(counts)
                    counts = np.array(counts, dtype=np.float64)[order]
                    best = np.array(best, dtype=np.float64)[order]
                    g0 = by_cell[(i_n, 0, i_a, i_p)][0]
                    for tgt in targets:
                        need = _required_measurements(counts, best,
                                                      float(tgt))
                        need_txt = "" if need is None else f"{need:.10g}"
                        tlines.append(f"{g0['state']},{g0['n']},{arm},"
                                      f"{tgt:g},{need_txt}")
        _write(os.path.join(cfg["out"], "required_measurements.csv"),
               "\n".join(tlines) + "\n")

    _summary(cfg["out"], {"command": "sweep", "config": _echo(cfg),
                          "cells": len(by_cell), "runs": len(results)})
    print(os.path.join(cfg["out"], "sweep.csv"))
    return EXIT_OK


def _diagnose_states(cfg: dict, rbm: Rbm):
    spec = cfg.get("states", "onehot")
    if spec == "onehot":
        return [row for row in np.eye(rbm.n_visible, dtype=np.float64)]
    if not isinstance(spec, list) or not spec:
        raise ConfigError("states must be 'onehot' or a list of bitstrings")
    return [string_to_bits(s).astype(np.float64) for s in spec]


def cmd_diagnose(cfg: dict) -> int:
    if "checkpoint" not in cfg:
        raise ConfigError("diagnose needs a checkpoint path")
    try:
        rbm = load_checkpoint(cfg["checkpoint"])
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {cfg['checkpoint']}")
    k_list = cfg.get("k_list", [1, 32, 1024])
    repetitions = int(cfg.get("repetitions", 10_000))
    states = _diagnose_states(cfg, rbm)
    out = cfg["out"]
    for i, k in enumerate(k_list):
        stats = transition_experiment(
            rbm, states, int(k), repetitions,
            rng_for_stream(cfg["seed"], _S_DIAGNOSE, i))
        _write(os.path.join(out, f"transition_k{int(k)}.csv"),
               stats.to_csv())
    graph = export_state_graph(
        rbm, probability_floor=float(cfg.get("probability_floor", 1e-4)),
        edge_threshold=float(cfg.get("edge_threshold", 0.01)))
    _write(os.path.join(out, "state_graph.json"), graph.to_json())
    _write(os.path.join(out, "state_graph.dot"), graph.to_dot())
    _summary(out, {"command": "diagnose", "config": _echo(cfg),
                   "k_list": [int(k) for k in k_list],
                   "repetitions": repetitions, "states": len(states)})
    print(os.path.join(out, "state_graph.json"))
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    if "checkpoint" not in cfg:
        raise ConfigError("eval needs a checkpoint path")
    try:
        rbm = load_checkpoint(cfg["checkpoint"])
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {cfg['checkpoint']}")
    doc = {"command": "eval", "checkpoint": cfg["checkpoint"]}
    if "state" in cfg:
        params = _state_params(cfg)
        state_obj = _build_state(params)
        target = _target_for_metrics(state_obj)
        table = exact_table(rbm)
        doc["fidelity"] = _finite_or_raise(
            fidelity(target, rbm, table=table), "fidelity")
        if isinstance(state_obj, OutcomeDistribution):
            dist = state_obj
        else:
            dist = OutcomeDistribution(n_qubits=state_obj.n_qubits,
                                       probs=state_obj.amplitudes**2)
        doc["kl"] = _finite_or_raise(kl_divergence(dist, rbm, table=table),
                                     "KL")
    if "dataset" in cfg:
        try:
            data = load_dataset(cfg["dataset"])
        except FileNotFoundError:
            raise ConfigError(f"dataset file not found: {cfg['dataset']}")
        doc["nll"] = _finite_or_raise(nll(data, rbm), "NLL")
    if "fidelity" not in doc and "nll" not in doc:
        raise ConfigError("eval needs a state spec or a dataset path")
    _write(os.path.join(cfg["out"], "eval.json"),
           json.dumps(doc, indent=1) + "\n")
    print(json.dumps(doc))
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "diagnose": cmd_diagnose,
    "eval": cmd_eval,
}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int)
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (JSON-parsed value; "
                             "dotted keys reach into sub-objects)")
    parser = argparse.ArgumentParser(
        prog="rbmtomo",
        description="RBM quantum-state-tomography experiment runner")
    subs = parser.add_subparsers(dest="command", required=True)
    gen = subs.add_parser("generate", parents=[common],
                          help="sample a measurement dataset")
    train_p = subs.add_parser("train", parents=[common],
                              help="train one model")
    sweep_p = subs.add_parser("sweep", parents=[common],
                              help="grid of training runs with aggregation")
    diag = subs.add_parser("diagnose", parents=[common],
                           help="transition experiment + state graph")
    ev = subs.add_parser("eval", parents=[common],
                         help="metrics for a saved checkpoint")
    for p in (gen, train_p, sweep_p, ev):
        p.add_argument("--state", choices=_STATES)
        p.add_argument("--n", type=int)
        p.add_argument("--p", type=float)
        p.add_argument("--rows", type=int)
        p.add_argument("--cols", type=int)
        p.add_argument("--L", type=int)
        p.add_argument("--count", type=int)
    gen.add_argument("--filename")
    train_p.add_argument("--dataset")
    ev.add_argument("--dataset")
    ev.add_argument("--checkpoint")
    diag.add_argument("--checkpoint")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merged_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RbmTomoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
