"""Command line experiment runner.

    genmatch verify-kfe [--config FILE] [--seed N] [--out DIR] [--threads K]
    genmatch simulate   ...
    genmatch train      ...
    genmatch bench-toy  ...

Configs are JSON. Missing keys take defaults, unknown keys are rejected with
the line they appear on, and every run writes ``resolved_config.json`` with all
defaults filled in. Outputs depend only on the resolved config and the seed.

Exit codes: 0 success, 1 configuration error, 2 verification failure,
3 runtime error.
"""
import argparse
import copy
import csv
import json
import math
import os
import re
import sys

import numpy as np

from .errors import ConfigError, GMError
from .generators import JumpAtoms, JumpBins, make_generator
from .loss import Bregman
from .marginal import MarginalModel
from .paths import Dataset, GeometricAverage, MixtureDiscrete, MixtureUniform, ProductPath
from .schedule import Schedule
from .sim import SimConfig, simulate
from .train import NetModel, TrainConfig, save_checkpoint, train_model
from .verify import DISCRETE_N, DISCRETE_ZS, TS, ZS, battery, energy_distance, kfe_pairs, kfe_suite, tv_hist

COMMANDS = ("verify-kfe", "simulate", "train", "bench-toy")
EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3

PATH_DEFAULTS = {
    "kind": "condot",
    "schedule": "linear",
    "a1": -2.0,
    "a2": 2.0,
    "vocab_size": 5,
    "dim": 1,
    "factors": None,
}
PC_DEFAULTS = {"a1": 1.0, "a2": 0.0, "beta": 1.0}
BINS_DEFAULTS = {"lo": -2.0, "hi": 2.0, "count": 128}

DEFAULTS = {
    "command": None,
    "seed": 0,
    "path": PATH_DEFAULTS,
    "dataset": {
        "name": "two-point",
        "resolution": 16,
        "squares": 4,
        "probs": None,
        "file": None,
        "weight_column": False,
    },
    "generator": {
        "name": "flow",
        "bins": BINS_DEFAULTS,
        "superposition": None,
        "langevin_beta": 0.0,
        "langevin_weighting": "path",
        "predictor_corrector": None,
    },
    "sim": {
        "n_steps": 500,
        "n_samples": 2000,
        "record_trajectories": False,
        "reflection": "auto",
        "jump_schedule": "auto",
        "t_end": None,
        "chunk_size": 4096,
    },
    "metrics": {"hist_bins": None, "range": None, "max_energy_points": 5000},
    "train": {
        "steps": 5000,
        "batch_size": 256,
        "width": 64,
        "depth": 2,
        "emb": 16,
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "t_eps": 1e-3,
        "head": "velocity",
        "log_every": 100,
    },
    "loss": "mse",
    "eval": {"t_min": 0.1, "t_max": 0.9, "n_t": 17, "x_min": -3.0, "x_max": 3.0, "n_x": 121, "threshold": 0.1},
    "kfe": {"ts": list(TS), "bins": 1024, "negative_control": True, "pairs": None},
    "bench": {"datasets": ["two-point", "checkerboard-2d"], "n_steps": 200, "n_samples": 4000},
}

# keys whose default is None but which take a dict with a fixed schema
OPTIONAL_DICTS = {
    ("generator", "predictor_corrector"): PC_DEFAULTS,
    ("generator", "superposition"): {"alpha1": 0.5},
}


# --------------------------------------------------------------------------
# config loading and validation


def _line_of(text, keys):
    """Line of the last key of ``keys`` in the raw JSON, searched in nesting
    order; 0 when it cannot be located."""
    pos = 0
    for k in keys:
        if isinstance(k, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(k)).search(text, pos)
        if m is None:
            return 0
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def _fail(text, keys, msg, source):
    line = _line_of(text, keys)
    where = f"{source}:{line}" if line else source
    raise ConfigError(f"{where}: {'.'.join(str(k) for k in keys)}: {msg}")


def _check_type(value, default, keys, text, source):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        _fail(text, keys, f"expected {type(default).__name__}, got {type(value).__name__}", source)
    return value


def _merge(defaults, given, keys, text, source):
    if not isinstance(given, dict):
        _fail(text, keys, "expected an object", source)
    for k in given:
        if k not in defaults:
            _fail(text, keys + (k,), "unknown key", source)
    out = {}
    for k, dv in defaults.items():
        here = keys + (k,)
        if k not in given:
            out[k] = copy.deepcopy(dv)
            continue
        v = given[k]
        if isinstance(dv, dict):
            out[k] = _merge(dv, v, here, text, source)
        elif here in OPTIONAL_DICTS and v is not None:
            out[k] = _merge(OPTIONAL_DICTS[here], v, here, text, source)
        elif here[-1] == "factors" and v is not None:
            if not isinstance(v, list) or not v:
                _fail(text, here, "expected a non-empty list of path objects", source)
            out[k] = [_merge(PATH_DEFAULTS, f, here, text, source) for f in v]
        else:
            out[k] = _check_type(v, dv, here, text, source)
    return out


def load_config(command, filename=None, seed=None):
    """Resolve a config file (or none) against the defaults for ``command``."""
    text, given, source = "", {}, filename or "<defaults>"
    if filename is not None:
        try:
            with open(filename) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{filename}: cannot read config ({exc.strerror})") from None
        try:
            given = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{filename}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    cfg = _merge(DEFAULTS, given, (), text, source)
    if cfg["command"] not in (None, command):
        _fail(text, ("command",), f"config is for {cfg['command']!r}, not {command!r}", source)
    cfg["command"] = command
    if seed is not None:
        cfg["seed"] = seed
    if cfg["seed"] < 0:
        raise ConfigError(f"{source}: seed must be nonnegative")
    return cfg


# --------------------------------------------------------------------------
# building objects from the config


def build_path(p):
    sched = Schedule.parse(p["schedule"])
    kind = p["kind"]
    if kind == "condot":
        return GeometricAverage(sched, p["dim"])
    if kind == "mixture":
        return MixtureUniform(p["a1"], p["a2"], sched, p["dim"])
    if kind == "discrete":
        return MixtureDiscrete(p["vocab_size"], sched, p["dim"])
    if kind == "product":
        if not p["factors"]:
            raise ConfigError("a product path needs factors")
        return ProductPath([build_path(f) for f in p["factors"]])
    raise ConfigError(f"unknown path kind {kind!r}")


def build_dataset(d, path):
    name = d["name"]
    if name == "two-point":
        data = Dataset.two_point()
    elif name == "checkerboard-2d":
        data = Dataset.checkerboard(d["resolution"], d["squares"])
    elif name == "tokens":
        probs = d["probs"] or [1.0] * path.vocab.max()
        data = Dataset.tokens(probs)
    elif name == "csv":
        if not d["file"]:
            raise ConfigError("dataset 'csv' needs a file")
        data = Dataset.from_csv(d["file"], d["weight_column"])
    else:
        raise ConfigError(f"unknown dataset {name!r}")
    if data.dim != path.dim:
        raise ConfigError(f"dataset has {data.dim} columns, path has {path.dim}")
    return data


def build_generator(g, path, data):
    name = g["name"]
    if g["superposition"] is not None and name.startswith("superposition:") and "@" not in name:
        name = f"{name}@{g['superposition']['alpha1']!r}"
    bins = JumpBins(g["bins"]["lo"], g["bins"]["hi"], g["bins"]["count"])
    support = JumpAtoms(data.points)
    return make_generator(name, path, bins=bins, support=support)


def build_model(cfg, path, data, gen):
    g = cfg["generator"]
    pc = g["predictor_corrector"]
    return MarginalModel(
        path,
        data,
        gen,
        langevin_beta=g["langevin_beta"],
        langevin_weighting=g["langevin_weighting"],
        pc=None if pc is None else (pc["a1"], pc["a2"]),
        pc_beta=1.0 if pc is None else pc["beta"],
    )


def sim_config(cfg, seed, threads=1):
    s = cfg["sim"]
    refl = s["reflection"]
    if isinstance(refl, list):
        refl = tuple(refl)
    elif refl not in (None, "auto"):
        raise ConfigError("sim.reflection is 'auto', null or [a1, a2]")
    return SimConfig(
        n_steps=s["n_steps"],
        n_samples=s["n_samples"],
        seed=seed,
        record_trajectories=s["record_trajectories"],
        reflection_bounds=refl,
        jump_schedule=s["jump_schedule"],
        t_end=s["t_end"],
        chunk_size=s["chunk_size"],
        threads=threads,
    )


# --------------------------------------------------------------------------
# metrics and output files


def hist_edges(path, data, metrics):
    """Histogram edges per column, or None when the dimension is too high."""
    vocab = path.vocab
    d = path.dim
    if d > 2:
        return None
    edges = []
    for j in range(d):
        if vocab[j] > 0:
            edges.append(np.arange(vocab[j] + 1) - 0.5)
            continue
        vals = np.unique(data.points[:, j])
        if metrics["range"] is not None:
            lo, hi = metrics["range"]
        elif d == 1:
            lo, hi = vals[0] - 2.0, vals[-1] + 2.0
        else:
            gap = np.diff(vals).min() if vals.size > 1 else 1.0
            lo, hi = vals[0] - gap / 2, vals[-1] + gap / 2
        count = metrics["hist_bins"] or (64 if d == 1 else 16)
        edges.append(np.linspace(lo, hi, count + 1))
    return edges


def sample_metrics(samples, path, data, metrics, seed):
    out = {"n_samples": int(len(samples))}
    edges = hist_edges(path, data, metrics)
    if edges is not None and len(samples) >= 1000:
        out["tv"] = tv_hist(samples, data, edges)
        out["hist_bins"] = [len(e) - 1 for e in edges]
    else:
        out["tv"] = None
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    m = min(len(samples), metrics["max_energy_points"])
    ref, _ = data.sample(m, rng)
    out["energy_distance"] = energy_distance(samples, ref, max_n=metrics["max_energy_points"], seed=seed)
    euc = path.vocab == 0
    if np.any(euc):
        d = np.min(np.abs(samples[:, None, euc] - data.points[None, :, euc]).max(axis=2), axis=1)
        out["mean_distance_to_atom"] = float(d.mean())
    return out


def _fmt_row(row, tok):
    return [str(int(round(v))) if k else repr(float(v)) for v, k in zip(row, tok)]


def write_samples(filename, samples, vocab):
    tok = vocab > 0
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(samples.shape[1])])
        for row in samples:
            w.writerow(_fmt_row(row, tok))


def write_trajectories(filename, traj, times, vocab):
    tok = vocab > 0
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "step", "t"] + [f"x{j}" for j in range(traj.shape[2])])
        for i in range(traj.shape[1]):
            for k in range(traj.shape[0]):
                w.writerow([i, k, repr(float(times[k]))] + _fmt_row(traj[k, i], tok))


def write_json(filename, obj):
    with open(filename, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


# --------------------------------------------------------------------------
# commands


def cmd_verify_kfe(cfg, out, threads=1):
    k = cfg["kfe"]
    pairs = kfe_pairs(k["bins"])
    if k["pairs"] is not None:
        known = {p[0] for p in pairs}
        unknown = sorted(set(k["pairs"]) - known)
        if unknown:
            raise ConfigError(f"kfe.pairs: unknown pair(s) {unknown}; known: {sorted(known)}")
        pairs = [p for p in pairs if p[0] in k["pairs"]]
    rows = kfe_suite(tuple(k["ts"]), k["bins"], k["negative_control"], pairs)
    ok = all(r["pass"] and r.get("negative_control_pass", True) for r in rows)
    report = {
        "pairs": rows,
        "pass": ok,
        "grid": {
            "ts": k["ts"],
            "zs": list(ZS),
            "discrete_zs": list(DISCRETE_ZS),
            "discrete_vocab_size": DISCRETE_N,
            "jump_bins": k["bins"],
            "test_functions": [f.name for f in battery()],
        },
    }
    write_json(os.path.join(out, "kfe_report.json"), report)
    return EXIT_OK if ok else EXIT_VERIFY


def _setup(cfg, threads=1):
    try:
        path = build_path(cfg["path"])
        data = build_dataset(cfg["dataset"], path)
        gen = build_generator(cfg["generator"], path, data)
        model = build_model(cfg, path, data, gen)
        scfg = sim_config(cfg, cfg["seed"], threads)
    except ConfigError:
        raise
    except GMError as exc:
        raise ConfigError(str(exc)) from None
    return path, data, gen, model, scfg


def cmd_simulate(cfg, out, threads=1):
    path, data, gen, model, scfg = _setup(cfg, threads)
    res = simulate(model, scfg)
    write_samples(os.path.join(out, "samples.csv"), res.samples, path.vocab)
    if res.trajectories is not None:
        write_trajectories(os.path.join(out, "trajectories.csv"), res.trajectories, res.times, path.vocab)
    metrics = sample_metrics(res.samples, path, data, cfg["metrics"], cfg["seed"])
    metrics.update({"t_end": float(res.times[-1]), "n_steps": scfg.n_steps, "jumps": res.stats.jumps, "rate_clamps": res.stats.clamps})
    write_json(os.path.join(out, "metrics.json"), metrics)
    return EXIT_OK


def field_error(net, model, head, ev, rng):
    """Relative L2 error of the trained head against the exact marginal
    generator, on a (t, x) grid for one Euclidean column and on path samples
    otherwise."""
    path = model.path
    ts = np.linspace(ev["t_min"], ev["t_max"], ev["n_t"])
    rows = []
    num = den = 0.0
    for t in ts:
        if path.dim == 1 and path.vocab[0] == 0:
            x = np.linspace(ev["x_min"], ev["x_max"], ev["n_x"]).reshape(-1, 1)
        else:
            z, _ = model.data.sample(ev["n_x"], rng)
            x = path.sample_cond(z, float(t), rng)
        exact = model(float(t), x)
        got = net.genout(x, np.full(len(x), float(t)))
        if head == "velocity":
            a, b = exact.velocity, got.velocity
        elif head == "jump":
            a, b = exact.on_support(net.bins).jump_measure(), got.jump_measure()
        else:
            a, b = exact.rates, got.rates
        e, n = float(np.sum((a - b) ** 2)), float(np.sum(a**2))
        num, den = num + e, den + n
        rows.append({"t": float(t), "relative_l2": math.sqrt(e / n) if n > 0 else None})
    rel = math.sqrt(num / den) if den > 0 else None
    return {"relative_l2": rel, "threshold": ev["threshold"], "pass": rel is not None and rel <= ev["threshold"], "per_t": rows}


def cmd_train(cfg, out, threads=1):
    path, data, gen, model, scfg = _setup(cfg, threads)
    try:
        tcfg = TrainConfig(seed=cfg["seed"], **cfg["train"])
        d = Bregman.parse(cfg["loss"])
    except GMError as exc:
        raise ConfigError(str(exc)) from None
    bins = gen.bins if tcfg.head == "jump" and hasattr(gen, "bins") else None
    if tcfg.head == "jump" and bins is None:
        b = cfg["generator"]["bins"]
        bins = JumpBins(b["lo"], b["hi"], b["count"])
    net, curve = train_model(tcfg, path, data, gen, d, bins=bins)
    save_checkpoint(os.path.join(out, "checkpoint.json"), net, {"config_hash": tcfg.digest(), "loss": d.name})
    with open(os.path.join(out, "loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for step, loss in curve:
            w.writerow([step, repr(float(loss))])
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"], spawn_key=(11,)))
    report = field_error(net, model, tcfg.head, cfg["eval"], rng)
    res = simulate(NetModel(net, path), scfg)
    report["sampling"] = sample_metrics(res.samples, path, data, cfg["metrics"], cfg["seed"])
    write_json(os.path.join(out, "field_error.json"), report)
    return EXIT_OK


# the (path, model) cells of the toy benchmark; None marks a cell with no solution
BENCH_CELLS = [
    ("mixture", "flow", "flow"),
    ("mixture", "diffusion", "diffusion"),
    ("mixture", "jump", "jump"),
    ("mixture", "superposition", "superposition:flow+diffusion+jump"),
    ("condot", "flow", "flow"),
    ("condot", "diffusion", None),
    ("condot", "jump", "jump"),
    ("condot", "superposition", "superposition:flow+jump"),
]


def _bench_setup(path_kind, dataset):
    data = Dataset.two_point() if dataset == "two-point" else Dataset.checkerboard()
    d = data.dim
    if dataset == "two-point":
        lo, hi, count = -2.0, 2.0, 129
    else:
        lo, hi, count = -1.5, 1.5, 97
    if path_kind == "mixture":
        path = MixtureUniform(lo, hi, dim=d) if d == 1 else MixtureUniform(-1.0, 1.0, dim=d)
    else:
        path = GeometricAverage(dim=d)
    return path, data, JumpBins(lo, hi, count)


def cmd_bench_toy(cfg, out, threads=1):
    b = cfg["bench"]
    for name in b["datasets"]:
        if name not in ("two-point", "checkerboard-2d"):
            raise ConfigError(f"bench.datasets: unknown dataset {name!r}")
    rows = []
    for ci, (pk, model_name, gname) in enumerate(BENCH_CELLS):
        row = {"path": pk, "model": model_name, "generator": gname, "status": "ok" if gname else "no_solution", "metrics": {}}
        if gname is not None:
            for di, ds in enumerate(b["datasets"]):
                path, data, bins = _bench_setup(pk, ds)
                gen = make_generator(gname, path, bins=bins, support=JumpAtoms(data.points))
                seed_seq = np.random.SeedSequence(cfg["seed"], spawn_key=(ci, di))
                seed = int(seed_seq.generate_state(1)[0])
                scfg = SimConfig(n_steps=b["n_steps"], n_samples=b["n_samples"], seed=seed, threads=threads)
                res = simulate(MarginalModel(path, data, gen), scfg)
                m = sample_metrics(res.samples, path, data, cfg["metrics"], seed)
                m["jumps"] = res.stats.jumps
                row["metrics"][ds] = m
        rows.append(row)
    write_json(os.path.join(out, "bench_metrics.json"), {"cells": rows, "n_steps": b["n_steps"], "n_samples": b["n_samples"]})
    with open(os.path.join(out, "bench_metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "model", "status", "dataset", "tv", "energy_distance", "mean_distance_to_atom"])
        for r in rows:
            if not r["metrics"]:
                w.writerow([r["path"], r["model"], r["status"], "", "", "", ""])
            for ds, m in r["metrics"].items():
                vals = [m.get("tv"), m.get("energy_distance"), m.get("mean_distance_to_atom")]
                w.writerow([r["path"], r["model"], r["status"], ds] + ["" if v is None else repr(float(v)) for v in vals])
    return EXIT_OK


RUNNERS = {"verify-kfe": cmd_verify_kfe, "simulate": cmd_simulate, "train": cmd_train, "bench-toy": cmd_bench_toy}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are configuration errors, not verification failures
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="genmatch", description="Generator Matching experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file (defaults when omitted)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads for sampling")
    return p


def run(command, config=None, seed=None, out="out", threads=None):
    """Run one command; returns the exit code. ``threads`` only changes how
    sampling work is scheduled, never the outputs, so it is not part of the
    resolved config."""
    try:
        cfg = load_config(command, config, seed)
        if threads is not None and threads < 1:
            raise ConfigError("--threads must be positive")
        os.makedirs(out, exist_ok=True)
        write_json(os.path.join(out, "resolved_config.json"), cfg)
        return RUNNERS[command](cfg, out, threads or 1)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GMError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report anything else as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None):
    args = build_parser().parse_args(argv)
    code = run(args.command, args.config, args.seed, args.out, args.threads)
    if code == EXIT_OK:
        print(f"{args.command}: ok, outputs in {args.out}")
    elif code == EXIT_VERIFY:
        print(f"{args.command}: verification failed, see {args.out}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
