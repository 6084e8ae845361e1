"""Experiment configuration, orchestration and summary metrics.

A configuration is a YAML mapping with the blocks below.  ``topology`` is
required; every other block and field falls back to the documented default
(50 clients on 10 edge servers in a ring, label skew with two classes per
client, softmax regression, batch size 10, learning rate 0.001).

.. code-block:: yaml

    seeds: [0]
    output: results
    schemes: [sdfeel]
    target_loss: 1.0
    data: {source: synthetic, num_classes: 10, per_class: 100, test_per_class: 20,
           feature_dim: 8, class_sep: 3.0, seed: 0, images: null, labels: null}
    partition: {scheme: label_skew, clients: 50, c: 2, beta: 0.5, gamma: 0, seed: null}
    topology: {kind: ring, servers: 10, edges: null}
    model: {family: softmax, hidden: 32}
    sync: {tau1: 5, tau2: 1, alpha: 1, eta: 0.001, K: 100, batch_size: 10, feel_participants: 5}
    async: {deadlines: null, theta_min: 1, theta_max: 20, T: 100, psi: reciprocal,
            heterogeneity: 1.0, beta_c: null, hops: 1, eta: null}
    latency: {n_mac: 487540.0, c_cpu: 1.0e10, m_bit: 3.2e7, r_ct_sr: 5.0e6,
              r_sr_sr: 5.0e7, r_sr_cd: 5.0e6, r_ct_cd: 2.5e6}

``SDFEEL_SEED`` in the environment replaces the seed list with one seed.
"""
from __future__ import annotations

import copy
import csv
import io
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .asynchronous import AsyncConfig, make_profiles, run_async
from .data import assign_clusters, load_idx, partition, synth_dataset
from .exceptions import ConfigurationError
from .latency import LatencyParams
from .models import make_model
from .sync import SYNC_SCHEMES, SyncConfig, run_sync
from .topology import TOPOLOGY_KINDS, build_mixing, make_graph

SEED_ENV = "SDFEEL_SEED"
ALL_SCHEMES = SYNC_SCHEMES + ("async",)
REQUIRED_BLOCKS = ("topology",)

DEFAULTS = {
    "seeds": [0],
    "output": "results",
    "schemes": ["sdfeel"],
    "target_loss": 1.0,
    "data": {
        "source": "synthetic",
        "num_classes": 10,
        "per_class": 100,
        "test_per_class": 20,
        "feature_dim": 8,
        "class_sep": 3.0,
        "seed": 0,
        "images": None,
        "labels": None,
        "test_images": None,
        "test_labels": None,
    },
    "partition": {"scheme": "label_skew", "clients": 50, "c": 2, "beta": 0.5, "gamma": 0, "seed": None},
    "topology": {"kind": "ring", "servers": 10, "edges": None},
    "model": {"family": "softmax", "hidden": 32},
    "sync": {"tau1": 5, "tau2": 1, "alpha": 1, "eta": 0.001, "K": 100, "batch_size": 10, "feel_participants": 5},
    "async": {
        "deadlines": None,
        "theta_min": 1,
        "theta_max": 20,
        "T": 100,
        "psi": "reciprocal",
        "heterogeneity": 1.0,
        "beta_c": None,
        "hops": 1,
        "eta": None,
    },
    "latency": LatencyParams().to_dict(),
}

SUMMARY_COLUMNS = ("scheme", "seed", "iterations", "wall_clock_s", "final_loss", "final_acc",
                   "target_loss", "time_to_target_s", "iterations_to_target")


def _merge(defaults, given, path: str):
    if not isinstance(given, dict):
        raise ConfigurationError(f"{path or 'config'}: expected a mapping, got {type(given).__name__}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            raise ConfigurationError(f"{where}: unknown field")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value if value is not None else {}, where)
        else:
            out[key] = value
    return out


def _expect(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigurationError(f"{path}: {msg}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


@dataclass
class ExperimentConfig:
    """Validated, fully defaulted experiment description."""

    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["seeds"])


def validate_config(given: dict, env=None) -> ExperimentConfig:
    """Merge ``given`` over the defaults and check every field, reporting field paths."""
    env = os.environ if env is None else env
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigurationError("config: expected a mapping at the top level")
    for block in REQUIRED_BLOCKS:
        if block not in given or given[block] is None:
            raise ConfigurationError(f"{block}: required block is missing")
    cfg = _merge(DEFAULTS, given, "")

    if env.get(SEED_ENV) not in (None, ""):
        try:
            cfg["seeds"] = [int(env[SEED_ENV])]
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV}: expected an integer, got {env[SEED_ENV]!r}") from None
    seeds = cfg["seeds"]
    _expect(isinstance(seeds, list) and seeds and all(_is_int(s) and s >= 0 for s in seeds),
            "seeds", "expected a non-empty list of non-negative integers")
    schemes = cfg["schemes"]
    _expect(isinstance(schemes, list) and schemes, "schemes", "expected a non-empty list")
    for i, s in enumerate(schemes):
        _expect(s in ALL_SCHEMES, f"schemes[{i}]", f"unknown scheme {s!r}; expected one of {ALL_SCHEMES}")
    _expect(len(set(schemes)) == len(schemes), "schemes", "duplicate scheme")
    _expect(_is_num(cfg["target_loss"]), "target_loss", "expected a number")

    d = cfg["data"]
    _expect(d["source"] in ("synthetic", "idx"), "data.source", "expected 'synthetic' or 'idx'")
    if d["source"] == "idx":
        for key in ("images", "labels"):
            _expect(isinstance(d[key], str), f"data.{key}", "path required for idx data")
    for key in ("num_classes", "per_class", "feature_dim"):
        _expect(_is_int(d[key]) and d[key] >= 1, f"data.{key}", "expected a positive integer")
    _expect(_is_int(d["test_per_class"]) and d["test_per_class"] >= 0, "data.test_per_class",
            "expected a non-negative integer")
    _expect(_is_num(d["class_sep"]) and d["class_sep"] > 0, "data.class_sep", "expected a positive number")
    _expect(_is_int(d["seed"]) and d["seed"] >= 0, "data.seed", "expected a non-negative integer")

    p = cfg["partition"]
    _expect(p["scheme"] in ("label_skew", "dirichlet", "iid"), "partition.scheme",
            "expected 'label_skew', 'dirichlet' or 'iid'")
    _expect(_is_int(p["clients"]) and p["clients"] >= 1, "partition.clients", "expected a positive integer")
    _expect(_is_int(p["c"]) and p["c"] >= 1, "partition.c", "expected a positive integer")
    _expect(_is_num(p["beta"]) and p["beta"] > 0, "partition.beta", "expected a positive number")
    _expect(_is_int(p["gamma"]) and p["gamma"] >= 0, "partition.gamma", "expected a non-negative integer")
    _expect(p["seed"] is None or (_is_int(p["seed"]) and p["seed"] >= 0), "partition.seed",
            "expected null or a non-negative integer")

    t = cfg["topology"]
    _expect(t["kind"] in TOPOLOGY_KINDS, "topology.kind", f"expected one of {TOPOLOGY_KINDS}")
    _expect(_is_int(t["servers"]) and t["servers"] >= 1, "topology.servers", "expected a positive integer")
    if t["kind"] == "edges":
        _expect(isinstance(t["edges"], list), "topology.edges", "explicit edge list required for kind 'edges'")
    _expect(p["clients"] >= t["servers"], "partition.clients",
            f"{p['clients']} clients cannot populate {t['servers']} servers")

    mdl = cfg["model"]
    _expect(mdl["family"] in ("softmax", "mlp"), "model.family", "expected 'softmax' or 'mlp'")
    _expect(_is_int(mdl["hidden"]) and mdl["hidden"] >= 1, "model.hidden", "expected a positive integer")

    s = cfg["sync"]
    for key in ("tau1", "tau2", "alpha", "K", "feel_participants"):
        _expect(_is_int(s[key]) and s[key] >= 1, f"sync.{key}", "expected a positive integer")
    _expect(_is_num(s["eta"]) and s["eta"] > 0, "sync.eta", "expected a positive number")
    _expect(s["K"] % (s["tau1"] * s["tau2"]) == 0, "sync.K", "must be a multiple of tau1 * tau2")
    _expect(s["batch_size"] is None or (_is_int(s["batch_size"]) and s["batch_size"] >= 1),
            "sync.batch_size", "expected null or a positive integer")

    a = cfg["async"]
    for key in ("theta_min", "theta_max", "T"):
        _expect(_is_int(a[key]) and a[key] >= 1, f"async.{key}", "expected a positive integer")
    _expect(a["theta_min"] <= a["theta_max"], "async.theta_max", "must be >= theta_min")
    _expect(a["psi"] in ("reciprocal", "constant"), "async.psi", "expected 'reciprocal' or 'constant'")
    _expect(_is_num(a["heterogeneity"]) and a["heterogeneity"] >= 1, "async.heterogeneity", "expected a number >= 1")
    _expect(_is_int(a["hops"]) and a["hops"] >= 0, "async.hops", "expected a non-negative integer")
    _expect(a["beta_c"] is None or (_is_num(a["beta_c"]) and a["beta_c"] > 0), "async.beta_c",
            "expected null or a positive number")
    _expect(a["eta"] is None or (_is_num(a["eta"]) and a["eta"] > 0), "async.eta", "expected null or a positive number")
    if a["deadlines"] is not None:
        dl = a["deadlines"]
        _expect(isinstance(dl, list) and len(dl) == t["servers"], "async.deadlines",
                f"expected a list of {t['servers']} positive numbers")
        for i, v in enumerate(dl):
            _expect(_is_num(v) and v > 0, f"async.deadlines[{i}]", "expected a positive number")

    for key, v in cfg["latency"].items():
        _expect(_is_num(v) and v > 0, f"latency.{key}", "expected a positive number")
    return ExperimentConfig(cfg)


def load_config(path, env=None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            given = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from None
    return validate_config(given, env)


def build_data(cfg: ExperimentConfig):
    d = cfg["data"]
    if d["source"] == "idx":
        train = load_idx(d["images"], d["labels"])
        test = load_idx(d["test_images"], d["test_labels"]) if d["test_images"] else None
        return train, test
    train = synth_dataset(d["num_classes"], d["per_class"], d["feature_dim"], d["seed"], d["class_sep"], draw=0)
    test = None
    if d["test_per_class"]:
        test = synth_dataset(d["num_classes"], d["test_per_class"], d["feature_dim"], d["seed"], d["class_sep"], draw=1)
    return train, test


def build_setup(cfg: ExperimentConfig, seed: int, dataset):
    """Partition, cluster map and server graph for one seed."""
    p = cfg["partition"]
    t = cfg["topology"]
    pseed = seed if p["seed"] is None else p["seed"]
    part = partition(dataset, p["scheme"], p["clients"], pseed, c=p["c"], beta=p["beta"])
    part = part.with_clusters(assign_clusters(p["clients"], t["servers"], p["gamma"], pseed))
    edges = [tuple(e) for e in t["edges"]] if t["edges"] is not None else None
    graph = make_graph(t["kind"], t["servers"], edges=edges, weights=part.m_tilde)
    return part, graph


def _auto_deadlines(profiles, part, params: LatencyParams, theta_min: int) -> list[float]:
    # every cluster's slowest client fits theta_min steps before its deadline
    out = []
    for d in range(part.clusters):
        slow = min(profiles[i].speed for i in part.members(d))
        out.append(theta_min * params.n_mac / slow)
    return out


def run_one(cfg: ExperimentConfig, scheme: str, seed: int, dataset, test=None):
    part, graph = build_setup(cfg, seed, dataset)
    mdl = cfg["model"]
    model = make_model(mdl["family"], dataset.feature_dim, dataset.num_classes, mdl["hidden"])
    latency = LatencyParams(**cfg["latency"])
    a = cfg["async"]
    s = cfg["sync"]
    profiles = make_profiles(part.clients, a["heterogeneity"], seed, base_speed=latency.c_cpu)
    if scheme == "async":
        deadlines = a["deadlines"] or _auto_deadlines(profiles, part, latency, a["theta_min"])
        acfg = AsyncConfig(
            deadlines=tuple(deadlines), theta_min=a["theta_min"], theta_max=a["theta_max"],
            eta=a["eta"] if a["eta"] is not None else s["eta"], psi=a["psi"], T=a["T"], seed=seed,
            batch_size=s["batch_size"], beta_c=a["beta_c"], latency=latency, hops=a["hops"],
        )
        return run_async(acfg, graph, part, dataset, profiles, model, test)
    scfg = SyncConfig(
        tau1=s["tau1"], tau2=s["tau2"], alpha=s["alpha"], eta=s["eta"], K=s["K"], scheme=scheme, seed=seed,
        batch_size=s["batch_size"], feel_participants=s["feel_participants"], latency=latency,
        speeds=tuple(p.speed for p in profiles),
    )
    return run_sync(scfg, graph, part, dataset, model, test)


def summarize(trace, scheme: str, seed: int, target: float) -> dict:
    last = trace.records[-1]
    return {
        "scheme": scheme,
        "seed": seed,
        "iterations": last.k,
        "wall_clock_s": last.wall_clock_s,
        "final_loss": last.global_loss,
        "final_acc": last.test_acc,
        "target_loss": float(target),
        "time_to_target_s": trace.time_to_loss(target),
        "iterations_to_target": trace.iterations_to_loss(target),
    }


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        if math.isnan(v):
            return "nan"
        return f"{v:.17g}"
    return str(v)


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, output=None) -> dict:
    """Run every (scheme, seed) pair; write one trace CSV each plus ``summary.csv``.

    Returns a mapping with the written paths and the summary rows.
    """
    out_dir = Path(output if output is not None else cfg["output"])
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, test = build_data(cfg)
    rows, paths = [], []
    for scheme in cfg["schemes"]:
        for seed in cfg.seeds:
            trace = run_one(cfg, scheme, seed, dataset, test)
            path = out_dir / f"trace_{scheme}_seed{seed}.csv"
            trace.to_csv(path)
            paths.append(path)
            rows.append(summarize(trace, scheme, seed, cfg["target_loss"]))
    summary = out_dir / "summary.csv"
    summary.write_text(summary_csv(rows))
    return {"traces": paths, "summary": summary, "rows": rows}


def describe_topology(kind: str, servers: int, edges=None, weights=None) -> str:
    graph = make_graph(kind, servers, edges=edges, weights=weights)
    mix = build_mixing(graph)
    lines = [f"topology: {kind}, {servers} servers", "P ="]
    lines += ["  " + " ".join(f"{x: .6f}" for x in row) for row in np.asarray(mix.p)]
    lines.append(f"zeta = {mix.zeta:.6f}")
    lines.append(f"zeta_op = {mix.zeta_op:.6f}")
    return "\n".join(lines)
