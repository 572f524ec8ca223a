"""Pipeline orchestration: staged subcommands with content-hash caching.

Stages write their artifacts plus a manifest (config-slice hash, input
hashes, output list, seed, version) into the output directory.  A stage is
skipped when its manifest still matches its config slice and current input
hashes and its outputs exist, so re-running a finished pipeline does no
work, while corrupting an intermediate artifact reruns exactly the stages
downstream of it.  Seeds derive from one master seed per module, so a
config fully determines every artifact byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, alexafeat, classify, evalkit, graphstore, synthgen
from .gnn import GnnConfig, LabelMask, save_model_json, train_semi_supervised
from .node2vec import Node2VecConfig, embed_graph
from .util import (
    atomic_write_text,
    canonical_json,
    derive_seed,
    read_matrix_csv,
    sha256_file,
    sha256_text,
    write_matrix_csv,
)

log = logging.getLogger(__name__)

STAGE_ORDER = ["synth", "build-graph", "impute", "embed", "train", "fuse", "evaluate", "report"]

GNN_VARIANTS = ("gcn", "sage")
EMBEDDING_NAMES = ("node2vec",) + GNN_VARIANTS


class ConfigError(ValueError):
    def __init__(self, key_path: str, message: str):
        super().__init__(f"config error at '{key_path}': {message}")
        self.key_path = key_path


class StageDependencyError(RuntimeError):
    def __init__(self, stage: str, path: Path, producer: str | None):
        hint = f"; run '{producer}' first" if producer else ""
        super().__init__(f"stage '{stage}' is missing input {path}{hint}")
        self.producer = producer


class LeakageError(RuntimeError):
    pass


# --- configuration -------------------------------------------------------------

_DEFAULTS = {
    "task": "factuality",
    "graph": {"max_level": 0, "weighted_adjacency": True},
    "impute": {"k": 5},
    "embeddings": ["node2vec", "gcn", "sage"],
    "node2vec": {},
    "gnn": {},
    "train_split": {"train_fraction": 0.8},
    "external_channels": {},
    "use_metrics_channel": True,
    "svm": {},
    "cv": {"folds": 5},
    "fusion": {"mode": "uniform", "channels": None},
    "leakage_check": True,
}


def _require(cfg: dict, key: str, types, path: str):
    if key not in cfg:
        raise ConfigError(f"{path}{key}", "missing required key")
    if not isinstance(cfg[key], types):
        raise ConfigError(f"{path}{key}", f"expected {types}, got {type(cfg[key]).__name__}")
    return cfg[key]


@dataclass
class RunConfig:
    raw: dict
    config_dir: Path

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"not valid JSON: {exc}") from exc
        cfg = cls(raw=raw, config_dir=path.parent.resolve())
        cfg.validate()
        return cfg

    def validate(self) -> None:
        raw = self.raw
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "top level must be an object")
        _require(raw, "master_seed", int, "")
        _require(raw, "output_dir", str, "")
        task = raw.get("task", _DEFAULTS["task"])
        if task not in evalkit.TASK_CLASSES:
            raise ConfigError("task", f"must be one of {sorted(evalkit.TASK_CLASSES)}")
        if raw.get("synth") is None:
            inputs = _require(raw, "inputs", dict, "")
            for key in ("records", "features", "labels", "seeds"):
                value = _require(inputs, key, str, "inputs.")
                if not (self.config_dir / value).exists():
                    raise ConfigError(f"inputs.{key}", f"file not found: {value}")
        else:
            synth = _require(raw, "synth", dict, "")
            _require(synth, "n_nodes", int, "synth.")
            try:
                self.synth_config().validate()
            except (TypeError, ValueError) as exc:
                raise ConfigError("synth", str(exc)) from exc
        graph = raw.get("graph", {})
        max_level = graph.get("max_level", 0)
        if not isinstance(max_level, int) or not 0 <= max_level <= 4:
            raise ConfigError("graph.max_level", "must be an integer in [0, 4]")
        embeddings = raw.get("embeddings", _DEFAULTS["embeddings"])
        if not isinstance(embeddings, list) or not embeddings:
            raise ConfigError("embeddings", "must be a nonempty list")
        for e in embeddings:
            if e not in EMBEDDING_NAMES:
                raise ConfigError("embeddings", f"unknown embedding {e!r}")
        try:
            self.node2vec_config().validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError("node2vec", str(exc)) from exc
        for variant in GNN_VARIANTS:
            try:
                self.gnn_config(variant).validate()
            except (TypeError, ValueError) as exc:
                raise ConfigError("gnn", str(exc)) from exc
        svm = raw.get("svm", {})
        for grid_key in ("c_grid", "gamma_grid"):
            if grid_key in svm:
                grid = svm[grid_key]
                if not isinstance(grid, list) or not grid or any(
                    not isinstance(v, (int, float)) or v <= 0 for v in grid
                ):
                    raise ConfigError(f"svm.{grid_key}", "must be a nonempty list of positive numbers")
        folds = raw.get("cv", {}).get("folds", 5)
        if not isinstance(folds, int) or folds < 2:
            raise ConfigError("cv.folds", "must be an integer >= 2")
        fusion = raw.get("fusion", {})
        mode = fusion.get("mode", "uniform")
        if mode not in ("uniform", "learned"):
            raise ConfigError("fusion.mode", "must be 'uniform' or 'learned'")
        fusion_channels = fusion.get("channels")
        if fusion_channels is not None:
            if not isinstance(fusion_channels, list) or not fusion_channels:
                raise ConfigError("fusion.channels", "must be a nonempty list or omitted")
            for name in fusion_channels:
                if name not in self.channel_names():
                    raise ConfigError("fusion.channels", f"{name!r} is not a configured channel")
        frac = raw.get("train_split", {}).get("train_fraction", 0.8)
        if not isinstance(frac, (int, float)) or not 0 < frac < 1:
            raise ConfigError("train_split.train_fraction", "must be in (0, 1)")

    # -- accessors --------------------------------------------------------

    def get(self, key: str):
        return self.raw.get(key, _DEFAULTS.get(key))

    @property
    def master_seed(self) -> int:
        return self.raw["master_seed"]

    @property
    def out_dir(self) -> Path:
        return (self.config_dir / self.raw["output_dir"]).resolve()

    @property
    def task(self) -> str:
        return self.get("task")

    def module_seed(self, name: str) -> int:
        return derive_seed(self.master_seed, name)

    def synth_active(self) -> bool:
        return self.raw.get("synth") is not None

    def synth_config(self) -> synthgen.SynthConfig:
        synth = dict(self.raw["synth"])
        for key in ("class_shift", "missingness"):
            if key in synth:
                synth[key] = tuple(synth[key])
        return synthgen.SynthConfig(seed=self.module_seed("synth"), **synth)

    def input_path(self, kind: str) -> Path:
        names = {
            "records": "records.jsonl",
            "features": "features.csv",
            "labels": "labels.csv",
            "seeds": "seeds.txt",
        }
        if self.synth_active():
            return self.out_dir / names[kind]
        return (self.config_dir / self.raw["inputs"][kind]).resolve()

    def embeddings(self) -> list[str]:
        return list(self.get("embeddings"))

    def channel_names(self) -> list[str]:
        names = self.embeddings()
        if self.get("use_metrics_channel"):
            names.append("alexametrics")
        names.extend(sorted(self.get("external_channels")))
        return names

    def fusion_channels(self) -> list[str]:
        channels = self.get("fusion").get("channels")
        return list(channels) if channels else self.embeddings()

    def svm_config(self) -> classify.SvmConfig:
        svm = self.get("svm")
        kwargs = {}
        if "c_grid" in svm:
            kwargs["c_grid"] = tuple(float(v) for v in svm["c_grid"])
        if "gamma_grid" in svm:
            kwargs["gamma_grid"] = tuple(float(v) for v in svm["gamma_grid"])
        for key in ("tol", "inner_folds", "max_iter"):
            if key in svm:
                kwargs[key] = svm[key]
        return classify.SvmConfig(**kwargs)

    def node2vec_config(self) -> Node2VecConfig:
        return Node2VecConfig(seed=self.module_seed("node2vec"), **self.get("node2vec"))

    def gnn_config(self, variant: str) -> GnnConfig:
        overrides = dict(self.get("gnn"))
        if "sage_sample_sizes" in overrides and overrides["sage_sample_sizes"] is not None:
            overrides["sage_sample_sizes"] = tuple(overrides["sage_sample_sizes"])
        overrides.setdefault("weighted_adjacency", self.get("graph").get("weighted_adjacency", True))
        return GnnConfig(variant=variant, seed=self.module_seed(variant), **overrides)

    def config_slice(self, stage: str) -> dict:
        """The part of the config a stage's outputs depend on."""
        raw = self.raw
        base = {"master_seed": self.master_seed, "version": __version__}
        if stage == "synth":
            base["synth"] = raw.get("synth")
        elif stage == "build-graph":
            base["graph"] = self.get("graph")
        elif stage == "impute":
            base["impute"] = self.get("impute")
        elif stage == "embed":
            base.update(
                {
                    "task": self.task,
                    "embeddings": self.embeddings(),
                    "node2vec": self.get("node2vec"),
                    "gnn": self.get("gnn"),
                    "graph": self.get("graph"),
                    "train_split": self.get("train_split"),
                }
            )
        elif stage == "train":
            base.update(
                {
                    "task": self.task,
                    "svm": self.get("svm"),
                    "cv": self.get("cv"),
                    "channels": self.channel_names(),
                    "external_channels": self.get("external_channels"),
                    "leakage_check": self.get("leakage_check"),
                }
            )
        elif stage == "fuse":
            base["fusion"] = {"mode": self.get("fusion").get("mode", "uniform"), "channels": self.fusion_channels()}
            base["task"] = self.task
        elif stage == "evaluate":
            base.update({"task": self.task, "cv": self.get("cv"), "channels": self.channel_names()})
        elif stage == "report":
            pass
        return base


# --- manifest machinery ---------------------------------------------------------


def _manifest_path(cfg: RunConfig, stage: str) -> Path:
    return cfg.out_dir / "manifests" / f"{stage.replace('-', '_')}.json"


def _relkey(cfg: RunConfig, path: Path) -> str:
    """Manifest keys are relative to the output dir so a moved tree still
    validates."""
    return os.path.relpath(path, cfg.out_dir)


def _hash_inputs(cfg: RunConfig, paths: list[Path]) -> dict[str, str]:
    return {_relkey(cfg, p): sha256_file(p) for p in sorted(paths)}


def _write_manifest(cfg: RunConfig, stage: str, inputs: list[Path], outputs: list[Path]) -> None:
    manifest = {
        "stage": stage,
        "version": __version__,
        "seed": cfg.master_seed,
        "config_slice_hash": sha256_text(canonical_json(cfg.config_slice(stage))),
        "inputs": _hash_inputs(cfg, inputs),
        "outputs": {_relkey(cfg, p): sha256_file(p) for p in sorted(outputs)},
    }
    path = _manifest_path(cfg, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _can_skip(cfg: RunConfig, stage: str, inputs: list[Path], outputs: list[Path]) -> bool:
    path = _manifest_path(cfg, stage)
    if not path.exists():
        return False
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    if manifest.get("config_slice_hash") != sha256_text(canonical_json(cfg.config_slice(stage))):
        return False
    if not all(p.exists() for p in inputs + outputs):
        return False
    if manifest.get("inputs") != _hash_inputs(cfg, inputs):
        return False
    if set(manifest.get("outputs", {})) != {_relkey(cfg, p) for p in outputs}:
        return False
    return True


# --- stage implementations --------------------------------------------------------


def _graph_paths(cfg: RunConfig) -> tuple[Path, Path]:
    return cfg.out_dir / "graph_nodes.csv", cfg.out_dir / "graph_edges.csv"


def _stage_synth_io(cfg: RunConfig):
    outs = [cfg.input_path(k) for k in ("records", "features", "labels", "seeds")]
    return [], outs


def _run_synth(cfg: RunConfig) -> None:
    synthgen.generate(cfg.synth_config(), cfg.out_dir)


def _stage_build_graph_io(cfg: RunConfig):
    return [cfg.input_path("records"), cfg.input_path("seeds")], list(_graph_paths(cfg))


def _run_build_graph(cfg: RunConfig) -> None:
    seeds = [
        line.strip()
        for line in cfg.input_path("seeds").read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    records = graphstore.FileReplayRecordSource(cfg.input_path("records"))
    graph = graphstore.build_level0(seeds, records)
    for k in range(1, cfg.get("graph").get("max_level", 0) + 1):
        graphstore.expand_level(graph, records, k)
    nodes_path, edges_path = _graph_paths(cfg)
    graphstore.save_graph_csv(graph, nodes_path, edges_path)
    n, m, per_level = graphstore.graph_stats(graph)
    log.info("graph: %d nodes, %d edges, per-level %s", n, m, per_level)


def _stage_impute_io(cfg: RunConfig):
    nodes_path, edges_path = _graph_paths(cfg)
    return [nodes_path, edges_path, cfg.input_path("features")], [cfg.out_dir / "metrics_channel.csv"]


def _load_graph(cfg: RunConfig) -> graphstore.MediaGraph:
    nodes_path, edges_path = _graph_paths(cfg)
    return graphstore.load_graph_csv(nodes_path, edges_path)


def _run_impute(cfg: RunConfig) -> None:
    graph = _load_graph(cfg)
    table = alexafeat.load_features_csv(cfg.input_path("features"))
    missing = sorted(set(graph.nodes) - set(table))
    if missing:
        raise ValueError(f"features.csv lacks rows for graph nodes: {', '.join(missing[:5])} ...")
    table = {d: table[d] for d in graph.nodes}
    imputed = alexafeat.impute_missing(graph, table, k=cfg.get("impute").get("k", 5))
    alexafeat.write_feature_channel_csv(imputed, graph.domains(), cfg.out_dir / "metrics_channel.csv")


def _embedding_outputs(cfg: RunConfig) -> list[Path]:
    outs = []
    for name in cfg.embeddings():
        outs.append(cfg.out_dir / f"emb_{name}.csv")
        outs.append(cfg.out_dir / f"emb_{name}.json")
        if name in GNN_VARIANTS:
            outs.append(cfg.out_dir / f"model_{name}.json")
    return outs


def _stage_embed_io(cfg: RunConfig):
    nodes_path, edges_path = _graph_paths(cfg)
    ins = [nodes_path, edges_path, cfg.out_dir / "metrics_channel.csv", cfg.input_path("labels")]
    return ins, _embedding_outputs(cfg)


def _gnn_label_mask(
    cfg: RunConfig, domains: list[str], labels: dict, classes: list[str]
) -> LabelMask:
    """80/20 stratified train/test tagging of the labeled nodes."""
    class_index = {c: i for i, c in enumerate(classes)}
    y = np.full(len(domains), -1, dtype=np.int64)
    for i, d in enumerate(domains):
        value = labels.get(d, {}).get(cfg.task)
        if value:
            y[i] = class_index[value]
    is_train = np.zeros(len(domains), dtype=bool)
    is_test = np.zeros(len(domains), dtype=bool)
    rng = np.random.default_rng(cfg.module_seed("train_split"))
    frac = cfg.get("train_split").get("train_fraction", 0.8)
    for c in range(len(classes)):
        members = np.nonzero(y == c)[0]
        members = members[rng.permutation(len(members))]
        cut = max(1, int(round(frac * len(members)))) if len(members) else 0
        is_train[members[:cut]] = True
        is_test[members[cut:]] = True
    return LabelMask(y=y, is_train=is_train, is_test=is_test)


def _run_embed(cfg: RunConfig) -> None:
    graph = _load_graph(cfg)
    domains = graph.domains()
    feat_domains, metrics = read_matrix_csv(cfg.out_dir / "metrics_channel.csv")
    if feat_domains != domains:
        raise ValueError("metrics_channel.csv does not align with the graph; rerun impute")
    labels = evalkit.load_labels_csv(cfg.input_path("labels"))
    classes = list(evalkit.TASK_CLASSES[cfg.task])

    for name in cfg.embeddings():
        if name == "node2vec":
            _, matrix, info = embed_graph(graph, cfg.node2vec_config())
        else:
            gnn_cfg = cfg.gnn_config(name)
            mask = _gnn_label_mask(cfg, domains, labels, classes)
            scaler = classify.standardize_fit(metrics)
            features = classify.standardize_apply(metrics, scaler)
            model, matrix = train_semi_supervised(graph, features, mask, gnn_cfg, len(classes))
            save_model_json(model, cfg.out_dir / f"model_{name}.json")
            info = {
                "algorithm": name,
                "config": {
                    "layers": gnn_cfg.layers,
                    "hidden_dim": gnn_cfg.hidden_dim,
                    "epochs": gnn_cfg.epochs,
                    "learning_rate": gnn_cfg.learning_rate,
                    "weight_decay": gnn_cfg.weight_decay,
                    "dropout": gnn_cfg.dropout,
                    "sage_sample_sizes": list(gnn_cfg.sample_sizes()),
                    "weighted_adjacency": gnn_cfg.weighted_adjacency,
                    "optimizer": gnn_cfg.optimizer,
                },
                "seed": gnn_cfg.seed,
                "task": cfg.task,
                "final_loss": model.loss_history[-1] if model.loss_history else None,
            }
        write_matrix_csv(cfg.out_dir / f"emb_{name}.csv", domains, matrix, prefix="e")
        atomic_write_text(
            cfg.out_dir / f"emb_{name}.json", json.dumps(info, sort_keys=True, indent=2) + "\n"
        )
        log.info("embedded %s: %s", name, matrix.shape)


def _channel_file(cfg: RunConfig, name: str) -> Path:
    if name in EMBEDDING_NAMES:
        return cfg.out_dir / f"emb_{name}.csv"
    if name == "alexametrics":
        return cfg.out_dir / "metrics_channel.csv"
    return (cfg.config_dir / cfg.get("external_channels")[name]).resolve()


def _stage_train_io(cfg: RunConfig):
    nodes_path, edges_path = _graph_paths(cfg)
    ins = [cfg.input_path("labels"), nodes_path, edges_path]
    ins += [_channel_file(cfg, name) for name in cfg.channel_names()]
    outs = [cfg.out_dir / "folds.csv", cfg.out_dir / "train_details.json"]
    outs += [cfg.out_dir / f"posteriors_{name}.csv" for name in cfg.channel_names()]
    return ins, outs


def _labeled_domains(cfg: RunConfig, domains: list[str], labels: dict) -> list[str]:
    labeled = [d for d in domains if labels.get(d, {}).get(cfg.task)]
    skipped = [d for d in labels if labels[d].get(cfg.task) and d not in set(domains)]
    if skipped:
        log.warning("%d labeled domains are not in the graph and are skipped", len(skipped))
    return labeled


def _run_train(cfg: RunConfig) -> None:
    graph = _load_graph(cfg)
    domains = graph.domains()
    labels = evalkit.load_labels_csv(cfg.input_path("labels"))
    classes = list(evalkit.TASK_CLASSES[cfg.task])
    labeled = _labeled_domains(cfg, domains, labels)
    if not labeled:
        raise ValueError(f"no graph nodes carry a {cfg.task} label")
    y = [labels[d][cfg.task] for d in labeled]
    row_of = {d: i for i, d in enumerate(labeled)}

    domain_row = {d: i for i, d in enumerate(domains)}
    rows = np.array([domain_row[d] for d in labeled])
    channels: dict[str, np.ndarray] = {}
    for name in cfg.channel_names():
        channel = classify.ingest_external_representation(_channel_file(cfg, name), domains, name)
        channels[name] = channel.matrix[rows]

    svm = cfg.svm_config()
    folds = cfg.get("cv").get("folds", 5)
    seed = cfg.module_seed("cv")
    results = classify.cross_validate(channels, y, classes, folds, seed, svm, task=cfg.task)

    if cfg.get("leakage_check"):
        _leakage_check(channels, y, classes, results, svm, seed)

    fold_of = next(iter(results.values())).fold_of
    fold_lines = ["domain,fold"] + [f"{d},{fold_of[row_of[d]]}" for d in labeled]
    atomic_write_text(cfg.out_dir / "folds.csv", "\n".join(fold_lines) + "\n")
    details = {"task": cfg.task, "classes": classes, "channels": {}}
    for name, result in results.items():
        write_matrix_csv(cfg.out_dir / f"posteriors_{name}.csv", labeled, result.oof_posterior, prefix="p")
        details["channels"][name] = {
            "chosen": result.chosen,
            "fold_macro_f1": result.report.fold_macro_f1,
            "fold_accuracy": result.report.fold_accuracy,
            "mean_macro_f1": result.report.mean_macro_f1,
            "mean_accuracy": result.report.mean_accuracy,
        }
    atomic_write_text(
        cfg.out_dir / "train_details.json", json.dumps(details, sort_keys=True, indent=2) + "\n"
    )


def _leakage_check(channels, y, classes, results, svm, seed) -> None:
    """Refit one fold with its held-out labels shuffled; the fitted model
    must be identical (nothing outside the training rows may leak in)."""
    name = sorted(channels)[0]
    result = results[name]
    class_index = {c: i for i, c in enumerate(classes)}
    y_int = np.array([class_index[v] for v in y], dtype=np.int64)
    te = result.fold_of == 0
    y_shuffled = y_int.copy()
    rng = np.random.default_rng(0)
    y_shuffled[te] = rng.permutation(y_shuffled[te])
    x = np.asarray(channels[name], dtype=float)
    fold_seed = derive_seed(seed, f"cv.{name}.fold0")
    scaler_a, model_a = classify.fit_channel_fold(x, y_int, len(classes), ~te, svm, fold_seed)
    scaler_b, model_b = classify.fit_channel_fold(x, y_shuffled, len(classes), ~te, svm, fold_seed)
    fp_a = classify.model_fingerprint(model_a, scaler_a)
    fp_b = classify.model_fingerprint(model_b, scaler_b)
    if fp_a != fp_b:
        raise LeakageError(
            f"channel {name!r} fold-0 model changed when test labels were shuffled"
        )
    log.info("leakage check passed on channel %r", name)


def _stage_fuse_io(cfg: RunConfig):
    ins = [cfg.out_dir / "folds.csv", cfg.input_path("labels")]
    ins += [cfg.out_dir / f"posteriors_{name}.csv" for name in cfg.fusion_channels()]
    return ins, [cfg.out_dir / "posteriors_fused.csv", cfg.out_dir / "fusion.json"]


def _run_fuse(cfg: RunConfig) -> None:
    names = cfg.fusion_channels()
    posteriors = []
    domains = None
    for name in names:
        ds, matrix = read_matrix_csv(cfg.out_dir / f"posteriors_{name}.csv")
        if domains is None:
            domains = ds
        elif ds != domains:
            raise ValueError(f"posterior files disagree on domain order ({name})")
        posteriors.append(matrix)
    mode = cfg.get("fusion").get("mode", "uniform")
    if mode == "uniform":
        weights = np.full(len(names), 1.0 / len(names))
    else:
        labels = evalkit.load_labels_csv(cfg.input_path("labels"))
        classes = list(evalkit.TASK_CLASSES[cfg.task])
        y = [labels[d][cfg.task] for d in domains]
        weights = classify.fit_fusion_weights(posteriors, y, classes)
    fused = classify.late_fuse(posteriors, weights)
    write_matrix_csv(cfg.out_dir / "posteriors_fused.csv", domains, fused, prefix="p")
    payload = {"mode": mode, "channels": names, "weights": [float(w) for w in weights]}
    atomic_write_text(cfg.out_dir / "fusion.json", json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _stage_evaluate_io(cfg: RunConfig):
    ins = [cfg.input_path("labels"), cfg.out_dir / "folds.csv"]
    ins += [cfg.out_dir / f"posteriors_{name}.csv" for name in cfg.channel_names()]
    ins.append(cfg.out_dir / "posteriors_fused.csv")
    return ins, [cfg.out_dir / "eval_reports.json"]


def _posterior_report(
    task: str, name: str, classes: list[str], y: list[str], posterior: np.ndarray, fold_of: np.ndarray
) -> evalkit.EvalReport:
    fold_f1, fold_acc = [], []
    confusion = np.zeros((len(classes), len(classes)), dtype=int)
    for f in sorted(set(fold_of.tolist())):
        te = fold_of == f
        pred = [classes[i] for i in np.argmax(posterior[te], axis=1)]
        true = [y[i] for i in np.nonzero(te)[0]]
        fold_f1.append(evalkit.macro_f1(true, pred, classes))
        fold_acc.append(evalkit.accuracy(true, pred))
        confusion += np.array(evalkit.confusion_matrix(true, pred, classes))
    return evalkit.EvalReport(
        task=task,
        channel=name,
        classes=tuple(classes),
        fold_macro_f1=fold_f1,
        fold_accuracy=fold_acc,
        confusion=confusion.tolist(),
    )


def _run_evaluate(cfg: RunConfig) -> None:
    labels = evalkit.load_labels_csv(cfg.input_path("labels"))
    classes = list(evalkit.TASK_CLASSES[cfg.task])
    fold_rows = (cfg.out_dir / "folds.csv").read_text(encoding="utf-8").strip().splitlines()[1:]
    domains = [row.split(",")[0] for row in fold_rows]
    fold_of = np.array([int(row.split(",")[1]) for row in fold_rows])
    y = [labels[d][cfg.task] for d in domains]

    reports = []
    for name in cfg.channel_names() + ["fused"]:
        ds, posterior = read_matrix_csv(cfg.out_dir / f"posteriors_{name}.csv")
        if ds != domains:
            raise ValueError(f"posteriors_{name}.csv does not align with folds.csv")
        reports.append(_posterior_report(cfg.task, name, classes, y, posterior, fold_of))

    # majority baseline on the same folds
    fold_f1, fold_acc = [], []
    confusion = np.zeros((len(classes), len(classes)), dtype=int)
    for f in sorted(set(fold_of.tolist())):
        te = fold_of == f
        winner = evalkit.majority_baseline([y[i] for i in np.nonzero(~te)[0]])
        true = [y[i] for i in np.nonzero(te)[0]]
        pred = [winner] * len(true)
        fold_f1.append(evalkit.macro_f1(true, pred, classes))
        fold_acc.append(evalkit.accuracy(true, pred))
        confusion += np.array(evalkit.confusion_matrix(true, pred, classes))
    reports.append(
        evalkit.EvalReport(
            task=cfg.task,
            channel="majority_baseline",
            classes=tuple(classes),
            fold_macro_f1=fold_f1,
            fold_accuracy=fold_acc,
            confusion=confusion.tolist(),
        )
    )
    payload = {
        "schema_version": evalkit.REPORT_SCHEMA_VERSION,
        "task": cfg.task,
        "rows": [r.to_dict() for r in reports],
    }
    atomic_write_text(
        cfg.out_dir / "eval_reports.json", json.dumps(payload, sort_keys=True, indent=2) + "\n"
    )


def _stage_report_io(cfg: RunConfig):
    return [cfg.out_dir / "eval_reports.json"], [cfg.out_dir / "report.json", cfg.out_dir / "report.txt"]


def _run_report(cfg: RunConfig) -> None:
    payload = json.loads((cfg.out_dir / "eval_reports.json").read_text(encoding="utf-8"))
    reports = [
        evalkit.EvalReport(
            task=row["task"],
            channel=row["channel"],
            classes=tuple(row["classes"]),
            fold_macro_f1=row["fold_macro_f1"],
            fold_accuracy=row["fold_accuracy"],
            confusion=row["confusion"],
            details=row.get("details", {}),
        )
        for row in payload["rows"]
    ]
    text, rendered = evalkit.render_report(reports)
    rendered["task"] = payload["task"]
    atomic_write_text(cfg.out_dir / "report.json", json.dumps(rendered, sort_keys=True, indent=2) + "\n")
    atomic_write_text(cfg.out_dir / "report.txt", text)
    log.info("report:\n%s", text)


_STAGES = {
    "synth": (_stage_synth_io, _run_synth),
    "build-graph": (_stage_build_graph_io, _run_build_graph),
    "impute": (_stage_impute_io, _run_impute),
    "embed": (_stage_embed_io, _run_embed),
    "train": (_stage_train_io, _run_train),
    "fuse": (_stage_fuse_io, _run_fuse),
    "evaluate": (_stage_evaluate_io, _run_evaluate),
    "report": (_stage_report_io, _run_report),
}


def _producer_of(cfg: RunConfig, path: Path) -> str | None:
    for stage in STAGE_ORDER:
        if stage == "synth" and not cfg.synth_active():
            continue
        io_fn, _ = _STAGES[stage]
        _, outs = io_fn(cfg)
        if path in outs:
            return stage
    return None


def run_stage(cfg: RunConfig, stage: str, force: bool = False) -> str:
    """Run one stage; returns 'ran' or 'skipped'."""
    if stage == "synth" and not cfg.synth_active():
        return "skipped"
    io_fn, run_fn = _STAGES[stage]
    inputs, outputs = io_fn(cfg)
    for p in inputs:
        if not p.exists():
            raise StageDependencyError(stage, p, _producer_of(cfg, p))
    if not force and _can_skip(cfg, stage, inputs, outputs):
        log.info("stage %s: manifest up to date, skipping", stage)
        return "skipped"
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    log.info("stage %s: running", stage)
    run_fn(cfg)
    for p in outputs:
        if not p.exists():
            raise RuntimeError(f"stage '{stage}' did not produce {p}")
    _write_manifest(cfg, stage, inputs, outputs)
    return "ran"


def run_all(cfg: RunConfig, force: bool = False) -> dict[str, str]:
    return {stage: run_stage(cfg, stage, force=force) for stage in STAGE_ORDER}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mediagraph",
        description="Audience-overlap media profiling pipeline",
    )
    parser.add_argument("command", choices=STAGE_ORDER + ["run-all"])
    parser.add_argument("--config", required=True, help="path to the run-config JSON")
    parser.add_argument("--stage", help="with run-all: stop after this stage")
    parser.add_argument("--force", action="store_true", help="ignore cached manifests")
    parser.add_argument("--seed", type=int, help="override master_seed")
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.raw["master_seed"] = args.seed
        if args.command == "run-all":
            for stage in STAGE_ORDER:
                status = run_stage(cfg, stage, force=args.force)
                print(f"{stage}: {status}", file=sys.stderr)
                if args.stage and stage == args.stage:
                    break
        else:
            status = run_stage(cfg, args.command, force=args.force)
            print(f"{args.command}: {status}", file=sys.stderr)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageDependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except LeakageError as exc:
        print(f"error: leakage check failed: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
