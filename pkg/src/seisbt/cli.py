"""Command-line entry point: ``seisbt <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 failure while running.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, dataset, evalreport, synthcat, trainer
from .dsp import StftConfig
from .errors import (
    ConfigError,
    FormatError,
    LoadError,
    PartitionError,
    SeisBTError,
    ShapeError,
    UsageError,
)
from .ingest import PATH_ATTRIBUTES, SOURCE_ATTRIBUTES, load_catalog, partition
from .synthcat import SynthConfig
from .trainer import TrainConfig

log = logging.getLogger("seisbt")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
_INVALID = (ConfigError, LoadError, FormatError, PartitionError, UsageError, ShapeError,
            FileNotFoundError, json.JSONDecodeError)


# ---------------------------------------------------------------- configuration

@dataclass
class AnalysisConfig:
    n_pairs: int = 2000
    min_cluster_size: int = 50
    radius_quantile: float = 0.9
    n_trees: int = 50
    max_depth: int = 8
    min_samples_leaf: int = 5
    source_dims: int = 3
    few_shot_per_class: int = 2

    def validate(self) -> "AnalysisConfig":
        for name in ("n_pairs", "min_cluster_size", "n_trees", "max_depth", "min_samples_leaf"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if not 0 < self.radius_quantile <= 1:
            raise ConfigError("radius_quantile", "must be in (0, 1]")
        return self

    def forest(self, seed: int) -> analysis.ForestConfig:
        return analysis.ForestConfig(self.n_trees, self.max_depth, self.min_samples_leaf,
                                     seed=seed)


@dataclass
class RunConfig:
    """Everything a run needs. The top-level ``seed`` overrides section seeds."""

    synth: SynthConfig = field(default_factory=SynthConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown key")
        cfg = cls()
        parsers = {"synth": SynthConfig.from_dict, "stft": StftConfig.from_dict,
                   "train": TrainConfig.from_dict, "analysis": _analysis_from_dict}
        for name, parse in parsers.items():
            if name not in d:
                continue
            try:
                setattr(cfg, name, parse(_section(d, name)))
            except ConfigError as exc:
                msg = str(exc).split(": ", 1)[-1]
                raise ConfigError(f"{name}.{exc.field}", msg) from None
            except TypeError as exc:
                raise ConfigError(name, str(exc)) from None
        if "split" in d:
            split = d["split"]
            if not (isinstance(split, list) and len(split) == 3):
                raise ConfigError("split", "must be a list of three ratios")
            cfg.split = tuple(float(x) for x in split)
        if d.get("seed") is not None:
            if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
                raise ConfigError("seed", "must be an integer")
            cfg.seed = d["seed"]
        return cfg.finalize()

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is not None:
            self.seed = seed
        return self.finalize()

    def finalize(self) -> "RunConfig":
        if self.seed is not None:
            self.synth = dataclasses.replace(self.synth, seed=self.seed)
            self.train = dataclasses.replace(self.train, seed=self.seed)
        self.synth.validate()
        self.train.validate()
        self.analysis.validate()
        if any(r < 0 for r in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError("split", "ratios must be >= 0 and sum to 1")
        return self

    @property
    def effective_seed(self) -> int:
        return self.train.seed if self.seed is None else self.seed

    def to_dict(self) -> dict:
        return {"synth": self.synth.to_dict(), "stft": self.stft.to_dict(),
                "train": self.train.to_dict(), "analysis": dataclasses.asdict(self.analysis),
                "split": list(self.split), "seed": self.seed}


def _section(d: dict, name: str) -> dict:
    sec = d[name]
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a JSON object")
    return sec


def _analysis_from_dict(d: dict) -> AnalysisConfig:
    known = {f.name for f in dataclasses.fields(AnalysisConfig)}
    for k in d:
        if k not in known:
            raise ConfigError(k, "unknown key")
    return AnalysisConfig(**d)


def load_run_config(path: str | None, seed: int | None = None) -> RunConfig:
    if path is None:
        return RunConfig().with_seed(seed)
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file {p} not found")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(p), f"invalid JSON ({exc})") from None
    return RunConfig.from_dict(raw).with_seed(seed)


def _config_digest(cfg: RunConfig) -> str:
    blob = json.dumps(evalreport._clean(cfg.to_dict()), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- embeddings CSV

def write_embeddings(path, E: analysis.EmbeddingMatrix) -> None:
    d = E.rows.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_id", "station_id"] + [f"e{i}" for i in range(d)])
        for eid, sid, row in zip(E.event_ids, E.station_ids, E.rows):
            w.writerow([eid, sid] + [repr(float(x)) for x in row])


def read_embeddings(path) -> analysis.EmbeddingMatrix:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"embeddings file {p} not found")
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["event_id", "station_id"]:
            raise FormatError(f"{p}: expected columns event_id, station_id, e0...")
        eids, sids, rows = [], [], []
        for lineno, r in enumerate(reader, start=1):
            if len(r) != len(header):
                raise FormatError(f"{p}: row {lineno} has {len(r)} values, expected {len(header)}")
            eids.append(r[0])
            sids.append(r[1])
            try:
                rows.append([float(x) for x in r[2:]])
            except ValueError:
                raise FormatError(f"{p}: row {lineno} has a non-numeric value") from None
    return analysis.EmbeddingMatrix(np.array(rows).reshape(len(rows), len(header) - 2), eids, sids)


def _attach_attributes(E: analysis.EmbeddingMatrix, catalog) -> analysis.EmbeddingMatrix:
    index = {(r.event_id, r.station_id): r for r in catalog.rows}
    rows = []
    for eid, sid in zip(E.event_ids, E.station_ids):
        if (eid, sid) not in index:
            raise UsageError(f"embedding row ({eid}, {sid}) is not in the catalog")
        rows.append(index[(eid, sid)])
    return analysis.EmbeddingMatrix.from_rows(E.rows, rows)


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    synth = synthcat.shifted_config(cfg.synth) if args.shifted else cfg.synth
    catalog, records = synthcat.generate_catalog(synth)
    out = Path(args.out)
    path = synthcat.write_dataset(out, catalog, records)
    evalreport.write_json(out / "synth_config.json", synth.to_dict())
    log.info("wrote %d records for %d events to %s", len(catalog), len(catalog.event_ids()), path)


def cmd_preprocess(args) -> None:
    cfg = load_run_config(args.config)
    catalog = load_catalog(args.catalog)
    ds = dataset.build(catalog, cfg=cfg.stft)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    dataset.save(args.out, ds, cfg.stft)
    log.info("wrote %s tensors to %s", ds.tensors.shape, args.out)


def cmd_train(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    ds = dataset.load(args.data)
    split = partition(ds.catalog, cfg.split, cfg.effective_seed)
    run = Path(args.out)
    run.mkdir(parents=True, exist_ok=True)
    evalreport.write_json(run / "config.json", cfg.to_dict())
    fn = trainer.train_bt if args.mode == "bt" else trainer.train_supervised
    bundle = fn(ds, split, cfg.train)
    trainer.save_bundle(run / "model.bin", bundle)
    evalreport.write_json(run / "history.json",
                          {"mode": args.mode, "history": bundle.history,
                           "selection": bundle.selection})
    evalreport.write_json(run / "split.json", split.to_dict())
    log.info("selected epoch %s", bundle.selection.get("epoch"))


def cmd_embed(args) -> None:
    bundle = trainer.load_bundle(args.model)
    ds = dataset.load(args.data)
    E = analysis.embed(bundle, ds.tensors, ds.catalog.rows)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(args.out, E)


def _analyze(E: analysis.EmbeddingMatrix, cfg: RunConfig) -> dict:
    seed = cfg.effective_seed
    sim = analysis.cosine_similarity_report(E, cfg.analysis.n_pairs, seed)
    red = analysis.pca(E, 2)
    names = list(SOURCE_ATTRIBUTES + PATH_ATTRIBUTES)
    feats = np.column_stack([E.attributes[a] for a in names])
    importance = {}
    for j in range(2):
        res = analysis.tree_importance(feats, red.scores[:, j], cfg.analysis.forest(seed))
        importance[f"pc{j + 1}"] = dict(zip(names, res.importance.tolist()))
    probes = {}
    for a in names:
        if np.ptp(E.attributes[a]) > 0:
            probes[a] = analysis.linear_probe(E, E.attributes[a])
    source = {a: probes[a] for a in ("event_class", "depth_km") if a in probes}
    dims = analysis.select_source_dims(source, cfg.analysis.source_dims) if source else []
    return {
        "similarity": {"in_event": sim.in_event.tolist(), "non_event": sim.non_event.tolist(),
                       "in_event_median": sim.median_in_event,
                       "non_event_median": sim.median_non_event, "gap": sim.gap,
                       "n_zero_norm_excluded": sim.n_zero_norm},
        "pca": {"components": red.components.tolist(),
                "explained_variance": red.explained_variance.tolist(),
                "total_variance": red.total_variance},
        "importance": importance,
        "probes": {a: {"r_squared": p.r_squared, "coefficients": p.coefficients.tolist(),
                       "standardized": p.standardized.tolist(),
                       "condition_number": p.condition_number,
                       "rank_deficient": p.rank_deficient} for a, p in probes.items()},
        "source_dims": dims,
    }


def cmd_analyze(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    E = _attach_attributes(read_embeddings(args.embeddings),
                           load_catalog(args.catalog, check_waveforms=False))
    result = _analyze(E, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evalreport.write_json(out / "analysis.json", result)
    sim = result["similarity"]
    evalreport.write_csv(out / "similarity.csv", ["population", "index", "cosine"],
                         [["in_event", i, v] for i, v in enumerate(sim["in_event"])]
                         + [["non_event", i, v] for i, v in enumerate(sim["non_event"])])
    evalreport.write_csv(out / "importance.csv", ["target", "attribute", "importance"],
                         [[t, a, v] for t, imp in result["importance"].items()
                          for a, v in imp.items()])
    d = E.rows.shape[1]
    evalreport.write_csv(out / "probes.csv",
                         ["attribute", "r_squared"] + [f"std_coef_{i}" for i in range(d)],
                         [[a, p["r_squared"]] + p["standardized"]
                          for a, p in result["probes"].items()])


def _cluster_to_dict(model: analysis.ClusterModel, E: analysis.EmbeddingMatrix) -> dict:
    r = model.reducer
    return {"components": r.components.tolist(), "mean": r.mean.tolist(),
            "explained_variance": r.explained_variance.tolist(),
            "total_variance": r.total_variance, "radius": model.radius,
            "min_cluster_size": model.min_cluster_size, "min_pts": model.min_pts,
            "too_small": model.too_small, "labels": model.labels.tolist(),
            "points": model.points.tolist(), "event_ids": list(E.event_ids),
            "station_ids": list(E.station_ids)}


def _cluster_from_dict(d: dict) -> tuple[analysis.ClusterModel, list, list]:
    try:
        pts = np.array(d["points"], dtype=float).reshape(-1, 2)
        reducer = analysis.PcaResult(np.array(d["components"], dtype=float), pts,
                                     np.array(d["explained_variance"], dtype=float),
                                     np.array(d["mean"], dtype=float), float(d["total_variance"]))
        radius = float("nan") if d["radius"] is None else float(d["radius"])
        model = analysis.ClusterModel(reducer, pts, np.array(d["labels"], dtype=int), radius,
                                      int(d["min_cluster_size"]), int(d["min_pts"]),
                                      bool(d["too_small"]))
        return model, d["event_ids"], d["station_ids"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed cluster model ({exc})") from None


def load_cluster_model(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"cluster model {p} not found")
    return _cluster_from_dict(json.loads(p.read_text()))


def cmd_cluster(args) -> None:
    E = read_embeddings(args.embeddings)
    model = analysis.fit_clusters(E, args.min_cluster_size, args.radius_quantile)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evalreport.write_json(out / "cluster_model.json", _cluster_to_dict(model, E))
    rows = [[e, s, "train", lab] for e, s, lab in zip(E.event_ids, E.station_ids, model.labels)]
    if args.assign:
        N = read_embeddings(args.assign)
        labels = analysis.assign_cluster(model, N)
        rows += [[e, s, "assigned", lab] for e, s, lab in zip(N.event_ids, N.station_ids, labels)]
    evalreport.write_csv(out / "clusters.csv", ["event_id", "station_id", "split", "cluster"], rows)
    if model.too_small:
        log.warning("fewer rows than min_cluster_size; every row is unassigned")


def _pick_few_shot(labels: np.ndarray, per_class: int, n_classes: int, rng) -> np.ndarray:
    picked = []
    for k in range(n_classes):
        idx = np.flatnonzero(labels == k)
        if idx.size < per_class:
            raise UsageError(f"class {k} has {idx.size} samples, need {per_class} for few-shot")
        picked.extend(np.sort(rng.choice(idx, size=per_class, replace=False)).tolist())
    return np.array(sorted(picked), dtype=int)


def cmd_classify(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    bundle = trainer.load_bundle(args.model)
    ds = dataset.load(args.data)
    K = bundle.arch.n_classes
    rng = np.random.default_rng(cfg.effective_seed)
    eval_idx = np.arange(len(ds))
    method = "head"
    if args.dims is not None or args.probe:
        if args.train_data is None:
            raise UsageError("--dims/--probe need --train-data to fit the classifier")
        train = dataset.load(args.train_data)
        dims = None
        if args.dims is not None:
            try:
                dims = [int(x) for x in args.dims.split(",") if x.strip()]
            except ValueError:
                raise UsageError(f"--dims must be comma-separated integers, got {args.dims!r}") from None
            bad = [i for i in dims if not 0 <= i < bundle.arch.embedding_dim]
            if bad or not dims:
                raise UsageError(f"--dims out of range: {args.dims}")
        clf = trainer.fit_logistic(analysis.embed(bundle, train.tensors).rows, train.labels,
                                   K, dims=dims)
        probs = clf.predict_proba(analysis.embed(bundle, ds.tensors).rows)
        method = "logistic" + (f"[{','.join(map(str, dims))}]" if dims else "")
    else:
        if args.few_shot:
            shots = _pick_few_shot(ds.labels, args.few_shot, K, rng)
            bundle = trainer.few_shot_finetune(bundle, ds.tensors[shots], ds.labels[shots],
                                               cfg.train)
            eval_idx = np.setdiff1d(eval_idx, shots)
            method = f"head+few_shot({args.few_shot}/class)"
        probs = trainer.predict_head(bundle.net, ds.tensors)
    probs, labels = probs[eval_idx], ds.labels[eval_idx]
    rows = [ds.catalog.rows[i] for i in eval_idx]
    cluster = None
    if args.clusters:
        model, _, _ = load_cluster_model(args.clusters)
        cluster = analysis.assign_cluster(model, analysis.embed(bundle, ds.tensors[eval_idx]).rows)
    records = evalreport.ConfidenceRecords.from_probs(probs, labels, cluster)
    cm = evalreport.confusion(records.predicted, labels, K)
    result = {"method": method, "n": int(len(labels)),
              "balanced_accuracy": evalreport.balanced_accuracy(cm),
              "confusion": cm.counts.tolist(),
              "confidence": evalreport.confidence_separation(records)}
    if cluster is not None:
        result["filtered"] = evalreport.filtered_accuracy(records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evalreport.write_json(out / "classification.json", result)
    evalreport.write_csv(
        out / "predictions.csv",
        ["event_id", "station_id", "label", "predicted", "confidence", "cluster"],
        [[r.event_id, r.station_id, int(y), int(p), float(c), "" if cluster is None else int(k)]
         for r, y, p, c, k in zip(rows, labels, records.predicted, records.confidence,
                                  records.cluster)])


def cmd_report(args) -> None:
    run = Path(args.run_dir)
    if not run.is_dir():
        raise FileNotFoundError(f"run directory {run} not found")

    def read(name):
        p = run / name
        return json.loads(p.read_text()) if p.is_file() else None

    config = read("config.json")
    meta = {"config_sha256_16": _config_digest(RunConfig.from_dict(config)) if config else None}
    history = read("history.json")
    metrics: dict = {}
    if history:
        meta["mode"] = history.get("mode")
        meta["selected_epoch"] = history.get("selection", {}).get("epoch")
        metrics["val_balanced_accuracy_selected"] = history.get("selection", {}).get(
            "val_balanced_accuracy")
    cls = read("classification.json")
    cm = conf = None
    if cls:
        cm = evalreport.ConfusionMatrix(np.array(cls["confusion"], dtype=int))
        conf = cls["confidence"]
        metrics["method"] = cls["method"]
        if "filtered" in cls:
            metrics["filtered"] = cls["filtered"]
    ana = read("analysis.json")
    sim = imp = None
    if ana:
        sim, imp = ana["similarity"], ana["importance"]
        metrics["source_dims"] = ana["source_dims"]
    clusters = reduction = None
    if (run / "cluster_model.json").is_file():
        model, _, _ = load_cluster_model(run / "cluster_model.json")
        metrics["n_clusters"] = model.n_clusters
        metrics["cluster_radius"] = model.radius
        reduction = (model.points, model.labels)
        if (run / "clusters.csv").is_file():
            with open(run / "clusters.csv", newline="") as fh:
                clusters = [r for r in csv.reader(fh)][1:]
    evalreport.emit_report(run, meta, metrics, cm, sim, imp, clusters, reduction, conf)


# ---------------------------------------------------------------- argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seisbt", description="Event-paired self-supervised seismic embeddings.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic catalog")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--shifted", action="store_true",
                   help="use disjoint stations and distances (test-time network)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="catalog waveforms to a spectrogram cache")
    s.add_argument("--catalog", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a model into a run directory")
    s.add_argument("--mode", choices=("bt", "supervised"), required=True)
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("embed", help="encoder embeddings as CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("analyze", help="similarity, PCA, probes and importances")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--catalog", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("cluster", help="density clusters of the 2-D reduction")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--min-cluster-size", type=int, default=50)
    s.add_argument("--radius-quantile", type=float, default=0.9)
    s.add_argument("--assign", help="embeddings CSV to assign to the fitted clusters")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("classify", help="predictions and metrics")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--dims", help="comma-separated embedding dims for a logistic classifier")
    s.add_argument("--probe", action="store_true", help="logistic classifier on all dims")
    s.add_argument("--train-data", help="labeled cache used to fit the logistic classifier")
    s.add_argument("--few-shot", type=int, default=0, help="labels per class for head tuning")
    s.add_argument("--clusters", help="cluster_model.json for cluster-filtered metrics")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("report", help="write the report file set for a run directory")
    s.add_argument("--run-dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except _INVALID as exc:
        print(f"seisbt {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SeisBTError, OSError, ValueError, FloatingPointError) as exc:
        print(f"seisbt {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
