"""Event-paired Barlow Twins training with an online head, the supervised baseline,
few-shot head fine-tuning, and checkpoint selection."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .btloss import bt_loss_backward
from .dataset import SpectrogramSet
from .dsp import noise_batch, zero_pad_batch
from .errors import ConfigError, FormatError, NumericError, UsageError
from .evalreport import balanced_accuracy_score
from .ingest import Split
from .tensornet import (
    CLASSIFIER,
    ENCODER,
    PROJECTOR,
    Architecture,
    Network,
    backward,
    embed,
    forward_classifier,
    forward_encoder,
    forward_projector,
    softmax,
    softmax_cross_entropy,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_events: int = 16
    epochs: int = 30
    learning_rate: float = 1e-3
    head_learning_rate: float = 1e-3
    lam: float = 5e-3
    noise_sigma: float = 0.05
    zero_pad_fraction: float = 0.5
    optimizer: str = "adam"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    # architecture knobs
    conv_channels: tuple[int, ...] = (16, 32, 64, 128)
    embedding_dim: int = 28
    projection_dim: int = 512
    head_hidden: int = 128
    # few-shot fine-tuning
    finetune_steps: int = 10
    finetune_learning_rate: float = 1e-4
    # train samples whose mean embedding defines the embedding origin (0 disables)
    center_samples: int = 256

    def validate(self) -> "TrainConfig":
        if self.batch_events < 1:
            raise ConfigError("batch_events", "must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs", "must be >= 0")
        if not 0 <= self.zero_pad_fraction <= 1:
            raise ConfigError("zero_pad_fraction", "must be in [0, 1]")
        if self.lam < 0:
            raise ConfigError("lambda", "must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma", "must be >= 0")
        if self.learning_rate <= 0 or self.head_learning_rate <= 0:
            raise ConfigError("learning_rate", "must be > 0")
        if self.optimizer != "adam":
            raise ConfigError("optimizer", f"only 'adam' is supported, got {self.optimizer!r}")
        return self

    def architecture(self, input_shape, n_classes: int) -> Architecture:
        return Architecture(input_shape=tuple(input_shape), conv_channels=tuple(self.conv_channels),
                            embedding_dim=self.embedding_dim, projection_dim=self.projection_dim,
                            head_hidden=self.head_hidden, n_classes=n_classes)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown key")
        for k in ("adam_betas", "conv_channels"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


class Adam:
    def __init__(self, names, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.names = list(names)
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in self.names:
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ---------------------------------------------------------------- batching

@dataclass
class PairBatch:
    """Aligned views. Row k of each view comes from the same event."""

    idx_a: np.ndarray
    idx_b: np.ndarray
    event_ids: list[str]
    self_pair: np.ndarray
    padded: np.ndarray = None
    view_a: np.ndarray | None = None
    view_b: np.ndarray | None = None
    mask_a: np.ndarray | None = None
    mask_b: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.padded is None:
            self.padded = np.zeros(len(self.idx_a), dtype=bool)

    def __len__(self):
        return len(self.idx_a)

    def materialize(self, ds: SpectrogramSet) -> "PairBatch":
        labels = ds.labels
        return dataclasses.replace(
            self, view_a=ds.tensors[self.idx_a], view_b=ds.tensors[self.idx_b],
            mask_a=ds.masks[self.idx_a], mask_b=ds.masks[self.idx_b], labels=labels[self.idx_a])


def sample_pairs(events_in_batch, rng: np.random.Generator) -> PairBatch:
    """One pair per event: two distinct stations, or a self-pair for single-station events.

    ``events_in_batch`` is a sequence of ``(event_id, sample indices)``.
    """
    events_in_batch = list(events_in_batch)
    if not events_in_batch:
        raise UsageError("cannot sample pairs from an empty batch")
    ia, ib, eids, selfp = [], [], [], []
    for event_id, members in events_in_batch:
        members = list(members)
        if not members:
            raise UsageError(f"event {event_id!r} has no samples")
        if len(members) >= 2:
            a, b = rng.choice(len(members), size=2, replace=False)
            ia.append(members[a])
            ib.append(members[b])
            selfp.append(False)
        else:
            ia.append(members[0])
            ib.append(members[0])
            selfp.append(True)
        eids.append(event_id)
    return PairBatch(np.array(ia, dtype=int), np.array(ib, dtype=int), eids,
                     np.array(selfp, dtype=bool))


def apply_batch_augmentations(batch: PairBatch, cfg: TrainConfig,
                              rng: np.random.Generator) -> PairBatch:
    """Append horizontals-dropped duplicates of a share of triaxial pairs, then add noise.

    A pair is eligible for padding when either member is triaxial. The number padded
    is ``floor(zero_pad_fraction * n_eligible)``. Every sample, duplicates included,
    then receives Gaussian noise with sigma drawn uniformly from [0, noise_sigma].
    """
    if batch.view_a is None:
        raise UsageError("materialize the batch before augmenting")
    va, vb, ma, mb = batch.view_a, batch.view_b, batch.mask_a, batch.mask_b
    ia, ib, labels = batch.idx_a, batch.idx_b, batch.labels
    eids, selfp, padded = list(batch.event_ids), batch.self_pair, batch.padded
    eligible = np.flatnonzero(ma.all(axis=1) | mb.all(axis=1))
    n_pad = int(math.floor(cfg.zero_pad_fraction * eligible.size + 1e-9))
    if n_pad:
        pick = np.sort(rng.choice(eligible, size=n_pad, replace=False))
        pa, pma = zero_pad_batch(va[pick], ma[pick])
        pb, pmb = zero_pad_batch(vb[pick], mb[pick])
        va, vb = np.concatenate([va, pa]), np.concatenate([vb, pb])
        ma, mb = np.concatenate([ma, pma]), np.concatenate([mb, pmb])
        ia, ib = np.concatenate([ia, ia[pick]]), np.concatenate([ib, ib[pick]])
        labels = np.concatenate([labels, labels[pick]])
        eids += [eids[i] for i in pick]
        selfp = np.concatenate([selfp, selfp[pick]])
        padded = np.concatenate([padded, np.ones(n_pad, dtype=bool)])
    if cfg.noise_sigma > 0:
        n = len(va)
        va = noise_batch(va, ma, rng.uniform(0.0, cfg.noise_sigma, size=n), rng)
        vb = noise_batch(vb, mb, rng.uniform(0.0, cfg.noise_sigma, size=n), rng)
    return PairBatch(ia, ib, eids, selfp, padded, va, vb, ma, mb, labels)


def _event_batches(event_ids: list[str], batch_events: int, rng) -> list[list[str]]:
    order = [event_ids[i] for i in rng.permutation(len(event_ids))]
    n_batches = max(1, int(round(len(order) / batch_events)))
    return [list(b) for b in np.array_split(np.array(order, dtype=object), n_batches) if len(b)]


# ---------------------------------------------------------------- model bundle

BUNDLE_MAGIC = b"SBTM"
BUNDLE_VERSION = 1


@dataclass
class ModelBundle:
    net: Network
    mode: str  # "bt" or "supervised"
    train_config: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    selection: dict = field(default_factory=dict)

    @property
    def arch(self) -> Architecture:
        return self.net.arch

    def copy(self) -> "ModelBundle":
        return ModelBundle(self.net.copy(), self.mode, json.loads(json.dumps(self.train_config)),
                           json.loads(json.dumps(self.history)), dict(self.selection))


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_bundle(path, bundle: ModelBundle) -> None:
    """Binary layout: magic, u16 version, u32 header length, JSON header, f64 LE blocks."""
    net = bundle.net
    blocks = [("param", k, v) for k, v in net.params.items()]
    blocks += [("buffer", k, v) for k, v in net.buffers.items()]
    header = {
        "arch": net.arch.to_dict(),
        "mode": bundle.mode,
        "train_config": bundle.train_config,
        "history": bundle.history,
        "selection": bundle.selection,
        "blocks": [{"kind": kind, "name": k, "shape": list(v.shape)} for kind, k, v in blocks],
    }
    hbytes = json.dumps(_jsonable(header), sort_keys=True).encode()
    parts = [BUNDLE_MAGIC, struct.pack("<HI", BUNDLE_VERSION, len(hbytes)), hbytes]
    parts += [np.ascontiguousarray(v, dtype="<f8").tobytes() for _, _, v in blocks]
    Path(path).write_bytes(b"".join(parts))


def load_bundle(path) -> ModelBundle:
    raw = Path(path).read_bytes()
    if raw[:4] != BUNDLE_MAGIC:
        raise FormatError(f"{path}: not a model bundle")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != BUNDLE_VERSION:
        raise FormatError(f"{path}: unsupported bundle version {version}")
    header = json.loads(raw[10:10 + hlen].decode())
    offset = 10 + hlen
    params, buffers = {}, {}
    for b in header["blocks"]:
        n = int(np.prod(b["shape"])) if b["shape"] else 1
        end = offset + 8 * n
        if end > len(raw):
            raise FormatError(f"{path}: truncated block {b['name']}")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").reshape(b["shape"]).astype(np.float64)
        (params if b["kind"] == "param" else buffers)[b["name"]] = arr
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    arch = header["arch"]
    arch = Architecture(**{**arch, "input_shape": tuple(arch["input_shape"]),
                           "conv_channels": tuple(arch["conv_channels"])})
    return ModelBundle(Network(arch, params, buffers), header["mode"], header["train_config"],
                       header["history"], header["selection"])


# ---------------------------------------------------------------- selection

def select_model(val_accuracies, checkpoints=None):
    """Best validation accuracy, earliest epoch on ties. Returns ``(epoch, checkpoint)``.

    Epochs are 1-based. NaN entries never win; if every entry is NaN the last is used.
    """
    accs = [float("nan") if a is None else float(a) for a in val_accuracies]
    if not accs:
        raise UsageError("need at least one checkpoint")
    finite = [i for i, a in enumerate(accs) if not math.isnan(a)]
    if finite:
        best = max(finite, key=lambda i: (accs[i], -i))
    else:
        best = len(accs) - 1
    ckpt = None if checkpoints is None else checkpoints[best]
    return best + 1, ckpt


# ---------------------------------------------------------------- training loops

def _accumulate(*grad_dicts):
    out: dict[str, np.ndarray] = {}
    for g in grad_dicts:
        for k, v in g.items():
            out[k] = out[k] + v if k in out else v
    return out


def bt_step(net: Network, va, vb, lam: float):
    """Forward both views, Eq.-style BT loss, and gradients for encoder and projector."""
    ea, ca = forward_encoder(net, va, "train")
    eb, cb = forward_encoder(net, vb, "train")
    za, pa = forward_projector(net, ea, "train")
    zb, pb = forward_projector(net, eb, "train")
    value, gza, gzb = bt_loss_backward(za, zb, lam)
    g_pa, dea = backward(net, gza, pa)
    g_pb, deb = backward(net, gzb, pb)
    g_ea, _ = backward(net, dea, ca, need_input_grad=False)
    g_eb, _ = backward(net, deb, cb, need_input_grad=False)
    return value, _accumulate(g_pa, g_pb, g_ea, g_eb), ea, eb


def head_step(net: Network, opt: Adam, feats: np.ndarray, labels: np.ndarray) -> float:
    """One cross-entropy update of the classifier head only, on frozen features."""
    logits, _, cache = forward_classifier(net, feats)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    grads, _ = backward(net, dlogits, cache)
    opt.step(net.params, grads)
    return loss


def predict_head(net: Network, tensors: np.ndarray) -> np.ndarray:
    """Softmax probabilities of the classifier head on eval-mode embeddings."""
    feats = embed(net, tensors)
    return forward_classifier(net, feats)[1]


def _val_accuracy(net: Network, val: SpectrogramSet | None) -> float:
    if val is None or len(val) == 0:
        return float("nan")
    probs = predict_head(net, val.tensors)
    return balanced_accuracy_score(probs.argmax(axis=1), val.labels, net.arch.n_classes)


def _setup(dataset: SpectrogramSet, split: Split, cfg: TrainConfig):
    cfg.validate()
    train_events = [e for e in split.train]
    if not train_events:
        raise UsageError("train split is empty")
    groups = dict(dataset.groups(train_events))
    missing = [e for e in train_events if e not in groups]
    if missing:
        raise UsageError(f"train events without samples: {missing[:3]}")
    n_classes = max(2, int(dataset.labels.max()) + 1)
    arch = cfg.architecture(dataset.tensors.shape[1:], n_classes)
    val_idx = dataset.indices_for(split.validation)
    val = dataset.subset(val_idx) if len(val_idx) else None
    return train_events, groups, arch, val


def center_embedding(net: Network, tensors: np.ndarray) -> None:
    """Move the embedding origin to the mean embedding of ``tensors``.

    The shift is folded into the projector and head input biases, so projections and
    head outputs are unchanged; only the coordinates seen by embedding analyses move.
    """
    if len(tensors) == 0:
        return
    m = embed(net, tensors).mean(axis=0)
    p = net.params
    p["embed.b"] -= m
    p["proj.b"] += m @ p["proj.w"]
    if net.arch.head_in == net.arch.embedding_dim:
        p["head1.b"] += m @ p["head1.w"]


def _centering_set(dataset: SpectrogramSet, train_events, cfg: TrainConfig) -> np.ndarray:
    idx = dataset.indices_for(train_events)
    n = min(cfg.center_samples, idx.size)
    if n <= 0:
        return dataset.tensors[:0]
    pick = np.random.default_rng([cfg.seed, 1]).choice(idx, size=n, replace=False)
    return dataset.tensors[np.sort(pick)]


def _finish(net_checkpoints, history, mode, cfg) -> ModelBundle:
    epoch, best = select_model([h["val_balanced_accuracy"] for h in history], net_checkpoints)
    selection = {"epoch": epoch, "criterion": "max validation balanced accuracy, earliest on ties",
                 "val_balanced_accuracy": history[epoch - 1]["val_balanced_accuracy"]}
    return ModelBundle(best, mode, cfg.to_dict(), history, selection)


def train_bt(dataset: SpectrogramSet, split: Split, cfg: TrainConfig) -> ModelBundle:
    """Self-supervised training with event pairs plus an online classifier head.

    Each step updates encoder and projector on the BT loss, then updates only the
    head with cross-entropy on the (detached) embeddings of the same batch.
    """
    train_events, groups, arch, val = _setup(dataset, split, cfg)
    rng = np.random.default_rng(cfg.seed)
    net = Network.init(arch, cfg.seed)
    anchor = _centering_set(dataset, train_events, cfg)
    center_embedding(net, anchor)
    backbone = net.part_names(ENCODER) + net.part_names(PROJECTOR)
    opt = Adam(backbone, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)
    head_opt = Adam(net.part_names(CLASSIFIER), cfg.head_learning_rate, cfg.adam_betas,
                    cfg.adam_eps)
    history, checkpoints = [], []
    step = 0
    for epoch in range(1, max(cfg.epochs, 1) + 1):
        sums = {"bt_loss": 0.0, "invariance": 0.0, "redundancy": 0.0, "head_loss": 0.0}
        n_steps = 0
        for batch_events in _event_batches(train_events, cfg.batch_events, rng):
            pb = sample_pairs([(e, groups[e]) for e in batch_events], rng).materialize(dataset)
            pb = apply_batch_augmentations(pb, cfg, rng)
            if len(pb) < 2:
                continue
            value, grads, ea, eb = bt_step(net, pb.view_a, pb.view_b, cfg.lam)
            step += 1
            if not math.isfinite(value.total):
                raise NumericError(f"non-finite BT loss at step {step} (epoch {epoch})")
            if cfg.epochs > 0:
                opt.step(net.params, grads)
            feats = np.concatenate([ea, eb])
            labels = np.concatenate([pb.labels, pb.labels])
            head_loss = head_step(net, head_opt, feats, labels) if cfg.epochs > 0 else float("nan")
            sums["bt_loss"] += value.total
            sums["invariance"] += value.invariance_term
            sums["redundancy"] += value.redundancy_term
            sums["head_loss"] += head_loss
            n_steps += 1
        center_embedding(net, anchor)
        rec = {k: v / max(n_steps, 1) for k, v in sums.items()}
        rec.update(epoch=epoch, steps=n_steps, lam=cfg.lam,
                   val_balanced_accuracy=_val_accuracy(net, val))
        history.append(rec)
        checkpoints.append(net.copy())
        log.info("bt epoch %d loss %.4f val_bacc %s", epoch, rec["bt_loss"],
                 rec["val_balanced_accuracy"])
        if cfg.epochs == 0:
            break
    return _finish(checkpoints, history, "bt", cfg)


def train_supervised(dataset: SpectrogramSet, split: Split, cfg: TrainConfig) -> ModelBundle:
    """End-to-end cross-entropy baseline on the same backbone, batches and augmentations."""
    train_events, groups, arch, val = _setup(dataset, split, cfg)
    rng = np.random.default_rng(cfg.seed)
    net = Network.init(arch, cfg.seed)
    anchor = _centering_set(dataset, train_events, cfg)
    center_embedding(net, anchor)
    names = net.part_names(ENCODER) + net.part_names(CLASSIFIER)
    opt = Adam(names, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)
    history, checkpoints = [], []
    step = 0
    for epoch in range(1, max(cfg.epochs, 1) + 1):
        total, n_steps = 0.0, 0
        for batch_events in _event_batches(train_events, cfg.batch_events, rng):
            pb = sample_pairs([(e, groups[e]) for e in batch_events], rng).materialize(dataset)
            pb = apply_batch_augmentations(pb, cfg, rng)
            x = np.concatenate([pb.view_a, pb.view_b])
            y = np.concatenate([pb.labels, pb.labels])
            emb, c_enc = forward_encoder(net, x, "train")
            logits, _, c_head = forward_classifier(net, emb)
            loss, dlogits = softmax_cross_entropy(logits, y)
            step += 1
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at step {step} (epoch {epoch})")
            if cfg.epochs > 0:
                g_head, demb = backward(net, dlogits, c_head)
                g_enc, _ = backward(net, demb, c_enc, need_input_grad=False)
                opt.step(net.params, _accumulate(g_head, g_enc))
            total += loss
            n_steps += 1
        center_embedding(net, anchor)
        rec = {"ce_loss": total / max(n_steps, 1), "epoch": epoch, "steps": n_steps,
               "val_balanced_accuracy": _val_accuracy(net, val)}
        history.append(rec)
        checkpoints.append(net.copy())
        log.info("supervised epoch %d loss %.4f val_bacc %s", epoch, rec["ce_loss"],
                 rec["val_balanced_accuracy"])
        if cfg.epochs == 0:
            break
    return _finish(checkpoints, history, "supervised", cfg)


def few_shot_finetune(bundle: ModelBundle, tensors: np.ndarray, labels, cfg: TrainConfig,
                      steps: int | None = None) -> ModelBundle:
    """Head-only full-batch Adam on a handful of labeled samples; encoder untouched."""
    labels = np.asarray(labels, dtype=int)
    K = bundle.arch.n_classes
    counts = np.bincount(labels, minlength=K)
    if np.any(counts[:K] == 0):
        raise UsageError(f"few-shot set has no samples for classes "
                         f"{np.flatnonzero(counts[:K] == 0).tolist()}")
    steps = cfg.finetune_steps if steps is None else steps
    out = bundle.copy()
    if steps <= 0:
        return out
    feats = embed(out.net, tensors)
    opt = Adam(out.net.part_names(CLASSIFIER), cfg.finetune_learning_rate, cfg.adam_betas,
               cfg.adam_eps)
    losses = [head_step(out.net, opt, feats, labels) for _ in range(steps)]
    out.selection = {**out.selection, "few_shot": {"n_samples": int(labels.size),
                                                   "steps": steps, "initial_loss": losses[0],
                                                   "final_loss": losses[-1]}}
    return out


# ---------------------------------------------------------------- logistic probe

@dataclass
class LogisticModel:
    """Multinomial logistic regression on standardized features (L2-regularized)."""

    weights: np.ndarray  # (d, K)
    bias: np.ndarray  # (K,)
    mean: np.ndarray
    scale: np.ndarray
    dims: list[int] | None = None

    def _x(self, X):
        X = np.asarray(X, dtype=float)
        if self.dims is not None:
            X = X[:, self.dims]
        return (X - self.mean) / self.scale

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self._x(X) @ self.weights + self.bias)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)


def fit_logistic(X, y, n_classes: int | None = None, l2: float = 1e-2,
                 dims=None, class_balanced: bool = True) -> LogisticModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if dims is not None:
        dims = [int(d) for d in dims]
        X = X[:, dims]
    K = n_classes or int(y.max()) + 1
    n, d = X.shape
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Z = (X - mean) / scale
    onehot = np.eye(K)[y]
    counts = np.bincount(y, minlength=K).astype(float)
    if class_balanced:
        w = (n / (K * np.maximum(counts, 1)))[y]
    else:
        w = np.ones(n)
    w = w / w.sum()

    def objective(theta):
        W = theta[: d * K].reshape(d, K)
        b = theta[d * K:]
        logits = Z @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        loss = -(w * (onehot * logp).sum(axis=1)).sum() + 0.5 * l2 * (W**2).sum()
        p = np.exp(logp)
        G = (p - onehot) * w[:, None]
        gW = Z.T @ G + l2 * W
        gb = G.sum(axis=0)
        return loss, np.concatenate([gW.ravel(), gb])

    res = minimize(objective, np.zeros(d * K + K), jac=True, method="L-BFGS-B",
                   options={"maxiter": 500})
    theta = res.x
    return LogisticModel(theta[: d * K].reshape(d, K), theta[d * K:], mean, scale, dims)
