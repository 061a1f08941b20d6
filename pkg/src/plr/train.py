"""Training orchestration: restoration pretraining, classifier fine-tuning,
evaluation, the P/M sweep, and activation-map export.

Everything is deterministic for a fixed seed: batch order, augmentation
draws, label-fraction subsampling, and weight init all come from separate
tagged streams of the configured seed. Checkpointing keeps the weights of
the best validation epoch (lowest restoration MSE, highest classification
accuracy) and returns those, not the last ones.
"""

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .corrupt import CorruptionSpec, generate_dataset
from .image import affine_augment, load_image, resize_bilinear
from .metrics import Metrics, compute_metrics
from .nn.net import EncoderClassifier, UNet, UNetConfig, net_from_weights
from .nn.optim import make_optimizer, optimizer_step, plateau_scheduler_step
from .util import rng_from


@dataclass(frozen=True)
class TrainConfig:
    phase: str                      # "pretrain" | "finetune"
    batch_size: int
    initial_lr: float
    optimizer: str                  # "sgd" | "adadelta"
    epochs: int = 100
    label_fraction: float = 1.0
    augment: bool = False
    input_size: int = 224
    seed: int = 0
    momentum: float = 0.0
    patience: int = 10
    factor: float = 0.5
    min_lr: float = 1e-6
    val_fraction: float = 0.1
    threshold: float = 0.5
    stop_at: float | None = None    # early-stop once val metric reaches this

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ValueError("label_fraction must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


def pretrain_config(**overrides):
    """Restoration defaults: batch 4, SGD, lr 1e-3, no augmentation."""
    base = TrainConfig(phase="pretrain", batch_size=4, initial_lr=1e-3,
                       optimizer="sgd", augment=False)
    return replace(base, **overrides) if overrides else base


def finetune_config(**overrides):
    """Classification defaults: batch 16, Adadelta, lr 0.1, zoom/shear on."""
    base = TrainConfig(phase="finetune", batch_size=16, initial_lr=0.1,
                       optimizer="adadelta", augment=True)
    return replace(base, **overrides) if overrides else base


@dataclass
class TrainResult:
    weights: object                 # ModelWeights of the best epoch
    history: list                   # one dict per epoch
    step_losses: list = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = math.nan


def _load_norm(path, size):
    img = load_image(path)
    if img.shape != (size, size):
        img = resize_bilinear(img, size, size)
    return img


def _to_tensor(imgs):
    arr = np.stack([im.astype(np.float32) for im in imgs]) / np.float32(255.0)
    return arr[:, None, :, :]


def _split_validation(entries, config):
    """Deterministic hold-out when no validation manifest is given: every
    k-th entry (k from val_fraction) goes to validation."""
    k = max(2, int(round(1.0 / max(config.val_fraction, 1e-9))))
    val = [e for i, e in enumerate(entries) if i % k == k - 1]
    train = [e for i, e in enumerate(entries) if i % k != k - 1]
    if not val:
        val = entries[-1:]
        train = entries[:-1] or entries[-1:]
    return train, val


def _log_epoch(log_fh, row):
    if log_fh is not None:
        log_fh.write(json.dumps(row, sort_keys=True) + "\n")
        log_fh.flush()


def pretrain(train_manifest, config=None, model_config=None, val_manifest=None,
             log_path=None):
    """Train the restoration U-Net on (corrupted, clean) pairs with MSE.

    Monitors validation MSE (held out from the manifest when no validation
    manifest is supplied) and returns the best-epoch weights.
    """
    config = config or pretrain_config()
    model_config = model_config or UNetConfig()
    entries = list(train_manifest.entries)
    if not entries:
        raise ValueError("empty training manifest")
    if any("target" not in e for e in entries):
        raise ValueError("pretraining needs a restoration manifest (input/target pairs)")
    if val_manifest is not None:
        val_entries = list(val_manifest.entries)
    else:
        entries, val_entries = _split_validation(entries, config)

    size = config.input_size
    net = UNet(model_config, seed=config.seed)
    opt = make_optimizer(config.optimizer, config.initial_lr,
                         momentum=config.momentum, mode="min",
                         patience=config.patience, factor=config.factor,
                         min_lr=config.min_lr)

    def batch_tensors(batch):
        xs = _to_tensor([_load_norm(e["input"], size) for e in batch])
        ys = _to_tensor([_load_norm(e["target"], size) for e in batch])
        return xs, ys

    def val_mse():
        total = 0.0
        count = 0
        for i in range(0, len(val_entries), config.batch_size):
            xs, ys = batch_tensors(val_entries[i:i + config.batch_size])
            pred = net.forward(xs)
            total += float(np.sum((pred - ys) ** 2))
            count += pred.size
        return total / count

    result = TrainResult(weights=net.state(), history=[])
    best = math.inf
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            order = rng_from(config.seed, 0xE0, epoch).permutation(len(entries))
            epoch_losses = []
            for i in range(0, len(order), config.batch_size):
                batch = [entries[j] for j in order[i:i + config.batch_size]]
                xs, ys = batch_tensors(batch)
                loss, _, grads = net.forward_backward(xs, ys)
                optimizer_step(opt, net.params, grads)
                epoch_losses.append(loss)
            metric = val_mse()
            if metric < best:
                best = metric
                result.weights = net.state()
                result.best_epoch = epoch
                result.best_metric = metric
            row = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                   "val_metric": metric, "lr": opt.lr}
            result.history.append(row)
            result.step_losses.extend(epoch_losses)
            _log_epoch(log_fh, row)
            if config.stop_at is not None and metric <= config.stop_at:
                break
            plateau_scheduler_step(opt, metric)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result


def subsample_labeled(entries, fraction, seed):
    """Stratified, nested label-fraction subsampling.

    Each class keeps the first round(fraction * n_class) entries of one
    seeded per-class permutation, so smaller fractions are subsets of larger
    ones for the same seed. Raises if either class would end up empty.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if fraction == 1.0:
        return list(entries)
    keep = set()
    for cls in (0, 1):
        idxs = [i for i, e in enumerate(entries) if e["label"] == cls]
        if not idxs:
            raise ValueError(f"no entries of class {cls} to subsample")
        want = int(math.floor(len(idxs) * fraction + 0.5))
        if want == 0:
            raise ValueError(
                f"label_fraction {fraction} leaves no samples of class {cls}")
        perm = rng_from(seed, 0x5B, cls).permutation(len(idxs))
        keep.update(idxs[p] for p in perm[:want])
    return [e for i, e in enumerate(entries) if i in keep]


def finetune(encoder_weights, train_manifest, val_manifest, config=None,
             model_config=None, log_path=None):
    """Fine-tune encoder + classification head end-to-end with BCE.

    encoder_weights may be None (random init) or restoration-net weights
    whose encoder is transplanted. Training images get the random zoom/shear
    augmentation when configured; validation accuracy picks the checkpoint.
    """
    config = config or finetune_config()
    model_config = model_config or UNetConfig()
    entries = [e for e in train_manifest.entries]
    if not entries or any("label" not in e for e in entries):
        raise ValueError("fine-tuning needs a classification manifest (input/label)")
    val_entries = list(val_manifest.entries)
    if not val_entries or any("label" not in e for e in val_entries):
        raise ValueError("validation manifest must carry labels")
    entries = subsample_labeled(entries, config.label_fraction, config.seed)

    size = config.input_size
    net = EncoderClassifier(model_config, seed=config.seed)
    if encoder_weights is not None:
        net.load_encoder(encoder_weights)
    opt = make_optimizer(config.optimizer, config.initial_lr,
                         momentum=config.momentum, mode="max",
                         patience=config.patience, factor=config.factor,
                         min_lr=config.min_lr)

    val_imgs = _to_tensor([_load_norm(e["input"], size) for e in val_entries])
    val_labels = np.array([e["label"] for e in val_entries], dtype=np.float32)

    def val_accuracy():
        probs = predict_probs(net, val_imgs, config.batch_size)
        return float(np.mean((probs >= config.threshold) == (val_labels == 1)))

    result = TrainResult(weights=net.state(), history=[])
    best = -math.inf
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            rng = rng_from(config.seed, 0xA6, epoch)
            order = rng.permutation(len(entries))
            epoch_losses = []
            for i in range(0, len(order), config.batch_size):
                idxs = order[i:i + config.batch_size]
                imgs = []
                labels = []
                for j in idxs:
                    img = _load_norm(entries[j]["input"], size)
                    if config.augment:
                        zoom, shear = rng.uniform(0.8, 1.2, 2)
                        img = affine_augment(img, zoom, shear,
                                             seed=int(rng.integers(1 << 31)))
                    imgs.append(img)
                    labels.append(entries[j]["label"])
                xs = _to_tensor(imgs)
                ys = np.array(labels, dtype=np.float32)
                loss, _, grads = net.forward_backward(xs, ys)
                optimizer_step(opt, net.params, grads)
                epoch_losses.append(loss)
            metric = val_accuracy()
            if metric > best:
                best = metric
                result.weights = net.state()
                result.best_epoch = epoch
                result.best_metric = metric
            row = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                   "val_metric": metric, "lr": opt.lr}
            result.history.append(row)
            result.step_losses.extend(epoch_losses)
            _log_epoch(log_fh, row)
            if config.stop_at is not None and metric >= config.stop_at:
                break
            plateau_scheduler_step(opt, metric)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result


def predict_probs(net, tensor, batch_size=16):
    chunks = [net.forward(tensor[i:i + batch_size])
              for i in range(0, tensor.shape[0], batch_size)]
    return np.concatenate(chunks)


def evaluate_manifest(weights, manifest, input_size, batch_size=16, threshold=0.5):
    """Score a classification manifest; returns (Metrics, labels, probs)."""
    entries = list(manifest.entries)
    if not entries or any("label" not in e for e in entries):
        raise ValueError("evaluation needs a classification manifest")
    net = net_from_weights(weights)
    tensor = _to_tensor([_load_norm(e["input"], input_size) for e in entries])
    probs = predict_probs(net, tensor, batch_size)
    labels = np.array([e["label"] for e in entries])
    return compute_metrics(labels, probs.astype(np.float64), threshold), labels, probs


def repeat_finetune(encoder_weights, train_manifest, val_manifest, eval_manifest,
                    config, model_config=None, repeats=3):
    """The highest/average protocol: rerun fine-tuning with seeds
    seed, seed+1, ... and aggregate evaluation metrics per metric."""
    runs = []
    best_weights = None
    best_acc = -math.inf
    for r in range(repeats):
        cfg = replace(config, seed=config.seed + r)
        res = finetune(encoder_weights, train_manifest, val_manifest, cfg, model_config)
        m, _, _ = evaluate_manifest(res.weights, eval_manifest, cfg.input_size,
                                    cfg.batch_size, cfg.threshold)
        runs.append(m.to_dict())
        if res.best_metric > best_acc:
            best_acc = res.best_metric
            best_weights = res.weights
    keys = ("accuracy", "precision", "recall", "f1", "auc")
    report = {
        "runs": runs,
        "highest": {k: max(r[k] for r in runs) for k in keys},
        "average": {k: float(np.mean([r[k] for r in runs])) for k in keys},
    }
    return report, best_weights


def export_activations(weights, image, layer, input_size=None):
    """Render one layer's channel maps as a tiled grayscale grid.

    Channels are min-max normalized independently (flat channels render
    black) and tiled into a ceil(sqrt(C)) square grid.
    """
    net = net_from_weights(weights)
    if input_size:
        image = resize_bilinear(image, input_size, input_size)
    x = _to_tensor([image])
    capture = {}
    net.forward(x, capture=capture)
    if layer not in capture:
        raise KeyError(f"unknown layer {layer!r}; available: {net.activation_names()}")
    act = capture[layer][0]
    c, h, w = act.shape
    grid = int(math.ceil(math.sqrt(c)))
    canvas = np.zeros((grid * h, grid * w), dtype=np.uint8)
    for ch in range(c):
        a = act[ch]
        span = float(a.max() - a.min())
        if span > 0:
            tile = np.clip(np.floor((a - a.min()) / span * 255.0 + 0.5), 0, 255)
        else:
            tile = np.zeros_like(a)
        r, col = divmod(ch, grid)
        canvas[r * h:(r + 1) * h, col * w:(col + 1) * w] = tile.astype(np.uint8)
    return canvas


def sweep(p_values, m_values, normals, masks, bank, clf_train_manifest,
          clf_val_manifest, pre_config, ft_config, model_config, workdir,
          mask_threshold=100):
    """Grid over patch count P and dataset size M.

    Each cell regenerates the corrupted dataset, pretrains, fine-tunes, and
    evaluates on the validation manifest. Rows come back keyed by (P, M).
    """
    rows = []
    for p in p_values:
        for m in m_values:
            cell_dir = os.path.join(workdir, f"P{p}_M{m}")
            spec = CorruptionSpec(strategy="perlin", patches_per_image=p,
                                  seed=pre_config.seed)
            manifest = generate_dataset(normals, masks, spec, m, cell_dir,
                                        os.path.join(cell_dir, "restore.jsonl"),
                                        bank=bank, mask_threshold=mask_threshold)
            pre = pretrain(manifest, pre_config, model_config)
            ft = finetune(pre.weights, clf_train_manifest, clf_val_manifest,
                          ft_config, model_config)
            m_res, _, _ = evaluate_manifest(ft.weights, clf_val_manifest,
                                            ft_config.input_size,
                                            ft_config.batch_size, ft_config.threshold)
            rows.append({"P": int(p), "M": int(m), **m_res.to_dict()})
    return rows
