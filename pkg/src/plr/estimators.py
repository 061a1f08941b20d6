"""scikit-learn style wrappers around the pipeline's core algorithms.

The three corruption strategies are stateless transformers over image
batches; the restoration network and the classifier are estimators with the
usual fit/transform/predict surface, so they drop into sklearn pipelines,
grid search, and clone(). Arrays in, arrays out: a batch is either an
(n, H, W) uint8 array or a list of (H, W) uint8 images.
"""

import math
from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .corrupt import gaussian_blur, local_shuffle, paste_patches
from .image import affine_augment, check_gray, derive_lung_mask
from .nn.net import EncoderClassifier, UNet, UNetConfig
from .nn.optim import make_optimizer, optimizer_step, plateau_scheduler_step
from .nn.weights import ModelWeights, load_weights
from .patches import PatchBank, load_bank
from .util import rng_from


def check_image_batch(X):
    """Validate a batch of grayscale images; returns a list of (H, W) uint8."""
    if isinstance(X, np.ndarray):
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3:
            raise ValueError(f"expected (n, H, W) image batch, got shape {X.shape}")
        return [check_gray(X[i]) for i in range(X.shape[0])]
    imgs = [check_gray(im) for im in X]
    if not imgs:
        raise ValueError("empty image batch")
    return imgs


def _as_float_batch(X):
    """Images to a float32 (n, 1, H, W) tensor in [0, 1].

    uint8 inputs are rescaled by 1/255; float inputs must already be scaled.
    """
    if isinstance(X, np.ndarray) and X.dtype != np.uint8:
        arr = np.asarray(X, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ValueError(f"expected (n, H, W) image batch, got shape {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("float image batches must already be scaled to [0, 1]")
    else:
        arr = np.stack(check_image_batch(X)).astype(np.float32) / np.float32(255.0)
    return arr[:, None, :, :]


def _check_binary_labels(y, n):
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    classes = np.unique(y)
    if not np.isin(classes, [0, 1]).all():
        raise ValueError(f"labels must be binary 0/1, got classes {classes}")
    return y.astype(np.int64), classes


class PerlinPasteCorruptor(TransformerMixin, BaseEstimator):
    """Paste bright noise patches into each image's lung region.

    `bank` is a PatchBank or a path to a saved one. Masks come from the
    threshold heuristic; pass precomputed masks to transform() to override.
    """

    def __init__(self, bank=None, patches_per_image=30, paste_mode="replace",
                 mask_threshold=100, seed=0):
        self.bank = bank
        self.patches_per_image = patches_per_image
        self.paste_mode = paste_mode
        self.mask_threshold = mask_threshold
        self.seed = seed

    def fit(self, X=None, y=None):
        self._resolve_bank()
        return self

    def _resolve_bank(self):
        if isinstance(self.bank, PatchBank):
            return self.bank
        if isinstance(self.bank, (str, bytes)):
            return load_bank(self.bank)
        raise ValueError("bank must be a PatchBank or a path to one")

    def transform(self, X, masks=None):
        bank = self._resolve_bank()
        imgs = check_image_batch(X)
        if masks is not None and len(masks) != len(imgs):
            raise ValueError("masks must align with images")
        out = []
        for i, img in enumerate(imgs):
            mask = masks[i] if masks is not None else derive_lung_mask(
                img, self.mask_threshold)
            out.append(paste_patches(img, mask, bank, self.patches_per_image,
                                     seed=self.seed + i, mode=self.paste_mode))
        return np.stack(out)


class GaussianBlurCorruptor(TransformerMixin, BaseEstimator):
    """Blur whole images with a small separable Gaussian (sigma=None -> auto)."""

    def __init__(self, kernel_size=5, sigma=None):
        self.kernel_size = kernel_size
        self.sigma = sigma

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return np.stack([gaussian_blur(im, self.kernel_size, self.sigma)
                         for im in check_image_batch(X)])


class LocalShuffleCorruptor(TransformerMixin, BaseEstimator):
    """Shuffle pixels inside each cell of a grid x grid partition."""

    def __init__(self, grid=10, seed=0):
        self.grid = grid
        self.seed = seed

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return np.stack([local_shuffle(im, self.grid, seed=self.seed + i)
                         for i, im in enumerate(check_image_batch(X))])


class RestorationPretrainer(TransformerMixin, BaseEstimator):
    """Fit the restoration U-Net on (corrupted, clean) image pairs.

    After fitting, transform() maps images to their restorations (float in
    (0, 1)) and `weights_` carries the trained tensors for transplanting
    into a classifier.
    """

    def __init__(self, levels=3, base_channels=8, epochs=10, batch_size=4,
                 lr=1e-3, optimizer="sgd", momentum=0.0, patience=10,
                 factor=0.5, min_lr=1e-6, val_fraction=0.1, seed=0):
        self.levels = levels
        self.base_channels = base_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.momentum = momentum
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.val_fraction = val_fraction
        self.seed = seed

    def _config(self):
        return UNetConfig(levels=self.levels, base_channels=self.base_channels)

    def fit(self, X, y):
        xs = _as_float_batch(X)
        ys = _as_float_batch(y)
        if xs.shape != ys.shape:
            raise ValueError(f"input/target shape mismatch: {xs.shape} vs {ys.shape}")
        n = xs.shape[0]
        k = max(2, int(round(1.0 / max(self.val_fraction, 1e-9))))
        val_idx = np.arange(n) % k == k - 1
        if not val_idx.any():
            val_idx[-1] = True
        train_idx = np.flatnonzero(~val_idx) if (~val_idx).any() else np.flatnonzero(val_idx)
        val_x, val_y = xs[val_idx], ys[val_idx]

        net = UNet(self._config(), seed=self.seed)
        opt = make_optimizer(self.optimizer, self.lr, momentum=self.momentum,
                             mode="min", patience=self.patience,
                             factor=self.factor, min_lr=self.min_lr)
        best = math.inf
        self.history_ = []
        self.step_losses_ = []
        for epoch in range(self.epochs):
            order = rng_from(self.seed, 0xE5, epoch).permutation(train_idx)
            losses = []
            for i in range(0, len(order), self.batch_size):
                sel = order[i:i + self.batch_size]
                loss, _, grads = net.forward_backward(xs[sel], ys[sel])
                optimizer_step(opt, net.params, grads)
                losses.append(loss)
            pred = np.concatenate([net.forward(val_x[i:i + self.batch_size])
                                   for i in range(0, val_x.shape[0], self.batch_size)])
            metric = float(np.mean((pred - val_y) ** 2))
            if metric < best:
                best = metric
                self.weights_ = net.state()
                self.best_epoch_ = epoch
            self.history_.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                                  "val_metric": metric, "lr": opt.lr})
            self.step_losses_.extend(losses)
            plateau_scheduler_step(opt, metric)
        self.best_val_mse_ = best
        return self

    def transform(self, X):
        if not hasattr(self, "weights_"):
            raise NotFittedError("fit the restorer before calling transform")
        net = UNet(self._config())
        net.load_state(self.weights_)
        xs = _as_float_batch(X)
        out = np.concatenate([net.forward(xs[i:i + self.batch_size])
                              for i in range(0, xs.shape[0], self.batch_size)])
        return out[:, 0]


class LesionClassifier(ClassifierMixin, BaseEstimator):
    """Encoder + GAP + FC head binary classifier.

    `encoder_weights` (ModelWeights or path) warm-starts the convolutional
    trunk from a fitted restoration net; None trains from random init.
    """

    def __init__(self, levels=3, base_channels=8, fc_units=512, epochs=20,
                 batch_size=16, lr=0.1, optimizer="adadelta", momentum=0.0,
                 patience=10, factor=0.5, min_lr=1e-6, encoder_weights=None,
                 augment=False, threshold=0.5, seed=0):
        self.levels = levels
        self.base_channels = base_channels
        self.fc_units = fc_units
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.momentum = momentum
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.encoder_weights = encoder_weights
        self.augment = augment
        self.threshold = threshold
        self.seed = seed

    def _config(self):
        return UNetConfig(levels=self.levels, base_channels=self.base_channels,
                          fc_units=self.fc_units)

    def fit(self, X, y, X_val=None, y_val=None):
        imgs = check_image_batch(X)
        y, classes = _check_binary_labels(y, len(imgs))
        if len(classes) < 2:
            raise ValueError("need both classes present to fit the classifier")
        self.classes_ = np.array([0, 1])

        net = EncoderClassifier(self._config(), seed=self.seed)
        if self.encoder_weights is not None:
            enc = self.encoder_weights
            if isinstance(enc, (str, bytes)):
                enc = load_weights(enc)
            if not isinstance(enc, ModelWeights):
                raise ValueError("encoder_weights must be ModelWeights or a path")
            net.load_encoder(enc)
        opt = make_optimizer(self.optimizer, self.lr, momentum=self.momentum,
                             mode="max", patience=self.patience,
                             factor=self.factor, min_lr=self.min_lr)

        have_val = X_val is not None and y_val is not None
        if have_val:
            val_t = _as_float_batch(X_val)
            val_y = np.asarray(y_val)
        best = -math.inf
        self.history_ = []
        for epoch in range(self.epochs):
            rng = rng_from(self.seed, 0xF7, epoch)
            order = rng.permutation(len(imgs))
            losses = []
            for i in range(0, len(order), self.batch_size):
                sel = order[i:i + self.batch_size]
                batch = []
                for j in sel:
                    img = imgs[j]
                    if self.augment:
                        zoom, shear = rng.uniform(0.8, 1.2, 2)
                        img = affine_augment(img, zoom, shear,
                                             seed=int(rng.integers(1 << 31)))
                    batch.append(img)
                xs = _as_float_batch(batch)
                ys = y[sel].astype(np.float32)
                loss, _, grads = net.forward_backward(xs, ys)
                optimizer_step(opt, net.params, grads)
                losses.append(loss)
            row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "lr": opt.lr}
            if have_val:
                probs = np.concatenate([net.forward(val_t[i:i + self.batch_size])
                                        for i in range(0, val_t.shape[0], self.batch_size)])
                acc = float(np.mean((probs >= self.threshold) == (val_y == 1)))
                row["val_metric"] = acc
                if acc > best:
                    best = acc
                    self.weights_ = net.state()
                    self.best_epoch_ = epoch
                plateau_scheduler_step(opt, acc)
            self.history_.append(row)
        if not have_val:
            self.weights_ = net.state()
            self.best_epoch_ = self.epochs - 1
        return self

    def _net(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("fit the classifier before predicting")
        net = EncoderClassifier(self._config())
        net.load_state(self.weights_)
        return net

    def predict_proba(self, X):
        net = self._net()
        xs = _as_float_batch(X)
        p1 = np.concatenate([net.forward(xs[i:i + self.batch_size])
                             for i in range(0, xs.shape[0], self.batch_size)])
        p1 = p1.astype(np.float64)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(np.int64)
