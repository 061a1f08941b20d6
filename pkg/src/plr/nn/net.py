"""The two fixed architectures: restoration U-Net and encoder classifier.

Both share the same encoder (stacks of 3x3 conv + ReLU, max-pooled between
levels, channel width doubling per level). The U-Net adds a mirror decoder
with nearest-neighbor upsampling and skip concatenations plus a 1x1
conv + sigmoid head; the classifier adds global average pooling and a
512-unit FC layer before the sigmoid output. Backward passes are written
out explicitly against the op-level gradients.
"""

import re
from dataclasses import dataclass

import numpy as np

from ..errors import FingerprintMismatchError
from ..util import rng_from
from .ops import (
    bce_loss,
    concat_channels_backward,
    concat_channels_forward,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    global_avg_pool_backward,
    global_avg_pool_forward,
    maxpool2_backward,
    maxpool2_forward,
    mse_loss,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
    upsample_nearest2_backward,
    upsample_nearest2_forward,
)
from .weights import DTYPE_TAGS, ModelWeights


@dataclass(frozen=True)
class UNetConfig:
    """Faithful scale is levels=5/base=64 (a 10-conv encoder); desk runs
    use levels=3/base=8 to keep CPU time sane."""

    levels: int = 5
    base_channels: int = 64
    convs_per_level: int = 2
    kernel: int = 3
    in_channels: int = 1
    fc_units: int = 512

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 levels for an encoder-decoder")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")

    def channels(self, level):
        return self.base_channels * (2 ** level)

    def encoder_fingerprint(self):
        return (f"enc(levels={self.levels},base={self.base_channels},"
                f"convs={self.convs_per_level},kernel={self.kernel},in={self.in_channels})")

    def spatial_divisor(self):
        return 2 ** (self.levels - 1)


_ENC_RE = re.compile(r"enc\(levels=(\d+),base=(\d+),convs=(\d+),kernel=(\d+),in=(\d+)\)")


def _config_from_fingerprint(fp):
    m = re.fullmatch(r"(unet|clf)\[(enc\([^)]*\))\](?:fc=(\d+))?", fp)
    if not m:
        raise FingerprintMismatchError(f"unparseable architecture fingerprint {fp!r}")
    kind, enc_fp, fc = m.group(1), m.group(2), m.group(3)
    em = _ENC_RE.fullmatch(enc_fp)
    if not em:
        raise FingerprintMismatchError(f"unparseable encoder fingerprint {enc_fp!r}")
    levels, base, convs, kernel, in_ch = (int(g) for g in em.groups())
    cfg = UNetConfig(levels=levels, base_channels=base, convs_per_level=convs,
                     kernel=kernel, in_channels=in_ch,
                     fc_units=int(fc) if fc else 512)
    return kind, cfg


def _kaiming(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _init_encoder(params, cfg, rng, dtype):
    k = cfg.kernel
    for lv in range(cfg.levels):
        for ci in range(cfg.convs_per_level):
            if ci == 0:
                in_ch = cfg.in_channels if lv == 0 else cfg.channels(lv - 1)
            else:
                in_ch = cfg.channels(lv)
            out_ch = cfg.channels(lv)
            params[f"enc{lv}_conv{ci}_w"] = _kaiming(rng, (out_ch, in_ch, k, k),
                                                     in_ch * k * k, dtype)
            params[f"enc{lv}_conv{ci}_b"] = np.zeros(out_ch, dtype=dtype)


def _encoder_forward(params, cfg, x, capture=None):
    """Returns (bottleneck, per-level pre-pool activations, caches)."""
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ValueError(f"expected (B,{cfg.in_channels},H,W) input, got {x.shape}")
    div = cfg.spatial_divisor()
    if x.shape[2] % div or x.shape[3] % div:
        raise ValueError(f"spatial dims {x.shape[2:]} not divisible by {div}")
    h = x
    skips = []
    caches = []
    conv_idx = 0
    for lv in range(cfg.levels):
        level = []
        for ci in range(cfg.convs_per_level):
            name = f"enc{lv}_conv{ci}"
            h, conv_cache = conv2d_forward(h, params[name + "_w"], params[name + "_b"])
            h, mask = relu_forward(h)
            conv_idx += 1
            if capture is not None:
                capture[f"conv_{conv_idx}"] = h
            level.append((name, conv_cache, mask))
        skips.append(h)
        pool_cache = None
        if lv < cfg.levels - 1:
            h, pool_cache = maxpool2_forward(h)
        caches.append((level, pool_cache))
    return h, skips, caches


def _encoder_backward(cfg, caches, d_bottleneck, d_skips=None):
    """Backprop through the encoder.

    d_bottleneck flows into the deepest level's output; d_skips[lv] (optional)
    adds the gradient each skip connection sends back to level lv.
    """
    grads = {}
    g = d_bottleneck
    for lv in range(cfg.levels - 1, -1, -1):
        level, pool_cache = caches[lv]
        if lv == cfg.levels - 1:
            cur = g
        else:
            cur = maxpool2_backward(g, pool_cache)
            if d_skips is not None and d_skips[lv] is not None:
                cur = cur + d_skips[lv]
        for name, conv_cache, mask in reversed(level):
            cur = relu_backward(cur, mask)
            cur, dw, db = conv2d_backward(cur, conv_cache)
            grads[name + "_w"] = dw
            grads[name + "_b"] = db
        g = cur
    return grads, g


class UNet:
    """Restoration network: encoder, mirror decoder with skips, sigmoid head."""

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config or UNetConfig()
        self.dtype = np.dtype(dtype)
        cfg = self.config
        rng = rng_from(seed, 0x11E7)
        params = {}
        _init_encoder(params, cfg, rng, self.dtype)
        k = cfg.kernel
        for lv in range(cfg.levels - 2, -1, -1):
            for ci in range(cfg.convs_per_level):
                in_ch = (cfg.channels(lv + 1) + cfg.channels(lv)) if ci == 0 else cfg.channels(lv)
                out_ch = cfg.channels(lv)
                params[f"dec{lv}_conv{ci}_w"] = _kaiming(rng, (out_ch, in_ch, k, k),
                                                         in_ch * k * k, self.dtype)
                params[f"dec{lv}_conv{ci}_b"] = np.zeros(out_ch, dtype=self.dtype)
        params["head_w"] = _kaiming(rng, (1, cfg.channels(0), 1, 1), cfg.channels(0), self.dtype)
        params["head_b"] = np.zeros(1, dtype=self.dtype)
        self.params = params

    def fingerprint(self):
        return f"unet[{self.config.encoder_fingerprint()}]"

    def _forward(self, x, capture=None, want_caches=False):
        cfg = self.config
        p = self.params
        h, skips, enc_caches = _encoder_forward(p, cfg, x, capture)
        dec_caches = []
        for lv in range(cfg.levels - 2, -1, -1):
            h, up_shape = upsample_nearest2_forward(h)
            h, split = concat_channels_forward(h, skips[lv])
            convs = []
            for ci in range(cfg.convs_per_level):
                name = f"dec{lv}_conv{ci}"
                h, conv_cache = conv2d_forward(h, p[name + "_w"], p[name + "_b"])
                h, mask = relu_forward(h)
                if capture is not None:
                    capture[name] = h
                convs.append((name, conv_cache, mask))
            dec_caches.append((lv, up_shape, split, convs))
        z, head_cache = conv2d_forward(h, p["head_w"], p["head_b"])
        y, y_sig = sigmoid_forward(z)
        if capture is not None:
            capture["head"] = y
        if not want_caches:
            return y, None
        return y, (enc_caches, dec_caches, head_cache, y_sig)

    def forward(self, x, capture=None):
        y, _ = self._forward(x, capture=capture)
        return y

    def forward_backward(self, x, target):
        """One restoration step: returns (mse loss, prediction, grads by name)."""
        cfg = self.config
        y, caches = self._forward(x, want_caches=True)
        enc_caches, dec_caches, head_cache, y_sig = caches
        loss, dy = mse_loss(y, target)

        grads = {}
        d = sigmoid_backward(dy, y_sig)
        d, dw, db = conv2d_backward(d, head_cache)
        grads["head_w"] = dw
        grads["head_b"] = db

        d_skips = [None] * cfg.levels
        for lv, up_shape, split, convs in reversed(dec_caches):
            for name, conv_cache, mask in reversed(convs):
                d = relu_backward(d, mask)
                d, dw, db = conv2d_backward(d, conv_cache)
                grads[name + "_w"] = dw
                grads[name + "_b"] = db
            d_up, d_skip = concat_channels_backward(d, split)
            d_skips[lv] = d_skip if d_skips[lv] is None else d_skips[lv] + d_skip
            d = upsample_nearest2_backward(d_up, up_shape)

        enc_grads, _ = _encoder_backward(cfg, enc_caches, d, d_skips)
        grads.update(enc_grads)
        return loss, y, grads

    def state(self):
        return ModelWeights(tensors={k: v.copy() for k, v in self.params.items()},
                            arch=self.fingerprint(), dtype=DTYPE_TAGS[self.dtype])

    def load_state(self, weights):
        _load_into(self, weights)

    def activation_names(self):
        cfg = self.config
        names = [f"conv_{i + 1}" for i in range(cfg.levels * cfg.convs_per_level)]
        names += [f"dec{lv}_conv{ci}" for lv in range(cfg.levels - 2, -1, -1)
                  for ci in range(cfg.convs_per_level)]
        return names + ["head"]


class EncoderClassifier:
    """Encoder + GAP + FC(fc_units) + ReLU + FC(1) + sigmoid."""

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config or UNetConfig()
        self.dtype = np.dtype(dtype)
        cfg = self.config
        rng = rng_from(seed, 0xC1F)
        params = {}
        _init_encoder(params, cfg, rng, self.dtype)
        feat = cfg.channels(cfg.levels - 1)
        params["fc1_w"] = _kaiming(rng, (cfg.fc_units, feat), feat, self.dtype)
        params["fc1_b"] = np.zeros(cfg.fc_units, dtype=self.dtype)
        params["fc2_w"] = _kaiming(rng, (1, cfg.fc_units), cfg.fc_units, self.dtype)
        params["fc2_b"] = np.zeros(1, dtype=self.dtype)
        self.params = params

    def fingerprint(self):
        return f"clf[{self.config.encoder_fingerprint()}]fc={self.config.fc_units}"

    def _forward(self, x, capture=None, want_caches=False):
        p = self.params
        bottleneck, _, enc_caches = _encoder_forward(p, self.config, x, capture)
        pooled, gap_shape = global_avg_pool_forward(bottleneck)
        f1, fc1_cache = dense_forward(pooled, p["fc1_w"], p["fc1_b"])
        r1, mask1 = relu_forward(f1)
        f2, fc2_cache = dense_forward(r1, p["fc2_w"], p["fc2_b"])
        y, y_sig = sigmoid_forward(f2[:, 0])
        if not want_caches:
            return y, None
        return y, (enc_caches, gap_shape, fc1_cache, mask1, fc2_cache, y_sig)

    def forward(self, x, capture=None):
        """Per-sample probabilities in (0, 1), shape (B,)."""
        y, _ = self._forward(x, capture=capture)
        return y

    def forward_backward(self, x, labels):
        """One classification step: returns (bce loss, probs, grads by name)."""
        y, caches = self._forward(x, want_caches=True)
        enc_caches, gap_shape, fc1_cache, mask1, fc2_cache, y_sig = caches
        loss, dy = bce_loss(y, labels)

        grads = {}
        d = sigmoid_backward(dy, y_sig)[:, None]
        d, dw, db = dense_backward(d, fc2_cache)
        grads["fc2_w"] = dw
        grads["fc2_b"] = db
        d = relu_backward(d, mask1)
        d, dw, db = dense_backward(d, fc1_cache)
        grads["fc1_w"] = dw
        grads["fc1_b"] = db
        d = global_avg_pool_backward(d, gap_shape)
        enc_grads, _ = _encoder_backward(self.config, enc_caches, d)
        grads.update(enc_grads)
        return loss, y, grads

    def encoder_activations(self, x):
        capture = {}
        _encoder_forward(self.params, self.config, x, capture)
        return capture

    def load_encoder(self, weights):
        """Transplant encoder tensors from a restoration net's weights."""
        own_fp = self.config.encoder_fingerprint()
        _, other_cfg = _config_from_fingerprint(weights.arch)
        if other_cfg.encoder_fingerprint() != own_fp:
            raise FingerprintMismatchError(
                f"encoder mismatch: classifier wants {own_fp}, "
                f"weights carry {other_cfg.encoder_fingerprint()}")
        for name, tensor in weights.tensors.items():
            if name.startswith("enc"):
                if self.params[name].shape != tensor.shape:
                    raise FingerprintMismatchError(f"shape mismatch for {name}")
                self.params[name] = tensor.astype(self.dtype).copy()

    def state(self):
        return ModelWeights(tensors={k: v.copy() for k, v in self.params.items()},
                            arch=self.fingerprint(), dtype=DTYPE_TAGS[self.dtype])

    def load_state(self, weights):
        _load_into(self, weights)

    def activation_names(self):
        cfg = self.config
        return [f"conv_{i + 1}" for i in range(cfg.levels * cfg.convs_per_level)]


def _load_into(net, weights):
    if weights.arch != net.fingerprint():
        raise FingerprintMismatchError(
            f"weights are for {weights.arch!r}, net is {net.fingerprint()!r}")
    missing = set(net.params) ^ set(weights.tensors)
    if missing:
        raise FingerprintMismatchError(f"tensor name mismatch: {sorted(missing)}")
    for name, tensor in weights.tensors.items():
        if net.params[name].shape != tensor.shape:
            raise FingerprintMismatchError(f"shape mismatch for {name}")
        net.params[name] = tensor.astype(net.dtype).copy()


def net_from_weights(weights, dtype=None):
    """Rebuild the right architecture from a weight file's fingerprint."""
    kind, cfg = _config_from_fingerprint(weights.arch)
    dtype = dtype or {"f32": np.float32, "f64": np.float64}[weights.dtype]
    net = UNet(cfg, dtype=dtype) if kind == "unet" else EncoderClassifier(cfg, dtype=dtype)
    net.load_state(weights)
    return net
