"""Finite-difference verification of every analytic gradient.

Each registered check builds small random float64 tensors, projects the op
output onto a random direction to get a scalar objective, and compares the
analytic gradient against central differences (h = 1e-6). Piecewise-linear
ops (relu, maxpool) are sampled away from their kinks, where the derivative
is defined. The reported figure is

    err = |analytic - numeric| / max(1, |analytic|, |numeric|)

i.e. relative for large entries, absolute near zero.
"""

import zlib

import numpy as np

from . import ops
from .net import EncoderClassifier, UNet, UNetConfig

FD_STEP = 1e-6


def _rel_err(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _numeric_grad(f, x, h=FD_STEP):
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def _away_from(rng, shape, margin=0.05):
    # uniform magnitudes in [margin, 1.5] with random sign: keeps relu and
    # pooling comparisons away from their non-differentiable points
    mag = rng.uniform(margin + 0.05, 1.5, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)


def _check_conv2d(rng):
    bsz, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    h, w = rng.integers(3, 7), rng.integers(3, 7)
    x = rng.standard_normal((bsz, c, h, w))
    wt = rng.standard_normal((o, c, 3, 3))
    b = rng.standard_normal(o)
    r = rng.standard_normal((bsz, o, h, w))

    def obj(xv=None, wv=None, bv=None):
        out, _ = ops.conv2d_forward(x if xv is None else xv,
                                    wt if wv is None else wv,
                                    b if bv is None else bv)
        return float(np.sum(out * r))

    out, cache = ops.conv2d_forward(x, wt, b)
    dx, dw, db = ops.conv2d_backward(r, cache)
    return max(_rel_err(dx, _numeric_grad(lambda v: obj(xv=v), x)),
               _rel_err(dw, _numeric_grad(lambda v: obj(wv=v), wt)),
               _rel_err(db, _numeric_grad(lambda v: obj(bv=v), b)))


def _check_dense(rng):
    bsz, f, u = rng.integers(1, 5), rng.integers(1, 7), rng.integers(1, 5)
    x = rng.standard_normal((bsz, f))
    w = rng.standard_normal((u, f))
    b = rng.standard_normal(u)
    r = rng.standard_normal((bsz, u))

    def obj(xv=None, wv=None, bv=None):
        out, _ = ops.dense_forward(x if xv is None else xv,
                                   w if wv is None else wv,
                                   b if bv is None else bv)
        return float(np.sum(out * r))

    _, cache = ops.dense_forward(x, w, b)
    dx, dw, db = ops.dense_backward(r, cache)
    return max(_rel_err(dx, _numeric_grad(lambda v: obj(xv=v), x)),
               _rel_err(dw, _numeric_grad(lambda v: obj(wv=v), w)),
               _rel_err(db, _numeric_grad(lambda v: obj(bv=v), b)))


def _check_relu(rng):
    x = _away_from(rng, (2, 3, 4, 4))
    r = rng.standard_normal(x.shape)
    _, mask = ops.relu_forward(x)
    dx = ops.relu_backward(r, mask)
    return _rel_err(dx, _numeric_grad(lambda v: float(np.sum(ops.relu_forward(v)[0] * r)), x))


def _check_maxpool2(rng):
    # distinct window entries so the argmax is stable under the FD step
    x = rng.permutation(2 * 2 * 6 * 6).astype(np.float64).reshape(2, 2, 6, 6)
    x += rng.uniform(-0.2, 0.2, x.shape)
    r = rng.standard_normal((2, 2, 3, 3))
    _, cache = ops.maxpool2_forward(x)
    dx = ops.maxpool2_backward(r, cache)
    return _rel_err(dx, _numeric_grad(
        lambda v: float(np.sum(ops.maxpool2_forward(v)[0] * r)), x))


def _check_upsample(rng):
    x = rng.standard_normal((2, 3, 3, 4))
    r = rng.standard_normal((2, 3, 6, 8))
    _, shape = ops.upsample_nearest2_forward(x)
    dx = ops.upsample_nearest2_backward(r, shape)
    return _rel_err(dx, _numeric_grad(
        lambda v: float(np.sum(ops.upsample_nearest2_forward(v)[0] * r)), x))


def _check_concat(rng):
    a = rng.standard_normal((2, 2, 4, 4))
    b = rng.standard_normal((2, 3, 4, 4))
    r = rng.standard_normal((2, 5, 4, 4))
    _, split = ops.concat_channels_forward(a, b)
    da, db = ops.concat_channels_backward(r, split)
    err_a = _rel_err(da, _numeric_grad(
        lambda v: float(np.sum(ops.concat_channels_forward(v, b)[0] * r)), a))
    err_b = _rel_err(db, _numeric_grad(
        lambda v: float(np.sum(ops.concat_channels_forward(a, v)[0] * r)), b))
    return max(err_a, err_b)


def _check_gap(rng):
    x = rng.standard_normal((2, 4, 3, 5))
    r = rng.standard_normal((2, 4))
    _, shape = ops.global_avg_pool_forward(x)
    dx = ops.global_avg_pool_backward(r, shape)
    return _rel_err(dx, _numeric_grad(
        lambda v: float(np.sum(ops.global_avg_pool_forward(v)[0] * r)), x))


def _check_sigmoid(rng):
    x = rng.uniform(-4.0, 4.0, (3, 5))
    r = rng.standard_normal(x.shape)
    _, y = ops.sigmoid_forward(x)
    dx = ops.sigmoid_backward(r, y)
    return _rel_err(dx, _numeric_grad(
        lambda v: float(np.sum(ops.sigmoid_forward(v)[0] * r)), x))


def _check_mse(rng):
    pred = rng.standard_normal((2, 1, 4, 4))
    target = rng.standard_normal((2, 1, 4, 4))
    _, dpred = ops.mse_loss(pred, target)
    return _rel_err(dpred, _numeric_grad(lambda v: ops.mse_loss(v, target)[0], pred))


def _check_bce(rng):
    probs = rng.uniform(0.05, 0.95, 6)
    labels = rng.integers(0, 2, 6).astype(np.float64)
    _, dp = ops.bce_loss(probs, labels)
    return _rel_err(dp, _numeric_grad(lambda v: ops.bce_loss(v, labels)[0], probs))


def _sampled_weight_err(net, loss_of_params, grads, rng, n_entries=4,
                        kink_skip=1e-4):
    """FD on a handful of entries of every parameter tensor.

    The nets are piecewise smooth (relu kinks, pooling argmax switches): when
    the +-h interval straddles a kink, the central-difference error equals
    |f(x+h) + f(x-h) - 2 f(x)| / 2h exactly, so coordinates where that
    measure exceeds kink_skip are excluded rather than compared against a
    derivative that does not exist there.
    """
    f0 = loss_of_params()
    worst = 0.0
    for name, p in net.params.items():
        flat = p.ravel()
        picks = rng.choice(flat.size, size=min(n_entries, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + FD_STEP
            fp = loss_of_params()
            flat[i] = orig - FD_STEP
            fm = loss_of_params()
            flat[i] = orig
            if abs(fp + fm - 2.0 * f0) / (2.0 * FD_STEP) > kink_skip:
                continue
            numeric = (fp - fm) / (2.0 * FD_STEP)
            analytic = grads[name].ravel()[i]
            denom = max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def _check_unet_e2e(rng):
    cfg = UNetConfig(levels=3, base_channels=2)
    net = UNet(cfg, seed=int(rng.integers(1 << 30)), dtype=np.float64)
    x = rng.uniform(0.0, 1.0, (1, 1, 8, 8))
    target = rng.uniform(0.0, 1.0, (1, 1, 8, 8))
    _, _, grads = net.forward_backward(x, target)
    return _sampled_weight_err(
        net, lambda: float(ops.mse_loss(net.forward(x), target)[0]), grads, rng)


def _check_classifier_e2e(rng):
    cfg = UNetConfig(levels=3, base_channels=2, fc_units=8)
    net = EncoderClassifier(cfg, seed=int(rng.integers(1 << 30)), dtype=np.float64)
    x = rng.uniform(0.0, 1.0, (2, 1, 8, 8))
    labels = np.array([0.0, 1.0])
    _, _, grads = net.forward_backward(x, labels)
    return _sampled_weight_err(
        net, lambda: float(ops.bce_loss(net.forward(x), labels)[0]), grads, rng)


GRADCHECK_OPS = {
    "conv2d": (_check_conv2d, 1e-4),
    "dense": (_check_dense, 1e-4),
    "relu": (_check_relu, 1e-4),
    "maxpool2": (_check_maxpool2, 1e-4),
    "upsample_nearest2": (_check_upsample, 1e-4),
    "concat_channels": (_check_concat, 1e-4),
    "global_avg_pool": (_check_gap, 1e-4),
    "sigmoid": (_check_sigmoid, 1e-4),
    "mse_loss": (_check_mse, 1e-4),
    "bce_loss": (_check_bce, 1e-4),
    "unet_e2e": (_check_unet_e2e, 1e-3),
    "classifier_e2e": (_check_classifier_e2e, 1e-3),
}


def grad_check(op, trials=20, seed=0):
    """Max relative error for one registered op over `trials` random cases."""
    if op not in GRADCHECK_OPS:
        raise KeyError(f"unknown gradcheck op {op!r}; have {sorted(GRADCHECK_OPS)}")
    fn, _ = GRADCHECK_OPS[op]
    rng = np.random.default_rng(np.random.SeedSequence((seed, zlib.crc32(op.encode()))))
    # end-to-end checks are costly; a few trials cover all parameter tensors
    if op.endswith("_e2e"):
        trials = min(trials, 3)
    return max(fn(rng) for _ in range(trials))


def run_all_checks(trials=20, seed=0):
    """Return {op: (max_rel_err, tol, passed)} for every registered op."""
    report = {}
    for op, (_, tol) in GRADCHECK_OPS.items():
        err = grad_check(op, trials=trials, seed=seed)
        report[op] = (err, tol, err < tol)
    return report
