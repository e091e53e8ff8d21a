"""Finite-difference verification suite.

Every differentiable primitive and the full attention/loss composites are
checked against the 64-bit central-difference oracle over 20 seeds each.
Shapes stay tiny so the whole suite runs in seconds. Inputs for kinked ops
(relu) are nudged away from the kink so the oracle stays valid.
"""
from __future__ import annotations

from typing import Callable, List, Tuple

import numpy as np

from . import nn, tensor as T
from .attention import gem_affinity, gem_apply, lcm_affinity, lcm_apply
from .losses import LabelMap, LossWeights, TrainTargets, boundary_ce, cross_entropy, \
    ohem_cross_entropy, skeleton_mse, total_loss
from .nn import ConvParams, conv2d, make_conv, make_gc, make_ppm
from .tensor import Tensor, grad_check

SEEDS = 20
TOLERANCE = 1e-4

_REGISTRY: List[Tuple[str, Callable]] = []


def _case(name):
    def wrap(builder):
        _REGISTRY.append((name, builder))
        return builder

    return wrap


def _rand(rng, *shape):
    return rng.normal(0.0, 1.0, size=shape).astype(np.float32)


def _weighted_sum(t, rng):
    m = Tensor(_rand(rng, *t.data.shape).astype(t.data.dtype))
    return T.sum_all(T.mul(t, m))


# -- tensor primitives ------------------------------------------------------

@_case("tensor.add_broadcast")
def _(seed):
    rng = np.random.default_rng(seed)
    bias = Tensor(_rand(rng, 4, 1, 1))
    x = Tensor(_rand(rng, 1, 4, 5, 5))
    return lambda t: _weighted_sum(T.add(t, bias), np.random.default_rng(seed + 1)), x


@_case("tensor.mul_self")
def _(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 1, 3, 4, 4))
    return lambda t: T.sum_all(T.mul(t, t)), x


@_case("tensor.relu")
def _(seed):
    rng = np.random.default_rng(seed)
    raw = _rand(rng, 1, 4, 5, 5)
    raw += 0.05 * np.sign(raw)  # keep coordinates off the kink
    x = Tensor(raw)
    return lambda t: _weighted_sum(T.relu(t), np.random.default_rng(seed + 1)), x


@_case("tensor.scale_sub")
def _(seed):
    rng = np.random.default_rng(seed)
    other = Tensor(_rand(rng, 2, 6))
    x = Tensor(_rand(rng, 2, 6))
    return lambda t: T.sum_all(T.sub(T.scale(t, 1.7), other)), x


@_case("tensor.matmul_2d")
def _(seed):
    rng = np.random.default_rng(seed)
    b = Tensor(_rand(rng, 4, 3))
    x = Tensor(_rand(rng, 3, 4))
    return lambda t: _weighted_sum(T.matmul(t, b), np.random.default_rng(seed + 1)), x


@_case("tensor.matmul_batched")
def _(seed):
    rng = np.random.default_rng(seed)
    b = Tensor(_rand(rng, 2, 4, 3))
    x = Tensor(_rand(rng, 2, 3, 4))
    return lambda t: _weighted_sum(T.matmul(t, b), np.random.default_rng(seed + 1)), x


@_case("tensor.reshape_permute")
def _(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 1, 4, 3, 2))
    return (
        lambda t: _weighted_sum(T.permute(T.reshape(t, (4, 6)), (1, 0)), np.random.default_rng(seed + 1)),
        x,
    )


@_case("tensor.softmax")
def _(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 1, 5, 3, 3))
    return lambda t: _weighted_sum(T.softmax_along(t, 1), np.random.default_rng(seed + 1)), x


@_case("tensor.log_softmax")
def _(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 2, 6))
    return lambda t: _weighted_sum(T.log_softmax_along(t, 1), np.random.default_rng(seed + 1)), x


@_case("tensor.concat_mean")
def _(seed):
    rng = np.random.default_rng(seed)
    other = Tensor(_rand(rng, 1, 2, 3, 3))
    x = Tensor(_rand(rng, 1, 2, 3, 3))
    return (
        lambda t: _weighted_sum(T.mean_along(T.concat_channels([t, other]), 1), np.random.default_rng(seed + 1)),
        x,
    )


# -- nn ops -----------------------------------------------------------------

def _conv_setup(seed, stride=1, padding=1, dilation=1):
    rng = np.random.default_rng(seed)
    p = make_conv(rng, 2, 3, 3, 3, stride=stride, padding=padding, dilation=dilation)
    x = Tensor(_rand(rng, 1, 2, 4, 4))
    return p, x, rng


@_case("nnops.conv2d_input")
def _(seed):
    p, x, rng = _conv_setup(seed)
    return lambda t: _weighted_sum(conv2d(t, p), np.random.default_rng(seed + 1)), x


@_case("nnops.conv2d_strided_input")
def _(seed):
    p, x, rng = _conv_setup(seed, stride=2)
    return lambda t: _weighted_sum(conv2d(t, p), np.random.default_rng(seed + 1)), x


@_case("nnops.conv2d_dilated_input")
def _(seed):
    p, x, rng = _conv_setup(seed, padding=2, dilation=2)
    return lambda t: _weighted_sum(conv2d(t, p), np.random.default_rng(seed + 1)), x


@_case("nnops.conv2d_weight")
def _(seed):
    p, x, rng = _conv_setup(seed)

    def f(wt):
        q = ConvParams(wt, p.bias, stride=p.stride, padding=p.padding, dilation=p.dilation)
        return _weighted_sum(conv2d(x, q), np.random.default_rng(seed + 1))

    return f, p.weight


@_case("nnops.conv2d_bias")
def _(seed):
    p, x, rng = _conv_setup(seed)

    def f(bt):
        q = ConvParams(p.weight, bt, stride=p.stride, padding=p.padding, dilation=p.dilation)
        return _weighted_sum(conv2d(x, q), np.random.default_rng(seed + 1))

    return f, p.bias


@_case("nnops.gc_block")
def _(seed):
    rng = np.random.default_rng(seed)
    gc = make_gc(rng, 2, 3, 3)
    x = Tensor(_rand(rng, 1, 2, 4, 4))
    return lambda t: _weighted_sum(nn.gc_block(t, gc), np.random.default_rng(seed + 1)), x


@_case("nnops.pyramid_pooling")
def _(seed):
    rng = np.random.default_rng(seed)
    ppm = make_ppm(rng, 2, (1, 2))
    x = Tensor(_rand(rng, 1, 2, 4, 4))
    return lambda t: _weighted_sum(nn.pyramid_pooling(t, ppm), np.random.default_rng(seed + 1)), x


@_case("nnops.channel_shuffle")
def _(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 1, 4, 3, 3))
    return lambda t: _weighted_sum(nn.channel_shuffle(t, 2), np.random.default_rng(seed + 1)), x


@_case("nnops.upsample_bilinear")
def _(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 1, 2, 4, 4))
    return lambda t: _weighted_sum(nn.upsample(t, (6, 6), "bilinear"), np.random.default_rng(seed + 1)), x


@_case("nnops.downsample_bilinear")
def _(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 1, 2, 6, 6))
    return lambda t: _weighted_sum(nn.upsample(t, (3, 3), "bilinear"), np.random.default_rng(seed + 1)), x


@_case("nnops.upsample_nearest")
def _(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 1, 2, 4, 4))
    return lambda t: _weighted_sum(nn.upsample(t, (8, 8), "nearest"), np.random.default_rng(seed + 1)), x


@_case("nnops.adaptive_avg_pool")
def _(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 1, 3, 5, 5))
    return lambda t: _weighted_sum(nn.adaptive_avg_pool(t, 2, 2), np.random.default_rng(seed + 1)), x


# -- attention composites ---------------------------------------------------

def _lcm_setup(seed):
    rng = np.random.default_rng(seed)
    gc = make_gc(rng, 4, 3, 3)
    enc = make_conv(rng, 4, 4, 1, 1)
    s = Tensor(_rand(rng, 1, 4, 3, 3))
    p = Tensor(_rand(rng, 1, 4, 3, 3))
    return gc, enc, s, p


@_case("lcm.composite_wrt_skeleton")
def _(seed):
    gc, enc, s, p = _lcm_setup(seed)
    return lambda t: T.sum_all(lcm_apply(p, lcm_affinity(t, p, gc, enc))), s


@_case("lcm.composite_wrt_parsing")
def _(seed):
    gc, enc, s, p = _lcm_setup(seed)
    return lambda t: T.sum_all(lcm_apply(t, lcm_affinity(s, t, gc, enc))), p


def _gem_setup(seed):
    rng = np.random.default_rng(seed)
    enc_p = make_conv(rng, 4, 3, 1, 1)
    enc_e = make_conv(rng, 4, 3, 1, 1)
    enc_k = make_conv(rng, 4, 3, 1, 1)
    fuse = make_conv(rng, 7, 4, 1, 1)
    p = Tensor(_rand(rng, 1, 4, 3, 3))
    e = Tensor(_rand(rng, 1, 4, 3, 3))
    return enc_p, enc_e, enc_k, fuse, p, e


@_case("gem.composite_wrt_parsing")
def _(seed):
    enc_p, enc_e, enc_k, fuse, p, e = _gem_setup(seed)
    return lambda t: T.sum_all(gem_apply(t, gem_affinity(t, e, enc_p, enc_e), enc_k, fuse)), p


@_case("gem.composite_wrt_boundary")
def _(seed):
    enc_p, enc_e, enc_k, fuse, p, e = _gem_setup(seed)
    return lambda t: T.sum_all(gem_apply(p, gem_affinity(p, t, enc_p, enc_e), enc_k, fuse)), e


@_case("lcm.gem_combined")
def _(seed):
    gc, enc, s, p = _lcm_setup(seed)
    enc_p, enc_e, enc_k, fuse, _, e = _gem_setup(seed + 1000)

    def f(t):
        left = lcm_apply(t, lcm_affinity(s, t, gc, enc))
        right = gem_apply(t, gem_affinity(t, e, enc_p, enc_e), enc_k, fuse)
        return T.sum_all(T.concat_channels([left, right]))

    return f, p


# -- losses -----------------------------------------------------------------

def _labels(rng, b, k, h, w):
    lab = rng.integers(0, k, size=(b, h, w))
    return LabelMap(lab, num_classes=k)


@_case("losses.cross_entropy")
def _(seed):
    rng = np.random.default_rng(seed)
    target = _labels(rng, 1, 4, 3, 3)
    target.data[0, 0, 0] = target.ignore_index
    x = Tensor(_rand(rng, 1, 4, 3, 3))
    return lambda t: cross_entropy(t, target), x


@_case("losses.ohem_cross_entropy")
def _(seed):
    rng = np.random.default_rng(seed)
    target = _labels(rng, 1, 4, 3, 3)
    w = LossWeights(ohem_keep_fraction=0.5, ohem_min_kept=1)
    x = Tensor(_rand(rng, 1, 4, 3, 3))
    return lambda t: ohem_cross_entropy(t, target, w), x


@_case("losses.boundary_ce")
def _(seed):
    rng = np.random.default_rng(seed)
    target = _labels(rng, 1, 2, 3, 3)
    w = LossWeights()
    x = Tensor(_rand(rng, 1, 2, 3, 3))
    return lambda t: boundary_ce(t, target, w), x


@_case("losses.skeleton_mse")
def _(seed):
    rng = np.random.default_rng(seed)
    gt = _rand(rng, 1, 2, 3, 3)
    x = Tensor(_rand(rng, 1, 2, 3, 3))
    return lambda t: skeleton_mse(t, gt), x


@_case("losses.total_loss")
def _(seed):
    rng = np.random.default_rng(seed)
    labels = _labels(rng, 1, 4, 3, 3)
    boundary = _labels(rng, 1, 2, 3, 3)
    heat = _rand(rng, 1, 2, 3, 3)
    targets = TrainTargets(labels=labels, boundary=boundary, heatmaps=heat)
    w = LossWeights(alpha=1.0, beta=2.0, ohem_keep_fraction=0.5, ohem_min_kept=1)
    to_bd = make_conv(rng, 4, 2, 1, 1)
    to_heat = make_conv(rng, 4, 2, 1, 1)
    x = Tensor(_rand(rng, 1, 4, 3, 3))

    def f(t):
        loss, _ = total_loss(t, T.scale(t, 1.3), conv2d(t, to_bd), conv2d(t, to_heat), targets, w)
        return loss

    return f, x


def run_suite(module: str = "all", seeds: int = SEEDS):
    """Run the selected group; returns [(case name, max error over seeds)]."""
    if module == "all":
        cases = _REGISTRY
    elif module == "lcm":
        cases = [c for c in _REGISTRY if c[0].startswith("lcm.")]
    elif module == "gem":
        cases = [c for c in _REGISTRY if c[0].startswith("gem.")]
    else:
        cases = [c for c in _REGISTRY if c[0].startswith(module + ".")]
    results = []
    for name, builder in cases:
        worst = 0.0
        for seed in range(seeds):
            f, x = builder(seed)
            worst = max(worst, grad_check(f, x))
        results.append((name, worst))
    return results
