"""The two affinity attention operators.

The compression path builds a row-stochastic channel affinity between
skeleton-encoded maps and parsing features, then rescales each parsing
channel with a residual. The expansion path builds a column-stochastic
position-to-position affinity between parsing and boundary encodings and
mixes parsing content across positions through it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .nn import ConvParams, GCParams, conv2d, gc_block
from .tensor import (
    Tensor,
    add,
    concat_channels,
    matmul,
    mean_along,
    permute,
    reshape,
    softmax_along,
)

# dense (HW x HW) affinities get expensive fast; refuse silly inputs
MAX_POSITIONS = 1024


@dataclass
class ChannelAffinity:
    """Per-sample N x C matrices (stacked over the batch), rows sum to 1."""

    a: Tensor  # (B, N, C)
    compress_dim: int
    channels: int


@dataclass
class SpatialAffinity:
    """Per-sample HW x HW matrices (stacked over the batch), columns sum to 1."""

    g: Tensor  # (B, HW, HW)
    encode_dim: int
    spatial: tuple  # (H, W)


def lcm_affinity(skeleton_feat: Tensor, parsing_feat: Tensor,
                 gc: GCParams, enc: ConvParams) -> ChannelAffinity:
    """Channel affinity A[i, j] = softmax_j(<M_i, Phat_j>).

    M stacks the large-kernel skeleton encodings (N maps flattened to HW),
    Phat the 1x1-encoded parsing channels (HW per channel); each row of A
    is normalized over the C parsing channels.
    """
    if skeleton_feat.data.shape[0] != parsing_feat.data.shape[0] or \
            skeleton_feat.data.shape[2:] != parsing_feat.data.shape[2:]:
        raise DimensionError(
            f"skeleton {skeleton_feat.shape} and parsing {parsing_feat.shape} must share batch and spatial extents")
    b, c, h, w = parsing_feat.data.shape
    n = gc.out_channels
    m = reshape(gc_block(skeleton_feat, gc), (b, n, h * w))
    pe = reshape(conv2d(parsing_feat, enc), (b, c, h * w))
    phat = permute(pe, (0, 2, 1))  # (B, HW, C)
    a = softmax_along(matmul(m, phat), axis=2)
    return ChannelAffinity(a, compress_dim=n, channels=c)


def lcm_apply(parsing_feat: Tensor, aff: ChannelAffinity) -> Tensor:
    """Residual channel rescale: out_c = (1 + mean_i A[i, c]) * p_c."""
    b, c, h, w = parsing_feat.data.shape
    if aff.channels != c:
        raise DimensionError(f"affinity covers {aff.channels} channels, parsing feature has {c}")
    gate = add(reshape(mean_along(aff.a, axis=1), (b, c, 1, 1)), 1.0)
    return parsing_feat * gate


def gem_affinity(parsing_feat: Tensor, boundary_feat: Tensor,
                 enc_p: ConvParams, enc_e: ConvParams) -> SpatialAffinity:
    """Spatial affinity G[j, i] = softmax_j(<Pe_j, Ee_i>), column-normalized.

    Column i weighs every source position j of the parsing encoding by its
    agreement with the boundary encoding at i.
    """
    if parsing_feat.data.shape != boundary_feat.data.shape:
        raise DimensionError(
            f"parsing {parsing_feat.shape} and boundary {boundary_feat.shape} must share all extents")
    b, c, h, w = parsing_feat.data.shape
    if h * w > MAX_POSITIONS:
        raise ConfigurationError(f"{h}x{w} gives {h * w} positions; dense affinity is capped at {MAX_POSITIONS}")
    d = enc_p.weight.data.shape[0]
    pe = reshape(conv2d(parsing_feat, enc_p), (b, d, h * w))
    ee = reshape(conv2d(boundary_feat, enc_e), (b, d, h * w))
    logits = matmul(permute(pe, (0, 2, 1)), ee)  # (B, HW_src, HW_dst)
    g = softmax_along(logits, axis=1)
    return SpatialAffinity(g, encode_dim=d, spatial=(h, w))


def gem_apply(parsing_feat: Tensor, aff: SpatialAffinity,
              enc_k: ConvParams, fuse: ConvParams) -> Tensor:
    """Mix parsing content across positions: R = K . G, then fuse [P, R]."""
    b, c, h, w = parsing_feat.data.shape
    if aff.spatial != (h, w):
        raise DimensionError(f"affinity built for {aff.spatial}, parsing feature is {(h, w)}")
    d = enc_k.weight.data.shape[0]
    k = reshape(conv2d(parsing_feat, enc_k), (b, d, h * w))
    r = reshape(matmul(k, aff.g), (b, d, h, w))
    return conv2d(concat_channels([parsing_feat, r]), fuse)


def assert_stochastic(aff, tol: float = 1e-6) -> None:
    """Raise IntegrityError if the affinity's normalization is broken."""
    from .errors import IntegrityError

    if isinstance(aff, ChannelAffinity):
        sums = aff.a.data.sum(axis=2)
        kind = "row"
    elif isinstance(aff, SpatialAffinity):
        sums = aff.g.data.sum(axis=1)
        kind = "column"
    else:
        raise TypeError(f"not an affinity: {type(aff)!r}")
    err = float(np.max(np.abs(sums - 1.0)))
    if err > tol:
        raise IntegrityError(f"{kind} sums deviate from 1 by {err:.3e} (tolerance {tol:g})")
