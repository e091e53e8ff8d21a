"""Structured neural blocks: convolution, the large-kernel GC block,
pyramid pooling, channel shuffle, and separable resampling.

Everything is a pure function of (input, parameters). Convolution follows
cross-correlation semantics via im2col and one GEMM; bilinear/nearest
resizing and adaptive average pooling are expressed as a pair of 1-D
linear maps (rows then columns), which makes their adjoints exact
transposes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .acet import read_acet, write_acet
from .errors import ConfigurationError, DataError, DimensionError
from .tensor import Tensor, _accum, _node, add, concat_channels


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass
class ConvParams:
    """Weights for one conv layer: weight (C_out, C_in, kh, kw), bias (C_out,)."""

    weight: Tensor
    bias: Tensor
    stride: int | tuple = 1
    padding: int | tuple = 0
    dilation: int | tuple = 1


@dataclass
class GCParams:
    """Large-kernel block: path A = 1xk then kx1, path B = kx1 then 1xk, summed."""

    a1: ConvParams
    a2: ConvParams
    b1: ConvParams
    b2: ConvParams
    kernel: int
    out_channels: int


def he_conv_weight(rng: np.random.Generator, c_out: int, c_in: int, kh: int, kw: int) -> np.ndarray:
    fan_in = c_in * kh * kw
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, kh, kw)).astype(np.float32)


def make_conv(rng, c_in, c_out, kh, kw, stride=1, padding=0, dilation=1) -> ConvParams:
    w = Tensor(he_conv_weight(rng, c_out, c_in, kh, kw), requires_grad=True)
    b = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)
    return ConvParams(w, b, stride=stride, padding=padding, dilation=dilation)


def make_gc(rng, c_in, n_out, k) -> GCParams:
    if k % 2 == 0:
        raise ConfigurationError(f"GC kernel extent must be odd, got {k}")
    p = k // 2
    return GCParams(
        a1=make_conv(rng, c_in, n_out, 1, k, padding=(0, p)),
        a2=make_conv(rng, n_out, n_out, k, 1, padding=(p, 0)),
        b1=make_conv(rng, c_in, n_out, k, 1, padding=(p, 0)),
        b2=make_conv(rng, n_out, n_out, 1, k, padding=(0, p)),
        kernel=k,
        out_channels=n_out,
    )


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Cross-correlation with bias, differentiable in input, weight, bias."""
    w, b = p.weight, p.bias
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d needs NCHW input and OIHW weight, got {x.shape} and {w.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    sh, sw = _pair(p.stride)
    ph, pw = _pair(p.padding)
    dh, dw = _pair(p.dilation)
    if min(sh, sw) < 1 or min(ph, pw) < 0 or min(dh, dw) < 1:
        raise ConfigurationError(f"bad conv geometry stride={p.stride} padding={p.padding} dilation={p.dilation}")
    bsz, c_in, hin, win = x.data.shape
    c_out, _, kh, kw = w.data.shape
    hout = (hin + 2 * ph - dh * (kh - 1) - 1) // sh + 1
    wout = (win + 2 * pw - dw * (kw - 1) - 1) // sw + 1
    if hout < 1 or wout < 1:
        raise DimensionError(f"conv2d output would be empty for input {x.shape} and kernel {w.shape}")

    pointwise = kh == 1 and kw == 1 and sh == 1 and sw == 1 and ph == 0 and pw == 0
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    span_h, span_w = sh * hout, sw * wout
    if pointwise:
        col = x.data.reshape(bsz, c_in, hin * win)  # view, no gather needed
    else:
        # tap-loop im2col: col[b, (c,u,v), (i,j)]; every copy is row-contiguous
        col = np.empty((bsz, c_in * kh * kw, hout * wout), dtype=xp.dtype)
        col6 = col.reshape(bsz, c_in, kh, kw, hout, wout)
        for u in range(kh):
            for v in range(kw):
                col6[:, :, u, v] = xp[:, :, u * dh:u * dh + span_h:sh, v * dw:v * dw + span_w:sw]
    w_mat = w.data.reshape(c_out, c_in * kh * kw)
    out = np.matmul(w_mat, col).reshape(bsz, c_out, hout, wout)
    res_dtype = np.result_type(out.dtype, b.data.dtype)
    if out.dtype != res_dtype:
        out = out.astype(res_dtype)
    out += b.data.reshape(1, c_out, 1, 1)

    def bw(g):
        g3 = np.ascontiguousarray(g).reshape(bsz, c_out, hout * wout)
        if b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            dweight = np.matmul(g3, col.swapaxes(1, 2)).sum(axis=0)
            _accum(w, dweight.reshape(w.data.shape))
        if x.requires_grad:
            fh, fw = dh * (kh - 1) - ph, dw * (kw - 1) - pw
            if pointwise:
                _accum(x, np.matmul(w_mat.T, g3).reshape(x.data.shape))
            elif sh == 1 and sw == 1 and fh >= 0 and fw >= 0 and c_in > c_out:
                # full correlation of g with the flipped, channel-swapped kernel
                gp = np.pad(g, ((0, 0), (0, 0), (fh, fh), (fw, fw)))
                gcol = np.empty((bsz, c_out * kh * kw, hin * win), dtype=gp.dtype)
                gcol6 = gcol.reshape(bsz, c_out, kh, kw, hin, win)
                for u in range(kh):
                    for v in range(kw):
                        gcol6[:, :, u, v] = gp[:, :, u * dh:u * dh + hin, v * dw:v * dw + win]
                wt = w.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
                wt_mat = np.ascontiguousarray(wt).reshape(c_in, c_out * kh * kw).astype(gp.dtype, copy=False)
                _accum(x, np.matmul(wt_mat, gcol).reshape(x.data.shape))
            else:
                dcol = np.matmul(w_mat.T, g3).reshape(bsz, c_in, kh, kw, hout, wout)
                dxp = np.zeros(xp.shape, dtype=g.dtype)
                for u in range(kh):
                    for v in range(kw):
                        dxp[:, :, u * dh:u * dh + span_h:sh, v * dw:v * dw + span_w:sw] += dcol[:, :, u, v]
                _accum(x, dxp[:, :, ph:ph + hin, pw:pw + win] if (ph or pw) else dxp)

    return _node(out, (x, w, b), bw)


def gc_block(x: Tensor, p: GCParams) -> Tensor:
    """Sum of the two separable large-kernel paths (k x k receptive field)."""
    if p.kernel % 2 == 0:
        raise ConfigurationError(f"GC kernel extent must be odd, got {p.kernel}")
    return add(conv2d(conv2d(x, p.a1), p.a2), conv2d(conv2d(x, p.b1), p.b2))


# ---------------------------------------------------------------------------
# separable resampling: resize and adaptive average pooling
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _interp_matrix(n_in: int, n_out: int, mode: str) -> np.ndarray:
    """(n_out, n_in) 1-D interpolation map using half-pixel source centers."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    ratio = n_in / n_out
    for i in range(n_out):
        if mode == "bilinear":
            src = (i + 0.5) * ratio - 0.5
            i0 = int(np.floor(src))
            frac = src - i0
            m[i, min(max(i0, 0), n_in - 1)] += 1.0 - frac
            m[i, min(max(i0 + 1, 0), n_in - 1)] += frac
        elif mode == "nearest":
            m[i, min(int((i + 0.5) * ratio), n_in - 1)] = 1.0
        else:
            raise ConfigurationError(f"unknown resize mode {mode!r}")
    return m


@lru_cache(maxsize=None)
def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) adaptive averaging map: cell i covers [floor(i*n/o), ceil((i+1)*n/o))."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def _separable(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    r = rows.astype(x.data.dtype)
    c = cols.astype(x.data.dtype)
    data = (r @ x.data) @ c.T

    def bw(g):
        _accum(x, (r.T @ g) @ c)

    return _node(np.ascontiguousarray(data), (x,), bw)


def upsample(x: Tensor, target: tuple, mode: str = "bilinear") -> Tensor:
    """Resize NCHW maps to target (H', W'); shrinking uses the same map."""
    if x.data.ndim != 4:
        raise DimensionError(f"upsample needs NCHW input, got {x.shape}")
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ConfigurationError(f"bad resize target {target}")
    _, _, h, w = x.data.shape
    return _separable(x, _interp_matrix(h, th, mode), _interp_matrix(w, tw, mode))


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError(f"adaptive_avg_pool needs NCHW input, got {x.shape}")
    _, _, h, w = x.data.shape
    if out_h > h or out_w > w:
        raise ConfigurationError(f"pool target {(out_h, out_w)} exceeds input {(h, w)}")
    return _separable(x, _pool_matrix(h, out_h), _pool_matrix(w, out_w))


# ---------------------------------------------------------------------------
# pyramid pooling and channel shuffle
# ---------------------------------------------------------------------------

@dataclass
class PPMParams:
    bins: tuple
    convs: list  # one 1x1 ConvParams per bin, C -> C/len(bins)


def make_ppm(rng, c_in, bins: Sequence[int]) -> PPMParams:
    bins = tuple(int(b) for b in bins)
    if not bins:
        raise ConfigurationError("pyramid pooling needs at least one bin")
    if c_in % len(bins) != 0:
        raise ConfigurationError(f"{c_in} channels not divisible by {len(bins)} bins")
    convs = [make_conv(rng, c_in, c_in // len(bins), 1, 1) for _ in bins]
    return PPMParams(bins, convs)


def pyramid_pooling(x: Tensor, p: PPMParams) -> Tensor:
    """Per bin: adaptive average pool, 1x1 conv, bilinear resize back;
    branches are concatenated with the input (channels double)."""
    _, _, h, w = x.data.shape
    for b in p.bins:
        if b > h or b > w:
            raise ConfigurationError(f"pyramid bin {b} exceeds input extent {(h, w)}")
    parts = [x]
    for b, conv in zip(p.bins, p.convs):
        pooled = adaptive_avg_pool(x, b, b)
        parts.append(upsample(conv2d(pooled, conv), (h, w), mode="bilinear"))
    return concat_channels(parts)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Interleave channel groups: channel c moves to (c mod g)*(C/g) + c//g."""
    if x.data.ndim != 4:
        raise DimensionError(f"channel_shuffle needs NCHW input, got {x.shape}")
    c = x.data.shape[1]
    g = int(groups)
    if g < 1 or c % g != 0:
        raise ConfigurationError(f"groups {g} does not divide {c} channels")
    src = np.arange(c)
    dest = (src % g) * (c // g) + src // g
    perm = np.empty(c, dtype=np.int64)
    perm[dest] = src  # out[:, dest[c]] = x[:, c]

    def bw(grad):
        _accum(x, np.ascontiguousarray(grad[:, dest]))

    return _node(np.ascontiguousarray(x.data[:, perm]), (x,), bw)


def shuffle_permutation(c: int, groups: int) -> np.ndarray:
    """Destination index per source channel (for tests and inverses)."""
    src = np.arange(c)
    return (src % groups) * (c // groups) + src // groups


# ---------------------------------------------------------------------------
# parameter checkpoints: one ACET file per named parameter + params.txt
# ---------------------------------------------------------------------------

def save_params(directory, params: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, t in params.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        write_acet(directory / f"{name}.acet", arr)
        lines.append(name + " " + " ".join(str(e) for e in arr.shape))
    (directory / "params.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(directory) -> dict:
    directory = Path(directory)
    manifest = directory / "params.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no params.txt in {directory}")
    out = {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        name, extents = fields[0], tuple(int(v) for v in fields[1:])
        arr = read_acet(directory / f"{name}.acet")
        if arr.shape != extents:
            raise DataError(f"{name}: manifest says {extents}, file holds {arr.shape}")
        out[name] = arr
    return out
