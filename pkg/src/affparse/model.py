"""Assembly of the full parsing network.

Four backbone stages (strides 1, 2, 2, 2; two 3x3 convs each) feed a
pyramid-pooled parsing head at 1/4 resolution, an optional skeleton branch
(stage features resized, channel-shuffled, convolved to a heatmap head and
a compression feature), and an optional boundary branch (reduced stage
features, 1x1 mixing, a 2-channel edge head and an expansion feature).
Channel-affinity and spatial-affinity outputs are concatenated and fused
into the fine classifier; with both modules disabled the fine head
consumes the parsing feature directly, which is exactly the baseline.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import nn
from .attention import (
    ChannelAffinity,
    SpatialAffinity,
    gem_affinity,
    gem_apply,
    lcm_affinity,
    lcm_apply,
)
from .config import NetworkConfig, dump_network_config, load_network_config, parse_kv_file
from .errors import ConfigurationError, DimensionError
from .nn import channel_shuffle, conv2d, load_params, pyramid_pooling, save_params, upsample
from .tensor import Tensor, concat_channels, relu


class ParamStore:
    """Ordered name -> Tensor registry; creation order fixes init order."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: dict = {}

    def conv(self, name, c_in, c_out, kh, kw, stride=1, padding=0) -> nn.ConvParams:
        p = nn.make_conv(self.rng, c_in, c_out, kh, kw, stride=stride, padding=padding)
        self.params[f"{name}.weight"] = p.weight
        self.params[f"{name}.bias"] = p.bias
        return p

    def gc(self, name, c_in, n_out, k) -> nn.GCParams:
        g = nn.make_gc(self.rng, c_in, n_out, k)
        for leg in ("a1", "a2", "b1", "b2"):
            p = getattr(g, leg)
            self.params[f"{name}.{leg}.weight"] = p.weight
            self.params[f"{name}.{leg}.bias"] = p.bias
        return g

    def ppm(self, name, c_in, bins) -> nn.PPMParams:
        p = nn.make_ppm(self.rng, c_in, bins)
        for i, conv in enumerate(p.convs):
            self.params[f"{name}.branch{i}.weight"] = conv.weight
            self.params[f"{name}.branch{i}.bias"] = conv.bias
        return p


class ParsingNetwork:
    def __init__(self, cfg: NetworkConfig, seed: int = 0):
        self.cfg = cfg
        store = ParamStore(seed)
        w1, w2, w3, w4 = cfg.stage_widths
        c = cfg.parsing_channels

        self.stages = []
        c_in = 3
        for i, (width, stride) in enumerate(zip(cfg.stage_widths, (1, 2, 2, 2)), start=1):
            c1 = store.conv(f"backbone.s{i}.c1", c_in, width, 3, 3, stride=stride, padding=1)
            c2 = store.conv(f"backbone.s{i}.c2", width, width, 3, 3, padding=1)
            self.stages.append((c1, c2))
            c_in = width

        self.ppm = store.ppm("ppm", w4, cfg.ppm_bins)
        self.parsing_proj = store.conv("parsing.proj", 2 * w4 + w1, c, 1, 1)
        self.base_head = store.conv("parsing.base_head", c, cfg.num_classes, 1, 1)

        if cfg.enable_lcm:
            skel_in = sum(cfg.stage_widths)
            self.skel_trunk = store.conv("skeleton.trunk", skel_in, c, 3, 3, padding=1)
            self.skel_feat = store.conv("skeleton.feat", c, c, 3, 3, padding=1)
            self.skel_head = store.conv("skeleton.heat", c, cfg.num_joints, 1, 1)
            self.lcm_gc = store.gc("lcm.gc", c, cfg.compress_dim, cfg.gc_kernel)
            self.lcm_enc = store.conv("lcm.enc", c, c, 1, 1)

        if cfg.enable_gem:
            br = cfg.boundary_reduce
            self.bd_reduce2 = store.conv("boundary.reduce2", w2, br, 1, 1)
            self.bd_reduce3 = store.conv("boundary.reduce3", w3, br, 1, 1)
            self.bd_mix1 = store.conv("boundary.mix1", 2 * br, c, 1, 1)
            self.bd_mix2 = store.conv("boundary.mix2", c, c, 1, 1)
            self.bd_head = store.conv("boundary.head", c, 2, 1, 1)
            d = cfg.expand_dim
            self.gem_enc_p = store.conv("gem.enc_p", c, d, 1, 1)
            self.gem_enc_e = store.conv("gem.enc_e", c, d, 1, 1)
            self.gem_enc_k = store.conv("gem.enc_k", c, d, 1, 1)
            self.gem_fuse = store.conv("gem.fuse", c + d, c, 1, 1)

        fused_in = c * max(1, int(cfg.enable_lcm) + int(cfg.enable_gem))
        self.fuse1 = store.conv("fusion.f1", fused_in, c, 1, 1)
        self.fuse2 = store.conv("fusion.f2", c, c, 1, 1)
        self.classifier = store.conv("fusion.classifier", c, cfg.num_classes, 1, 1)

        self.params = store.params

    # -- parameters ---------------------------------------------------------

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def save(self, directory) -> None:
        directory = Path(directory)
        save_params(directory, self.params)
        (directory / "net.cfg").write_text(dump_network_config(self.cfg), encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "ParsingNetwork":
        directory = Path(directory)
        cfg_path = directory / "net.cfg"
        if not cfg_path.exists():
            raise FileNotFoundError(f"no net.cfg in {directory}")
        net = cls(load_network_config(cfg_path))
        stored = load_params(directory)
        if set(stored) != set(net.params):
            missing = set(net.params) - set(stored)
            extra = set(stored) - set(net.params)
            raise ConfigurationError(f"checkpoint does not match config (missing {sorted(missing)}, extra {sorted(extra)})")
        for name, arr in stored.items():
            if net.params[name].data.shape != arr.shape:
                raise ConfigurationError(
                    f"checkpoint {name} has shape {arr.shape}, config expects {net.params[name].data.shape}")
            net.params[name].data = arr
        return net

    # -- forward ------------------------------------------------------------

    def forward(self, x) -> dict:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float32))
        if x.data.ndim != 4 or x.data.shape[1] != 3:
            raise DimensionError(f"input must be (B, 3, H, W), got {x.shape}")
        h, w = x.data.shape[2:]
        if h % 8 or w % 8 or h < 32 or w < 32:
            raise ConfigurationError(f"input extents must be multiples of 8 and at least 32, got {h}x{w}")
        ph, pw = h // 4, w // 4

        feats = []
        t = x
        for c1, c2 in self.stages:
            t = relu(conv2d(relu(conv2d(t, c1)), c2))
            feats.append(t)
        s1, s2, s3, s4 = feats

        context = upsample(pyramid_pooling(s4, self.ppm), (ph, pw))
        detail = upsample(s1, (ph, pw))
        parsing = relu(conv2d(concat_channels([context, detail]), self.parsing_proj))
        out = {
            "parsing_feat": parsing,
            "base_logits": conv2d(parsing, self.base_head),
        }

        branch_outputs = []
        if self.cfg.enable_lcm:
            stacked = concat_channels([upsample(f, (ph, pw)) for f in feats])
            shuffled = channel_shuffle(stacked, self.cfg.shuffle_groups)
            trunk = relu(conv2d(shuffled, self.skel_trunk))
            skel = relu(conv2d(trunk, self.skel_feat))
            out["skeleton_feat"] = skel
            out["heat_logits"] = conv2d(skel, self.skel_head)
            aff = lcm_affinity(skel, parsing, self.lcm_gc, self.lcm_enc)
            out["channel_affinity"] = aff
            branch_outputs.append(lcm_apply(parsing, aff))

        if self.cfg.enable_gem:
            f2 = upsample(relu(conv2d(s2, self.bd_reduce2)), (ph, pw))
            f3 = upsample(relu(conv2d(s3, self.bd_reduce3)), (ph, pw))
            mixed = relu(conv2d(concat_channels([f2, f3]), self.bd_mix1))
            edge = relu(conv2d(mixed, self.bd_mix2))
            out["boundary_feat"] = edge
            out["boundary_logits"] = conv2d(edge, self.bd_head)
            aff = gem_affinity(parsing, edge, self.gem_enc_p, self.gem_enc_e)
            out["spatial_affinity"] = aff
            branch_outputs.append(gem_apply(parsing, aff, self.gem_enc_k, self.gem_fuse))

        fused = concat_channels(branch_outputs) if branch_outputs else parsing
        t = relu(conv2d(fused, self.fuse1))
        t = relu(conv2d(t, self.fuse2))
        out["fine_logits"] = conv2d(t, self.classifier)
        return out


def build_network(cfg: NetworkConfig, seed: int = 0) -> ParsingNetwork:
    return ParsingNetwork(cfg, seed=seed)
