"""SGD training with warm-up + poly decay, evaluation, and diagnostics.

The optimizer is momentum SGD with decoupled weight decay (decay applied
directly to weights, not folded into the momentum buffer; biases are not
decayed). All logits are bilinearly upsampled to label resolution before
the losses and metrics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .acet import write_acet
from .attention import assert_stochastic
from .config import NetworkConfig, TrainConfig
from .data import CLASS_NAMES, DataConfig, Sample, flip_sample, generate_split, load_sample, load_split
from .errors import ConfigurationError, ContractError, IntegrityError
from .losses import LabelMap, TrainTargets, total_loss
from .metrics import ConfusionMatrix, MetricsResult, write_report
from .model import ParsingNetwork, build_network
from .nn import upsample
from .tensor import Tensor, backward


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> base_lr over the warm-up, then poly decay
    base_lr * (1 - progress)^power over the remaining iterations."""
    if iteration < 0 or iteration > cfg.total_iters:
        raise ContractError(f"iteration {iteration} outside [0, {cfg.total_iters}]")
    if iteration < cfg.warmup_iters:
        return cfg.base_lr * iteration / cfg.warmup_iters
    span = cfg.total_iters - cfg.warmup_iters
    return cfg.base_lr * (1.0 - (iteration - cfg.warmup_iters) / span) ** cfg.poly_power


class SGD:
    def __init__(self, params: dict, momentum: float, weight_decay: float):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, lr: float) -> None:
        for name, t in self.params.items():
            if t.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad
            t.data -= (lr * v).astype(t.data.dtype)
            if self.weight_decay and name.endswith(".weight"):
                t.data -= (lr * self.weight_decay) * t.data


def _batch_targets(samples: Sequence[Sample], num_classes: int) -> TrainTargets:
    labels = np.stack([s.labels for s in samples])
    boundary = np.stack([s.boundary for s in samples]).astype(np.int64)
    heat = np.stack([s.heatmaps for s in samples])
    return TrainTargets(
        labels=LabelMap(labels, num_classes=num_classes),
        boundary=LabelMap(boundary, num_classes=2),
        heatmaps=heat,
    )


def _upsampled(out: dict, key: str, size: tuple):
    return upsample(out[key], size, mode="bilinear") if key in out else None


@dataclass
class TrainResult:
    checkpoint_dir: Path
    log_path: Path
    final_loss: float
    log_lines: list


def train(net_cfg: NetworkConfig, train_cfg: TrainConfig, data_root, out_dir,
          echo: bool = False) -> TrainResult:
    """Run the full budget on the train split and write checkpoint + log."""
    samples = load_split(data_root, "train")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    net = build_network(net_cfg, seed=train_cfg.seed)
    opt = SGD(net.params, train_cfg.momentum, train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    h, w = samples[0].labels.shape

    order = rng.permutation(len(samples))
    cursor = 0
    lines = ["iter,lr,L_total,L_base,L_fine,L_bd,L_ske"]
    report = None
    for it in range(train_cfg.total_iters):
        batch = []
        for _ in range(train_cfg.batch_size):
            if cursor >= len(order):
                order = rng.permutation(len(samples))
                cursor = 0
            s = samples[order[cursor]]
            cursor += 1
            if train_cfg.augment_flip and rng.uniform() < 0.5:
                s = flip_sample(s)
            batch.append(s)

        x = Tensor(np.stack([s.image for s in batch]))
        out = net.forward(x)
        targets = _batch_targets(batch, net_cfg.num_classes)
        loss, report = total_loss(
            _upsampled(out, "base_logits", (h, w)),
            _upsampled(out, "fine_logits", (h, w)),
            _upsampled(out, "boundary_logits", (h, w)),
            _upsampled(out, "heat_logits", (h, w)),
            targets,
            train_cfg.loss,
        )
        if not math.isfinite(report.total):
            raise IntegrityError(f"non-finite loss {report.total} at iteration {it}")
        backward(loss)
        lr = lr_at(it, train_cfg)
        opt.step(lr)
        line = f"{it},{lr:.8f},{report.total:.6f},{report.base:.6f},{report.fine:.6f},{report.bd:.6f},{report.ske:.6f}"
        lines.append(line)
        if echo:
            print(line, flush=True)

    ckpt = out_dir / "checkpoint"
    net.save(ckpt)
    log_path = out_dir / "train_log.csv"
    log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return TrainResult(checkpoint_dir=ckpt, log_path=log_path, final_loss=report.total, log_lines=lines)


def evaluate(net, data_root, split: str = "val", report_path=None,
             oracle_inject: bool = False, batch_size: int = 8) -> MetricsResult:
    """Forward every sample, argmax the upsampled fine logits, aggregate."""
    if not isinstance(net, ParsingNetwork):
        net = ParsingNetwork.load(net)
    samples = load_split(data_root, split)
    k = net.cfg.num_classes
    cm = ConfusionMatrix(k)
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        gt = np.stack([s.labels for s in chunk])
        if oracle_inject:
            pred = gt
        else:
            x = Tensor(np.stack([s.image for s in chunk]))
            fine = upsample(net.forward(x)["fine_logits"], gt.shape[1:], mode="bilinear")
            pred = fine.data.argmax(axis=1)
        cm.update(pred, gt)
    result = cm.result()
    if report_path is not None:
        write_report(report_path, result, CLASS_NAMES)
    return result


def inspect_affinity(ckpt_dir, sample_dir, out_dir) -> dict:
    """Dump the affinity matrices and argmax maps for one sample."""
    net = ParsingNetwork.load(ckpt_dir)
    if not (net.cfg.enable_lcm or net.cfg.enable_gem):
        raise ConfigurationError("checkpoint has both affinity modules disabled; nothing to inspect")
    sample = load_sample(sample_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = net.forward(sample.image[None])
    written = {}
    if "channel_affinity" in out:
        aff = out["channel_affinity"]
        assert_stochastic(aff)
        written["A"] = aff.a.data[0]
        write_acet(out_dir / "channel_affinity.acet", aff.a.data[0])
    if "spatial_affinity" in out:
        aff = out["spatial_affinity"]
        assert_stochastic(aff)
        written["G"] = aff.g.data[0]
        write_acet(out_dir / "spatial_affinity.acet", aff.g.data[0])
    h, w = sample.labels.shape
    fine = upsample(out["fine_logits"], (h, w), mode="bilinear")
    pred = fine.data.argmax(axis=1)[0].astype(np.float32)
    write_acet(out_dir / "parsing_argmax.acet", pred)
    for cid, name in enumerate(CLASS_NAMES):
        write_acet(out_dir / f"part_{cid}_{name}.acet", (pred == cid).astype(np.float32))
    written["pred"] = pred
    return written


# ---------------------------------------------------------------------------
# ablation: baseline vs +compression vs +expansion vs both
# ---------------------------------------------------------------------------

VARIANTS = {
    "baseline": dict(enable_lcm=False, enable_gem=False),
    "lcm": dict(enable_lcm=True, enable_gem=False),
    "gem": dict(enable_lcm=False, enable_gem=True),
    "both": dict(enable_lcm=True, enable_gem=True),
}


def ensure_dataset(root, data_cfg: DataConfig | None = None,
                   train_count: int = 200, val_count: int = 50) -> Path:
    """Generate the documented split layout (train seeds 0..199, val 200..249)
    unless it already exists."""
    root = Path(root)
    cfg = data_cfg or DataConfig()
    if not (root / "train" / "manifest.txt").exists():
        generate_split(root, "train", train_count, 0, cfg)
    if not (root / "val" / "manifest.txt").exists():
        generate_split(root, "val", val_count, train_count, cfg)
    return root


def run_ablation(work_dir, seeds: Sequence[int] = (0, 1, 2),
                 net_cfg: NetworkConfig | None = None,
                 train_cfg: TrainConfig | None = None,
                 data_cfg: DataConfig | None = None,
                 variants: Sequence[str] = ("baseline", "lcm", "gem", "both"),
                 echo: bool = False) -> dict:
    """Train every variant over the given seeds; returns per-variant val mIoU
    lists plus their means."""
    work_dir = Path(work_dir)
    data_root = ensure_dataset(work_dir / "data", data_cfg)
    base_net = net_cfg or NetworkConfig()
    base_train = train_cfg or TrainConfig()
    results = {name: [] for name in variants}
    for name in variants:
        flags = VARIANTS[name]
        for seed in seeds:
            ncfg = NetworkConfig(**{**_net_kwargs(base_net), **flags})
            tcfg = _with_seed(base_train, seed)
            run_dir = work_dir / f"{name}_seed{seed}"
            train(ncfg, tcfg, data_root, run_dir, echo=False)
            res = evaluate(run_dir / "checkpoint", data_root, "val")
            results[name].append(res.miou)
            if echo:
                print(f"{name} seed={seed}: val mIoU {res.miou:.4f}", flush=True)
    results["means"] = {name: float(np.mean(results[name])) for name in variants}
    return results


def _net_kwargs(cfg: NetworkConfig) -> dict:
    from dataclasses import fields

    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def _with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    from dataclasses import fields, replace

    return replace(cfg, seed=seed)
