"""Training loop: AdamW with warm-up + cosine decay over seeded, augmented groups."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .config import Config
from .losses import LossWeights, PerceptualExtractor, combined_loss, l1_loss
from .synth_dsa import group_times, list_sequences, make_groups, read_sequence
from .tensor_ops import ParamStore, Tensor
from .tensor_ops import kernels as K
from .warp_refine import extract_features, init_model, synthesize

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def learning_rate(step: int, total: int, cfg: Config) -> float:
    """Linear warm-up to ``lr_peak`` then cosine decay to ``lr_floor`` at ``total``."""
    warm = max(cfg.warmup_steps, 0)
    if warm and step < warm:
        return cfg.lr_peak * (step + 1) / warm
    span = max(total - warm, 1)
    progress = min(max(step - warm, 0) / span, 1.0)
    return cfg.lr_floor + 0.5 * (cfg.lr_peak - cfg.lr_floor) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    def __init__(self, params: ParamStore, beta1=0.9, beta2=0.999, weight_decay=1e-4, eps=1e-8):
        self.params = params
        self.beta1, self.beta2 = beta1, beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.m = {n: np.zeros_like(t.data) for n, t in params.trainable()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.trainable()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.trainable():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data * (1.0 - lr * self.weight_decay) - lr * update).astype(p.data.dtype, copy=False)
        self.params.step += 1


def augment(group: np.ndarray, rng: np.random.Generator, crop: int) -> np.ndarray:
    """Same random crop, flips and right-angle rotation for every frame of a group."""
    _, h, w = group.shape
    if crop and (crop < h or crop < w):
        ch, cw = min(crop, h), min(crop, w)
        y = int(rng.integers(0, h - ch + 1))
        x = int(rng.integers(0, w - cw + 1))
        group = group[:, y:y + ch, x:x + cw]
    if rng.random() < 0.5:
        group = group[:, :, ::-1]
    if rng.random() < 0.5:
        group = group[:, ::-1, :]
    group = np.rot90(group, k=int(rng.integers(0, 4)), axes=(1, 2))
    return np.ascontiguousarray(group)


@dataclass
class GroupIndex:
    sequences: List[np.ndarray]
    groups: List[Tuple[int, int, bool]]  # (sequence, first frame, static)
    size: int

    def get(self, i: int) -> np.ndarray:
        s, start, static = self.groups[i]
        if static:
            return np.repeat(self.sequences[s][start][None], self.size, axis=0)
        return self.sequences[s][start:start + self.size]


def load_groups(data: str, n_interp: int, static_frac: float = 0.0, seed: int = 0) -> GroupIndex:
    """All stride-1 groups of every sequence, plus ``static_frac`` as many
    still groups (one seeded frame repeated)."""
    seqs = [read_sequence(d) for d in list_sequences(data)]
    groups = []
    for si, seq in enumerate(seqs):
        groups.extend((si, g[0], False) for g in make_groups(seq, n_interp))
    n_static = int(round(static_frac * len(groups)))
    if n_static:
        rng = np.random.default_rng([seed, 1 << 20])
        for _ in range(n_static):
            si = int(rng.integers(0, len(seqs)))
            groups.append((si, int(rng.integers(0, len(seqs[si]))), True))
    return GroupIndex(seqs, groups, n_interp + 2)


@dataclass
class TrainLog:
    """Per-group losses by epoch.

    ``epoch_losses`` holds groups cut from the sequences; the repeated-frame
    groups added by ``static_frac`` are kept apart in ``static_losses`` so the
    logged medians track the interpolation task itself.
    """

    epoch_losses: List[List[float]] = field(default_factory=list)
    static_losses: List[List[float]] = field(default_factory=list)

    @property
    def medians(self) -> List[float]:
        return [float(np.median(e)) for e in self.epoch_losses]

    def to_text(self) -> str:
        lines = ["epoch  groups  median_loss  mean_loss  still_groups  still_median"]
        for i, e in enumerate(self.epoch_losses):
            still = self.static_losses[i] if i < len(self.static_losses) else []
            still_med = f"{np.median(still):12.6f}" if still else f"{'-':>12}"
            lines.append(f"{i:5d}  {len(e):6d}  {np.median(e):11.6f}  {np.mean(e):9.6f}  {len(still):12d}  {still_med}")
        return "\n".join(lines) + "\n"


def batch_loss(params: ParamStore, batch: np.ndarray, cfg: Config, epoch: int, px: PerceptualExtractor) -> Tuple[Tensor, List[float]]:
    """Mean over the batch of each group's loss, summed over its targets.

    All targets of a group come from one shared feature pass. Per-group values
    are returned for logging. The loss sees the prediction before the output
    clamp; otherwise a residual that undershoots zero on the background would
    go unpenalised.
    """
    I0 = Tensor(batch[:, 0:1])
    I1 = Tensor(batch[:, -1:])
    feat = extract_features(I0, I1, params, r=cfg.scope, heads=cfg.heads)
    preds = [synthesize(feat, t, params).raw for t in group_times(cfg.n_interp)]
    n = batch.shape[0]
    total = None
    per_group = []
    for i in range(n):
        group_total = None
        for k, pred in enumerate(preds):
            p = pred[i:i + 1]
            target = Tensor(batch[i:i + 1, k + 1:k + 2])
            term = l1_loss(p, target) if cfg.loss == "l1" else combined_loss(p, target, epoch, px)
            group_total = term if group_total is None else K.add(group_total, term)
        per_group.append(group_total.item())
        total = group_total if total is None else K.add(total, group_total)
    return K.mul(total, 1.0 / n), per_group


def train(
    cfg: Config,
    groups: GroupIndex,
    params: Optional[ParamStore] = None,
    on_epoch: Optional[Callable[[int, List[float]], None]] = None,
) -> Tuple[ParamStore, TrainLog]:
    if groups.size != cfg.n_interp + 2:
        raise TrainingError(f"dataset groups hold {groups.size} frames but n_interp={cfg.n_interp} needs {cfg.n_interp + 2}")
    if not groups.groups:
        raise TrainingError("no training groups found")
    params = params or init_model(cfg)
    opt = AdamW(params, cfg.beta1, cfg.beta2, cfg.weight_decay)
    px = PerceptualExtractor(seed=cfg.seed + 7919)
    per_epoch = cfg.groups_per_epoch or len(groups.groups)
    steps_per_epoch = math.ceil(per_epoch / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    history = TrainLog()
    step = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(groups.groups))
        # Cycle when an epoch draws more groups than exist.
        order = np.resize(order, per_epoch)
        losses, still = [], []
        for b in range(steps_per_epoch):
            ids = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = np.stack([augment(groups.get(int(i)), rng, cfg.crop) for i in ids]).astype(params.dtype)
            params.zero_grad()
            loss, per_group = batch_loss(params, batch, cfg, epoch, px)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch}, step {step} (lr {learning_rate(step, total_steps, cfg):.3g}); "
                    "try a lower lr_peak or check the dataset for corrupt frames"
                )
            loss.backward()
            opt.step(learning_rate(step, total_steps, cfg))
            for i, value in zip(ids, per_group):
                (still if groups.groups[int(i)][2] else losses).append(value)
            step += 1
        if not losses:
            raise TrainingError("an epoch drew only repeated-frame groups; raise groups_per_epoch or lower static_frac")
        history.epoch_losses.append(losses)
        history.static_losses.append(still)
        log.info("epoch %d: median group loss %.6f over %d groups", epoch, np.median(losses), len(losses))
        if on_epoch:
            on_epoch(epoch, losses)
    return params, history
