"""Mini-batch training and evaluation loops."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig, stream_rng, stream_seed
from .lms import SIZE_MULTIPLE, crop_padding, pad_to_multiple
from .metrics import ConfusionCounts, confusion, evaluate_set, scores
from .net import LFINet, binarize, dice_bce_loss, save_checkpoint
from .optim import Adam
from .tensor import Tensor, no_grad
from .trajdata import SamplePair, augment_dataset, default_spec, load_dataset, synth_scene

log = logging.getLogger(__name__)

METRICS_FIELDS = ("epoch", "loss", "dice", "bce", "train_iou")


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochStats:
    epoch: int
    loss: float
    dice: float
    bce: float
    train_iou: float
    steps: int

    def row(self) -> dict:
        # repr keeps every bit so runs can be compared exactly
        return {"epoch": self.epoch, "loss": repr(self.loss), "dice": repr(self.dice), "bce": repr(self.bce),
                "train_iou": repr(self.train_iou)}


def stack_pairs(pairs: Sequence[SamplePair], dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([p.image for p in pairs])[:, None].astype(dtype)
    masks = np.stack([p.mask for p in pairs])[:, None].astype(dtype)
    return images, masks


def synthetic_dataset(seed: int, n: int, size: int) -> list[SamplePair]:
    spec = default_spec(size)
    return [synth_scene(stream_seed(seed, "synth", i), spec) for i in range(n)]


def train_epoch(
    model: LFINet,
    optimizer: Adam,
    images: np.ndarray,
    masks: np.ndarray,
    batch_size: int,
    rng: np.random.Generator,
    epoch: int = 0,
    max_steps: int | None = None,
) -> EpochStats:
    """One shuffled pass: forward, Dice+BCE, backward, Adam step per mini-batch."""
    n = len(images)
    if n == 0:
        raise TrainingError("empty dataset")
    if batch_size < 1:
        raise TrainingError("batch size must be >= 1")
    model.train()
    order = rng.permutation(n)
    sums = np.zeros(3)
    counts = ConfusionCounts(0, 0, 0, 0)
    steps = 0
    for b, start in enumerate(range(0, n, batch_size)):
        if max_steps is not None and steps >= max_steps:
            break
        idx = order[start : start + batch_size]
        x, y = images[idx], masks[idx]
        optimizer.zero_grad()
        prob = model(Tensor(x))
        loss = dice_bce_loss(prob, y)
        value = loss.total.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
        loss.total.backward()
        optimizer.step()
        sums += (value, loss.dice.item(), loss.bce.item())
        counts = counts + confusion(binarize(prob.data), y.astype(np.uint8))
        steps += 1
    sums /= max(steps, 1)
    return EpochStats(epoch, float(sums[0]), float(sums[1]), float(sums[2]), scores(counts).iou, steps)


def predict(model: LFINet, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Eval-mode probabilities for an (N, 1, H, W) stack."""
    model.eval()
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            out.append(model(Tensor(images[start : start + batch_size])).data)
    return np.concatenate(out)


def predict_image(model: LFINet, image: np.ndarray) -> np.ndarray:
    """Probability map for one (H, W) image, zero-padded to the model size and cropped back."""
    padded, pad = pad_to_multiple(image, SIZE_MULTIPLE)
    if padded.shape != tuple(model.cfg.image_size):
        raise ValueError(f"image of size {image.shape} does not fit the model size {model.cfg.image_size}")
    x = padded[None, None].astype(np.float32)
    return crop_padding(predict(model, x)[0, 0], pad)


def evaluate_model(model: LFINet, pairs: Sequence[SamplePair], workers: int = 1):
    images, _ = stack_pairs(pairs)
    probs = predict(model, images)
    return evaluate_set(((p.id, probs[i, 0], p.mask) for i, p in enumerate(pairs)), workers=workers)


def build_dataset(cfg: RunConfig) -> list[SamplePair]:
    if cfg.manifest:
        pairs = load_dataset(cfg.manifest)
        for p in pairs:
            padded, _ = pad_to_multiple(p.image)
            if padded.shape != cfg.image_size:
                raise ValueError(f"sample {p.id!r} has size {p.image.shape}, config expects {cfg.image_size}")
        pairs = [SamplePair(pad_to_multiple(p.image)[0], pad_to_multiple(p.mask)[0], p.id) for p in pairs]
    else:
        if cfg.image_size[0] != cfg.image_size[1]:
            raise ValueError("synthetic data needs a square image_size")
        pairs = synthetic_dataset(cfg.seed, cfg.synthetic_samples, cfg.image_size[0])
    return augment_dataset(pairs) if cfg.augment else pairs


def fit(
    cfg: RunConfig,
    pairs: Sequence[SamplePair] | None = None,
    out_dir: str | Path | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> tuple[LFINet, list[EpochStats]]:
    """Train from scratch. With ``out_dir`` the metrics CSV and a per-epoch checkpoint are written."""
    from .net import build_model

    pairs = list(pairs) if pairs is not None else build_dataset(cfg)
    images, masks = stack_pairs(pairs)
    model = build_model(cfg.model_config(), cfg.seed)
    optimizer = Adam(model.named_parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    shuffle = stream_rng(cfg.seed, "shuffle")

    writer = fh = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        fh = open(out / "metrics.csv", "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(fh, fieldnames=METRICS_FIELDS)
        writer.writeheader()

    history: list[EpochStats] = []
    steps_left = cfg.max_steps
    try:
        for epoch in range(1, cfg.epochs + 1):
            if steps_left is not None and steps_left <= 0:
                break
            stats = train_epoch(model, optimizer, images, masks, cfg.batch_size, shuffle, epoch, steps_left)
            if steps_left is not None:
                steps_left -= stats.steps
            history.append(stats)
            log.info("epoch %d loss %.4f dice %.4f bce %.4f iou %.4f", epoch, stats.loss, stats.dice, stats.bce,
                     stats.train_iou)
            if writer is not None:
                writer.writerow(stats.row())
                fh.flush()
                save_checkpoint(Path(out_dir) / cfg.checkpoint, model, cfg.seed, cfg.to_dict())
            if on_epoch is not None:
                on_epoch(stats)
    finally:
        if fh is not None:
            fh.close()
    return model, history
