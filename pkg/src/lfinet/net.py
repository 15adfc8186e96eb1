"""Full network: frequency separation -> cross-frequency interaction ->
progressive reconstruction, plus the Dice+BCE objective and checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .cfib import (
    FrequencyGatedModulation,
    HfbConfig,
    HighFrequencyBlock,
    ProjectionOnly,
    SpatialTransformer,
    StConfig,
)
from .lms import FrequencyDecomposition, N_LEVELS, SIZE_MULTIPLE, as_image_batch, check_size, laplacian_decompose
from .nn import Conv2d, ConvBNAct, ConvTranspose2d, Module
from .tensor import Tensor, as_tensor

MAGIC = b"LFINETv1"
THRESHOLD = 0.5
DICE_SMOOTH = 1.0
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    image_size: tuple[int, int] = (64, 64)
    widths: tuple[int, int, int] = (32, 64, 128)
    st_dim: int = 128
    st_layers: int = 2
    st_heads: int = 4
    ffn_expansion: int = 4
    use_lms: bool = True
    use_hfb: bool = True
    use_fgm: bool = True
    use_st: bool = True
    use_prd: bool = True

    def __post_init__(self):
        check_size(*self.image_size)
        if len(self.widths) != N_LEVELS:
            raise ValueError(f"widths must list {N_LEVELS} channel counts, got {self.widths}")

    @property
    def tokens(self) -> int:
        h, w = self.image_size
        return (h // SIZE_MULTIPLE) * (w // SIZE_MULTIPLE)

    @property
    def decoder_widths(self) -> tuple[int, ...]:
        """Channels of the decoder states at H/8, H/4, H/2, H."""
        return (self.st_dim, *reversed(self.widths))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for k in ("image_size", "widths"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


class ConvStage(Module):
    """(3x3 conv -> BN -> ReLU) twice, spatial size preserved."""

    def __init__(self, in_channels: int, out_channels: int, rng):
        self.first = ConvBNAct(in_channels, out_channels, 3, rng)
        self.second = ConvBNAct(out_channels, out_channels, 3, rng)

    def forward(self, x):
        return self.second(self.first(x))


class UpBlock(Module):
    def __init__(self, in_channels: int, out_channels: int, rng):
        self.deconv = ConvTranspose2d(in_channels, out_channels, rng)

    def forward(self, x):
        return F.relu(self.deconv(x))


class ProgressiveDecoder(Module):
    """Three upsample-concat-refine steps from H/8 back to H, then a 1x1 sigmoid head."""

    def __init__(self, st_dim: int, widths: tuple[int, int, int], rng):
        self.widths = widths
        ins = [st_dim, widths[2], widths[1]]
        outs = [widths[2], widths[1], widths[0]]
        self.ups = [UpBlock(i, o, rng) for i, o in zip(ins, outs)]
        self.stages = [ConvStage(2 * o, o, rng) for o in outs]
        self.head = Conv2d(widths[0], 1, 1, rng)

    def forward(self, deepest, skips, return_states: bool = False):
        if len(skips) != N_LEVELS:
            raise ValueError(f"decoder needs {N_LEVELS} skip features, got {len(skips)}")
        states = [deepest]
        x = deepest
        for up, stage, level in zip(self.ups, self.stages, (2, 1, 0)):
            y = up(x)
            skip = skips[level]
            if skip.shape[1:] != y.shape[1:]:
                raise ValueError(f"decoder level {level}: skip shape {skip.shape[1:]} != upsampled {y.shape[1:]}")
            x = stage(F.concat([y, skip]))
            states.append(x)
        prob = F.sigmoid(self.head(x))
        return (prob, states) if return_states else prob


class SingleConvHead(Module):
    """PRD ablation: every feature resized to full resolution, one 1x1 conv + sigmoid."""

    def __init__(self, st_dim: int, widths: tuple[int, int, int], rng):
        self.head = Conv2d(st_dim + sum(widths), 1, 1, rng)

    def forward(self, deepest, skips, return_states: bool = False):
        feats = [skips[0], F.bilinear_upsample(skips[1], 2), F.bilinear_upsample(skips[2], 4)]
        feats.append(F.bilinear_upsample(deepest, 8))
        prob = F.sigmoid(self.head(F.concat(feats)))
        return (prob, [deepest]) if return_states else prob


class StridedStem(Module):
    """LMS ablation: learned stride-2 3x3 convs produce the four single-channel inputs."""

    def __init__(self, rng):
        self.convs = [Conv2d(1, 1, 3, rng, stride=1 if i == 0 else 2, padding=1) for i in range(N_LEVELS + 1)]

    def forward(self, x) -> FrequencyDecomposition:
        feats = []
        for conv in self.convs:
            x = conv(x)
            feats.append(x)
        return FrequencyDecomposition(levels=feats[:N_LEVELS], base=feats[N_LEVELS])


@dataclass
class Intermediates:
    decomposition: FrequencyDecomposition
    hfb: list
    st: Tensor
    fgm: list
    decoder: list


class LFINet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        st_cfg = StConfig(cfg.st_dim, cfg.st_layers, cfg.st_heads, cfg.ffn_expansion, cfg.tokens)
        if not cfg.use_lms:
            self.stem = StridedStem(rng)
        block = HighFrequencyBlock if cfg.use_hfb else ProjectionOnly
        self.hfb = [block(HfbConfig(w), rng) for w in cfg.widths]
        self.st = SpatialTransformer(st_cfg, rng, identity=not cfg.use_st)
        self.fgm = [
            FrequencyGatedModulation(w, cfg.st_dim, 2 ** (N_LEVELS - l), rng, equal_weights=not cfg.use_fgm)
            for l, w in enumerate(cfg.widths)
        ]
        decoder = ProgressiveDecoder if cfg.use_prd else SingleConvHead
        self.decoder = decoder(cfg.st_dim, cfg.widths, rng)

    def forward(self, image, return_intermediates: bool = False):
        x = as_image_batch(image)
        if x.shape[1] != 1:
            raise ValueError(f"LFINet takes single-channel images, got {x.shape[1]} channels")
        if tuple(x.shape[2:]) != tuple(self.cfg.image_size):
            raise ValueError(f"model built for image size {self.cfg.image_size}, got {x.shape[2:]}")
        decomp = laplacian_decompose(x) if self.cfg.use_lms else self.stem(x)
        hfb_out = [blk(lvl, return_intermediates=True) for blk, lvl in zip(self.hfb, decomp.levels)]
        st_out = self.st(decomp.base)
        fgm_out = [m(h, st_out, return_intermediates=True) for m, (h, _) in zip(self.fgm, hfb_out)]
        prob, states = self.decoder(st_out, [f for f, _ in fgm_out], return_states=True)
        if return_intermediates:
            return prob, Intermediates(decomp, [i for _, i in hfb_out], st_out, [i for _, i in fgm_out], states)
        return prob


def build_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> LFINet:
    from .config import stream_rng

    model = LFINet(cfg, stream_rng(seed, "init"))
    if dtype != np.float32:
        model.astype(dtype)
    return model


def binarize(prob: np.ndarray, threshold: float = THRESHOLD) -> np.ndarray:
    return (np.asarray(prob) >= threshold).astype(np.uint8)


# ------------------------------------------------------------------------- loss


@dataclass
class LossBreakdown:
    total: Tensor
    dice: Tensor
    bce: Tensor

    def values(self) -> dict[str, float]:
        return {"loss": self.total.item(), "dice": self.dice.item(), "bce": self.bce.item()}


def dice_bce_loss(pred, target, smooth: float = DICE_SMOOTH, clamp: float = BCE_CLAMP) -> LossBreakdown:
    """Soft Dice over the whole batch plus mean binary cross-entropy."""
    pred = as_tensor(pred)
    y = np.asarray(target.data if isinstance(target, Tensor) else target)
    if y.shape != pred.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("target mask must be binary (values 0 or 1)")
    y = y.astype(pred.dtype)
    inter = (pred * y).sum()
    dice = 1.0 - (inter * 2.0 + smooth) / (pred.sum() + (float(y.sum()) + smooth))
    p = pred.clip(clamp, 1.0 - clamp)
    bce = -(p.log() * y + (1.0 - p).log() * (1.0 - y)).mean()
    return LossBreakdown(dice + bce, dice, bce)


# ------------------------------------------------------------------- checkpoint


def save_checkpoint(path, model: LFINet, seed: int, run_config: dict | None = None):
    params = list(model.named_parameters())
    header = {
        "format": "LFINETv1",
        "model": asdict(model.cfg),
        "seed": int(seed),
        "training": run_config or {},
        "params": [{"name": n, "shape": list(p.shape), "dtype": "float32"} for n, p in params],
        "buffers": {n: [float(v) for v in np.asarray(b, np.float32)] for n, b in model.named_buffers()},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


class CheckpointError(ValueError):
    pass


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an LFINETv1 checkpoint")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    offset = 16 + n
    state: dict[str, np.ndarray] = {}
    for rec in header["params"]:
        count = int(np.prod(rec["shape"], dtype=np.int64))
        if offset + 4 * count > len(raw):
            raise CheckpointError(f"{path}: truncated at parameter {rec['name']}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(rec["shape"])
        state[rec["name"]] = arr.astype(np.float32)
        offset += 4 * count
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after parameter blobs")
    for name, values in header["buffers"].items():
        state[name] = np.asarray(values, dtype=np.float32)
    return header, state


def load_checkpoint(path) -> tuple[LFINet, dict]:
    header, state = read_checkpoint(path)
    model = LFINet(ModelConfig.from_dict(header["model"]), np.random.default_rng(header["seed"]))
    model.load_state_dict(state)
    return model, header
