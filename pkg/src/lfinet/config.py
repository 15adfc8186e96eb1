"""Run configuration and reproducible random streams."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lms import SIZE_MULTIPLE

# one counter value per independent random stream derived from the global seed
STREAMS = {"init": 0, "shuffle": 1, "synth": 2, "augment": 3, "gradcheck": 4}


def stream_rng(seed: int, stream: str, *counter: int) -> np.random.Generator:
    """Counter-based generator for ``stream``; extra integers split it further (e.g. per sample)."""
    key = np.random.SeedSequence([int(seed), STREAMS[stream], *map(int, counter)])
    return np.random.Generator(np.random.Philox(key))


def stream_seed(seed: int, stream: str, *counter: int) -> int:
    return int(np.random.SeedSequence([int(seed), STREAMS[stream], *map(int, counter)]).generate_state(1)[0])


@dataclass
class RunConfig:
    seed: int = 0
    image_size: tuple[int, int] = (64, 64)
    batch_size: int = 16
    epochs: int = 300
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    widths: tuple[int, int, int] = (32, 64, 128)
    st_dim: int = 128
    st_layers: int = 2
    st_heads: int = 4
    use_lms: bool = True
    use_hfb: bool = True
    use_fgm: bool = True
    use_st: bool = True
    use_prd: bool = True
    manifest: str | None = None
    synthetic_samples: int = 16
    augment: bool = False
    max_steps: int | None = None
    checkpoint: str = "checkpoint.lfinet"
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.betas = tuple(float(v) for v in self.betas)
        self.widths = tuple(int(v) for v in self.widths)
        self.validate()

    def validate(self):
        h, w = self.image_size
        if h <= 0 or w <= 0 or h % SIZE_MULTIPLE or w % SIZE_MULTIPLE:
            raise ValueError(f"image_size must be positive multiples of {SIZE_MULTIPLE}, got {self.image_size}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        for name in ("batch_size", "epochs", "st_dim", "st_layers", "st_heads"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0 or self.eps <= 0:
            raise ValueError("lr must be >= 0 and eps > 0")
        if not all(0.0 <= b < 1.0 for b in self.betas) or len(self.betas) != 2:
            raise ValueError(f"betas must be two values in [0, 1), got {self.betas}")
        if len(self.widths) != 3 or any(c <= 0 or c % 8 for c in self.widths):
            raise ValueError(f"widths must be three positive multiples of 8, got {self.widths}")
        if self.manifest is None and self.synthetic_samples <= 0:
            raise ValueError("synthetic_samples must be positive when no manifest is given")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ValueError("max_steps must be positive")

    def model_config(self):
        from .net import ModelConfig

        return ModelConfig(
            image_size=self.image_size,
            widths=self.widths,
            st_dim=self.st_dim,
            st_layers=self.st_layers,
            st_heads=self.st_heads,
            use_lms=self.use_lms,
            use_hfb=self.use_hfb,
            use_fgm=self.use_fgm,
            use_st=self.use_st,
            use_prd=self.use_prd,
        )

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
