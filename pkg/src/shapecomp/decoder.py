"""Multi-surface decoder.

Each of K surface generators maps seed points (2-D "flat" or 3-D "spatial")
concatenated with the replicated latent vector to 3-D points through
per-point layers ending in tanh. The completed cloud is the union of the K
patches in surface-major order. The number of seeds is free at inference
time, so one set of parameters decodes at any resolution divisible by K.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import BatchNorm, Linear, Module
from .tensor import Tensor


@dataclass
class SeedDistribution:
    kind: str = "uniform"
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian", "zero"):
            raise ValueError(f"unknown seed distribution {self.kind!r}")
        if self.kind == "uniform" and not -1.0 <= self.a < self.b <= 1.0:
            raise ValueError(f"uniform seed bounds must satisfy -1 <= a < b <= 1, got ({self.a}, {self.b})")
        if self.kind == "gaussian" and self.b < 0:
            raise ValueError("gaussian sigma must be non-negative")

    @property
    def label(self) -> str:
        if self.kind == "zero":
            return "zero"
        return f"{self.kind}({self.a:g},{self.b:g})"


@dataclass
class DecoderSpec:
    surfaces: int = 16
    seed_kind: str = "flat"
    seed_distribution: SeedDistribution = field(default_factory=SeedDistribution)
    points_per_surface: int = 128
    conv_widths: tuple = (513, 256, 128)
    latent_dim: int = 1024
    share_params: bool = False

    def __post_init__(self):
        if isinstance(self.seed_distribution, dict):
            self.seed_distribution = SeedDistribution(**self.seed_distribution)
        self.conv_widths = tuple(int(w) for w in self.conv_widths)
        if self.seed_kind not in ("flat", "spatial"):
            raise ValueError(f"seed_kind must be 'flat' or 'spatial', got {self.seed_kind!r}")
        if self.surfaces < 1 or self.points_per_surface < 1:
            raise ValueError("surfaces and points_per_surface must be positive")
        if len(self.conv_widths) != 3:
            raise ValueError("decoder backbone takes exactly three layer widths")

    @property
    def seed_dim(self) -> int:
        return 2 if self.seed_kind == "flat" else 3

    @property
    def out_points(self) -> int:
        return self.surfaces * self.points_per_surface

    @property
    def input_width(self) -> int:
        return self.latent_dim + self.seed_dim

    @classmethod
    def default(cls, profile: str = "full", latent_dim: int = None, **overrides) -> "DecoderSpec":
        if profile == "full":
            base = dict(points_per_surface=128, conv_widths=(513, 256, 128), latent_dim=1024)
        elif profile == "toy":
            base = dict(points_per_surface=16, conv_widths=(64, 32, 16), latent_dim=128)
        else:
            raise ValueError(f"unknown profile {profile!r}")
        if latent_dim is not None:
            base["latent_dim"] = latent_dim
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {
            "surfaces": self.surfaces,
            "seed_kind": self.seed_kind,
            "seed_distribution": {"kind": self.seed_distribution.kind,
                                  "a": self.seed_distribution.a,
                                  "b": self.seed_distribution.b},
            "points_per_surface": self.points_per_surface,
            "conv_widths": list(self.conv_widths),
            "latent_dim": self.latent_dim,
            "share_params": self.share_params,
        }


def generate_seeds(spec: DecoderSpec, rng_seed, count: int = None) -> np.ndarray:
    """Draw ``count`` (default ``spec.out_points``) seed points.

    ``rng_seed`` may be an integer or a ``numpy.random.Generator``. Gaussian
    draws are clamped to [-1, 1].
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    count = spec.out_points if count is None else count
    shape = (count, spec.seed_dim)
    dist = spec.seed_distribution
    if dist.kind == "zero":
        return np.zeros(shape)
    if dist.kind == "uniform":
        return rng.uniform(dist.a, dist.b, size=shape)
    return np.clip(rng.normal(dist.a, dist.b, size=shape), -1.0, 1.0)


def surface_of(index: int, spec: DecoderSpec, out_points: int = None) -> int:
    total = spec.out_points if out_points is None else out_points
    if not 0 <= index < total:
        raise IndexError(f"point index {index} outside [0, {total})")
    return index // (total // spec.surfaces)


class Decoder(Module):
    def __init__(self, spec: DecoderSpec):
        super().__init__()
        self.spec = spec
        groups = None if spec.share_params else spec.surfaces
        widths = (spec.input_width,) + spec.conv_widths
        self.layers = [Linear(a, b, groups=groups) for a, b in zip(widths[:-1], widths[1:])]
        self.norms = [BatchNorm(w, groups=groups) for w in spec.conv_widths]
        self.head = Linear(spec.conv_widths[-1], 3, groups=groups)

    def forward(self, latent, seeds) -> Tensor:
        """Decode (batch, m) latents with (N, s) or (batch, N, s) seeds to (batch, N, 3)."""
        latent = T.as_tensor(latent)
        squeeze = latent.ndim == 1
        if squeeze:
            latent = latent.reshape(1, -1)
        spec = self.spec
        if latent.shape[-1] != spec.latent_dim:
            raise ValueError(f"latent width {latent.shape[-1]} != decoder latent_dim {spec.latent_dim}")
        seeds = np.asarray(seeds, dtype=float)
        if seeds.shape[-1] != spec.seed_dim:
            raise ValueError(f"seed width {seeds.shape[-1]} != {spec.seed_dim} for {spec.seed_kind} seeds")
        batch, n_seeds = latent.shape[0], seeds.shape[-2]
        if n_seeds % spec.surfaces:
            raise ValueError(f"{n_seeds} seeds do not split evenly over {spec.surfaces} surfaces")
        per = n_seeds // spec.surfaces
        seeds = np.broadcast_to(seeds, (batch, n_seeds, spec.seed_dim))
        seeds = seeds.reshape(batch, spec.surfaces, per, spec.seed_dim)
        grid = (batch, spec.surfaces, per, spec.latent_dim)
        replicated = T.broadcast_to(latent.reshape(batch, 1, 1, spec.latent_dim), grid)
        x = T.concat([T.Tensor(seeds), replicated], axis=-1)
        for layer, bn in zip(self.layers, self.norms):
            x = T.relu(bn(layer(x)))
        out = T.tanh(self.head(x)).reshape(batch, n_seeds, 3)
        return out.reshape(n_seeds, 3) if squeeze else out


def decode(latent, seeds, decoder: Decoder) -> Tensor:
    return decoder(latent, seeds)
