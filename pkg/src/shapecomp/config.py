"""Run configuration: one YAML file with nested sections.

Grammar (every key optional; unknown keys are rejected)::

    profile: toy | full
    seed: <int>
    dataset:  {path, families, poses_per_family, points, pose_tag}
    noise:    {depth_sigma, outlier_fraction}
    encoder:  {variant, dropout, widths}
    decoder:  {surfaces, seed_kind, seed_distribution, conv_widths, share_params}
    train:    {lr, batch_size, epochs, beta1, beta2, adam_eps, init_sigma, loss, loss_eps}
    run:      {dir}

``null`` values mean "profile default" and are filled in by ``resolve``.
``seed_distribution`` is written as ``zero``, ``uniform(a,b)`` or
``gaussian(mu,sigma)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Optional

import yaml

from .datagen import FAMILIES, POSE_TAGS, SynthConfig
from .decoder import DecoderSpec
from .encoder import VARIANTS, EncoderSpec
from .training import TrainConfig, parse_distribution


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSection:
    path: str = "data/toy"
    families: list = field(default_factory=lambda: list(FAMILIES))
    poses_per_family: int = 40
    points: Optional[int] = None
    pose_tag: str = "canonical"


@dataclass
class NoiseSection:
    depth_sigma: float = 0.002
    outlier_fraction: float = 0.02


@dataclass
class EncoderSection:
    variant: str = "TMLP"
    dropout: float = 0.1
    widths: Optional[list] = None


@dataclass
class DecoderSection:
    surfaces: int = 16
    seed_kind: str = "flat"
    seed_distribution: str = "uniform(0,1)"
    conv_widths: Optional[list] = None
    share_params: bool = False


@dataclass
class TrainSection:
    lr: float = 1e-4
    batch_size: Optional[int] = None
    epochs: Optional[int] = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init_sigma: float = 0.02
    loss: str = "emd"
    loss_eps: float = 1e-2


@dataclass
class RunSection:
    dir: str = "runs/default"


@dataclass
class Config:
    profile: str = "toy"
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    train: TrainSection = field(default_factory=TrainSection)
    run: RunSection = field(default_factory=RunSection)

    # ------------------------------------------------------------ building
    def resolve(self) -> "Config":
        """Fill profile defaults and validate every section."""
        if self.profile not in ("toy", "full"):
            raise ConfigError(f"profile must be 'toy' or 'full', got {self.profile!r}")
        toy = self.profile == "toy"
        ds = replace(self.dataset, points=self.dataset.points or (256 if toy else 2048),
                     families=list(self.dataset.families))
        tr = replace(self.train, batch_size=self.train.batch_size or (8 if toy else 16),
                     epochs=self.train.epochs if self.train.epochs is not None else (30 if toy else 200))
        enc_default = EncoderSpec.default(self.encoder.variant, self.profile) \
            if self.encoder.variant in VARIANTS else None
        if enc_default is None:
            raise ConfigError(f"unknown encoder variant {self.encoder.variant!r}")
        enc = replace(self.encoder, widths=list(self.encoder.widths or enc_default.widths))
        dec_default = DecoderSpec.default(self.profile)
        dec = replace(self.decoder, conv_widths=list(self.decoder.conv_widths or dec_default.conv_widths))
        out = replace(self, dataset=ds, train=tr, encoder=enc, decoder=dec)
        try:
            out.encoder_spec(), out.decoder_spec(), out.train_config(), out.synth_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if ds.pose_tag not in POSE_TAGS:
            raise ConfigError(f"dataset.pose_tag must be one of {POSE_TAGS}")
        return out

    def encoder_spec(self) -> EncoderSpec:
        base = EncoderSpec.default(self.encoder.variant, self.profile)
        widths = tuple(self.encoder.widths or base.widths)
        if widths != base.widths:
            # keep pooling layout and attention slot; attention width follows the layer it sits on
            base = replace(base, widths=widths, attn_dim=widths[base.attn_after],
                           ff_dim=4 * widths[base.attn_after])
        return replace(base, dropout_rate=self.encoder.dropout)

    def decoder_spec(self) -> DecoderSpec:
        points = self.dataset.points or (256 if self.profile == "toy" else 2048)
        k = self.decoder.surfaces
        if k < 1 or points % k:
            raise ConfigError(f"{points} points do not split evenly over {k} surfaces")
        overrides = dict(surfaces=k, seed_kind=self.decoder.seed_kind,
                         seed_distribution=parse_distribution(self.decoder.seed_distribution),
                         points_per_surface=points // k, share_params=self.decoder.share_params)
        if self.decoder.conv_widths:
            overrides["conv_widths"] = tuple(self.decoder.conv_widths)
        return DecoderSpec.default(self.profile, latent_dim=self.encoder_spec().latent_dim, **overrides)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig.default(self.profile, lr=t.lr, beta1=t.beta1, beta2=t.beta2,
                                   adam_eps=t.adam_eps, init_sigma=t.init_sigma,
                                   dropout=self.encoder.dropout, loss=t.loss, loss_eps=t.loss_eps,
                                   seed=self.seed,
                                   **{k: v for k, v in (("batch_size", t.batch_size),
                                                         ("epochs", t.epochs)) if v is not None})

    def synth_config(self) -> SynthConfig:
        ds = self.dataset
        unknown = set(ds.families) - set(FAMILIES)
        if unknown:
            raise ConfigError(f"unknown shape families {sorted(unknown)}")
        kw = dict(seed=self.seed, families=tuple(ds.families), poses_per_family=ds.poses_per_family,
                  pose_tag=ds.pose_tag, depth_sigma=self.noise.depth_sigma,
                  outlier_fraction=self.noise.outlier_fraction)
        if ds.points:
            kw["n"] = ds.points
        return SynthConfig.default(self.profile, **kw)

    # ----------------------------------------------------------------- I/O
    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        return _build(cls, data or {}, "")


def _build(kind, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {where or '<root>'} must be a mapping")
    known = {f.name: f for f in fields(kind)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or '<root>'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}{name}.")
        else:
            kwargs[name] = value
    return kind(**kwargs)


def load_config(path=None, **overrides) -> Config:
    """Read a YAML config (or defaults when ``path`` is None) and apply
    top-level overrides such as ``profile`` or ``seed``; returns it resolved."""
    data = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
    cfg = Config.from_dict(data)
    for key, value in overrides.items():
        if value is None:
            continue
        section, _, leaf = key.rpartition(".")
        target = getattr(cfg, section) if section else cfg
        if not hasattr(target, leaf):
            raise ConfigError(f"unknown override {key}")
        setattr(target, leaf, value)
    return cfg.resolve()


def save_config(path, cfg: Config) -> None:
    Path(path).write_text(cfg.to_yaml())
