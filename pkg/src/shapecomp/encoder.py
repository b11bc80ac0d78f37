"""Point-cloud encoders: MLP, MSF, CMLP and the attention-augmented TMLP.

All variants are per-point feature pipelines closed by a max over points, so
the latent vector does not depend on point order. TMLP inserts one
multi-head self-attention block (attention sublayer + feed-forward sublayer,
each with residual add and layer norm) into the per-point pipeline and uses
no positional encoding.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import BatchNorm, Dropout, LayerNorm, Linear, Module
from .tensor import Tensor

VARIANTS = ("MLP", "MSF", "CMLP", "TMLP")


@dataclass
class EncoderSpec:
    variant: str = "TMLP"
    widths: tuple = (64, 128, 1024)
    pooled_layers: tuple = (2,)
    heads: int = 8
    attn_dim: int = 128
    attn_after: int = 1
    ff_dim: int = 512
    dropout_rate: float = 0.1

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.pooled_layers = tuple(int(i) for i in self.pooled_layers)
        self.validate()

    @property
    def latent_dim(self) -> int:
        return sum(self.widths[i] for i in self.pooled_layers)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown encoder variant {self.variant!r}")
        if not self.widths or min(self.widths) < 1:
            raise ValueError(f"widths must be positive, got {self.widths}")
        if not self.pooled_layers or any(not 0 <= i < len(self.widths) for i in self.pooled_layers):
            raise ValueError(f"pooled_layers {self.pooled_layers} out of range")
        if self.variant == "TMLP":
            if self.attn_dim % self.heads:
                raise ValueError(f"attn_dim {self.attn_dim} not divisible by heads {self.heads}")
            if self.widths[self.attn_after] != self.attn_dim:
                raise ValueError("attention block width must equal the width of the layer it follows")

    @classmethod
    def default(cls, variant: str = "TMLP", profile: str = "full") -> "EncoderSpec":
        """Reference widths per variant; the toy profile divides widths by 8."""
        div = {"full": 1, "toy": 8}[profile]
        layouts = {
            "MLP": dict(widths=(64, 128, 256, 1024), pooled_layers=(3,)),
            "MSF": dict(widths=(64, 128, 256, 1024), pooled_layers=(1, 2, 3)),
            "CMLP": dict(widths=(64, 128, 256, 512), pooled_layers=(1, 2, 3)),
            "TMLP": dict(widths=(64, 128, 1024), pooled_layers=(2,)),
        }
        layout = layouts[variant]
        widths = tuple(w // div for w in layout["widths"])
        return cls(variant=variant, widths=widths, pooled_layers=layout["pooled_layers"],
                   heads=8, attn_dim=128 // div, attn_after=1, ff_dim=512 // div)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["pooled_layers"] = list(self.pooled_layers)
        return d


class MultiHeadSelfAttention(Module):
    """Self-attention block mapping (..., n, d) features to (..., n, d).

    Heads use scaled dot-product attention with d/heads features each; the
    concatenated heads are mixed by ``out`` (W0).

    Rows are processed in a canonical order (the input sorted
    lexicographically) and scattered back afterwards. The result is
    mathematically unchanged, but every matrix product, softmax denominator
    and weighted sum then sees the same operands in the same order whatever
    the input order, so the block is permutation-equivariant bit for bit
    rather than only up to rounding.
    """

    def __init__(self, dim: int, heads: int = 8, ff_dim: Optional[int] = None,
                 dropout: float = 0.1):
        super().__init__()
        if dim % heads:
            raise ValueError(f"feature width {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.query = Linear(dim, dim, bias=False)
        self.key = Linear(dim, dim, bias=False)
        self.value = Linear(dim, dim, bias=False)
        self.out = Linear(dim, dim, bias=False)
        self.norm1 = LayerNorm(dim)
        self.ff1 = Linear(dim, ff_dim or 4 * dim)
        self.ff2 = Linear(ff_dim or 4 * dim, dim)
        self.norm2 = LayerNorm(dim)
        self.drop = Dropout(dropout)
        self.last_attention: Optional[np.ndarray] = None

    def _split(self, t: Tensor) -> Tensor:
        *lead, n, d = t.shape
        return t.reshape(tuple(lead) + (n, self.heads, d // self.heads)).swapaxes(-3, -2)

    def forward(self, x: Tensor) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.dim:
            raise ValueError(f"attention block expects width {self.dim}, got {x.shape[-1]}")
        order = canonical_order(x.data)
        inverse = np.argsort(order, axis=-1)
        lead = tuple(np.indices(order.shape)[:-1])
        xs = x[lead + (order,)]
        q, k, v = self._split(self.query(xs)), self._split(self.key(xs)), self._split(self.value(xs))
        scale = 1.0 / math.sqrt(self.dim // self.heads)
        attn = T.softmax_rows(T.matmul(q * scale, k.swapaxes(-1, -2)))
        # report attention with queries and keys back in input order
        a = attn.data
        a = np.take_along_axis(a, np.broadcast_to(inverse[..., None, :, None], a.shape), axis=-2)
        self.last_attention = np.take_along_axis(a, np.broadcast_to(inverse[..., None, None, :], a.shape), axis=-1)
        heads = T.matmul(attn, v).swapaxes(-3, -2)
        z = self.out(heads.reshape(xs.shape))
        a_out = self.norm1(xs + self.drop(z))
        ff = self.ff2(T.relu(self.ff1(a_out)))
        out = self.norm2(a_out + self.drop(ff))
        return out[lead + (inverse,)]


def canonical_order(x: np.ndarray) -> np.ndarray:
    """Lexicographic row order of (..., n, d) features, per leading index."""
    if x.ndim == 2:
        return np.lexsort(x.T[::-1])
    flat = x.reshape(-1, *x.shape[-2:])
    return np.stack([np.lexsort(b.T[::-1]) for b in flat]).reshape(x.shape[:-1])


def mhsa_block(a_in: Tensor, block: MultiHeadSelfAttention) -> Tensor:
    return block(a_in)


class Encoder(Module):
    def __init__(self, spec: EncoderSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        widths = (3,) + spec.widths
        self.layers = [Linear(a, b) for a, b in zip(widths[:-1], widths[1:])]
        self.norms = [BatchNorm(w) for w in spec.widths]
        self.attention = None
        if spec.variant == "TMLP":
            self.attention = MultiHeadSelfAttention(spec.attn_dim, spec.heads, spec.ff_dim,
                                                    spec.dropout_rate)

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim

    def forward(self, points) -> Tensor:
        """Map (n, 3) or (batch, n, 3) points to (m,) or (batch, m) latents."""
        x = T.as_tensor(points)
        if x.shape[-1] != 3 or x.shape[-2] < 1:
            raise ValueError(f"encoder expects (..., n>=1, 3) points, got {x.shape}")
        # a fixed row order makes BLAS blocking, and hence rounding, independent of input order
        order = canonical_order(x.data)
        if x.ndim == 2:
            x = x[order]
        else:
            lead = np.indices(order.shape)
            x = x[(*lead[:-1], order)]
        pooled = []
        for i, (layer, bn) in enumerate(zip(self.layers, self.norms)):
            x = T.relu(bn(layer(x)))
            if self.attention is not None and i == self.spec.attn_after:
                x = self.attention(x)
            if i in self.spec.pooled_layers:
                pooled.append(T.max_over_points(x))
        return pooled[0] if len(pooled) == 1 else T.concat(pooled, axis=-1)


def encode(cloud, encoder: Encoder) -> Tensor:
    points = cloud.points if hasattr(cloud, "points") else cloud
    return encoder(points)
