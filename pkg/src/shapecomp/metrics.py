"""Chamfer distance and Earth Mover's distance, plus differentiable losses.

Chamfer uses squared nearest-neighbour distances; EMD is the mean
*unsquared* distance under the best bijection. Both conventions are kept as
they are, even though they differ.

``emd_exact`` solves the assignment problem exactly (Hungarian-type solver);
``emd_approx`` runs an epsilon-scaling auction whose mean cost is within
``eps * (max cost - min cost)`` of the optimum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from . import tensor as T
from .geometry import EmptyCloudError, as_points
from .tensor import Tensor

EXACT_LIMIT = 512
DEFAULT_EPS = 1e-4
DEFAULT_ITERS = 50_000_000

SCALE_NOTE = ("raw values on [-1,1]-normalised clouds; table units are "
              "cd x 1e4 and emd x 1e2")


@dataclass
class AssignmentPlan:
    mapping: np.ndarray
    total_cost: float

    def __post_init__(self):
        self.mapping = np.asarray(self.mapping, dtype=np.int64)


class AuctionNotConverged(RuntimeError):
    def __init__(self, message: str, plan: AssignmentPlan):
        super().__init__(message)
        self.plan = plan


def cost_matrix(s1, s2) -> np.ndarray:
    a, b = as_points(s1), as_points(s2)
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))


def plan_cost(s1, s2, mapping) -> float:
    a, b = as_points(s1), as_points(s2)
    return float(np.sqrt(((a - b[mapping]) ** 2).sum(axis=1)).mean())


# ------------------------------------------------------------------ chamfer
def nearest_bruteforce(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> tuple:
    """For each row of ``a``: (index of nearest row of ``b``, squared distance)."""
    idx = np.empty(len(a), dtype=np.int64)
    for start in range(0, len(a), chunk):
        d2 = ((a[start:start + chunk, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        idx[start:start + chunk] = d2.argmin(axis=1)
    return idx, ((a - b[idx]) ** 2).sum(axis=1)


def nearest_indexed(a: np.ndarray, b: np.ndarray) -> tuple:
    _, idx = cKDTree(b).query(a, k=1)
    idx = np.asarray(idx, dtype=np.int64)
    return idx, ((a - b[idx]) ** 2).sum(axis=1)


def chamfer(s1, s2, method: str = "index") -> float:
    """Mean squared nearest-neighbour distance, summed over both directions."""
    a, b = as_points(s1), as_points(s2)
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloudError("chamfer distance needs non-empty clouds")
    nearest = nearest_indexed if method == "index" else nearest_bruteforce
    return float(nearest(a, b)[1].mean() + nearest(b, a)[1].mean())


# ---------------------------------------------------------------------- emd
def _check_equal(a: np.ndarray, b: np.ndarray) -> None:
    if len(a) != len(b):
        raise ValueError(f"EMD needs equal-size clouds, got {len(a)} and {len(b)}")
    if len(a) == 0:
        raise EmptyCloudError("EMD needs non-empty clouds")


def emd_exact(s1, s2) -> AssignmentPlan:
    a, b = as_points(s1), as_points(s2)
    _check_equal(a, b)
    if len(a) > EXACT_LIMIT:
        raise ValueError(f"exact EMD limited to {EXACT_LIMIT} points, got {len(a)}; use emd_approx")
    rows, cols = linear_sum_assignment(cost_matrix(a, b))
    mapping = np.empty(len(a), dtype=np.int64)
    mapping[rows] = cols
    return AssignmentPlan(mapping, plan_cost(a, b, mapping))


@njit(cache=True)
def _auction_phase(benefit, prices, eps, budget):  # pragma: no cover - compiled
    """Gauss-Seidel auction at fixed ``eps``; returns (owner_of_object, bids used).

    ``owner_of_object[j]`` is -1 if object j is still unassigned when the
    bid budget runs out. ``prices`` is updated in place.
    """
    n = benefit.shape[0]
    owner = np.full(n, -1, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    for k in range(n):
        stack[k] = n - 1 - k
    top = n
    bids = 0
    while top > 0 and bids < budget:
        top -= 1
        i = stack[top]
        v1 = -np.inf
        v2 = -np.inf
        best = 0
        for j in range(n):
            v = benefit[i, j] - prices[j]
            if v > v1:
                v2 = v1
                v1 = v
                best = j
            elif v > v2:
                v2 = v
        prices[best] += v1 - v2 + eps
        prev = owner[best]
        owner[best] = i
        if prev >= 0:
            stack[top] = prev
            top += 1
        bids += 1
    return owner, bids


def _complete_mapping(owner: np.ndarray) -> np.ndarray:
    n = owner.size
    mapping = np.full(n, -1, dtype=np.int64)
    hit = owner >= 0
    mapping[owner[hit]] = np.flatnonzero(hit)
    free_objects = np.flatnonzero(~hit)
    mapping[mapping < 0] = free_objects
    return mapping


def emd_approx(s1, s2, eps: float = DEFAULT_EPS, iters: int = DEFAULT_ITERS) -> AssignmentPlan:
    """Epsilon-scaling auction assignment.

    Phases run at eps_k = range / 4^k until eps_k <= eps * range (range is
    max - min of the cost matrix), keeping prices between phases. The
    cheapest complete assignment seen at the end of any phase is returned,
    so a smaller ``eps`` (a longer schedule) never returns a higher cost.
    ``iters`` caps the total number of bids.
    """
    a, b = as_points(s1), as_points(s2)
    _check_equal(a, b)
    if eps <= 0:
        raise ValueError("eps must be positive")
    cost = cost_matrix(a, b)
    n = len(a)
    spread = float(cost.max() - cost.min())
    if spread == 0.0 or n == 1:
        mapping = np.arange(n)
        return AssignmentPlan(mapping, plan_cost(a, b, mapping))

    benefit = -cost
    prices = np.zeros(n)
    best = None
    used = 0
    phase_eps = spread / 4.0
    target = eps * spread
    while True:
        owner, bids = _auction_phase(benefit, prices, phase_eps, iters - used)
        used += bids
        mapping = _complete_mapping(owner)
        plan = AssignmentPlan(mapping, plan_cost(a, b, mapping))
        if (owner >= 0).all() and (best is None or plan.total_cost < best.total_cost):
            best = plan
        if not (owner >= 0).all():
            fallback = best if best is not None and best.total_cost <= plan.total_cost else plan
            raise AuctionNotConverged(
                f"auction did not converge within {iters} bids (eps={phase_eps:.3g})", fallback)
        if phase_eps <= target:
            return best
        phase_eps /= 4.0


# ------------------------------------------------------------------- losses
def _batched(pred: Tensor, target) -> tuple:
    tgt = np.asarray(as_points(target) if not isinstance(target, np.ndarray) else target, dtype=float)
    if pred.ndim == 2:
        return pred.reshape(1, *pred.shape), tgt.reshape(1, *tgt.shape), True
    if tgt.ndim == 2:
        tgt = np.broadcast_to(tgt, pred.shape)
    return pred, tgt, False


def emd_loss(predicted: Tensor, target, eps: float = 1e-2, iters: int = DEFAULT_ITERS,
             exact: bool = False) -> Tensor:
    """Mean assigned distance with the assignment held fixed.

    The assignment is solved on detached coordinates; gradients flow only
    through the point coordinates. Batched inputs average over the batch.
    """
    pred, tgt, _ = _batched(T.as_tensor(predicted), target)
    if pred.shape != tgt.shape:
        raise ValueError(f"EMD loss needs matching shapes, got {pred.shape} and {tgt.shape}")
    matched = np.empty_like(tgt)
    for i in range(pred.shape[0]):
        plan = emd_exact(pred.data[i], tgt[i]) if exact else emd_approx(pred.data[i], tgt[i], eps, iters)
        matched[i] = tgt[i][plan.mapping]
    return T.norm(pred - matched, axis=-1).mean()


def chamfer_loss(predicted: Tensor, target) -> Tensor:
    """Chamfer distance with nearest-neighbour pairings held fixed."""
    pred, tgt, _ = _batched(T.as_tensor(predicted), target)
    total = None
    batch = pred.shape[0]
    for i in range(batch):
        p = pred[i]
        fwd, _ = nearest_indexed(p.data, tgt[i])
        bwd, _ = nearest_indexed(tgt[i], p.data)
        d_fwd = ((p - tgt[i][fwd]) ** 2).sum(axis=-1).mean()
        d_bwd = ((p[bwd] - tgt[i]) ** 2).sum(axis=-1).mean()
        term = d_fwd + d_bwd
        total = term if total is None else total + term
    return total * (1.0 / batch)


# ------------------------------------------------------------------- report
@dataclass
class MetricReport:
    cd: float
    emd: float
    per_object: dict = field(default_factory=dict)
    scale_note: str = SCALE_NOTE
    oracle: dict = None

    def __post_init__(self):
        if self.cd < 0 or self.emd < 0 or math.isnan(self.cd) or math.isnan(self.emd):
            raise ValueError(f"metrics must be non-negative, got cd={self.cd} emd={self.emd}")

    def to_dict(self) -> dict:
        d = {"cd": self.cd, "emd": self.emd,
             "per_object": {k: {"cd": v[0], "emd": v[1]} for k, v in sorted(self.per_object.items())},
             "scale_note": self.scale_note}
        if self.oracle is not None:
            d["oracle"] = {k: {"cd": v[0], "emd": v[1]} for k, v in sorted(self.oracle.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        per = {k: (v["cd"], v["emd"]) for k, v in d["per_object"].items()}
        oracle = d.get("oracle")
        if oracle is not None:
            oracle = {k: (v["cd"], v["emd"]) for k, v in oracle.items()}
        return cls(d["cd"], d["emd"], per, d["scale_note"], oracle)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls.from_dict(json.loads(text))
