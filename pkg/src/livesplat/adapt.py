"""Motion-aware cloud adaptation: clone/prune, binary masking, simplification.

Two statistics drive adaptation, both windowed between adapt events:
the per-point render-path positional gradient magnitude and the per-point
canonical-space motion relative to the first frame. A point whose windowed
maximum stays under the threshold is pruned; one that exceeds it is cloned.
Independently, a learnable per-point mask (binarized straight-through) can
drive a point's effective scale and opacity to zero, after which it is
removed exactly, with no change to the rendered image.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .anchors import AnchorBindings
from .cloud import GaussianCloud
from .errors import AccumulatorDesyncError, NoObservationsError
from .mathutil import as_f64, sigmoid


@dataclass
class AdaptConfig:
    threshold: float = 0.01           # idx rule on max(grad, motion)
    mask_threshold: float = 0.01      # straight-through binarization
    interval: int = 1500              # iterations between adapt events
    clone_jitter: float = 0.1         # times min effective scale component
    min_points: int = 256
    max_points: int = 25_000
    motion_scale: float = 1.0         # 1 / scene bounding radius

    def validate(self):
        if self.threshold <= 0 or not (0 < self.mask_threshold < 1):
            raise ValueError("bad adapt thresholds")
        if self.interval < 1:
            raise ValueError("adapt interval must be >= 1")
        return self


class GradAccumulator:
    """Windowed positional-gradient and motion statistics per point."""

    def __init__(self, n: int):
        self.grad_sum = np.zeros(n)
        self.motion_sum = np.zeros(n)
        self.grad_count = 0
        self.motion_count = 0
        self.iterations = 0

    def __len__(self):
        return self.grad_sum.shape[0]

    def add_gradients(self, grad_norms):
        g = as_f64(grad_norms).reshape(-1)
        if g.shape[0] != len(self):
            raise AccumulatorDesyncError(
                f"gradient array length {g.shape[0]} != accumulator {len(self)}")
        self.grad_sum += g
        self.grad_count += 1

    def add_motion(self, displacements):
        d = as_f64(displacements).reshape(-1)
        if d.shape[0] != len(self):
            raise AccumulatorDesyncError(
                f"motion array length {d.shape[0]} != accumulator {len(self)}")
        self.motion_sum += d
        self.motion_count += 1

    def mean_grad(self):
        return self.grad_sum / max(self.grad_count, 1)

    def mean_motion(self, motion_scale=1.0):
        return self.motion_sum * (motion_scale / max(self.motion_count, 1))

    def reset(self, n: Optional[int] = None):
        if n is None:
            n = len(self)
        self.grad_sum = np.zeros(n)
        self.motion_sum = np.zeros(n)
        self.grad_count = 0
        self.motion_count = 0
        self.iterations = 0


def accumulate_step(positional_grad_norms, motion_displacements,
                    acc: GradAccumulator) -> GradAccumulator:
    """Fold one optimization step's statistics into the accumulator."""
    acc.add_gradients(positional_grad_norms)
    if motion_displacements is not None:
        acc.add_motion(motion_displacements)
    acc.iterations += 1
    return acc


def compute_idx(acc: GradAccumulator, threshold: float,
                motion_scale: float = 1.0) -> np.ndarray:
    """Binary keep/clone indicator: 1 iff max(mean grad, mean motion) >= eps.

    Both statistics are normalized to per-observation means; motion is made
    dimensionless with the scene bounding radius before the comparison.
    """
    if acc.grad_count == 0 or acc.motion_count == 0:
        raise NoObservationsError("no observations accumulated in this window")
    stat = np.maximum(acc.mean_grad(), acc.mean_motion(motion_scale))
    return (stat >= threshold).astype(np.int8)


def straight_through(mask_logit, threshold: float = 0.01):
    """Binary forward value and the gradient factor of the smooth branch.

    Forward: 1 where sigmoid(logit) > threshold, else 0. Backward: the
    binarization is gradient-transparent, so d forward / d logit is taken as
    the sigmoid derivative.
    """
    s = sigmoid(mask_logit)
    forward = (s > threshold).astype(np.float64)
    grad_factor = s * (1.0 - s)
    return forward, grad_factor


@dataclass
class AdaptEvent:
    """What one adapt event did, for the metrics stream."""

    before: int
    cloned: int
    pruned: int
    simplified: int
    budget_dropped: int
    spared: int
    after: int


def clone_prune(cloud: GaussianCloud, idx, config: AdaptConfig,
                acc: GradAccumulator, rng: np.random.Generator):
    """Prune idx=0 points, clone idx=1 points with jittered offsets.

    Clones inherit every attribute and the parent's anchor-group id; the
    offset is perturbed with sigma = clone_jitter * min effective scale.
    The total is capped at the budget (lowest-statistic clones dropped
    first); if pruning would fall below the minimum surviving count, the
    highest-statistic idx=0 points are spared and the event is flagged.
    """
    idx = np.asarray(idx).reshape(-1).astype(bool)
    if idx.shape[0] != cloud.count:
        raise AccumulatorDesyncError("idx length does not match cloud")
    stat = np.maximum(acc.mean_grad(), acc.mean_motion(config.motion_scale))

    keep = idx.copy()
    spared = 0
    n_keep = int(keep.sum())
    if n_keep < config.min_points:
        need = min(config.min_points, cloud.count) - n_keep
        zeros = np.nonzero(~keep)[0]
        if need > 0 and zeros.size:
            order = zeros[np.argsort(-stat[zeros], kind="stable")]
            keep[order[:need]] = True
            spared = min(need, order.size)

    kept_indices = np.nonzero(keep)[0]
    clone_indices = np.nonzero(idx & keep)[0]

    budget_dropped = 0
    total = kept_indices.size + clone_indices.size
    if total > config.max_points:
        overflow = total - config.max_points
        order = clone_indices[np.argsort(stat[clone_indices], kind="stable")]
        dropped = set(order[:overflow].tolist())
        clone_indices = np.asarray(
            [i for i in clone_indices if i not in dropped], dtype=np.int64)
        budget_dropped = overflow

    survivors = cloud.select(kept_indices)
    if clone_indices.size:
        clones = cloud.select(clone_indices)
        min_scale = np.exp(as_f64(clones.log_scale)).min(axis=1)
        jitter = rng.standard_normal((clone_indices.size, 3)) \
            * (config.clone_jitter * min_scale)[:, None]
        clones.offset = (as_f64(clones.offset) + jitter).astype(np.float32)
        new_cloud = GaussianCloud(
            offset=np.concatenate([survivors.offset, clones.offset]),
            log_scale=np.concatenate([survivors.log_scale, clones.log_scale]),
            rotation=np.concatenate([survivors.rotation, clones.rotation]),
            opacity_logit=np.concatenate([survivors.opacity_logit,
                                          clones.opacity_logit]),
            color_dc=np.concatenate([survivors.color_dc, clones.color_dc]),
            mask_logit=np.concatenate([survivors.mask_logit, clones.mask_logit]),
            anchor=AnchorBindings.concat(survivors.anchor, clones.anchor),
        )
    else:
        new_cloud = survivors

    event = AdaptEvent(
        before=cloud.count,
        cloned=int(clone_indices.size),
        pruned=int(cloud.count - kept_indices.size),
        simplified=0,
        budget_dropped=budget_dropped,
        spared=spared,
        after=new_cloud.count,
    )
    # keep the parent-to-output mapping so optimizer state can follow
    parent_map = np.concatenate([kept_indices, clone_indices])
    clone_flag = np.zeros(parent_map.size, dtype=bool)
    clone_flag[kept_indices.size:] = True
    return new_cloud, event, parent_map, clone_flag


def simplify_small(cloud: GaussianCloud, mask_threshold: float = 0.01):
    """Permanently remove points whose straight-through forward value is 0.

    Those points have masked scale and opacity exactly zero, so removal
    leaves any rendered image unchanged.
    """
    forward, _ = straight_through(cloud.mask_logit, mask_threshold)
    keep = np.nonzero(forward > 0.0)[0]
    removed = cloud.count - keep.size
    if removed == 0:
        return cloud, 0, np.arange(cloud.count)
    return cloud.select(keep), int(removed), keep
