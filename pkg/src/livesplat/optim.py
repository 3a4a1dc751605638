"""Adam with per-group learning rates over named parameter arrays.

Parameters and moments are stored float32 (they persist in checkpoints);
every update is computed in float64 and rounded back, so an interrupted and
resumed run applies the exact same rounding sequence as an uninterrupted one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .mathutil import as_f32, as_f64

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-15


@dataclass
class LearningRates:
    """Per-group learning rates; warm-up groups included."""

    offset: float = 1e-5
    scale: float = 5e-3
    rotation: float = 1e-3
    opacity: float = 5e-2
    vertex: float = 2.5e-3
    mask: float = 1e-4
    texture: float = 2e-4
    illumination: float = 1e-4

    def validate(self):
        for name, value in self.__dict__.items():
            if value <= 0:
                raise ValueError(f"learning rate {name} must be positive")
        return self


class Adam:
    """First/second-moment adaptive optimizer over named arrays."""

    def __init__(self):
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def ensure(self, name: str, shape):
        if name not in self.m or self.m[name].shape != tuple(shape):
            self.m[name] = np.zeros(shape, dtype=np.float32)
            self.v[name] = np.zeros(shape, dtype=np.float32)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
             lrs: Dict[str, float]) -> List[str]:
        """One update over all groups; returns names whose step was skipped
        because of non-finite gradients."""
        self.t += 1
        skipped = []
        bc1 = 1.0 - BETA1 ** self.t
        bc2 = 1.0 - BETA2 ** self.t
        for name, p in params.items():
            g = as_f64(grads[name])
            self.ensure(name, p.shape)
            if not np.all(np.isfinite(g)):
                skipped.append(name)
                continue
            m = as_f64(self.m[name])
            v = as_f64(self.v[name])
            m = BETA1 * m + (1.0 - BETA1) * g
            v = BETA2 * v + (1.0 - BETA2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            update = lrs[name] * m_hat / (np.sqrt(v_hat) + EPS)
            p[...] = as_f32(as_f64(p) - update).reshape(p.shape)
            self.m[name] = as_f32(m).reshape(p.shape)
            self.v[name] = as_f32(v).reshape(p.shape)
        return skipped

    def remap(self, name: str, parent_map, clone_flag):
        """Resize one group's moments after clone/prune.

        Survivors keep their moments; clones start from zero.
        """
        if name not in self.m:
            return
        m = self.m[name][parent_map]
        v = self.v[name][parent_map]
        m[clone_flag] = 0.0
        v[clone_flag] = 0.0
        self.m[name] = m
        self.v[name] = v

    def state_arrays(self):
        out = {}
        for name in sorted(self.m):
            out[f"adam_m_{name}"] = self.m[name]
            out[f"adam_v_{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, t):
        self.m = {}
        self.v = {}
        self.t = int(t)
        for key, arr in arrays.items():
            if key.startswith("adam_m_"):
                self.m[key[len("adam_m_"):]] = arr.astype(np.float32)
            elif key.startswith("adam_v_"):
                self.v[key[len("adam_v_"):]] = arr.astype(np.float32)
