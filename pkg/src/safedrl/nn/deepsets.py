"""Permutation-invariant encoder over real-vehicle and ghost-vehicle element sets.

Every element is one entity's 5-step history (d, v, d_e per step, oldest first).
Element rows are sorted lexicographically before pooling so the pooled sums are
accumulated in a canonical order and the encoder output is bit-identical under
any permutation of the input sets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..perception import HISTORY, StackedState
from .layers import MLP

D_SCALE = 50.0
V_SCALE = 10.0
ELEMENT_WIDTH = 3 * HISTORY
EGO_WIDTH = 3 * HISTORY


def _canonical(rows: np.ndarray) -> np.ndarray:
    if len(rows) < 2:
        return rows
    order = np.lexsort(rows.T[::-1])
    return rows[order]


@dataclass
class StateFeatures:
    ego: np.ndarray     # (EGO_WIDTH,)
    real: np.ndarray    # (n, ELEMENT_WIDTH), canonical order
    ghost: np.ndarray   # (m, ELEMENT_WIDTH), canonical order


def featurize(state: StackedState) -> StateFeatures:
    """Per-entity histories; entities missing in older steps reuse their earliest row."""
    observations = state.observations
    ego = np.array([[o.ego.d_stl / D_SCALE, o.ego.v / V_SCALE, o.ego.d_goal / D_SCALE]
                    for o in observations]).ravel()
    groups = []
    for pick in (lambda o: o.vehicles, lambda o: o.ghosts):
        steps = [{(e.lane_id, e.entity_id): (e.d / D_SCALE, e.v / V_SCALE, e.d_e / D_SCALE)
                  for e in pick(o)} for o in observations]
        rows = []
        for key in steps[-1]:
            hist = [step.get(key) for step in steps]
            first = next(h for h in hist if h is not None)
            filled = []
            for h in hist:
                first = first if h is None else h
                filled.append(first)
            rows.append(np.ravel(filled))
        arr = np.array(rows, dtype=float).reshape(-1, ELEMENT_WIDTH)
        groups.append(_canonical(arr))
    return StateFeatures(ego, groups[0], groups[1])


@dataclass
class SetBatch:
    ego: np.ndarray       # (B, EGO_WIDTH)
    real: np.ndarray      # (E_r, ELEMENT_WIDTH)
    real_seg: np.ndarray  # (E_r,) index of the owning state
    ghost: np.ndarray
    ghost_seg: np.ndarray

    @property
    def size(self) -> int:
        return len(self.ego)

    @classmethod
    def from_features(cls, feats) -> "SetBatch":
        feats = list(feats)
        ego = np.stack([f.ego for f in feats]) if feats else np.zeros((0, EGO_WIDTH))
        parts = []
        for attr in ("real", "ghost"):
            arrays = [getattr(f, attr) for f in feats]
            seg = np.repeat(np.arange(len(feats)), [len(a) for a in arrays])
            rows = np.concatenate(arrays) if arrays else np.zeros((0, ELEMENT_WIDTH))
            parts += [rows.reshape(-1, ELEMENT_WIDTH), seg]
        return cls(ego, *parts)


class DeepSetsEncoder:
    """feature = trunk(rho_real(sum phi_real ++ ego) ++ rho_ghost(sum phi_ghost ++ ego))."""

    def __init__(self, width: int = 64, element_width: int = ELEMENT_WIDTH,
                 ego_width: int = EGO_WIDTH, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.width = width
        self.element_width = element_width
        self.ego_width = ego_width
        self.phi_real = MLP([element_width, width, width], rng, "phi_real", relu_out=True)
        self.phi_ghost = MLP([element_width, width, width], rng, "phi_ghost", relu_out=True)
        self.rho_real = MLP([width + ego_width, width], rng, "rho_real", relu_out=True)
        self.rho_ghost = MLP([width + ego_width, width], rng, "rho_ghost", relu_out=True)
        self.trunk = MLP([2 * width, width], rng, "trunk", relu_out=True)
        self._cache = None

    @property
    def nets(self) -> tuple:
        return (self.phi_real, self.phi_ghost, self.rho_real, self.rho_ghost, self.trunk)

    def _pool(self, phi: MLP, rows: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
        pooled = np.zeros((n, self.width))
        if len(rows):
            if rows.shape[1] != self.element_width:
                raise ConfigurationError(
                    f"element width {rows.shape[1]} != encoder width {self.element_width}")
            h = phi.forward(rows)
            # seg is sorted, so every state's elements are contiguous
            starts = np.flatnonzero(np.r_[True, seg[1:] != seg[:-1]])
            pooled[seg[starts]] = np.add.reduceat(h, starts, axis=0)
        return pooled

    def forward(self, batch: SetBatch) -> np.ndarray:
        if batch.ego.shape[1] != self.ego_width:
            raise ConfigurationError(f"ego width {batch.ego.shape[1]} != {self.ego_width}")
        n = batch.size
        pooled_r = self._pool(self.phi_real, batch.real, batch.real_seg, n)
        pooled_g = self._pool(self.phi_ghost, batch.ghost, batch.ghost_seg, n)
        h_r = self.rho_real.forward(np.concatenate([pooled_r, batch.ego], axis=1))
        h_g = self.rho_ghost.forward(np.concatenate([pooled_g, batch.ego], axis=1))
        out = self.trunk.forward(np.concatenate([h_r, h_g], axis=1))
        self._cache = batch
        return out

    def backward(self, g: np.ndarray) -> None:
        batch = self._cache
        w = self.width
        g_cat = self.trunk.backward(g)
        g_r = self.rho_real.backward(g_cat[:, :w])[:, :w]
        g_g = self.rho_ghost.backward(g_cat[:, w:])[:, :w]
        if len(batch.real):
            self.phi_real.backward(g_r[batch.real_seg])
        if len(batch.ghost):
            self.phi_ghost.backward(g_g[batch.ghost_seg])

    def params(self) -> dict:
        out = {}
        for net in self.nets:
            out.update(net.params())
        return out

    def grads(self) -> dict:
        out = {}
        for net in self.nets:
            out.update(net.grads())
        return out
