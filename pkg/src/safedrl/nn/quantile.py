"""Cosine quantile embedding, action-value heads, and the (quantile) Huber losses."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from .layers import MLP, Linear


def cosine_basis(taus: np.ndarray, order: int) -> np.ndarray:
    """cos(pi * j * tau) for j = 0..order-1; shape (len(taus), order)."""
    taus = np.asarray(taus, dtype=float).reshape(-1)
    if np.any((taus < 0.0) | (taus > 1.0)):
        raise ValueError("quantile levels must lie in [0, 1]")
    out = np.empty((order, len(taus)))
    out[0] = 1.0
    if order > 1:
        c = np.cos(np.pi * taus)
        out[1] = c
        two_c = 2.0 * c
        # cos((j+1)x) = 2 cos(x) cos(jx) - cos((j-1)x)
        for j in range(2, order):
            np.multiply(two_c, out[j - 1], out=out[j])
            out[j] -= out[j - 2]
    return out.T


class QuantileEmbedding:
    def __init__(self, order: int = 64, width: int = 64, rng: np.random.Generator | None = None):
        if order < 1:
            raise ConfigurationError("cosine basis order must be >= 1")
        self.order = order
        self.linear = Linear(order, width, rng, "tau_embed")
        self._mask = None

    def forward(self, taus: np.ndarray) -> np.ndarray:
        x = self.linear.forward(cosine_basis(taus, self.order))
        self._mask = x > 0.0
        return x * self._mask

    def backward(self, g: np.ndarray) -> None:
        self.linear.backward(g * self._mask)

    def params(self) -> dict:
        return self.linear.params()

    def grads(self) -> dict:
        return self.linear.grads()


class ImplicitQuantileHead:
    """Z(tau, a) = head(feature * embed(tau)); feature rows are repeated per tau."""

    def __init__(self, width: int = 64, n_actions: int = 3, order: int = 64,
                 rng: np.random.Generator | None = None):
        self.embedding = QuantileEmbedding(order, width, rng)
        self.head = MLP([width, width, n_actions], rng, "iqn_head")
        self.n_actions = n_actions
        self._cache = None

    def forward(self, feature: np.ndarray, taus: np.ndarray) -> np.ndarray:
        """feature (B, W), taus (B, N) -> Z (B, N, A)."""
        B, N = taus.shape
        emb = self.embedding.forward(taus.reshape(-1))
        rep = np.repeat(feature, N, axis=0)
        z = self.head.forward(rep * emb)
        self._cache = (rep, emb, B, N)
        return z.reshape(B, N, self.n_actions)

    def backward(self, g: np.ndarray) -> np.ndarray:
        rep, emb, B, N = self._cache
        g_prod = self.head.backward(g.reshape(B * N, self.n_actions))
        self.embedding.backward(g_prod * rep)
        return (g_prod * emb).reshape(B, N, -1).sum(axis=1)

    def params(self) -> dict:
        out = self.embedding.params()
        out.update(self.head.params())
        return out

    def grads(self) -> dict:
        out = self.embedding.grads()
        out.update(self.head.grads())
        return out


def huber(u: np.ndarray, kappa: float = 1.0):
    """Huber loss and its derivative; kappa = 0 gives |u|."""
    a = np.abs(u)
    if kappa <= 0.0:
        return a, np.sign(u)
    quad = a <= kappa
    loss = np.where(quad, 0.5 * u * u, kappa * (a - 0.5 * kappa))
    grad = np.where(quad, u, kappa * np.sign(u))
    return loss, grad


def quantile_huber_loss(pred: np.ndarray, taus: np.ndarray, target: np.ndarray,
                        kappa: float = 1.0):
    """Pairwise quantile Huber loss.

    pred (B, N) at levels taus (B, N); target (B, N').  The loss is
    mean_b sum_i mean_j |tau_i - 1{u_ij < 0}| * L_kappa(u_ij) / kappa with
    u_ij = target_j - pred_i (L_0 / 0 read as |u|).  Returns (loss, dloss/dpred).
    """
    u = target[:, None, :] - pred[:, :, None]
    l, dl = huber(u, kappa)
    scale = kappa if kappa > 0.0 else 1.0
    w = np.abs(taus[:, :, None] - (u < 0.0))
    B, _, Np = u.shape
    loss = float((w * l).sum() / (scale * Np * B))
    grad = -(w * dl).sum(axis=2) / (scale * Np * B)
    return loss, grad


def pinball_loss(pred: np.ndarray, taus: np.ndarray, target: np.ndarray) -> float:
    """Reference quantile (pinball) loss with the same normalisation."""
    total = 0.0
    B, N = pred.shape
    Np = target.shape[1]
    for b in range(B):
        for i in range(N):
            for j in range(Np):
                u = target[b, j] - pred[b, i]
                total += u * (taus[b, i] - (1.0 if u < 0.0 else 0.0))
    return total / (Np * B)
