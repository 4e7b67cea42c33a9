"""Two-layer dense value network with hand-rolled backprop and Adam.

Kept in plain numpy (float64) so gradients are exactly checkable against
finite differences and training is bit-reproducible under a fixed seed.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class QNetwork:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def initialize(cls, state_dim: int, hidden: int, n_actions: int, rng: np.random.Generator) -> "QNetwork":
        scale1 = np.sqrt(2.0 / state_dim)
        scale2 = np.sqrt(2.0 / hidden)
        return cls(
            w1=rng.normal(0.0, scale1, size=(state_dim, hidden)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, scale2, size=(hidden, n_actions)),
            b2=np.zeros(n_actions),
        )

    @property
    def state_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def n_actions(self) -> int:
        return self.w2.shape[1]

    def parameters(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "QNetwork":
        return QNetwork(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def copy_from(self, other: "QNetwork") -> None:
        self.w1[...] = other.w1
        self.b1[...] = other.b1
        self.w2[...] = other.w2
        self.b2[...] = other.b2

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q-values, shape (batch, n_actions); accepts a single vector too."""
        single = x.ndim == 1
        if single:
            x = x[None, :]
        q = self._forward(x)[0]
        return q[0] if single else q

    def _forward(self, x: np.ndarray):
        pre = x @ self.w1 + self.b1
        h = np.maximum(pre, 0.0)
        q = h @ self.w2 + self.b2
        return q, pre, h

    def backward(self, x: np.ndarray, dq: np.ndarray) -> list[np.ndarray]:
        """Gradients of a scalar loss wrt parameters, given dLoss/dQ.

        ReLU gradient at exactly zero pre-activation is defined as 0.
        """
        _, pre, h = self._forward(x)
        dw2 = h.T @ dq
        db2 = dq.sum(axis=0)
        dh = dq @ self.w2.T
        dpre = dh * (pre > 0.0)
        dw1 = x.T @ dpre
        db1 = dpre.sum(axis=0)
        return [dw1, db1, dw2, db2]

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for p in self.parameters():
            digest.update(np.ascontiguousarray(p).tobytes())
        return digest.hexdigest()

    def to_json(self, seed: int | None = None, config_hash: str | None = None) -> dict:
        return {
            "version": 1,
            "layers": [self.state_dim, self.w1.shape[1], self.n_actions],
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
            "seed": seed,
            "config_hash": config_hash,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QNetwork":
        net = cls(
            w1=np.asarray(obj["w1"], dtype=float),
            b1=np.asarray(obj["b1"], dtype=float),
            w2=np.asarray(obj["w2"], dtype=float),
            b2=np.asarray(obj["b2"], dtype=float),
        )
        if not all(np.isfinite(p).all() for p in net.parameters()):
            raise ValueError("weight artifact contains non-finite values")
        return net

    def save(self, path, seed: int | None = None, config_hash: str | None = None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(seed=seed, config_hash=config_hash), fh)

    @classmethod
    def load(cls, path) -> "QNetwork":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class Adam:
    lr: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        for g in grads:
            if not np.isfinite(g).all():
                raise FloatingPointError("non-finite gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
