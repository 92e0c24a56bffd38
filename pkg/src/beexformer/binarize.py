"""Binarization-aware training primitives.

``binarize`` is the second-order polynomial approximation of ``sign``
used in the forward pass of training; its hat-shaped derivative
``binarize_grad`` is what the tape applies at every binarization site, for
weights and activations alike.  Optimizers update the real-valued latent
weights, which are clamped just inside (-1, 1) after every step so that
``binarize_grad`` never vanishes permanently.  ``freeze`` replaces each
latent matrix by its sign, bit-packed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .autograd import Tensor, elementwise
from .errors import ConfigError, ContractError
from .packed import PackedMatrix, pack

CLAMP_EPS = 1e-3


def sign_values(r: np.ndarray) -> np.ndarray:
    return np.where(r < 0, -1.0, 1.0)


def binarize_values(r: np.ndarray) -> np.ndarray:
    return np.where(r < -1, -1.0,
                    np.where(r < 0, 2 * r + r * r,
                             np.where(r < 1, 2 * r - r * r, 1.0)))


def binarize_grad_values(r: np.ndarray) -> np.ndarray:
    inside = (r >= -1) & (r < 1)
    return np.where(inside, 2.0 * (1.0 - np.abs(r)), 0.0)


def clip_values(r: np.ndarray) -> np.ndarray:
    return np.clip(r, -1.0, 1.0)


def clip_grad_values(r: np.ndarray) -> np.ndarray:
    return ((r > -1) & (r < 1)).astype(np.float64)


def sign(r) -> Tensor:
    """-1 for r < 0, +1 for r >= 0.  Not differentiable; never joins the tape."""
    return elementwise(r, sign_values, None, "sign")


def binarize(r) -> Tensor:
    return elementwise(r, binarize_values, binarize_grad_values, "binarize")


def binarize_grad(r) -> Tensor:
    return elementwise(r, binarize_grad_values, None, "binarize_grad")


def clip_binarize(r) -> Tensor:
    return elementwise(r, clip_values, clip_grad_values, "clip_binarize")


BINARIZERS: dict[str, Callable[[Tensor], Tensor]] = {
    "b2": binarize,
    "clip": clip_binarize,
    "sign": sign,
}


def get_binarizer(name: str) -> Callable[[Tensor], Tensor]:
    try:
        return BINARIZERS[name]
    except KeyError:
        raise ConfigError(f"unknown binarizer {name!r}; expected one of {sorted(BINARIZERS)}") from None


class LatentParameter:
    """Real-valued shadow weights whose binarized view the network computes with."""

    def __init__(self, name: str, values):
        self.name = name
        self.latent = Tensor(np.array(values, dtype=np.float64), requires_grad=True)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.latent.shape

    @property
    def grad(self) -> np.ndarray | None:
        return self.latent.grad

    def zero_grad(self) -> None:
        self.latent.grad = None

    def clamp(self, eps: float = CLAMP_EPS) -> None:
        np.clip(self.latent.data, -1.0 + eps, 1.0 - eps, out=self.latent.data)

    def __repr__(self) -> str:
        return f"LatentParameter({self.name!r}, shape={self.shape})"


@dataclass(frozen=True, eq=False)
class FrozenParameter:
    name: str
    packed: PackedMatrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.packed.shape

    def values(self) -> np.ndarray:
        return self.packed.unpack()

    def __eq__(self, other) -> bool:
        return isinstance(other, FrozenParameter) and self.name == other.name and self.packed == other.packed


class SGD:
    def step(self, tensors: Iterable[Tensor], lr: float) -> None:
        for t in tensors:
            if t.grad is not None:
                t.data -= lr * t.grad


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._state: dict[int, list] = {}

    def step(self, tensors: Iterable[Tensor], lr: float) -> None:
        for t in tensors:
            if t.grad is None:
                continue
            state = self._state.setdefault(id(t), [0, np.zeros_like(t.data), np.zeros_like(t.data)])
            state[0] += 1
            step, m, v = state
            m *= self.beta1
            m += (1 - self.beta1) * t.grad
            v *= self.beta2
            v += (1 - self.beta2) * t.grad * t.grad
            m_hat = m / (1 - self.beta1 ** step)
            v_hat = v / (1 - self.beta2 ** step)
            t.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def bat_step(params: Sequence[LatentParameter], optimizer, lr: float, eps: float = CLAMP_EPS) -> None:
    """One optimizer update of the latent weights followed by the clamp.

    The gradients already include the ``binarize_grad`` factor of each
    weight's binarization site, so the optimizer sees dL/dW^r directly.
    """
    missing = [p.name for p in params if p.grad is None]
    if missing:
        raise ContractError(f"bat_step called before backward(); no grad for {missing[:3]}")
    optimizer.step([p.latent for p in params], lr)
    for p in params:
        p.clamp(eps)


def freeze(params: Sequence[LatentParameter]) -> list[FrozenParameter]:
    return [FrozenParameter(p.name, pack(sign_values(np.atleast_2d(p.latent.data)))) for p in params]
