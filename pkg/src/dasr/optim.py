"""Adam optimizer and gradient clipping for Parameter lists.

The moment buffers live in flat slabs covering the whole parameter list,
so one step costs a handful of large vector operations instead of a dozen
small ones per parameter.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Parameter


class AdamState:
    """Flat first/second-moment slabs plus a step counter.

    The slab layout is built from the first parameter list seen and reused
    while the names match; a parameter reappearing with a new shape is an
    error (moment buffers must shape-match their parameter).
    """

    def __init__(self):
        self.step_count: int = 0
        self._names: list[str] | None = None
        self._shapes: dict[str, tuple] = {}
        self._slices: list[tuple[int, int]] = []
        self._m: np.ndarray | None = None
        self._v: np.ndarray | None = None
        self._g: np.ndarray | None = None

    def _plan(self, params: Sequence[Parameter]) -> None:
        names = [p.name for p in params]
        for p in params:
            known = self._shapes.get(p.name)
            if known is not None and known != p.shape:
                raise ValueError(
                    f"adam: moment buffer shape {known} does not match "
                    f"parameter {p.name} shape {p.shape}")
        if self._names == names:
            return
        old = {}
        if self._names is not None:
            for name, (ofs, n) in zip(self._names, self._slices):
                old[name] = (self._m[ofs:ofs + n].copy(),
                             self._v[ofs:ofs + n].copy())
        total = sum(p.size for p in params)
        self._m = np.zeros(total, dtype=np.float32)
        self._v = np.zeros(total, dtype=np.float32)
        self._g = np.empty(total, dtype=np.float32)
        self._slices = []
        ofs = 0
        for p in params:
            self._slices.append((ofs, p.size))
            if p.name in old:
                self._m[ofs:ofs + p.size] = old[p.name][0]
                self._v[ofs:ofs + p.size] = old[p.name][1]
            self._shapes[p.name] = p.shape
            ofs += p.size
        self._names = names


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    for p in params:
        if p.grad is None:
            raise ValueError(f"adam: parameter {p.name} has no gradient")
    state._plan(params)
    g, m, v = state._g, state._m, state._v
    for p, (ofs, n) in zip(params, state._slices):
        g[ofs:ofs + n] = p.grad.reshape(-1)
    state.step_count += 1
    t = state.step_count
    m *= beta1
    m += (1.0 - beta1) * g
    np.square(g, out=g)
    v *= beta2
    v += (1.0 - beta2) * g
    denom = np.sqrt(v)
    denom *= 1.0 / np.sqrt(1.0 - beta2 ** t)
    denom += eps
    np.divide(m, denom, out=denom)
    denom *= lr / (1.0 - beta1 ** t)
    for p, (ofs, n) in zip(params, state._slices):
        p.data -= denom[ofs:ofs + n].reshape(p.shape)
        p.grad = None


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm. ``max_norm <= 0`` disables clipping.
    """
    total = 0.0
    for p in params:
        if p.grad is not None:
            flat = p.grad.reshape(-1)
            total += float(np.dot(flat, flat))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = np.float32(max_norm / (norm + 1e-12))
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm
