"""Language, task and invertible adapters and their per-layer composition.

Bottleneck adapters (language and task) map ``x -> U(relu(D x)) + residual``
where the residual is the layer's feed-forward output, never the adapter
input. The invertible adapter is an additive coupling on the two halves of
an embedding vector and has an exact inverse sharing the same parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .tensor import Parameter, Tensor, concat, linear, relu, split_half


class ConfigError(ValueError):
    """Dimensions of an adapter, stack, or model do not agree."""


@dataclass
class AdapterConfig:
    """Bottleneck sizes. ``None`` means the default reduction of the hidden size.

    Defaults: language ``h/2``, task ``h/16``; the invertible coupling always
    projects ``h/2 -> h/4 -> h/2``.
    """

    d_lang: int | None = None
    d_task: int | None = None
    bias: bool = True
    init_std: float = 0.02

    def resolve(self, h: int) -> "AdapterConfig":
        if h % 4:
            raise ConfigError(f"hidden size {h} must be divisible by 4")
        d_lang = h // 2 if self.d_lang is None else self.d_lang
        d_task = max(h // 16, 1) if self.d_task is None else self.d_task
        if d_lang < 0 or d_task < 0:
            raise ConfigError("adapter bottleneck dimensions must be non-negative")
        return AdapterConfig(d_lang, d_task, self.bias, self.init_std)

    @staticmethod
    def d_inv(h: int) -> int:
        return h // 4


def _projection(prefix: str, n_in: int, n_out: int, rng, std: float, zero: bool,
                bias: bool, dtype) -> tuple[Parameter, Parameter | None]:
    if zero:
        w = np.zeros((n_in, n_out), dtype=dtype)
    else:
        w = (rng.standard_normal((n_in, n_out)) * std).astype(dtype)
    b = Parameter(np.zeros(n_out, dtype=dtype), f"{prefix}.bias") if bias else None
    return Parameter(w, f"{prefix}.weight"), b


class BottleneckAdapter:
    """Down-projection ``h -> d``, ReLU, up-projection ``d -> h``.

    The up-projection starts at zero so a fresh adapter passes its residual
    through unchanged.
    """

    def __init__(self, name: str, h: int, d: int, rng: np.random.Generator | None = None,
                 bias: bool = True, init_std: float = 0.02, dtype=np.float32):
        if d < 1:
            raise ConfigError(f"adapter {name}: bottleneck dimension must be >= 1, got {d}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name, self.h, self.d = name, h, d
        self.down_w, self.down_b = _projection(f"{name}.down", h, d, rng, init_std, False, bias, dtype)
        self.up_w, self.up_b = _projection(f"{name}.up", d, h, rng, init_std, True, bias, dtype)

    def parameters(self) -> list[Parameter]:
        return [p for p in (self.down_w, self.down_b, self.up_w, self.up_b) if p is not None]

    def __call__(self, x: Tensor, residual: Tensor) -> Tensor:
        if x.shape[-1] != self.h or residual.shape[-1] != self.h:
            raise ConfigError(
                f"adapter {self.name} expects hidden size {self.h}, got {x.shape} / {residual.shape}")
        z = relu(linear(x, self.down_w, self.down_b))
        return linear(z, self.up_w, self.up_b) + residual


def language_adapter_forward(h_l: Tensor, r_l: Tensor, adapter: BottleneckAdapter) -> Tensor:
    """``U(relu(D h_l)) + r_l`` for one layer."""
    return adapter(h_l, r_l)


def task_adapter_forward(lang_out: Tensor, r_l: Tensor, adapter: BottleneckAdapter) -> Tensor:
    """``U(relu(D lang_out)) + r_l``; the residual is the feed-forward output, not ``lang_out``."""
    return adapter(lang_out, r_l)


class CouplingFunction:
    """``x -> U(relu(D x))`` mapping ``h/2 -> h/4 -> h/2``."""

    def __init__(self, name: str, h: int, rng, bias: bool = True, init_std: float = 0.02,
                 dtype=np.float32):
        self.name = name
        half, quarter = h // 2, h // 4
        self.down_w, self.down_b = _projection(f"{name}.down", half, quarter, rng, init_std, False, bias, dtype)
        self.up_w, self.up_b = _projection(f"{name}.up", quarter, half, rng, init_std, True, bias, dtype)

    def parameters(self) -> list[Parameter]:
        return [p for p in (self.down_w, self.down_b, self.up_w, self.up_b) if p is not None]

    def __call__(self, x: Tensor) -> Tensor:
        return linear(relu(linear(x, self.down_w, self.down_b)), self.up_w, self.up_b)


class InvertibleAdapter:
    """Additive coupling on the halves ``e = [e1, e2]`` of an embedding vector.

    forward:  o1 = F(e2) + e1,  o2 = G(o1) + e2
    inverse:  e2 = o2 - G(o1),  e1 = o1 - F(e2)
    """

    def __init__(self, name: str, h: int, rng: np.random.Generator | None = None,
                 bias: bool = True, init_std: float = 0.02, dtype=np.float32):
        if h % 4:
            raise ConfigError(f"invertible adapter needs hidden size divisible by 4, got {h}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name, self.h = name, h
        self.F = CouplingFunction(f"{name}.F", h, rng, bias, init_std, dtype)
        self.G = CouplingFunction(f"{name}.G", h, rng, bias, init_std, dtype)

    def parameters(self) -> list[Parameter]:
        return self.F.parameters() + self.G.parameters()

    def _check(self, x: Tensor) -> None:
        if x.shape[-1] != self.h:
            raise ConfigError(f"invertible adapter {self.name} expects size {self.h}, got {x.shape}")

    def forward(self, e: Tensor) -> Tensor:
        self._check(e)
        e1, e2 = split_half(e)
        o1 = self.F(e2) + e1
        o2 = self.G(o1) + e2
        return concat([o1, o2], axis=-1)

    def inverse(self, o: Tensor) -> Tensor:
        self._check(o)
        o1, o2 = split_half(o)
        e2 = o2 - self.G(o1)
        e1 = o1 - self.F(e2)
        return concat([e1, e2], axis=-1)

    __call__ = forward


def invertible_forward(e: Tensor, adapter: InvertibleAdapter) -> Tensor:
    if e.shape[-1] % 2:
        raise ConfigError(f"cannot split odd-sized vector of shape {e.shape}")
    return adapter.forward(e)


def invertible_inverse(o: Tensor, adapter: InvertibleAdapter) -> Tensor:
    if o.shape[-1] % 2:
        raise ConfigError(f"cannot split odd-sized vector of shape {o.shape}")
    return adapter.inverse(o)


@dataclass
class AdapterStack:
    """Everything attached to one model: per-layer language/task adapters, the
    embedding-level invertible adapter, and the task head trained with the task adapters."""

    language: list[BottleneckAdapter] | None = None
    task: list[BottleneckAdapter] | None = None
    invertible: InvertibleAdapter | None = None
    language_id: str | None = None
    task_id: str | None = None
    head: object | None = None
    extras: dict = field(default_factory=dict)

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        groups = []
        if self.invertible is not None:
            groups.append(self.invertible.parameters())
        for layers in (self.language, self.task):
            for a in layers or ():
                groups.append(a.parameters())
        if self.head is not None:
            groups.append(self.head.parameters())
        for g in groups:
            for p in g:
                yield p.name, p

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def validate(self, num_layers: int, h: int) -> None:
        for kind, layers in (("language", self.language), ("task", self.task)):
            if layers is None:
                continue
            if len(layers) != num_layers:
                raise ConfigError(f"{kind} adapters cover {len(layers)} layers, model has {num_layers}")
            for a in layers:
                if a.h != h:
                    raise ConfigError(f"{kind} adapter {a.name} built for h={a.h}, model has h={h}")
        if self.invertible is not None and self.invertible.h != h:
            raise ConfigError(f"invertible adapter built for h={self.invertible.h}, model has h={h}")
        names = [n for n, _ in self.named_parameters()]
        if len(names) != len(set(names)):
            raise ConfigError("adapter parameter names are not unique")

    def replace(self, **changes) -> "AdapterStack":
        d = dict(language=self.language, task=self.task, invertible=self.invertible,
                 language_id=self.language_id, task_id=self.task_id, head=self.head,
                 extras=dict(self.extras))
        d.update(changes)
        return AdapterStack(**d)


def make_language_adapters(lang_id: str, h: int, num_layers: int, d_lang: int,
                           rng: np.random.Generator, bias: bool = True, init_std: float = 0.02,
                           dtype=np.float32) -> list[BottleneckAdapter]:
    return [BottleneckAdapter(f"lang.{lang_id}.layer{i}", h, d_lang, rng, bias, init_std, dtype)
            for i in range(num_layers)]


def make_task_adapters(task_id: str, h: int, num_layers: int, d_task: int,
                       rng: np.random.Generator, bias: bool = True, init_std: float = 0.02,
                       dtype=np.float32) -> list[BottleneckAdapter]:
    return [BottleneckAdapter(f"task.{task_id}.layer{i}", h, d_task, rng, bias, init_std, dtype)
            for i in range(num_layers)]


def make_invertible_adapter(lang_id: str, h: int, rng: np.random.Generator, bias: bool = True,
                            init_std: float = 0.02, dtype=np.float32) -> InvertibleAdapter:
    return InvertibleAdapter(f"inv.{lang_id}", h, rng, bias, init_std, dtype)


def attach(stack: AdapterStack, model):
    """Hook ``stack`` into ``model`` at the per-layer and embedding positions.

    Returns the model. Raises :class:`ConfigError` if the stack's layer count
    or hidden size disagrees with the model.
    """
    return model.attach(stack)


def detach(model) -> AdapterStack | None:
    return model.detach()
