"""A small post-LN transformer encoder with tied embeddings and adapter hook points.

Layer layout (post-LN)::

    a   = LN_attn(x + Attn(x))
    r_l = a + FF(a)              # feed-forward sublayer output, kept as the adapter residual
    h_l = LN_out(r_l)            # layer output when no adapters are attached
    o   = TA(LA(h_l, r_l), r_l)  # when adapters are attached
    out = LN_out(o)              # same normalization parameters as h_l

The embedding block is ``LN_emb(tok + pos)`` followed by the invertible
adapter when one is attached; its inverse runs right before the tied
output projection.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .adapters import AdapterStack, ConfigError
from .tensor import (Parameter, Tensor, add, dropout, embedding, layer_norm, linear,
                     matmul, relu, softmax, transpose)

PAD_ID = 0


class VocabularyError(ValueError):
    """A token id lies outside the model vocabulary."""


class ContractError(RuntimeError):
    """An operation was called out of its required order or with mismatched state."""


@dataclass(frozen=True)
class ModelConfig:
    h: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ff_dim: int = 256
    vocab_size: int = 200
    max_seq_len: int = 64
    dropout_prob: float = 0.1
    ln_eps: float = 1e-5
    init_std: float = 0.02
    embed_init_std: float | None = None

    def __post_init__(self):
        if self.h <= 0 or self.h % 4:
            raise ConfigError(f"h={self.h} must be a positive multiple of 4")
        if self.h % self.num_heads:
            raise ConfigError(f"h={self.h} not divisible by num_heads={self.num_heads}")
        if min(self.num_layers, self.ff_dim, self.vocab_size, self.max_seq_len) < 1:
            raise ConfigError("num_layers, ff_dim, vocab_size, max_seq_len must be >= 1")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError(f"dropout_prob={self.dropout_prob} outside [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


class TransformerEncoder:
    """Base encoder. Parameters live in ``self.params`` (insertion-ordered by name)."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.stack: AdapterStack | None = None
        rng = np.random.default_rng(seed)
        c = config
        self.params: dict[str, Parameter] = {}

        def normal(name, shape):
            self._add(name, (rng.standard_normal(shape) * c.init_std))

        self._add("embed.tokens", rng.standard_normal((c.vocab_size, c.h))
                  * (c.init_std if c.embed_init_std is None else c.embed_init_std))
        normal("embed.positions", (c.max_seq_len, c.h))
        self._ln("embed.ln")
        for i in range(c.num_layers):
            p = f"layer{i}"
            for proj in ("q", "k", "v", "o"):
                normal(f"{p}.attn.{proj}.weight", (c.h, c.h))
                self._add(f"{p}.attn.{proj}.bias", np.zeros(c.h))
            self._ln(f"{p}.attn_ln")
            normal(f"{p}.ff.in.weight", (c.h, c.ff_dim))
            self._add(f"{p}.ff.in.bias", np.zeros(c.ff_dim))
            normal(f"{p}.ff.out.weight", (c.ff_dim, c.h))
            self._add(f"{p}.ff.out.bias", np.zeros(c.h))
            self._ln(f"{p}.out_ln")
        self._add("mlm.bias", np.zeros(c.vocab_size))

    def _add(self, name, value):
        self.params[name] = Parameter(np.asarray(value, dtype=self.dtype), name)

    def _ln(self, prefix):
        self._add(f"{prefix}.gain", np.ones(self.config.h))
        self._add(f"{prefix}.bias", np.zeros(self.config.h))

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    # parameter bookkeeping ------------------------------------------
    def named_parameters(self, include_adapters: bool = True) -> Iterator[tuple[str, Parameter]]:
        yield from self.params.items()
        if include_adapters and self.stack is not None:
            yield from self.stack.named_parameters()

    def parameters(self, include_adapters: bool = True) -> list[Parameter]:
        return [p for _, p in self.named_parameters(include_adapters)]

    def base_parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def freeze_base(self, frozen: bool = True) -> None:
        for p in self.params.values():
            p.frozen = frozen

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def base_checksum(self) -> str:
        return checksum(self.base_parameters())

    @property
    def embedding_table(self) -> Parameter:
        return self.params["embed.tokens"]

    def copy(self) -> "TransformerEncoder":
        """Deep copy of the base weights (adapters are not copied)."""
        new = TransformerEncoder.__new__(TransformerEncoder)
        new.config, new.dtype, new.stack = self.config, self.dtype, None
        new.params = {n: Parameter(p.data.copy(), n, p.frozen) for n, p in self.params.items()}
        return new

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ConfigError("state dict keys do not match model parameters")
        for n, p in self.params.items():
            if state[n].shape != p.shape:
                raise ConfigError(f"{n}: shape {state[n].shape} != {p.shape}")
            p.data[...] = state[n]

    # adapters -------------------------------------------------------
    def attach(self, stack: AdapterStack) -> "TransformerEncoder":
        stack.validate(self.config.num_layers, self.config.h)
        base_names = set(self.params)
        clash = [n for n, _ in stack.named_parameters() if n in base_names]
        if clash:
            raise ConfigError(f"adapter parameter names collide with base: {clash[:3]}")
        self.stack = stack
        return self

    def detach(self) -> AdapterStack | None:
        stack, self.stack = self.stack, None
        return stack

    # forward --------------------------------------------------------
    def _ids(self, tokens) -> np.ndarray:
        ids = np.asarray(tokens)
        if ids.dtype.kind not in "iu":
            raise VocabularyError(f"token ids must be integers, got dtype {ids.dtype}")
        if ids.ndim not in (1, 2):
            raise VocabularyError(f"tokens must be (seq,) or (batch, seq), got shape {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            bad = ids[(ids < 0) | (ids >= self.config.vocab_size)][0]
            raise VocabularyError(f"token id {bad} outside vocabulary of size {self.config.vocab_size}")
        if ids.shape[-1] > self.config.max_seq_len:
            raise ConfigError(f"sequence length {ids.shape[-1]} exceeds max_seq_len {self.config.max_seq_len}")
        return ids

    def encode(self, tokens, stack: AdapterStack | None = None, rng: np.random.Generator | None = None,
               trace: dict | None = None) -> Tensor:
        """Hidden states for ``tokens`` (shape ``(seq, h)`` or ``(batch, seq, h)``).

        ``stack`` defaults to the attached stack. Dropout is active only when
        ``rng`` is given. If ``trace`` is a dict it receives per-layer lists
        ``attention``, ``r``, ``h``, ``lang`` and ``task``.
        """
        stack = self.stack if stack is None else stack
        if stack is not None and stack is not self.stack:
            stack.validate(self.config.num_layers, self.config.h)
        ids = self._ids(tokens)
        single = ids.ndim == 1
        if single:
            ids = ids[None, :]
        c, P = self.config, self.params
        pdrop = c.dropout_prob if rng is not None else 0.0
        key_pad = ids == PAD_ID
        mask = np.where(key_pad, -1e9, 0.0).astype(self.dtype)[:, None, None, :]
        if trace is not None:
            for k in ("attention", "r", "h", "lang", "task"):
                trace[k] = []

        seq = ids.shape[1]
        x = embedding(P["embed.tokens"], ids) + P["embed.positions"][:seq]
        x = layer_norm(x, P["embed.ln.gain"], P["embed.ln.bias"], c.ln_eps)
        x = dropout(x, pdrop, rng)
        inv = stack.invertible if stack is not None else None
        if inv is not None:
            x = inv.forward(x)
        for i in range(c.num_layers):
            x = self._layer(i, x, mask, stack, pdrop, rng, trace)
        out = x[0] if single else x
        out.tag = ("encoded", id(inv) if inv is not None else None)
        return out

    def _attention(self, i: int, x: Tensor, mask: np.ndarray, trace) -> Tensor:
        c, P = self.config, self.params
        b, t, h = x.shape
        nh, hd = c.num_heads, h // c.num_heads
        p = f"layer{i}.attn"

        def heads(name):
            y = linear(x, P[f"{p}.{name}.weight"], P[f"{p}.{name}.bias"])
            return transpose(y.reshape(b, t, nh, hd), (0, 2, 1, 3))

        q, k, v = heads("q"), heads("k"), heads("v")
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / float(np.sqrt(hd)))
        probs = softmax(add(scores, Tensor(mask)), axis=-1)
        if trace is not None:
            trace["attention"].append(probs.data.copy())
        ctx = transpose(matmul(probs, v), (0, 2, 1, 3)).reshape(b, t, h)
        return linear(ctx, P[f"{p}.o.weight"], P[f"{p}.o.bias"])

    def _layer(self, i, x, mask, stack, pdrop, rng, trace) -> Tensor:
        c, P = self.config, self.params
        p = f"layer{i}"
        attn = dropout(self._attention(i, x, mask, trace), pdrop, rng)
        a = layer_norm(x + attn, P[f"{p}.attn_ln.gain"], P[f"{p}.attn_ln.bias"], c.ln_eps)
        ff = linear(relu(linear(a, P[f"{p}.ff.in.weight"], P[f"{p}.ff.in.bias"])),
                    P[f"{p}.ff.out.weight"], P[f"{p}.ff.out.bias"])
        r = a + dropout(ff, pdrop, rng)
        gain, bias = P[f"{p}.out_ln.gain"], P[f"{p}.out_ln.bias"]
        h_l = layer_norm(r, gain, bias, c.ln_eps)
        if trace is not None:
            trace["r"].append(r.data.copy())
            trace["h"].append(h_l.data.copy())
        lang = stack.language if stack is not None else None
        task = stack.task if stack is not None else None
        if lang is None and task is None:
            return h_l
        o = h_l
        if lang is not None:
            o = lang[i](o, r)
            if trace is not None:
                trace["lang"].append(o.data.copy())
        if task is not None:
            o = task[i](o, r)
            if trace is not None:
                trace["task"].append(o.data.copy())
        return layer_norm(o, gain, bias, c.ln_eps)

    def mlm_logits(self, hidden: Tensor, stack: AdapterStack | None = None) -> Tensor:
        """Vocabulary logits through the inverse invertible adapter and the tied embeddings."""
        stack = self.stack if stack is None else stack
        inv = stack.invertible if stack is not None else None
        tag = hidden.tag
        if tag is not None and tag[0] == "encoded":
            if inv is not None and tag[1] != id(inv):
                raise ContractError("stack has an invertible adapter but the hidden states were "
                                    "encoded without that adapter")
            if inv is None and tag[1] is not None:
                raise ContractError("hidden states were encoded with an invertible adapter the "
                                    "stack does not carry")
        x = inv.inverse(hidden) if inv is not None else hidden
        E = self.params["embed.tokens"]
        return add(matmul(x, transpose(E)), self.params["mlm.bias"])


class TaggingHead:
    """Per-position linear projection to label logits."""

    def __init__(self, name: str, h: int, num_labels: int, rng=None, init_std: float = 0.02,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name, self.h, self.num_labels = name, h, num_labels
        self.weight = Parameter((rng.standard_normal((h, num_labels)) * init_std).astype(dtype),
                                f"{name}.weight")
        self.bias = Parameter(np.zeros(num_labels, dtype=dtype), f"{name}.bias")

    kind = "tagging"

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def __call__(self, hidden: Tensor, pad_mask: np.ndarray | None = None) -> Tensor:
        return linear(hidden, self.weight, self.bias)


class ClassificationHead(TaggingHead):
    """Mean-pool over non-padding positions, then a linear projection."""

    kind = "classification"

    def __call__(self, hidden: Tensor, pad_mask: np.ndarray | None = None) -> Tensor:
        if pad_mask is None:
            pooled = hidden.mean(axis=-2)
        else:
            keep = (~np.asarray(pad_mask)).astype(hidden.dtype)
            keep = keep.reshape(keep.shape + (1,))
            denom = np.maximum(keep.sum(axis=-2), 1.0)
            pooled = (hidden * Tensor(keep)).sum(axis=-2) * Tensor(1.0 / denom)
        return linear(pooled, self.weight, self.bias)


def tagging_head(hidden: Tensor, head: TaggingHead) -> Tensor:
    return head(hidden)


def classification_head(hidden: Tensor, head: ClassificationHead, pad_mask=None) -> Tensor:
    return head(hidden, pad_mask)


def checksum(params) -> str:
    """SHA-256 over names, shapes and raw bytes of ``params`` in the given order."""
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(str(p.shape).encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
