"""MLM pretraining, adapter training, task training and the full-model baselines.

Every routine follows the same contract: it flags exactly the parameters it
is allowed to update as trainable, freezes everything else, checksums the
frozen set before the first step and raises :class:`FreezeViolation` if the
checksum differs afterwards.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adapters import (AdapterConfig, AdapterStack, ConfigError, make_invertible_adapter,
                       make_language_adapters, make_task_adapters)
from .corpus import CLS, IGNORE, MASK, PAD, SEP, Example, TaskSpec
from .optim import Adam
from .tensor import Parameter, backward, no_grad, softmax_cross_entropy
from .transformer import ClassificationHead, TaggingHead, TransformerEncoder, checksum

log = logging.getLogger(__name__)

MODES = ("pretrain_base", "train_lang_adapter", "train_task_adapter",
         "mlm_src_finetune", "mlm_trg_finetune", "full_finetune")
FULL_MODEL_MODES = ("mlm_src_finetune", "mlm_trg_finetune", "full_finetune")
ADAPTER_MODES = ("train_lang_adapter", "train_task_adapter")

# learning rates used for full-model fine-tuning and for adapters respectively
FULL_MODEL_LR = 5e-5
ADAPTER_LR = 1e-4
PRETRAIN_LR = 1e-3


class FreezeViolation(AssertionError):
    """A parameter flagged frozen changed during training."""


@dataclass
class TrainConfig:
    mode: str = "train_lang_adapter"
    steps: int = 2000
    batch_size: int = 16
    learning_rate: float | None = None
    seed: int = 0
    mask_prob: float = 0.15
    eval_every: int = 0
    metrics_path: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown training mode {self.mode!r}; expected one of {MODES}")
        if self.learning_rate is None:
            if self.mode in FULL_MODEL_MODES:
                self.learning_rate = FULL_MODEL_LR
            elif self.mode in ADAPTER_MODES:
                self.learning_rate = ADAPTER_LR
            else:
                self.learning_rate = PRETRAIN_LR
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigError(f"mask_prob={self.mask_prob} outside [0, 1]")


# masking --------------------------------------------------------------

KEEP_MASK, KEEP_RANDOM, KEEP_SAME = 0, 1, 2


@dataclass
class MaskingPlan:
    selected: np.ndarray          # bool, same shape as tokens
    action: np.ndarray            # int8: 0 mask-token, 1 random-token, 2 keep
    replacement: np.ndarray       # random ids used where action == 1

    @property
    def positions(self) -> np.ndarray:
        return np.argwhere(self.selected)

    def __len__(self) -> int:
        return int(self.selected.sum())

    def apply(self, tokens: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Corrupted inputs and MLM targets (IGNORE at unselected positions)."""
        tokens = np.asarray(tokens)
        inputs = tokens.copy()
        sel = self.selected
        inputs[sel & (self.action == KEEP_MASK)] = MASK
        rnd = sel & (self.action == KEEP_RANDOM)
        inputs[rnd] = self.replacement[rnd]
        targets = np.where(sel, tokens, IGNORE)
        return inputs, targets


def make_masking_plan(tokens, mask_prob: float, seed, replacement_pool: Sequence[int] | None = None,
                      action_probs: tuple[float, float, float] = (0.8, 0.1, 0.1),
                      protected: Sequence[int] = (PAD, CLS, SEP)) -> MaskingPlan:
    """Select each non-special position independently with ``mask_prob``.

    Selected positions become the mask token, a random token from
    ``replacement_pool`` (default: the ids present in ``tokens``), or stay
    unchanged with probabilities ``action_probs``.
    """
    if not 0.0 <= mask_prob <= 1.0:
        raise ValueError(f"mask_prob={mask_prob} outside [0, 1]")
    tokens = np.asarray(tokens)
    rng = np.random.default_rng(seed)
    eligible = ~np.isin(tokens, protected)
    selected = (rng.random(tokens.shape) < mask_prob) & eligible
    action = rng.choice(3, size=tokens.shape, p=action_probs).astype(np.int8)
    if replacement_pool is None:
        replacement_pool = np.unique(tokens[eligible]) if eligible.any() else np.array([MASK])
    pool = np.asarray(replacement_pool)
    replacement = pool[rng.integers(len(pool), size=tokens.shape)]
    return MaskingPlan(selected, action, replacement)


# batching -------------------------------------------------------------


def pad_batch(seqs: Sequence[Sequence[int]], add_special: bool = True) -> np.ndarray:
    rows = [[CLS, *s, SEP] if add_special else list(s) for s in seqs]
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def pad_labels(labels: Sequence[Sequence[int]], width: int) -> np.ndarray:
    out = np.full((len(labels), width), IGNORE, dtype=np.int64)
    for i, l in enumerate(labels):
        out[i, 1:1 + len(l)] = l
    return out


def _mlm_batch(corpus, idx, cfg: TrainConfig, step: int, pool):
    tokens = pad_batch([corpus[i] for i in idx])
    plan = make_masking_plan(tokens, cfg.mask_prob, (cfg.seed, 7919, step), pool)
    return plan.apply(tokens)


# core loop ------------------------------------------------------------


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    best_score: float | None = None
    frozen_checksum: str | None = None


def set_trainable(all_params: Sequence[Parameter], trainable: Sequence[Parameter]) -> None:
    keep = {id(p) for p in trainable}
    for p in all_params:
        p.frozen = id(p) not in keep


def _loop(all_params: Sequence[Parameter], trainable: Sequence[Parameter], cfg: TrainConfig,
          step_fn: Callable[[int, np.random.Generator], tuple], evaluate: Callable[[], float] | None = None
          ) -> TrainResult:
    set_trainable(all_params, trainable)
    frozen = [p for p in all_params if p.frozen]
    before = checksum(frozen)
    opt = Adam(trainable, cfg.learning_rate)
    rng = np.random.default_rng((cfg.seed, 104729))
    result = TrainResult(frozen_checksum=before)
    best = None
    sink = open(cfg.metrics_path, "a") if cfg.metrics_path else None
    try:
        for step in range(1, cfg.steps + 1):
            loss, acc = step_fn(step, rng)
            backward(loss)
            opt.step()
            result.losses.append(float(loss.data))
            result.accuracies.append(acc)
            if sink is not None:
                sink.write(json.dumps({"mode": cfg.mode, "step": step, "loss": round(float(loss.data), 6),
                                       "accuracy": round(acc, 6)}) + "\n")
            if evaluate is not None and cfg.eval_every and step % cfg.eval_every == 0:
                score = evaluate()
                if best is None or score > best[0]:
                    best = (score, [p.data.copy() for p in trainable])
    finally:
        if sink is not None:
            sink.close()
    if best is not None:
        if evaluate is not None:
            final = evaluate()
            if final >= best[0]:
                best = None
        if best is not None:
            for p, d in zip(trainable, best[1]):
                p.data[...] = d
            result.best_score = best[0]
    after = checksum(frozen)
    if after != before:
        raise FreezeViolation(f"frozen parameters changed during {cfg.mode}")
    return result


def _accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    keep = targets != IGNORE
    if not keep.any():
        return 0.0
    return float((logits.argmax(-1)[keep] == targets[keep]).mean())


def mlm_step(model: TransformerEncoder, stack: AdapterStack | None, corpus, cfg: TrainConfig, pool=None,
             forbidden: np.ndarray | None = None):
    def step(i, rng):
        idx = rng.integers(len(corpus), size=cfg.batch_size)
        inputs, targets = _mlm_batch(corpus, idx, cfg, i, pool)
        if forbidden is not None and np.isin(inputs, forbidden).any():
            raise ConfigError("unseen-language token id entered a pretraining batch")
        logits = model.mlm_logits(model.encode(inputs, stack, rng=rng), stack)
        return softmax_cross_entropy(logits, targets), _accuracy(logits.data, targets)
    return step


def _pool(corpus) -> np.ndarray:
    return np.unique(np.concatenate([np.asarray(s) for s in corpus]))


# public routines ------------------------------------------------------


def pretrain_base(model: TransformerEncoder, corpora: dict[str, list[list[int]]], cfg: TrainConfig,
                  forbidden_ids: Sequence[int] = ()) -> TrainResult:
    """Full-model MLM on the union of ``corpora``. Raises if any id in
    ``forbidden_ids`` (e.g. unseen-language tokens) would enter a batch."""
    corpus = [s for lang in sorted(corpora) for s in corpora[lang]]
    pool = _pool(corpus)
    if len(forbidden_ids) and np.isin(pool, forbidden_ids).any():
        raise ConfigError("pretraining corpus contains token ids of an unseen language")
    model.detach()
    forbidden = np.asarray(forbidden_ids) if len(forbidden_ids) else None
    step = mlm_step(model, None, corpus, cfg, pool, forbidden)
    return _loop(model.base_parameters(), model.base_parameters(), cfg, step)


def train_language_adapter(model: TransformerEncoder, corpus: list[list[int]], language_id: str,
                           cfg: TrainConfig, adapter_config: AdapterConfig | None = None,
                           invertible: bool = True, validation: list[list[int]] | None = None
                           ) -> AdapterStack:
    """Train per-layer language adapters (and one invertible adapter) with MLM on a frozen base."""
    c = model.config
    ac = (adapter_config or AdapterConfig()).resolve(c.h)
    rng = np.random.default_rng((cfg.seed, 31337))
    stack = AdapterStack(
        language=make_language_adapters(language_id, c.h, c.num_layers, ac.d_lang, rng, ac.bias,
                                        ac.init_std, model.dtype),
        invertible=make_invertible_adapter(language_id, c.h, rng, ac.bias, ac.init_std, model.dtype)
        if invertible else None,
        language_id=language_id)
    model.attach(stack)
    evaluate = None
    if validation is not None:
        evaluate = lambda: mlm_accuracy(model, validation, stack, seed=cfg.seed)  # noqa: E731
    try:
        res = _loop(model.parameters(), stack.parameters(), cfg,
                    mlm_step(model, stack, corpus, cfg, _pool(corpus)), evaluate)
    finally:
        model.detach()
    stack.extras["train"] = {"steps": cfg.steps, "seed": cfg.seed, "final_loss": _tail(res.losses)}
    stack.extras["result"] = res
    return stack


def make_head(task: TaskSpec, task_id: str, h: int, rng, dtype=np.float32):
    cls = TaggingHead if task.kind == "tagging" else ClassificationHead
    return cls(f"head.{task_id}", h, task.num_labels, rng, dtype=dtype)


def _task_batch(data: Sequence[Example], idx, kind: str):
    tokens = pad_batch([data[i].tokens for i in idx])
    if kind == "tagging":
        targets = pad_labels([data[i].token_labels() for i in idx], tokens.shape[1])
    else:
        targets = np.array([data[i].label for i in idx])
    return tokens, targets


def task_step(model: TransformerEncoder, stack: AdapterStack | None, head, data, kind: str,
              cfg: TrainConfig):
    def step(i, rng):
        idx = rng.integers(len(data), size=cfg.batch_size)
        tokens, targets = _task_batch(data, idx, kind)
        hidden = model.encode(tokens, stack, rng=rng)
        logits = head(hidden, tokens == PAD)
        return softmax_cross_entropy(logits, targets), _accuracy(logits.data, targets)
    return step


def train_task_adapter(model: TransformerEncoder, dataset: Sequence[Example], task_id: str,
                       source_stack: AdapterStack | None, cfg: TrainConfig, task: TaskSpec,
                       adapter_config: AdapterConfig | None = None,
                       require_language_adapter: bool = True,
                       validation: Sequence[Example] | None = None) -> AdapterStack:
    """Train task adapters and head on top of the fixed source-language stack.

    Returns a new stack sharing the source language/invertible adapters and
    carrying the trained task adapters and head. With
    ``require_language_adapter=False`` the task adapters sit directly on the
    base model (the task-adapter-only ablation).
    """
    if source_stack is None or source_stack.language is None:
        if require_language_adapter:
            raise ConfigError(f"task {task_id!r}: no source-language adapter is attached")
        source_stack = source_stack or AdapterStack()
    c = model.config
    ac = (adapter_config or AdapterConfig()).resolve(c.h)
    rng = np.random.default_rng((cfg.seed, 27183))
    stack = source_stack.replace(
        task=make_task_adapters(task_id, c.h, c.num_layers, ac.d_task, rng, ac.bias, ac.init_std, model.dtype),
        task_id=task_id,
        head=make_head(task, task_id, c.h, rng, model.dtype))
    model.attach(stack)
    trainable = [p for a in stack.task for p in a.parameters()] + stack.head.parameters()
    evaluate = None
    if validation is not None:
        evaluate = lambda: evaluate_task(model, stack.head, validation, task.kind, stack)["accuracy"]  # noqa: E731
    try:
        res = _loop(model.parameters(), trainable, cfg,
                    task_step(model, stack, stack.head, dataset, task.kind, cfg), evaluate)
    finally:
        model.detach()
    stack.extras = {"train": {"steps": cfg.steps, "seed": cfg.seed, "final_loss": _tail(res.losses)},
                    "result": res, "task_kind": task.kind}
    return stack


@dataclass
class BaselineModel:
    model: TransformerEncoder
    head: object
    mode: str
    mlm_result: TrainResult | None = None
    task_result: TrainResult | None = None


def run_baseline(mode: str, model: TransformerEncoder, dataset: Sequence[Example], cfg: TrainConfig,
                 task: TaskSpec, mlm_corpus: list[list[int]] | None = None,
                 target_language: str | None = None, mlm_steps: int | None = None,
                 validation: Sequence[Example] | None = None) -> BaselineModel:
    """Full-model transfer baselines on a copy of ``model``.

    ``mlm_src_finetune``/``mlm_trg_finetune`` first run full-model MLM on
    ``mlm_corpus`` (source or target text), then all variants fine-tune the
    whole model plus a head on the labeled source data. No adapters are used.
    """
    if mode not in FULL_MODEL_MODES:
        raise ConfigError(f"baseline mode must be one of {FULL_MODEL_MODES}, got {mode!r}")
    if mode == "mlm_trg_finetune" and not target_language:
        raise ConfigError("mlm_trg_finetune needs a declared target language")
    if mode != "full_finetune" and mlm_corpus is None:
        raise ConfigError(f"{mode} needs an unlabelled corpus")
    m = model.copy()
    mlm_res = None
    if mode != "full_finetune":
        mcfg = replace(cfg, mode=mode, steps=cfg.steps if mlm_steps is None else mlm_steps)
        mlm_res = _loop(m.base_parameters(), m.base_parameters(), mcfg,
                        mlm_step(m, None, mlm_corpus, mcfg, _pool(mlm_corpus)))
    rng = np.random.default_rng((cfg.seed, 27183))
    head = make_head(task, task.task_id, m.config.h, rng, m.dtype)
    params = m.base_parameters() + head.parameters()
    evaluate = None
    if validation is not None:
        evaluate = lambda: evaluate_task(m, head, validation, task.kind, None)["accuracy"]  # noqa: E731
    tcfg = replace(cfg, mode=mode)
    res = _loop(params, params, tcfg, task_step(m, None, head, dataset, task.kind, tcfg), evaluate)
    return BaselineModel(m, head, mode, mlm_res, res)


# evaluation -----------------------------------------------------------


def mlm_accuracy(model: TransformerEncoder, corpus: list[list[int]], stack: AdapterStack | None = None,
                 seed=0, mask_prob: float = 0.15, batch_size: int = 64) -> float:
    """Masked-token accuracy with a fixed masking plan (all selected positions masked)."""
    correct = total = 0
    with no_grad():
        for start in range(0, len(corpus), batch_size):
            tokens = pad_batch(corpus[start:start + batch_size])
            plan = make_masking_plan(tokens, mask_prob, (seed, 4242, start), action_probs=(1.0, 0.0, 0.0))
            inputs, targets = plan.apply(tokens)
            logits = model.mlm_logits(model.encode(inputs, stack), stack).data
            keep = targets != IGNORE
            correct += int((logits.argmax(-1)[keep] == targets[keep]).sum())
            total += int(keep.sum())
    return correct / max(total, 1)


def _spans(labels: Sequence[int]) -> set[tuple[int, int, int]]:
    """Entity spans (start, end, type) from B-/I- tag ids (1,2 = PER; 3,4 = LOC)."""
    spans, start, kind = set(), None, None
    for i, y in enumerate(list(labels) + [0]):
        begins = y in (1, 3)
        inside = y in (2, 4) and kind == (y - 1)
        if start is not None and not inside:
            spans.add((start, i, kind))
            start = kind = None
        if begins or (y in (2, 4) and start is None):
            start, kind = i, (y if begins else y - 1)
    return spans


def evaluate_task(model: TransformerEncoder, head, data: Sequence[Example], kind: str,
                  stack: AdapterStack | None = None, batch_size: int = 64) -> dict[str, float]:
    """Word-level accuracy and entity F1 (tagging) or accuracy (classification)."""
    correct = total = 0
    tp = n_pred = n_gold = 0
    with no_grad():
        for start in range(0, len(data), batch_size):
            chunk = data[start:start + batch_size]
            tokens = pad_batch([e.tokens for e in chunk])
            logits = head(model.encode(tokens, stack), tokens == PAD).data
            if kind == "classification":
                pred = logits.argmax(-1)
                correct += int((pred == [e.label for e in chunk]).sum())
                total += len(chunk)
                continue
            pred = logits.argmax(-1)
            for row, e in enumerate(chunk):
                p = [int(pred[row, s + 1]) for s in e.word_starts]
                correct += sum(int(a == b) for a, b in zip(p, e.word_labels))
                total += len(e.word_labels)
                ps, gs = _spans(p), _spans(e.word_labels)
                tp += len(ps & gs)
                n_pred += len(ps)
                n_gold += len(gs)
    out = {"accuracy": correct / max(total, 1)}
    if kind == "tagging":
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_gold if n_gold else 0.0
        out["f1"] = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return out


def _tail(losses: list[float], window: int = 100) -> float | None:
    return float(np.mean(losses[-window:])) if losses else None
