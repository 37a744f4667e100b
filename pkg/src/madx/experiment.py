"""Experiment configuration and the end-to-end pipeline behind the CLI.

Every step is a function of an :class:`ExperimentConfig`; artifacts go to the
registry directory and corpora, metrics, and score tables to the output
directory. Reruns with the same config overwrite their outputs with identical
bytes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .adapters import AdapterConfig, AdapterStack, ConfigError
from .corpus import (LanguageSpec, TaskSpec, generate_language_corpus, generate_task_data,
                     read_corpus, read_task, script_offset, vocab_size, write_corpus, write_task)
from .registry import (Registry, artifacts_from_stack, build_stack, count_parameters, load_base,
                       save_base, swap_language)
from .training import (MODES, TrainConfig, evaluate_task, pretrain_base, run_baseline,
                       train_language_adapter, train_task_adapter)
from .transformer import ModelConfig, TransformerEncoder

VARIANTS = ("full", "-inv", "-lad-inv")
VARIANT_LABELS = {"full": "full", "-inv": "no-inv", "-lad-inv": "task-only"}
BASELINES = ("full_finetune", "mlm_src_finetune", "mlm_trg_finetune")


class MissingArtifact(FileNotFoundError):
    """A required artifact is absent; the message names the command that produces it."""


def default_languages() -> list[LanguageSpec]:
    """Four pretraining languages and two held-out ones, each in its own script block."""
    seen = [LanguageSpec(lid, script_offset(i), 11 + i, 0.1, True)
            for i, lid in enumerate(("en", "de", "ru", "zh"))]
    unseen = [LanguageSpec(lid, script_offset(4 + i), 15 + i, 0.3, False)
              for i, lid in enumerate(("qu", "xx"))]
    return seen + unseen


def default_train() -> dict[str, TrainConfig]:
    # Desk-scale schedule. Adapter and full-model rates are raised above the
    # large-scale defaults in the same 2:1 ratio; see README.
    return {
        "pretrain_base": TrainConfig("pretrain_base", steps=8000, learning_rate=1e-3),
        "train_lang_adapter": TrainConfig("train_lang_adapter", steps=1500, learning_rate=1e-3),
        "train_task_adapter": TrainConfig("train_task_adapter", steps=800, learning_rate=1e-3),
        "full_finetune": TrainConfig("full_finetune", steps=800, learning_rate=3e-4),
        "mlm_src_finetune": TrainConfig("mlm_src_finetune", steps=800, learning_rate=3e-4),
        "mlm_trg_finetune": TrainConfig("mlm_trg_finetune", steps=800, learning_rate=3e-4),
    }


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig(vocab_size=vocab_size(6)))
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    train: dict[str, TrainConfig] = field(default_factory=default_train)
    languages: list[LanguageSpec] = field(default_factory=default_languages)
    task: TaskSpec = field(default_factory=TaskSpec)
    source_language: str = "en"
    corpus_sentences: int = 4000
    task_train: int = 1000
    task_test: int = 300
    baseline_mlm_steps: int = 1500
    data_seed: int = 0
    pretrain_seed: int = 0
    seed: int = 0
    registry: str = "registry"
    out: str = "out"

    def __post_init__(self):
        ids = [lang.language_id for lang in self.languages]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate language ids in {ids}")
        if self.source_language not in ids:
            raise ConfigError(f"source language {self.source_language!r} not among {ids}")
        blocks = [set(lang.token_ids()) for lang in self.languages]
        for lang, ids_ in zip(self.languages, blocks):
            if max(ids_) >= self.model.vocab_size:
                raise ConfigError(f"language {lang.language_id!r} needs vocab_size > {max(ids_)}, "
                                  f"model has {self.model.vocab_size}")
        for i, lang in enumerate(self.languages):
            if lang.seen_in_pretraining:
                continue
            for j, other in enumerate(self.languages):
                if other.seen_in_pretraining and blocks[i] & blocks[j]:
                    raise ConfigError(f"unseen language {lang.language_id!r} shares token ids "
                                      f"with pretraining language {other.language_id!r}")
        unknown = set(self.train) - set(MODES)
        if unknown:
            raise ConfigError(f"unknown training modes {sorted(unknown)}")
        full = default_train()
        full.update(self.train)
        self.train = full

    # lookups --------------------------------------------------------
    def language(self, language_id: str) -> LanguageSpec:
        for lang in self.languages:
            if lang.language_id == language_id:
                return lang
        raise ConfigError(f"unknown language {language_id!r}; configured: "
                          f"{[lang.language_id for lang in self.languages]}")

    def train_config(self, mode: str, **overrides) -> TrainConfig:
        base = replace(self.train[mode], seed=self.seed)
        return replace(base, **overrides)

    @property
    def language_ids(self) -> list[str]:
        return [lang.language_id for lang in self.languages]

    @property
    def unseen_ids(self) -> list[str]:
        return [lang.language_id for lang in self.languages if not lang.seen_in_pretraining]

    # (de)serialisation ----------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = {k: {f: v for f, v in asdict(t).items() if f != "mode"} for k, t in self.train.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _reject_unknown(cls, d, "config")
        kw = dict(d)
        if "model" in kw:
            _reject_unknown(ModelConfig, kw["model"], "model")
            kw["model"] = ModelConfig(**kw["model"])
        if "adapter" in kw:
            _reject_unknown(AdapterConfig, kw["adapter"], "adapter")
            kw["adapter"] = AdapterConfig(**kw["adapter"])
        if "task" in kw:
            _reject_unknown(TaskSpec, kw["task"], "task")
            kw["task"] = TaskSpec(**kw["task"])
        if "languages" in kw:
            langs = []
            for i, spec in enumerate(kw["languages"]):
                _reject_unknown(LanguageSpec, spec, f"languages[{i}]")
                langs.append(LanguageSpec(**spec))
            kw["languages"] = langs
        if "train" in kw:
            train = {}
            for mode, spec in kw["train"].items():
                if mode not in MODES:
                    raise ConfigError(f"train: unknown mode {mode!r}; expected one of {MODES}")
                _reject_unknown(TrainConfig, spec, f"train.{mode}", skip=("mode",))
                train[mode] = replace(default_train().get(mode, TrainConfig(mode)), **spec)
            kw["train"] = train
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(d)


def _reject_unknown(cls, d, where: str, skip: tuple[str, ...] = ()) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a JSON object, got {type(d).__name__}")
    allowed = {f.name for f in fields(cls)} - set(skip)
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}; allowed: {sorted(allowed)}")


# data -----------------------------------------------------------------


def _lang_index(cfg: ExperimentConfig, language_id: str) -> int:
    return cfg.language_ids.index(language_id)


def make_corpus(cfg: ExperimentConfig, language_id: str) -> list[list[int]]:
    return generate_language_corpus(cfg.language(language_id), cfg.corpus_sentences,
                                    1000 * cfg.data_seed + 100 + _lang_index(cfg, language_id))


def make_task_split(cfg: ExperimentConfig, language_id: str, split: str):
    n, base = (cfg.task_train, 0) if split == "train" else (cfg.task_test, 5000)
    return generate_task_data(cfg.task, cfg.language(language_id), n,
                              1000 * cfg.data_seed + base + _lang_index(cfg, language_id))


def data_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) / "data"


def cmd_gen_corpus(cfg: ExperimentConfig) -> list[Path]:
    """Write every language's MLM corpus and task splits as line-delimited integer files."""
    d = data_dir(cfg)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for lid in cfg.language_ids:
        p = d / f"{lid}.mlm.txt"
        write_corpus(p, make_corpus(cfg, lid))
        written.append(p)
        for split in ("train", "test"):
            p = d / f"{cfg.task.task_id}.{lid}.{split}"
            write_task(p, make_task_split(cfg, lid, split))
            written.append(p)
    return written


def _need(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run `madx {producer}` first")
    return path


def load_corpus(cfg: ExperimentConfig, language_id: str) -> list[list[int]]:
    cfg.language(language_id)
    return read_corpus(_need(data_dir(cfg) / f"{language_id}.mlm.txt", "gen-corpus"))


def load_task_split(cfg: ExperimentConfig, language_id: str, split: str):
    cfg.language(language_id)
    return read_task(_need(data_dir(cfg) / f"{cfg.task.task_id}.{language_id}.{split}", "gen-corpus"))


# registry helpers -----------------------------------------------------


def base_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.registry) / "base.madx"


def registry_for(cfg: ExperimentConfig, variant: str = "full") -> Registry:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    root = Path(cfg.registry)
    return Registry(root if variant == "full" else root / VARIANT_LABELS[variant])


def task_artifact_id(cfg: ExperimentConfig, source: str) -> str:
    return f"{cfg.task.task_id}-{source}"


def load_base_model(cfg: ExperimentConfig) -> TransformerEncoder:
    model = load_base(_need(base_path(cfg), "pretrain-base"))
    if model.config != cfg.model:
        raise ConfigError(f"{base_path(cfg)} was pretrained with a different model config")
    return model


def metrics_path(cfg: ExperimentConfig, name: str) -> str:
    p = Path(cfg.out) / "metrics" / f"{name}.jsonl"
    p.parent.mkdir(parents=True, exist_ok=True)
    return str(p)


# pipeline steps (in memory) -------------------------------------------


def forbidden_ids(cfg: ExperimentConfig) -> list[int]:
    return [t for lang in cfg.languages if not lang.seen_in_pretraining for t in lang.token_ids()]


def pretrain(cfg: ExperimentConfig, corpora: dict[str, list[list[int]]], metrics: str | None = None
             ) -> TransformerEncoder:
    model = TransformerEncoder(cfg.model, seed=cfg.pretrain_seed)
    seen = {lid: c for lid, c in corpora.items() if cfg.language(lid).seen_in_pretraining}
    tc = replace(cfg.train["pretrain_base"], seed=cfg.pretrain_seed, metrics_path=metrics)
    pretrain_base(model, seen, tc, forbidden_ids(cfg))
    return model


def lang_stack(cfg: ExperimentConfig, model, corpus, language_id: str, invertible: bool = True,
               metrics: str | None = None) -> AdapterStack:
    return train_language_adapter(model, corpus, language_id,
                                  cfg.train_config("train_lang_adapter", metrics_path=metrics),
                                  cfg.adapter, invertible=invertible)


def task_stack(cfg: ExperimentConfig, model, data, source_stack: AdapterStack | None, variant: str,
               task_id: str | None = None, metrics: str | None = None) -> AdapterStack:
    return train_task_adapter(model, data, task_id or cfg.task.task_id, source_stack,
                              cfg.train_config("train_task_adapter", metrics_path=metrics), cfg.task,
                              cfg.adapter, require_language_adapter=variant != "-lad-inv")


def evaluate_stack(cfg: ExperimentConfig, model, stack: AdapterStack, data) -> dict[str, float]:
    return evaluate_task(model, stack.head, data, cfg.task.kind, stack)


def baseline_scores(cfg: ExperimentConfig, model, mode: str, train_data, mlm_corpus, target: str | None,
                    tests: dict[str, list], metrics: str | None = None) -> dict[str, dict[str, float]]:
    b = run_baseline(mode, model, train_data, cfg.train_config(mode, metrics_path=metrics), cfg.task,
                     mlm_corpus=mlm_corpus, target_language=target, mlm_steps=cfg.baseline_mlm_steps)
    return {lid: evaluate_task(b.model, b.head, data, cfg.task.kind) for lid, data in tests.items()}


# pipeline steps (registry backed) -------------------------------------


def cmd_pretrain_base(cfg: ExperimentConfig) -> Path:
    corpora = {lid: load_corpus(cfg, lid) for lid in cfg.language_ids
               if cfg.language(lid).seen_in_pretraining}
    model = pretrain(cfg, corpora, metrics_path(cfg, "pretrain_base"))
    return save_base(model, base_path(cfg), {"pretrain_seed": cfg.pretrain_seed})


def cmd_train_lang(cfg: ExperimentConfig, language_id: str, invertible: bool = True) -> list[Path]:
    """Language adapter (plus invertible adapter unless ``invertible`` is false) for one language."""
    model = load_base_model(cfg)
    variant = "full" if invertible else "-inv"
    tag = "" if invertible else ".noinv"
    stack = lang_stack(cfg, model, load_corpus(cfg, language_id), language_id, invertible,
                       metrics_path(cfg, f"lang.{language_id}{tag}"))
    reg = registry_for(cfg, variant)
    arts = artifacts_from_stack(stack, model, {"seed": cfg.seed, "steps": cfg.train["train_lang_adapter"].steps})
    return [reg.save(a) for a in arts.values()]


def _source_stack(cfg: ExperimentConfig, model, variant: str, language_id: str) -> AdapterStack | None:
    if variant == "-lad-inv":
        return None
    reg = registry_for(cfg, variant)
    flag = "" if variant == "full" else " --no-invertible"
    if not reg.exists("language", language_id):
        raise MissingArtifact(f"no language adapter for {language_id!r} in {reg.root}; "
                              f"run `madx train-lang --language {language_id}{flag}` first")
    lang = reg.load("language", language_id, model)
    inv = reg.load("invertible", language_id, model) if variant == "full" else None
    return build_stack(model, language=lang, invertible=inv)


def cmd_train_task(cfg: ExperimentConfig, source: str | None = None, variant: str = "full") -> Path:
    source = source or cfg.source_language
    model = load_base_model(cfg)
    src = _source_stack(cfg, model, variant, source)
    tid = task_artifact_id(cfg, source)
    stack = task_stack(cfg, model, load_task_split(cfg, source, "train"), src, variant, tid,
                       metrics_path(cfg, f"task.{tid}.{VARIANT_LABELS[variant]}"))
    reg = registry_for(cfg, variant)
    art = artifacts_from_stack(stack, model, {"seed": cfg.seed, "variant": variant})["task"]
    return reg.save(art)


def _task_stack_from_registry(cfg: ExperimentConfig, model, source: str, variant: str) -> AdapterStack:
    reg = registry_for(cfg, variant)
    tid = task_artifact_id(cfg, source)
    if not reg.exists("task", tid):
        raise MissingArtifact(f"no task adapter {tid!r} in {reg.root}; run "
                              f"`madx train-task --source {source} --variant {VARIANT_LABELS[variant]}` first")
    task = reg.load("task", tid, model)
    src = _source_stack(cfg, model, variant, source)
    stack = build_stack(model, task=task)
    if src is not None:
        stack = stack.replace(language=src.language, invertible=src.invertible, language_id=src.language_id)
    return stack


def transfer_scores(cfg: ExperimentConfig, model, stack: AdapterStack, variant: str, targets, tests,
                    registry: Registry | None = None) -> dict[str, dict[str, float]]:
    out = {}
    for t in targets:
        if variant == "-lad-inv":
            swapped = stack
        elif t == stack.language_id:
            swapped = stack
        else:
            reg = registry or registry_for(cfg, variant)
            flag = "" if variant == "full" else " --no-invertible"
            if not reg.exists("language", t):
                raise MissingArtifact(f"no language adapter for target {t!r} in {reg.root}; "
                                      f"run `madx train-lang --language {t}{flag}` first")
            lang = reg.load("language", t, model)
            inv = reg.load("invertible", t, model) if variant == "full" else None
            swapped = swap_language(stack, lang, inv, model)
        out[t] = evaluate_stack(cfg, model, swapped, tests[t])
    return out


def cmd_transfer_eval(cfg: ExperimentConfig, source: str | None = None, targets=None,
                      variant: str = "full") -> dict[str, dict[str, float]]:
    """Zero-shot scores of the source task adapter with each target's language adapters swapped in."""
    source = source or cfg.source_language
    targets = list(targets or cfg.language_ids)
    model = load_base_model(cfg)
    stack = _task_stack_from_registry(cfg, model, source, variant)
    tests = {t: load_task_split(cfg, t, "test") for t in targets}
    scores = transfer_scores(cfg, model, stack, variant, targets, tests)
    _write_json(Path(cfg.out) / f"transfer.{source}.{VARIANT_LABELS[variant]}.json", scores)
    return scores


def cmd_baseline(cfg: ExperimentConfig, mode: str, source: str | None = None, target: str | None = None,
                 targets=None) -> dict[str, dict[str, float]]:
    if mode not in BASELINES:
        raise ConfigError(f"unknown baseline {mode!r}; expected one of {BASELINES}")
    source = source or cfg.source_language
    model = load_base_model(cfg)
    mlm = None
    if mode == "mlm_src_finetune":
        mlm = load_corpus(cfg, source)
    elif mode == "mlm_trg_finetune":
        if target is None:
            raise ConfigError("mlm_trg_finetune needs --target")
        mlm = load_corpus(cfg, target)
    targets = list(targets or ([source, target] if target else cfg.language_ids))
    tests = {t: load_task_split(cfg, t, "test") for t in dict.fromkeys(targets)}
    scores = baseline_scores(cfg, model, mode, load_task_split(cfg, source, "train"), mlm, target, tests,
                             metrics_path(cfg, f"baseline.{mode}.{source}" + (f".{target}" if target else "")))
    _write_json(Path(cfg.out) / f"baseline.{mode}.{source}" f"{'.' + target if target else ''}.json", scores)
    return scores


def cmd_count_params(cfg: ExperimentConfig | None = None, h: int | None = None, num_layers: int | None = None,
                     base_param_count: int | None = None, include_biases: bool = True) -> list[str]:
    """Parameter budget lines for the three adapter variants."""
    if cfg is not None:
        h = h or cfg.model.h
        num_layers = num_layers or cfg.model.num_layers
        ac = cfg.adapter
    else:
        ac = AdapterConfig()
    h = h or 768
    num_layers = num_layers or 12
    if base_param_count is None:
        base_param_count = 270_000_000 if cfg is None else TransformerEncoder(cfg.model).num_parameters()
    return [count_parameters(h, num_layers, ac, include_biases=include_biases,
                             base_param_count=base_param_count, variant=v).line() for v in VARIANTS]


def cmd_matrix(cfg: ExperimentConfig, sources=None, targets=None, variant: str = "full",
               metric: str = "accuracy") -> dict[str, dict[str, float]]:
    """Score every (source, target) pair; writes ``matrix.<variant>.csv`` and a text table."""
    sources = list(sources or cfg.language_ids)
    targets = list(targets or cfg.language_ids)
    model = load_base_model(cfg)
    tests = {t: load_task_split(cfg, t, "test") for t in targets}
    grid = {}
    for s in sources:
        stack = _task_stack_from_registry(cfg, model, s, variant)
        scores = transfer_scores(cfg, model, stack, variant, targets, tests)
        grid[s] = {t: scores[t][metric] for t in targets}
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    name = f"matrix.{VARIANT_LABELS[variant]}"
    (out / f"{name}.csv").write_text(grid_to_csv(grid, targets), encoding="utf-8")
    (out / f"{name}.txt").write_text(format_grid(grid, targets), encoding="utf-8")
    return grid


def grid_to_csv(grid: dict[str, dict[str, float]], targets) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", *targets])
    for s, row in grid.items():
        w.writerow([s, *(f"{row[t]:.6f}" for t in targets)])
    return buf.getvalue()


def format_grid(grid: dict[str, dict[str, float]], targets) -> str:
    width = max(6, *(len(t) for t in targets))
    lines = ["src\\trg " + " ".join(t.rjust(width) for t in targets)]
    for s, row in grid.items():
        lines.append(s.ljust(8) + " ".join(f"{100 * row[t]:{width}.1f}" for t in targets))
    return "\n".join(lines) + "\n"


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# transfer-trend experiment --------------------------------------------


@dataclass
class TrendResult:
    """Per-seed target scores for every system, plus the averaged checks."""

    seeds: list[int]
    targets: list[str]
    scores: dict[str, list[dict[str, float]]]  # system -> per-seed {target: accuracy}

    def mean(self, system: str, targets=None) -> float:
        targets = list(targets or self.targets)
        return float(np.mean([[run[t] for t in targets] for run in self.scores[system]]))

    def checks(self, unseen) -> dict[str, tuple[bool, str]]:
        madx, lad = self.mean("madx", unseen), self.mean("-lad-inv", unseen)
        noinv = self.mean("-inv", unseen)
        trg, full = self.mean("mlm_trg", unseen), self.mean("full_finetune", unseen)
        return {
            "madx_vs_task_only": (madx - lad >= 0.05,
                                  f"full stack {100 * madx:.1f} vs task-only {100 * lad:.1f} (need +5.0)"),
            "mlm_trg_vs_full": (trg >= full, f"MLM-TRG {100 * trg:.1f} vs full fine-tune {100 * full:.1f}"),
            "madx_vs_no_inv": (madx >= noinv, f"full stack {100 * madx:.1f} vs no-inv {100 * noinv:.1f}"),
        }

    def table(self) -> str:
        lines = ["system        " + " ".join(t.rjust(6) for t in self.targets)]
        for system in self.scores:
            lines.append(system.ljust(14) + " ".join(f"{100 * self.mean(system, [t]):6.1f}"
                                                     for t in self.targets))
        return "\n".join(lines)


def transfer_trend(cfg: ExperimentConfig, seeds=(0, 1, 2, 3, 4), targets=None, log=print) -> TrendResult:
    """Zero-shot tagging transfer from the source language for every system and seed.

    The base model is pretrained once; seeds vary adapter, head, and
    fine-tuning initialisation and data order.
    """
    src = cfg.source_language
    targets = list(targets or [src, *cfg.unseen_ids])
    corpora = {lid: make_corpus(cfg, lid) for lid in dict.fromkeys([*cfg.language_ids])}
    train = make_task_split(cfg, src, "train")
    tests = {t: make_task_split(cfg, t, "test") for t in targets}
    base = pretrain(cfg, corpora)
    log(f"pretrained base ({cfg.train['pretrain_base'].steps} steps)")
    systems = ("madx", "-inv", "-lad-inv", "full_finetune", "mlm_trg")
    scores: dict[str, list[dict[str, float]]] = {s: [] for s in systems}
    for seed in seeds:
        scfg = replace(cfg, seed=seed)
        langs = {(lid, inv): lang_stack(scfg, base, corpora[lid], lid, inv)
                 for inv in (True, False) for lid in dict.fromkeys([src, *targets])}
        for system, variant in (("madx", "full"), ("-inv", "-inv"), ("-lad-inv", "-lad-inv")):
            inv = variant == "full"
            source = langs[(src, inv)] if variant != "-lad-inv" else None
            stack = task_stack(scfg, base, train, source, variant)
            run = {}
            for t in targets:
                st = stack if variant == "-lad-inv" else stack.replace(
                    language=langs[(t, inv)].language, invertible=langs[(t, inv)].invertible, language_id=t)
                run[t] = evaluate_stack(scfg, base, st, tests[t])["accuracy"]
            scores[system].append(run)
        full = baseline_scores(scfg, base, "full_finetune", train, None, None, tests)
        scores["full_finetune"].append({t: full[t]["accuracy"] for t in targets})
        trg = {}
        for t in targets:
            if t == src:
                trg[t] = float("nan")
                continue
            r = baseline_scores(scfg, base, "mlm_trg_finetune", train, corpora[t], t, {t: tests[t]})
            trg[t] = r[t]["accuracy"]
        scores["mlm_trg"].append(trg)
        log(f"seed {seed}: " + "; ".join(f"{s} " + " ".join(f"{t}={100 * scores[s][-1][t]:.1f}" for t in targets)
                                         for s in systems))
    return TrendResult(list(seeds), targets, scores)
