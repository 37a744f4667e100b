"""Synthetic multilingual corpora from one shared probabilistic grammar.

Every language realizes the same grammar; it differs only in how concepts
map to token ids (a seeded permutation inside the language's script block)
and in how often words are split into two subword pieces. Word-level gold
labels therefore coincide across languages for parallel sentences.

Vocabulary layout::

    0 PAD | 1 MASK | 2 CLS | 3 SEP | 4 UNK | block 0 | block 1 | ...

Each script block holds ``NUM_CONCEPTS`` word ids followed by ``NUM_PIECES``
subword-piece ids.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PAD, MASK, CLS, SEP, UNK = 0, 1, 2, 3, 4
NUM_SPECIAL = 5

CATEGORIES: dict[str, int] = {
    "PN": 6, "LN": 6, "NOUN": 8, "VERB": 8, "ADJ": 4, "DET": 2, "PREP": 3, "CONJ": 1,
}

GRAMMAR: dict[str, list[tuple[tuple[str, ...], float]]] = {
    "S": [(("NP", "VP"), 0.7), (("PP", "NP", "VP"), 0.2), (("NP", "VP", "CONJ", "NP", "VP"), 0.1)],
    "NP": [(("PER",), 0.3), (("LOC",), 0.15), (("DET", "NOUN"), 0.35), (("DET", "ADJ", "NOUN"), 0.2)],
    "VP": [(("VERB", "NP"), 0.5), (("VERB", "NP", "PP"), 0.3), (("VERB",), 0.2)],
    "PP": [(("PREP", "LOC"), 0.6), (("PREP", "NP"), 0.4)],
    "PER": [(("PN",), 0.6), (("PN", "PN"), 0.4)],
    "LOC": [(("LN",), 0.7), (("LN", "LN"), 0.3)],
}

ENTITY_NONTERMINALS = ("PER", "LOC")
TAG_LABELS = ("O", "B-PER", "I-PER", "B-LOC", "I-LOC")
SUBJECT_LABELS = ("PER", "LOC", "COMMON")

_CAT_START = {}
_n = 0
for _c, _k in CATEGORIES.items():
    _CAT_START[_c] = _n
    _n += _k
NUM_CONCEPTS = _n
NUM_PIECES = 12
BLOCK_SIZE = NUM_CONCEPTS + NUM_PIECES
IGNORE = -100


def script_offset(block: int) -> int:
    return NUM_SPECIAL + block * BLOCK_SIZE


def vocab_size(num_blocks: int) -> int:
    return NUM_SPECIAL + num_blocks * BLOCK_SIZE


def concept_category(concept: int) -> str:
    for cat, start in _CAT_START.items():
        if start <= concept < start + CATEGORIES[cat]:
            return cat
    raise ValueError(f"concept {concept} out of range")


@dataclass(frozen=True)
class LanguageSpec:
    language_id: str
    script_offset: int
    vocab_permutation_seed: int
    morphology_noise: float = 0.0
    seen_in_pretraining: bool = True

    def _rng(self) -> np.random.Generator:
        return np.random.default_rng(self.vocab_permutation_seed)

    @property
    def permutation(self) -> np.ndarray:
        return self._rng().permutation(NUM_CONCEPTS)

    @property
    def piece_pairs(self) -> np.ndarray:
        """Two-piece split of every concept; distinct pairs keep the split unambiguous."""
        rng = self._rng()
        rng.permutation(NUM_CONCEPTS)
        pairs = [(a, b) for a in range(NUM_PIECES) for b in range(NUM_PIECES)]
        pick = rng.choice(len(pairs), NUM_CONCEPTS, replace=False)
        return np.array([pairs[i] for i in pick])

    def word_id(self, concept: int) -> int:
        return self.script_offset + int(self.permutation[concept])

    def token_ids(self) -> range:
        return range(self.script_offset, self.script_offset + BLOCK_SIZE)


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "tagging"  # tagging | classification
    task_id: str = "ner"

    def __post_init__(self):
        if self.kind not in ("tagging", "classification"):
            raise ValueError(f"unknown task kind {self.kind!r}")

    @property
    def labels(self) -> tuple[str, ...]:
        return TAG_LABELS if self.kind == "tagging" else SUBJECT_LABELS

    @property
    def num_labels(self) -> int:
        return len(self.labels)


@dataclass
class Word:
    concept: int
    tag: int


@dataclass
class Sentence:
    words: list[Word]
    subject: int


def _seed(*parts) -> int:
    h = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:8], "little")


def sample_sentence(rng: np.random.Generator) -> Sentence:
    """Draw one derivation from the grammar (leftmost, depth-first).

    Words under an entity nonterminal are tagged B-/I- of that entity; the
    sentence label is the type of the first noun phrase directly under S.
    """
    words: list[Word] = []
    subject: list[int] = []

    def expand(symbol: str, entity: list | None, is_subject: bool) -> None:
        if symbol in CATEGORIES:
            tag = 0
            if entity is not None:
                tag = TAG_LABELS.index(("B-" if entity[1] else "I-") + entity[0])
                entity[1] = False
            words.append(Word(_CAT_START[symbol] + int(rng.integers(CATEGORIES[symbol])), tag))
            return
        rules = GRAMMAR[symbol]
        rhs = rules[int(rng.choice(len(rules), p=[p for _, p in rules]))][0]
        if symbol in ENTITY_NONTERMINALS:
            entity = [symbol, True]
        if is_subject:
            subject.append({"PER": 0, "LOC": 1}.get(rhs[0], 2))
        first_np = symbol == "S"
        for child in rhs:
            subj = first_np and child == "NP"
            if subj:
                first_np = False
            expand(child, entity, subj)

    expand("S", None, False)
    return Sentence(words, subject[0])


def realize(sentence: Sentence, lang: LanguageSpec, rng: np.random.Generator):
    """Token ids plus the index of each word's first token."""
    perm, pairs = lang.permutation, lang.piece_pairs
    tokens: list[int] = []
    starts: list[int] = []
    for w in sentence.words:
        starts.append(len(tokens))
        if lang.morphology_noise > 0 and rng.random() < lang.morphology_noise:
            a, b = pairs[w.concept]
            base = lang.script_offset + NUM_CONCEPTS
            tokens += [base + int(a), base + int(b)]
        else:
            tokens.append(lang.script_offset + int(perm[w.concept]))
    return tokens, starts


def generate_language_corpus(spec: LanguageSpec, n_sentences: int, seed: int) -> list[list[int]]:
    """``n_sentences`` token sequences; derivations depend on ``seed`` only, so two
    languages generated with the same seed are parallel."""
    if n_sentences < 1:
        raise ValueError("n_sentences must be >= 1")
    grammar_rng = np.random.default_rng(_seed("grammar", seed))
    surface_rng = np.random.default_rng(_seed("surface", spec.language_id, seed))
    return [realize(sample_sentence(grammar_rng), spec, surface_rng)[0] for _ in range(n_sentences)]


@dataclass
class Example:
    tokens: list[int]
    word_starts: list[int]
    word_labels: list[int]
    label: int

    def token_labels(self) -> list[int]:
        """Per-token labels: each word's label on its first piece, IGNORE elsewhere."""
        out = [IGNORE] * len(self.tokens)
        for s, y in zip(self.word_starts, self.word_labels):
            out[s] = y
        return out


def generate_task_data(spec: TaskSpec, language: LanguageSpec, n: int, seed: int) -> list[Example]:
    """Labeled examples. ``word_labels`` (tagging) and ``label`` (classification)
    depend only on ``(spec, n, seed)``, never on the language."""
    grammar_rng = np.random.default_rng(_seed("task", spec.task_id, seed))
    surface_rng = np.random.default_rng(_seed("task-surface", spec.task_id, language.language_id, seed))
    out = []
    for _ in range(n):
        s = sample_sentence(grammar_rng)
        tokens, starts = realize(s, language, surface_rng)
        out.append(Example(tokens, starts, [w.tag for w in s.words], s.subject))
    return out


def expected_category_counts() -> dict[str, float]:
    """Expected number of words of each category per sentence (first-moment recursion)."""
    memo: dict[str, dict[str, float]] = {}

    def counts(symbol: str) -> dict[str, float]:
        if symbol in CATEGORIES:
            return {symbol: 1.0}
        if symbol not in memo:
            acc: dict[str, float] = {}
            for rhs, p in GRAMMAR[symbol]:
                for child in rhs:
                    for k, v in counts(child).items():
                        acc[k] = acc.get(k, 0.0) + p * v
            memo[symbol] = acc
        return memo[symbol]

    return counts("S")


# file interfaces ------------------------------------------------------


def write_corpus(path: str | Path, sentences: Sequence[Sequence[int]]) -> None:
    Path(path).write_text("".join(" ".join(map(str, s)) + "\n" for s in sentences))


def read_corpus(path: str | Path) -> list[list[int]]:
    return [[int(t) for t in line.split()] for line in Path(path).read_text().splitlines() if line.strip()]


def write_task(path: str | Path, examples: Sequence[Example]) -> None:
    """Tokens to ``path``; per-token labels (IGNORE on continuation pieces) to
    ``path.labels``; sentence labels to ``path.class``."""
    path = Path(path)
    write_corpus(path, [e.tokens for e in examples])
    path.with_suffix(path.suffix + ".labels").write_text(
        "".join(" ".join(map(str, e.token_labels())) + "\n" for e in examples))
    path.with_suffix(path.suffix + ".class").write_text("".join(f"{e.label}\n" for e in examples))


def read_task(path: str | Path) -> list[Example]:
    path = Path(path)
    toks = read_corpus(path)
    labs = read_corpus(path.with_suffix(path.suffix + ".labels"))
    cls = [int(x) for x in path.with_suffix(path.suffix + ".class").read_text().split()]
    out = []
    for t, l, c in zip(toks, labs, cls):
        starts = [i for i, y in enumerate(l) if y != IGNORE]
        out.append(Example(t, starts, [l[i] for i in starts], c))
    return out
