"""Adapter artifacts on disk, the zero-shot language swap, and parameter budgets.

Artifact file layout (all integers little-endian)::

    b"MADX" | u32 version | u64 header length | UTF-8 JSON header | payloads

The header is canonical JSON (sorted keys, no whitespace) holding kind, id,
model fingerprint, metadata and, per tensor, ``shape``/``dtype``/``offset``/
``nbytes``. Payloads follow in sorted tensor-name order as little-endian
floats, so saving the same artifact twice yields identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapters import (AdapterConfig, AdapterStack, BottleneckAdapter, ConfigError,
                       InvertibleAdapter)
from .transformer import ClassificationHead, ContractError, ModelConfig, TaggingHead, TransformerEncoder

MAGIC = b"MADX"
VERSION = 1
KINDS = ("language", "task", "invertible")
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class ArtifactFormatError(ValueError):
    """The file is not a well-formed MADX artifact."""


class IncompatibleArtifact(ValueError):
    """Artifact fingerprint does not match the model it is loaded into."""


def fingerprint(model: TransformerEncoder) -> str:
    """Hash of the model configuration and the exact base weights."""
    h = hashlib.sha256()
    h.update(model.config.digest().encode())
    h.update(model.base_checksum().encode())
    return h.hexdigest()[:32]


@dataclass
class AdapterArtifact:
    kind: str
    id: str
    model_fingerprint: str
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"artifact kind must be one of {KINDS}, got {self.kind!r}")

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name]).tobytes())
        return h.hexdigest()


# serialization --------------------------------------------------------


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise ArtifactFormatError(f"unsupported tensor dtype {arr.dtype}")


def to_bytes(artifact: AdapterArtifact) -> bytes:
    return _pack(artifact.kind, artifact.id, artifact.model_fingerprint, artifact.tensors, artifact.metadata)


def _pack(kind: str, ident: str, fp: str, tensors: dict[str, np.ndarray], metadata: dict) -> bytes:
    entries = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        tag = _dtype_tag(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": tag, "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "kind": kind,
        "id": ident,
        "fingerprint": fp,
        "metadata": metadata,
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + payload


def from_bytes(blob: bytes) -> AdapterArtifact:
    kind, ident, fp, tensors, metadata = _unpack(blob)
    if kind not in KINDS:
        raise ArtifactFormatError(f"file holds a {kind!r} checkpoint, not an adapter artifact")
    return AdapterArtifact(kind, ident, fp, tensors, metadata)


def _unpack(blob: bytes):
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ArtifactFormatError("missing MADX magic number")
    version, hlen = struct.unpack("<IQ", blob[4:16])
    if version != VERSION:
        raise ArtifactFormatError(f"unsupported format version {version}")
    if len(blob) < 16 + hlen:
        raise ArtifactFormatError("truncated header")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
        entries = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise ArtifactFormatError(f"corrupt header: {e}") from None
    payload = blob[16 + hlen:]
    total = sum(e["nbytes"] for e in header["tensors"].values())
    if len(payload) != total:
        raise ArtifactFormatError(f"payload is {len(payload)} bytes, header declares {total} (truncated?)")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise ArtifactFormatError("payload checksum mismatch")
    tensors = {}
    for name in sorted(header["tensors"]):
        e = header["tensors"][name]
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="))
    return header["kind"], header["id"], header["fingerprint"], tensors, header["metadata"]


def save_artifact(artifact: AdapterArtifact, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(artifact))
    return path


def read_artifact(path: str | Path) -> AdapterArtifact:
    return from_bytes(Path(path).read_bytes())


def load_artifact(path: str | Path, model: TransformerEncoder) -> AdapterArtifact:
    """Read an artifact and verify it was produced against ``model``'s exact base."""
    art = read_artifact(path)
    check_compatible(art, model)
    return art


def check_compatible(art: AdapterArtifact, model: TransformerEncoder) -> None:
    fp = fingerprint(model)
    if art.model_fingerprint != fp:
        raise IncompatibleArtifact(
            f"{art.kind} artifact {art.id!r} has fingerprint {art.model_fingerprint}, model has {fp}")


def save_base(model: TransformerEncoder, path: str | Path, metadata: dict | None = None) -> Path:
    """Write the base weights in the same container, tagged ``kind="base"``."""
    meta = {"config": model.config.to_dict(), **(metadata or {})}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_pack("base", "base", fingerprint(model), model.state_dict(), meta))
    return path


def load_base(path: str | Path) -> TransformerEncoder:
    kind, _, fp, tensors, meta = _unpack(Path(path).read_bytes())
    if kind != "base":
        raise ArtifactFormatError(f"{path} holds a {kind!r} artifact, not a base checkpoint")
    model = TransformerEncoder(ModelConfig(**meta["config"]))
    model.load_state_dict(tensors)
    if fingerprint(model) != fp:
        raise ArtifactFormatError(f"{path}: base weights do not match the recorded fingerprint")
    return model


# stack <-> artifacts --------------------------------------------------


def _strip(prefix: str, params) -> dict[str, np.ndarray]:
    out = {}
    for p in params:
        if not p.name.startswith(prefix + "."):
            raise ContractError(f"parameter {p.name} does not belong to {prefix}")
        out[p.name[len(prefix) + 1:]] = p.data.copy()
    return out


def artifacts_from_stack(stack: AdapterStack, model: TransformerEncoder, metadata: dict | None = None
                         ) -> dict[str, AdapterArtifact]:
    """Split a stack into its language / invertible / task artifacts."""
    fp = fingerprint(model)
    meta = dict(metadata or {})
    out = {}
    if stack.language is not None:
        d = stack.language[0].d
        bias = stack.language[0].down_b is not None
        out["language"] = AdapterArtifact(
            "language", stack.language_id, fp,
            _strip(f"lang.{stack.language_id}", [p for a in stack.language for p in a.parameters()]),
            {**meta, "d": d, "bias": bias, "num_layers": len(stack.language)})
    if stack.invertible is not None:
        bias = stack.invertible.F.down_b is not None
        out["invertible"] = AdapterArtifact(
            "invertible", stack.language_id, fp,
            _strip(f"inv.{stack.language_id}", stack.invertible.parameters()), {**meta, "bias": bias})
    if stack.task is not None:
        tensors = _strip(f"task.{stack.task_id}", [p for a in stack.task for p in a.parameters()])
        tmeta = {**meta, "d": stack.task[0].d, "bias": stack.task[0].down_b is not None,
                 "num_layers": len(stack.task), "source_language": stack.language_id,
                 "with_language": stack.language is not None,
                 "with_invertible": stack.invertible is not None}
        if stack.head is not None:
            for k, v in _strip(stack.head.name, stack.head.parameters()).items():
                tensors[f"head.{k}"] = v
            tmeta.update(head_kind=stack.head.kind, num_labels=stack.head.num_labels)
        out["task"] = AdapterArtifact("task", stack.task_id, fp, tensors, tmeta)
    return out


def _assign(param, arr: np.ndarray, art: AdapterArtifact, key: str) -> None:
    if param.shape != arr.shape:
        raise ConfigError(f"{art.kind} artifact {art.id!r}: tensor {key} has shape {arr.shape}, "
                          f"model expects {param.shape}")
    param.data = arr.astype(param.dtype, copy=True)


def _fill(prefix: str, params, art: AdapterArtifact, extra: set[str] = frozenset()) -> None:
    expected = {p.name[len(prefix) + 1:]: p for p in params}
    names = set(art.tensors) - extra
    if names != set(expected):
        missing, unknown = set(expected) - names, names - set(expected)
        raise ConfigError(f"{art.kind} artifact {art.id!r} tensor names do not match model: "
                          f"missing {sorted(missing)[:3]}, unexpected {sorted(unknown)[:3]}")
    for k, p in expected.items():
        _assign(p, art.tensors[k], art, k)


def language_adapters_from_artifact(art: AdapterArtifact, model: TransformerEncoder) -> list[BottleneckAdapter]:
    check_compatible(art, model)
    c = model.config
    layers = [BottleneckAdapter(f"lang.{art.id}.layer{i}", c.h, int(art.metadata["d"]),
                                bias=bool(art.metadata.get("bias", True)), dtype=model.dtype)
              for i in range(c.num_layers)]
    _fill(f"lang.{art.id}", [p for a in layers for p in a.parameters()], art)
    return layers


def invertible_from_artifact(art: AdapterArtifact, model: TransformerEncoder) -> InvertibleAdapter:
    check_compatible(art, model)
    inv = InvertibleAdapter(f"inv.{art.id}", model.config.h, bias=bool(art.metadata.get("bias", True)),
                            dtype=model.dtype)
    _fill(f"inv.{art.id}", inv.parameters(), art)
    return inv


def task_from_artifact(art: AdapterArtifact, model: TransformerEncoder):
    """Task adapters and head rebuilt from a task artifact."""
    check_compatible(art, model)
    c = model.config
    layers = [BottleneckAdapter(f"task.{art.id}.layer{i}", c.h, int(art.metadata["d"]),
                                bias=bool(art.metadata.get("bias", True)), dtype=model.dtype)
              for i in range(c.num_layers)]
    head_keys = {k for k in art.tensors if k.startswith("head.")}
    _fill(f"task.{art.id}", [p for a in layers for p in a.parameters()], art, head_keys)
    head = None
    if head_keys:
        cls = TaggingHead if art.metadata.get("head_kind", "tagging") == "tagging" else ClassificationHead
        head = cls(f"head.{art.id}", c.h, int(art.metadata["num_labels"]), dtype=model.dtype)
        _assign(head.weight, art.tensors["head.weight"], art, "head.weight")
        _assign(head.bias, art.tensors["head.bias"], art, "head.bias")
    return layers, head


def build_stack(model: TransformerEncoder, language: AdapterArtifact | None = None,
                invertible: AdapterArtifact | None = None, task: AdapterArtifact | None = None
                ) -> AdapterStack:
    """A fresh :class:`AdapterStack` holding copies of the artifacts' tensors."""
    if language is not None and invertible is not None and language.id != invertible.id:
        raise ContractError(f"language adapter {language.id!r} paired with invertible adapter {invertible.id!r}")
    stack = AdapterStack()
    if language is not None:
        stack.language = language_adapters_from_artifact(language, model)
        stack.language_id = language.id
    if invertible is not None:
        stack.invertible = invertible_from_artifact(invertible, model)
        stack.language_id = invertible.id
    if task is not None:
        stack.task, stack.head = task_from_artifact(task, model)
        stack.task_id = task.id
        stack.extras["task_kind"] = task.metadata.get("head_kind", "tagging")
    stack.validate(model.config.num_layers, model.config.h)
    return stack


def swap_language(stack: AdapterStack, target_language: AdapterArtifact,
                  target_invertible: AdapterArtifact | None, model: TransformerEncoder) -> AdapterStack:
    """Replace the language and invertible adapters together, keeping task adapters and head.

    Raises :class:`ContractError` when the task was trained with an
    invertible adapter but no target invertible adapter is supplied (or vice
    versa), and :class:`IncompatibleArtifact` on a fingerprint mismatch.
    """
    if stack.task is None:
        raise ContractError("swap_language needs a stack carrying a trained task adapter")
    had_inv = stack.invertible is not None
    if had_inv and target_invertible is None:
        raise ContractError("the task was trained with an invertible adapter; supply the target "
                            "language's invertible adapter as well")
    if not had_inv and target_invertible is not None:
        raise ContractError("the task was trained without an invertible adapter; a target "
                            "invertible adapter cannot be swapped in")
    if target_language.kind != "language" or (target_invertible is not None and target_invertible.kind != "invertible"):
        raise ContractError("swap_language needs a language artifact and an invertible artifact")
    fresh = build_stack(model, language=target_language, invertible=target_invertible)
    return stack.replace(language=fresh.language, invertible=fresh.invertible, language_id=fresh.language_id)


class Registry:
    """Directory of artifacts laid out as ``<root>/<kind>/<id>.madx``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, kind: str, artifact_id: str) -> Path:
        if kind not in KINDS:
            raise ValueError(f"unknown artifact kind {kind!r}")
        return self.root / kind / f"{artifact_id}.madx"

    def exists(self, kind: str, artifact_id: str) -> bool:
        return self.path(kind, artifact_id).exists()

    def save(self, artifact: AdapterArtifact) -> Path:
        return save_artifact(artifact, self.path(artifact.kind, artifact.id))

    def load(self, kind: str, artifact_id: str, model: TransformerEncoder) -> AdapterArtifact:
        p = self.path(kind, artifact_id)
        if not p.exists():
            raise FileNotFoundError(p)
        return load_artifact(p, model)

    def ids(self, kind: str) -> list[str]:
        d = self.root / kind
        return sorted(p.stem for p in d.glob("*.madx")) if d.exists() else []


# parameter budget -----------------------------------------------------


@dataclass
class ParamReport:
    language: int
    task: int
    invertible: int
    base_param_count: int
    include_biases: bool
    variant: str = "full"

    @property
    def total(self) -> int:
        return self.language + self.task + self.invertible

    @property
    def fraction(self) -> float:
        return self.total / self.base_param_count

    def line(self) -> str:
        return (f"{self.variant:<10} biases={'yes' if self.include_biases else 'no ':<3} "
                f"{self.total / 1e6:6.2f}M  {100 * self.fraction:5.2f}%  "
                f"(lang {self.language:,} | task {self.task:,} | inv {self.invertible:,})")


VARIANTS = {"full": (True, True, True), "-inv": (True, True, False), "-lad-inv": (False, True, False)}


def count_parameters(h: int | ModelConfig, num_layers: int | None = None,
                     adapter_config: AdapterConfig | None = None, include_biases: bool = True,
                     base_param_count: int = 270_000_000, variant: str = "full",
                     language: bool | None = None, task: bool | None = None,
                     invertible: bool | None = None) -> ParamReport:
    """Closed-form count of adapter parameters added per language.

    language:   L * (2 h d_lang [+ d_lang + h])
    task:       L * (2 h d_task [+ d_task + h])
    invertible: 4 (h/2)(h/4) [+ 2 h/4 + 2 h/2]
    """
    if isinstance(h, ModelConfig):
        num_layers = h.num_layers if num_layers is None else num_layers
        h = h.h
    if num_layers is None:
        raise ValueError("num_layers is required when h is an int")
    ac = (adapter_config or AdapterConfig()).resolve(h)
    use = dict(zip(("language", "task", "invertible"), VARIANTS[variant]))
    for k, v in (("language", language), ("task", task), ("invertible", invertible)):
        if v is not None:
            use[k] = v
    b = 1 if include_biases else 0

    def bottleneck(d):
        return num_layers * (2 * h * d + b * (d + h)) if d > 0 else 0

    half, quarter = h // 2, h // 4
    inv = 4 * half * quarter + b * (2 * quarter + 2 * half)
    return ParamReport(
        language=bottleneck(ac.d_lang) if use["language"] else 0,
        task=bottleneck(ac.d_task) if use["task"] else 0,
        invertible=inv if use["invertible"] else 0,
        base_param_count=base_param_count, include_biases=include_biases, variant=variant)
