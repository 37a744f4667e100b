import hashlib
import json
import struct

import numpy as np
import pytest

from madx.adapters import AdapterConfig, AdapterStack, ConfigError
from madx.corpus import LanguageSpec, TaskSpec, generate_language_corpus, generate_task_data, script_offset
from madx.registry import (AdapterArtifact, ArtifactFormatError, IncompatibleArtifact, Registry,
                           artifacts_from_stack, build_stack, count_parameters, fingerprint, from_bytes,
                           load_artifact, load_base, read_artifact, save_artifact, save_base, swap_language,
                           to_bytes)
from madx.training import (TrainConfig, evaluate_task, mlm_accuracy, pretrain_base, train_language_adapter,
                           train_task_adapter)
from madx.transformer import ContractError, ModelConfig, TransformerEncoder, checksum

TINY = ModelConfig(h=16, num_layers=2, num_heads=2, ff_dim=32, vocab_size=105, max_seq_len=48)
EN = LanguageSpec("en", script_offset(0), 11, 0.1)
DE = LanguageSpec("de", script_offset(1), 12, 0.1)
NER = TaskSpec("tagging", "ner")

GOLDEN_SHA256 = "9922d6490b5d8044a2561caa0f7ab7a83a505a86e5f38dc58707791d41329e09"


def golden_artifact():
    return AdapterArtifact(
        "language", "golden", "0" * 32,
        {"layer0.down.weight": np.arange(6, dtype=np.float32).reshape(2, 3) / 4,
         "layer0.up.bias": np.array([1.5, -2.0], dtype=np.float64)},
        {"d": 3})


@pytest.fixture(scope="module")
def trained():
    model = TransformerEncoder(TINY, seed=0)
    pretrain_base(model, {"en": generate_language_corpus(EN, 400, 6)},
                  TrainConfig("pretrain_base", steps=300, learning_rate=3e-3))
    en = train_language_adapter(model, generate_language_corpus(EN, 100, 1), "en",
                                TrainConfig("train_lang_adapter", steps=40, learning_rate=1e-3))
    de = train_language_adapter(model, generate_language_corpus(DE, 200, 2), "de",
                                TrainConfig("train_lang_adapter", steps=300, learning_rate=3e-3))
    task = train_task_adapter(model, generate_task_data(NER, EN, 40, 1), "ner", en,
                              TrainConfig("train_task_adapter", steps=40, learning_rate=1e-3), NER)
    return model, en, de, task


class TestFormat:
    def test_golden_checksum(self):
        assert hashlib.sha256(to_bytes(golden_artifact())).hexdigest() == GOLDEN_SHA256

    def test_layout_by_hand(self):
        # independent little-endian encoding of the same artifact
        w = struct.pack("<6f", *[i / 4 for i in range(6)])
        b = struct.pack("<2d", 1.5, -2.0)
        payload = w + b
        header = {"fingerprint": "0" * 32, "id": "golden", "kind": "language", "metadata": {"d": 3},
                  "payload_sha256": hashlib.sha256(payload).hexdigest(),
                  "tensors": {"layer0.down.weight": {"dtype": "f32", "nbytes": 24, "offset": 0, "shape": [2, 3]},
                              "layer0.up.bias": {"dtype": "f64", "nbytes": 16, "offset": 24, "shape": [2]}}}
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        expected = b"MADX" + struct.pack("<IQ", 1, len(hb)) + hb + payload
        assert to_bytes(golden_artifact()) == expected

    def test_round_trip_bitwise(self, tmp_path):
        art = golden_artifact()
        back = read_artifact(save_artifact(art, tmp_path / "a.madx"))
        assert (back.kind, back.id, back.model_fingerprint, back.metadata) == ("language", "golden", "0" * 32, {"d": 3})
        for k, v in art.tensors.items():
            assert back.tensors[k].dtype == v.dtype
            np.testing.assert_array_equal(back.tensors[k], v)

    def test_double_save_identical(self, tmp_path):
        p1 = save_artifact(golden_artifact(), tmp_path / "a.madx")
        p2 = save_artifact(read_artifact(p1), tmp_path / "b.madx")
        assert p1.read_bytes() == p2.read_bytes()

    def test_insertion_order_irrelevant(self):
        a = golden_artifact()
        b = AdapterArtifact(a.kind, a.id, a.model_fingerprint, dict(reversed(list(a.tensors.items()))), a.metadata)
        assert to_bytes(a) == to_bytes(b)

    @pytest.mark.parametrize("cut", [3, 10, 40, -1])
    def test_truncation_rejected(self, cut):
        blob = to_bytes(golden_artifact())
        with pytest.raises(ArtifactFormatError):
            from_bytes(blob[:cut])

    def test_corruption_rejected(self):
        blob = bytearray(to_bytes(golden_artifact()))
        blob[-3] ^= 0xFF
        with pytest.raises(ArtifactFormatError, match="checksum"):
            from_bytes(bytes(blob))

    def test_bad_magic(self):
        with pytest.raises(ArtifactFormatError):
            from_bytes(b"NOPE" + to_bytes(golden_artifact())[4:])

    def test_int_tensor_rejected(self):
        with pytest.raises(ArtifactFormatError):
            to_bytes(AdapterArtifact("task", "t", "0", {"x": np.arange(3)}))


class TestModelBinding:
    def test_fingerprint_depends_on_weights(self):
        a, b = TransformerEncoder(TINY, seed=0), TransformerEncoder(TINY, seed=0)
        assert fingerprint(a) == fingerprint(b)
        b["mlm.bias"].data[0] += 1e-3
        assert fingerprint(a) != fingerprint(b)

    def test_mismatch_rejected(self, trained, tmp_path):
        model, en, _, _ = trained
        arts = artifacts_from_stack(en, model)
        path = save_artifact(arts["language"], tmp_path / "en.madx")
        other = TransformerEncoder(TINY, seed=1)
        with pytest.raises(IncompatibleArtifact):
            load_artifact(path, other)
        wider = TransformerEncoder(ModelConfig(h=32, num_layers=2, num_heads=2, ff_dim=32, vocab_size=105))
        with pytest.raises(IncompatibleArtifact):
            load_artifact(path, wider)

    def test_base_round_trip(self, tmp_path):
        m = TransformerEncoder(TINY, seed=5)
        p = save_base(m, tmp_path / "base.madx")
        back = load_base(p)
        assert back.config == m.config and back.base_checksum() == m.base_checksum()
        assert save_base(back, tmp_path / "again.madx").read_bytes() == p.read_bytes()
        with pytest.raises(ArtifactFormatError):
            read_artifact(p)


class TestStacks:
    def test_stack_round_trip(self, trained, tmp_path):
        model, en, _, task = trained
        reg = Registry(tmp_path)
        for art in artifacts_from_stack(task, model).values():
            reg.save(art)
        rebuilt = build_stack(model, reg.load("language", "en", model), reg.load("invertible", "en", model),
                              reg.load("task", "ner", model))
        assert checksum(rebuilt.parameters()) == checksum(task.parameters())
        data = generate_task_data(NER, EN, 20, 9)
        assert evaluate_task(model, task.head, data, "tagging", task) == \
            evaluate_task(model, rebuilt.head, data, "tagging", rebuilt)
        assert reg.ids("language") == ["en"]

    def test_swap_same_source_unchanged(self, trained):
        model, en, _, task = trained
        arts = artifacts_from_stack(task, model)
        swapped = swap_language(task, arts["language"], arts["invertible"], model)
        toks = np.array([[2, 7, 8, 9, 3]])
        np.testing.assert_array_equal(swapped.head(model.encode(toks, swapped)).data,
                                      task.head(model.encode(toks, task)).data)

    def test_swap_keeps_task_parameters(self, trained):
        model, _, de, task = trained
        task_params = [p for a in task.task for p in a.parameters()] + task.head.parameters()
        before = checksum(task_params)
        de_arts = artifacts_from_stack(de, model)
        swapped = swap_language(task, de_arts["language"], de_arts["invertible"], model)
        assert swapped.language_id == "de"
        assert checksum([p for a in swapped.task for p in a.parameters()] + swapped.head.parameters()) == before

    def test_swap_changes_target_mlm(self, trained):
        model, en, de, _ = trained
        corpus = generate_language_corpus(DE, 100, 7)
        de_arts = artifacts_from_stack(de, model)
        target = build_stack(model, de_arts["language"], de_arts["invertible"])
        assert mlm_accuracy(model, corpus, target) > mlm_accuracy(model, corpus, en)

    def test_swap_requires_invertible_pair(self, trained):
        model, _, de, task = trained
        de_arts = artifacts_from_stack(de, model)
        with pytest.raises(ContractError):
            swap_language(task, de_arts["language"], None, model)
        en_arts = artifacts_from_stack(trained[1], model)
        with pytest.raises(ContractError):
            build_stack(model, de_arts["language"], en_arts["invertible"])


class TestCounts:
    def test_base_size_budget_both_bias_conventions(self):
        for bias in (True, False):
            full = count_parameters(768, 12, include_biases=bias)
            noinv = count_parameters(768, 12, include_biases=bias, variant="-inv")
            task = count_parameters(768, 12, include_biases=bias, variant="-lad-inv")
            assert abs(full.total / 1e6 - 8.25) <= 0.05 and abs(100 * full.fraction - 3.05) <= 0.05
            assert abs(noinv.total / 1e6 - 7.96) <= 0.05 and abs(100 * noinv.fraction - 2.94) <= 0.05
            assert abs(task.total / 1e6 - 0.88) <= 0.05 and abs(100 * task.fraction - 0.32) <= 0.05

    def test_reference_figures_are_truncated_bias_free_counts(self):
        trunc = lambda x: np.floor(x * 100) / 100  # noqa: E731
        got = [count_parameters(768, 12, include_biases=False, variant=v) for v in ("full", "-inv", "-lad-inv")]
        assert [trunc(r.total / 1e6) for r in got] == [8.25, 7.96, 0.88]
        assert [trunc(100 * r.fraction) for r in got] == [3.05, 2.94, 0.32]

    def test_closed_form_values(self):
        # L * 2 h d  for the bottlenecks, 4 (h/2)(h/4) for the couplings
        r = count_parameters(768, 12, include_biases=False)
        assert (r.language, r.task, r.invertible) == (12 * 2 * 768 * 384, 12 * 2 * 768 * 48, 4 * 384 * 192)

    def test_zero_dims(self):
        r = count_parameters(768, 12, AdapterConfig(d_lang=0, d_task=0), invertible=False)
        assert r.total == 0

    @pytest.mark.parametrize("bias", [True, False])
    @pytest.mark.parametrize("h,layers", [(16, 2), (32, 3), (64, 1)])
    def test_matches_registered_parameters(self, h, layers, bias):
        from madx.adapters import make_invertible_adapter, make_language_adapters, make_task_adapters
        rng = np.random.default_rng(0)
        ac = AdapterConfig(bias=bias).resolve(h)
        stack = AdapterStack(language=make_language_adapters("en", h, layers, ac.d_lang, rng, bias),
                             task=make_task_adapters("ner", h, layers, ac.d_task, rng, bias),
                             invertible=make_invertible_adapter("en", h, rng, bias), language_id="en", task_id="ner")
        model = TransformerEncoder(ModelConfig(h=h, num_layers=layers, num_heads=2, ff_dim=8, vocab_size=10))
        model.attach(stack)
        model.freeze_base()
        trainable = sum(p.data.size for p in model.parameters() if not p.frozen)
        assert trainable == count_parameters(h, layers, ac, include_biases=bias).total

    def test_bad_adapter_dims(self):
        with pytest.raises(ConfigError):
            count_parameters(30, 2)
