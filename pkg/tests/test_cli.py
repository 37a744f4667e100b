import csv
import json
from dataclasses import replace

import pytest

from madx.adapters import ConfigError
from madx.cli import main
from madx.corpus import script_offset, vocab_size
from madx.experiment import ExperimentConfig, load_base_model, load_task_split, registry_for
from madx.registry import build_stack
from madx.training import evaluate_task


def tiny_config(root, **extra):
    langs = [{"language_id": lid, "script_offset": script_offset(i), "vocab_permutation_seed": 11 + i,
              "morphology_noise": 0.1, "seen_in_pretraining": i < 3} for i, lid in enumerate(("en", "de", "ru", "qu"))]
    cfg = {
        "model": {"h": 16, "num_layers": 2, "num_heads": 2, "ff_dim": 32, "vocab_size": vocab_size(4),
                  "max_seq_len": 64},
        "languages": langs,
        "train": {"pretrain_base": {"steps": 40}, "train_lang_adapter": {"steps": 20},
                  "train_task_adapter": {"steps": 20}, "full_finetune": {"steps": 10},
                  "mlm_trg_finetune": {"steps": 10}, "mlm_src_finetune": {"steps": 10}},
        "corpus_sentences": 60, "task_train": 40, "task_test": 30, "baseline_mlm_steps": 10,
        "registry": str(root / "reg"), "out": str(root / "out"),
    }
    cfg.update(extra)
    path = root / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = tiny_config(root)
    assert run("gen-corpus", "--config", cfg) == 0
    assert run("pretrain-base", "--config", cfg) == 0
    assert run("train-lang", "--config", cfg) == 0
    assert run("train-task", "--config", cfg, "--source", "en,de,ru,qu") == 0
    assert run("matrix", "--config", cfg) == 0
    return root, cfg


def snapshot(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
            and p.suffix != ".json" and "metrics" not in p.parts}


def test_matrix_grid(pipeline):
    root, _ = pipeline
    rows = list(csv.reader((root / "out" / "matrix.full.csv").open()))
    assert rows[0] == ["source", "en", "de", "ru", "qu"]
    assert [r[0] for r in rows[1:]] == ["en", "de", "ru", "qu"]
    assert all(0.0 <= float(v) <= 1.0 for r in rows[1:] for v in r[1:])
    assert (root / "out" / "matrix.full.txt").exists()


def test_rerun_is_bitwise_identical(pipeline, tmp_path):
    root, _ = pipeline
    cfg = tiny_config(tmp_path)
    for cmd in (["gen-corpus"], ["pretrain-base"], ["train-lang"], ["train-task", "--source", "en,de,ru,qu"],
                ["matrix"]):
        assert run(*cmd, "--config", cfg) == 0
    a, b = snapshot(root), snapshot(tmp_path)
    assert a.keys() - {"config.json"} == b.keys() - {"config.json"}
    for k in a:
        if k != "config.json":
            assert a[k] == b[k], k


def test_metrics_logged(pipeline):
    root, _ = pipeline
    lines = (root / "out" / "metrics" / "lang.en.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["mode"] == "train_lang_adapter"


def test_transfer_diagonal_equals_in_language(pipeline, capsys):
    root, cfg_path = pipeline
    assert run("transfer-eval", "--config", cfg_path, "--source", "de", "--targets", "de") == 0
    scores = json.loads((root / "out" / "transfer.de.full.json").read_text())
    cfg = ExperimentConfig.load(cfg_path)
    model = load_base_model(cfg)
    reg = registry_for(cfg)
    stack = build_stack(model, reg.load("language", "de", model), reg.load("invertible", "de", model),
                        reg.load("task", "ner-de", model))
    direct = evaluate_task(model, stack.head, load_task_split(cfg, "de", "test"), "tagging", stack)
    assert scores["de"] == direct
    assert "de" in capsys.readouterr().out


def test_variants_and_baselines(pipeline):
    _, cfg = pipeline
    assert run("train-lang", "--config", cfg, "--language", "en,qu", "--no-invertible") == 0
    assert run("train-task", "--config", cfg, "--variant", "no-inv") == 0
    assert run("transfer-eval", "--config", cfg, "--variant", "no-inv", "--targets", "en,qu") == 0
    assert run("train-task", "--config", cfg, "--variant", "task-only") == 0
    assert run("transfer-eval", "--config", cfg, "--variant", "task-only") == 0
    assert run("baseline", "--config", cfg, "--mode", "mlm_trg_finetune", "--target", "qu") == 0
    assert run("baseline", "--config", cfg, "--mode", "full_finetune") == 0


def test_missing_artifact_names_producer(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert run("pretrain-base", "--config", cfg) == 2
    assert "madx gen-corpus" in capsys.readouterr().err
    assert run("gen-corpus", "--config", cfg) == 0
    assert run("train-lang", "--config", cfg, "--language", "en") == 2
    assert "madx pretrain-base" in capsys.readouterr().err
    assert run("pretrain-base", "--config", cfg) == 0
    assert run("train-task", "--config", cfg) == 2
    assert "madx train-lang --language en" in capsys.readouterr().err
    assert run("transfer-eval", "--config", cfg) == 2
    assert "madx train-task" in capsys.readouterr().err


def test_fingerprint_mismatch_exits_nonzero(pipeline, tmp_path, capsys):
    root, _ = pipeline
    cfg = tiny_config(tmp_path, registry=str(root / "reg"), pretrain_seed=1)
    assert run("gen-corpus", "--config", cfg) == 0
    # a base pretrained from a different seed invalidates every stored adapter
    assert run("pretrain-base", "--config", cfg, "--registry", tmp_path / "reg2") == 0
    (tmp_path / "reg2" / "language").mkdir(parents=True)
    (tmp_path / "reg2" / "invertible").mkdir()
    for kind in ("language", "invertible"):
        (tmp_path / "reg2" / kind / "en.madx").write_bytes((root / "reg" / kind / "en.madx").read_bytes())
    assert run("train-task", "--config", cfg, "--registry", tmp_path / "reg2") == 2
    assert "fingerprint" in capsys.readouterr().err


def test_unknown_keys_rejected(tmp_path, capsys):
    for bad in ({"bogus": 1}, {"model": {"h": 16, "depth": 3}}, {"train": {"pretrain_base": {"epochs": 1}}},
                {"train": {"warmup": {}}}, {"languages": [{"language_id": "en", "script": 5}]}):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        assert run("gen-corpus", "--config", path) == 2
        assert "unknown" in capsys.readouterr().err
        with pytest.raises(ConfigError):
            ExperimentConfig.load(path)


def test_flags_override_config(tmp_path):
    cfg = tiny_config(tmp_path)
    assert run("gen-corpus", "--config", cfg, "--out", tmp_path / "elsewhere") == 0
    assert (tmp_path / "elsewhere" / "data" / "en.mlm.txt").exists()
    assert not (tmp_path / "out").exists()


def test_count_params_base_size(capsys):
    assert run("count-params") == 0
    out = capsys.readouterr().out.splitlines()
    full = next(line for line in out if line.startswith("full"))
    assert "8.28M" in full and "3.07%" in full
    assert run("count-params", "--no-bias") == 0
    out = capsys.readouterr().out
    assert "8.26M" in out and "7.96M" in out and "0.88M" in out


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig()
    path = tmp_path / "c.json"
    assert run("init-config", path) == 0
    again = ExperimentConfig.load(path)
    assert again == cfg
    assert replace(cfg, seed=3) != cfg


def test_unseen_must_not_share_ids():
    cfg = ExperimentConfig()
    langs = list(cfg.languages)
    langs[-1] = replace(langs[-1], script_offset=langs[0].script_offset)
    with pytest.raises(ConfigError):
        replace(cfg, languages=langs)
