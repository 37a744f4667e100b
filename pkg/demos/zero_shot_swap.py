"""Train on English, evaluate on German by swapping the language adapter.

Runs in about a minute on one CPU core.
"""

from madx.corpus import LanguageSpec, TaskSpec, generate_language_corpus, generate_task_data, script_offset, vocab_size
from madx.registry import artifacts_from_stack, swap_language
from madx.training import TrainConfig, evaluate_task, pretrain_base, train_language_adapter, train_task_adapter
from madx.transformer import ModelConfig, TransformerEncoder

EN = LanguageSpec("en", script_offset(0), 11, 0.1)
DE = LanguageSpec("de", script_offset(1), 12, 0.1)
NER = TaskSpec("tagging", "ner")

model = TransformerEncoder(ModelConfig(h=32, num_layers=2, num_heads=2, ff_dim=64, vocab_size=vocab_size(2)), seed=0)
pretrain_base(model, {"en": generate_language_corpus(EN, 1000, 1), "de": generate_language_corpus(DE, 1000, 2)},
              TrainConfig("pretrain_base", steps=1500, learning_rate=1e-3))
print("base pretrained; frozen from here on")

en = train_language_adapter(model, generate_language_corpus(EN, 500, 3), "en",
                            TrainConfig("train_lang_adapter", steps=400, learning_rate=1e-3))
de = train_language_adapter(model, generate_language_corpus(DE, 500, 4), "de",
                            TrainConfig("train_lang_adapter", steps=400, learning_rate=1e-3))
ner = train_task_adapter(model, generate_task_data(NER, EN, 500, 5), "ner", en,
                         TrainConfig("train_task_adapter", steps=400, learning_rate=1e-3), NER)

test_en = generate_task_data(NER, EN, 200, 6)
test_de = generate_task_data(NER, DE, 200, 6)
print("en (source)     ", evaluate_task(model, ner.head, test_en, "tagging", ner))

# keep the task adapter and head, replace the language adapter and invertible adapter
de_arts = artifacts_from_stack(de, model)
swapped = swap_language(ner, de_arts["language"], de_arts["invertible"], model)
print("de (zero-shot)  ", evaluate_task(model, swapped.head, test_de, "tagging", swapped))
print("de (en adapter) ", evaluate_task(model, ner.head, test_de, "tagging", ner))
