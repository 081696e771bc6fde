"""Sequence labeling through the whole stack: files, loop, and evaluation."""

import json

import numpy as np
import pytest

from ausds.attacks import AttackConfig
from ausds.data import load_dataset
from ausds.fileformats import (
    DatasetManifest,
    write_embeddings,
    write_labels,
    write_manifest,
    write_token_embeddings,
)
from ausds.loop import ActiveLoop, LoopConfig
from ausds.model import LINEAR, DecoderModel, TrainConfig
from ausds.reports import eval_from_scratch
from ausds.sampler import SamplerConfig


def write_labeling_corpus(root, n=240, n_test=60, d=6, labels=3, seed=0):
    """Token vectors drawn per-label from shifted Gaussians, so a per-token
    linear tagger is learnable."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=3.0, size=(labels, d))

    def draw(count):
        sequences, golds = [], []
        for _ in range(count):
            length = int(rng.integers(2, 6))
            gold = rng.integers(0, labels, size=length)
            tokens = centers[gold] + rng.normal(size=(length, d))
            sequences.append(tokens.astype(np.float32))
            golds.append(gold)
        return sequences, golds

    train_seqs, train_gold = draw(n)
    test_seqs, test_gold = draw(n_test)
    root.mkdir(parents=True, exist_ok=True)
    pooled = np.stack([s.mean(axis=0) for s in train_seqs])
    test_pooled = np.stack([s.mean(axis=0) for s in test_seqs])
    write_embeddings(root / "train.aemb", pooled)
    write_token_embeddings(root / "train.atok", train_seqs)
    write_labels(root / "train.labels.tsv", np.arange(n), train_gold)
    write_embeddings(root / "test.aemb", test_pooled)
    write_token_embeddings(root / "test.atok", test_seqs)
    write_labels(root / "test.labels.tsv", np.arange(n_test), test_gold)
    manifest = DatasetManifest(
        name="tokens", task="labeling", num_classes=labels,
        embeddings_path="train.aemb", labels_path="train.labels.tsv",
        dim=d, count=n,
        token_embeddings_path="train.atok",
        test_embeddings_path="test.aemb", test_labels_path="test.labels.tsv",
        test_token_embeddings_path="test.atok", test_count=n_test,
    )
    write_manifest(root / "manifest.json", manifest)
    return root / "manifest.json"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return write_labeling_corpus(tmp_path_factory.mktemp("labeling") / "data")


def run_loop(manifest, strategy, out_dir):
    dataset, pool, oracle = load_dataset(manifest, seed=3, seed_fraction=0.05)
    decoder = DecoderModel.create(LINEAR, dataset.dim, dataset.num_classes, seed=3)
    loop = ActiveLoop(
        dataset, pool, oracle, decoder,
        SamplerConfig(strategy=strategy, selection_size=8,
                      attack=AttackConfig(method="fgv", fgv_line_search=True)),
        LoopConfig(seed=3, finetune_interval=4, finetune_steps=3,
                   budget_checkpoints=(0.2,), init_max_steps=150),
        TrainConfig(batch_size=8, seed=3),
        out_dir=out_dir,
    )
    return dataset, loop, loop.run()


def test_labeling_loop_runs_all_strategies(corpus, tmp_path):
    for strategy in ("ausds", "rm", "us"):
        dataset, loop, result = run_loop(corpus, strategy, tmp_path / strategy)
        assert result.steps > 0
        assert loop.pool.labeled_fraction >= 0.2
        events = [json.loads(line) for line in
                  (tmp_path / strategy / "events.jsonl").read_text().splitlines()]
        # labeling has no margin; entropies are total-token values
        for ev in events:
            assert all(m != m for m in ev["margin"])  # NaN markers
            assert all(e >= 0 for e in ev["entropy"])


def test_labeling_attacks_only_fgv(corpus, tmp_path):
    from ausds.errors import ConfigurationError

    dataset, pool, oracle = load_dataset(corpus, seed=1, seed_fraction=0.05)
    decoder = DecoderModel.create(LINEAR, dataset.dim, dataset.num_classes, seed=1)
    loop = ActiveLoop(
        dataset, pool, oracle, decoder,
        SamplerConfig(strategy="ausds", selection_size=8,
                      attack=AttackConfig(method="deepfool")),
        LoopConfig(seed=1, init_max_steps=50),
        TrainConfig(batch_size=8, seed=1),
    )
    loop.initialize()
    with pytest.raises(ConfigurationError):
        loop.run_step()


def test_labeling_eval_from_scratch_micro_f1(corpus):
    dataset, pool, oracle = load_dataset(corpus, seed=5, seed_fraction=0.05)
    ids = np.arange(dataset.count)
    labels = [dataset.gold[i] for i in ids]
    results = eval_from_scratch(
        dataset, [(1.0, ids, labels)], seed=5,
        train_config=TrainConfig(learning_rate=0.01, seed=5),
    )
    assert results[0].metric == "token_micro_f1"
    assert results[0].value > 0.7  # shifted-Gaussian tokens are learnable
