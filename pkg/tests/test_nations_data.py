"""Checks tied to the published Nations statistics; they run only when the
real split is present under data/nations/ (see scripts/fetch_nations.sh)."""

import time

import numpy as np
import pytest

from gradroll.explain import explain
from gradroll.ledger import LEDGER_HEADER_SIZE
from gradroll.model import predict_top
from gradroll.runconfig import preset_config
from gradroll.runs import load_run, run_dir_for, run_train
from gradroll.triples import AdjacencyIndex, Triple, load_triples

from conftest import NATIONS_DIR, skip_without_nations

pytestmark = skip_without_nations


@pytest.fixture(scope="module")
def nations_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("nations")
    config = preset_config("nations",
                           str(NATIONS_DIR / "train.txt"),
                           str(NATIONS_DIR / "valid.txt"),
                           str(NATIONS_DIR / "test.txt"),
                           output_dir=str(out))
    run_train(config)
    return config, load_run(run_dir_for(config))


def test_dataset_statistics():
    store, vocab = load_triples(NATIONS_DIR / "train.txt")
    assert len(store) == 1592
    assert vocab.n_entities == 14
    assert vocab.n_relations == 55
    vocab.freeze()
    test_store, _ = load_triples(NATIONS_DIR / "test.txt", vocab, split="test")
    assert len(test_store) == 201


def test_mean_adjacent_count_over_test_triples():
    store, vocab = load_triples(NATIONS_DIR / "train.txt")
    vocab.freeze()
    test_store, _ = load_triples(NATIONS_DIR / "test.txt", vocab, split="test")
    index = AdjacencyIndex(store)
    counts = [len(index.adjacent(t)) for _, t in test_store]
    assert np.mean(counts) == pytest.approx(508, abs=25)


def test_ledger_file_size_for_nations(nations_run):
    _, art = nations_run
    size = (art.run_dir / "ledger.bin").stat().st_size
    assert size == LEDGER_HEADER_SIZE + 3 * 10 * 1592 * 4


def test_gr_all_average_selection_size(nations_run):
    # reported average removal set size for this dataset: 261 +- 56
    _, art = nations_run
    sizes = []
    for s, r in art.test_queries():
        d = Triple(s, r, predict_top(art.params, s, r))
        sizes.append(len(explain(art.params, art.ledger, art.train_store,
                                 art.index, d, "gr-all").selected))
    assert np.mean(sizes) == pytest.approx(261, abs=56)


def test_single_explanation_completes_in_seconds(nations_run):
    _, art = nations_run
    s, r = art.test_queries()[0]
    d = Triple(s, r, predict_top(art.params, s, r))
    t0 = time.monotonic()
    explain(art.params, art.ledger, art.train_store, art.index, d, "gr-all")
    assert time.monotonic() - t0 < 5.0
