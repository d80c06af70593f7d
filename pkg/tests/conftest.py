from pathlib import Path

import numpy as np
import pytest

from gradroll.triples import TripleStore

NATIONS_DIR = Path(__file__).resolve().parents[1] / "data" / "nations"

skip_without_nations = pytest.mark.skipif(
    not (NATIONS_DIR / "train.txt").exists(),
    reason="Nations triple files not present under data/nations/ (this "
           "environment has no network access; run scripts/fetch_nations.sh "
           "where the network is available)")


def make_store(rows, split="train") -> TripleStore:
    return TripleStore.from_triples([tuple(r) for r in rows], split=split)


def synthetic_kg(n_entities=30, n_relations=6, n_train=300, n_test=20, seed=7):
    """Structured random KG: each relation mostly connects one entity block
    to the next, plus noise, so there is real signal to learn and real
    adjacency structure to explain."""
    rng = np.random.default_rng(seed)
    blocks = np.array_split(np.arange(n_entities), 3)
    seen = set()
    rows = []
    while len(rows) < n_train + n_test:
        r = int(rng.integers(n_relations))
        if rng.random() < 0.85:
            s = int(rng.choice(blocks[r % 3]))
            o = int(rng.choice(blocks[(r + 1) % 3]))
        else:
            s = int(rng.integers(n_entities))
            o = int(rng.integers(n_entities))
        if (s, r, o) in seen:
            continue
        seen.add((s, r, o))
        rows.append((s, r, o))
    train = make_store(rows[:n_train])
    test_rows = rows[n_train:]
    queries = [(s, r) for s, r, _ in test_rows]
    return train, test_rows, queries


def write_tsv(path, rows, vocab_prefixes=("e", "rel")):
    """Write integer triples as a named TSV (e<i>, rel<j>, e<k>)."""
    ep, rp = vocab_prefixes
    with open(path, "w", encoding="utf-8") as fh:
        for s, r, o in rows:
            fh.write(f"{ep}{s}\t{rp}{r}\t{ep}{o}\n")
    return path


@pytest.fixture
def tiny_store():
    return make_store([(0, 0, 1), (1, 0, 2), (2, 1, 3), (0, 1, 3), (3, 2, 0)])


@pytest.fixture
def synthetic():
    return synthetic_kg()
