"""Run-directory orchestration: train a model into an artifact directory and
load it back for explanation and evaluation.

Layout (directory named by the config hash):
    config.json      resolved run configuration
    checkpoint.bin   trained parameters
    ledger.bin       influence ledger
    entities.txt     entity vocabulary, line number == id
    relations.txt    relation vocabulary
    steps.csv        optional step log: step, triple_id, loss, lr
    metrics.json     filtered ranking metrics on the test split
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import ledger as ledger_mod
from . import model
from .errors import ArtifactMismatchError, ConfigError
from .ledger import InfluenceLedger
from .rng import negatives_fn
from .runconfig import RunConfig
from .training import StepInfo, train
from .triples import AdjacencyIndex, TripleStore, Vocab, load_triples

CHECKPOINT_NAME = "checkpoint.bin"
LEDGER_NAME = "ledger.bin"


@dataclass
class RunArtifacts:
    run_dir: Path
    config: RunConfig
    vocab: Vocab
    train_store: TripleStore
    params: model.Parameters
    ledger: InfluenceLedger
    valid_store: Optional[TripleStore] = None
    test_store: Optional[TripleStore] = None
    _index: Optional[AdjacencyIndex] = None

    @property
    def index(self) -> AdjacencyIndex:
        if self._index is None:
            self._index = AdjacencyIndex(self.train_store)
        return self._index

    def exclude_ids(self) -> Optional[set]:
        prefix = self.config.eval.exclude_entity_prefix
        if not prefix:
            return None
        return {i for i, name in enumerate(self.vocab.entities)
                if name.startswith(prefix)}

    def sampling_excluded_ids(self) -> Optional[frozenset]:
        return sampling_excluded_ids(self.config, self.vocab)

    def filter_stores(self) -> list[TripleStore]:
        return [s for s in (self.train_store, self.valid_store, self.test_store)
                if s is not None]

    def test_queries(self) -> list[tuple[int, int]]:
        if self.test_store is None:
            raise ConfigError("run has no test split")
        return [(s, r) for _, (s, r, _) in self.test_store]


def sampling_excluded_ids(config: RunConfig, vocab: Vocab) -> Optional[frozenset]:
    """Entity ids kept out of negative sampling when the dataset flag is on."""
    if not config.dataset.filter_entities_during_sampling:
        return None
    prefix = config.eval.exclude_entity_prefix
    if not prefix:
        raise ConfigError("filter_entities_during_sampling requires "
                          "eval.exclude_entity_prefix")
    return frozenset(i for i, name in enumerate(vocab.entities)
                     if name.startswith(prefix))


def load_dataset(config: RunConfig):
    train_store, vocab = load_triples(config.dataset.train, split="train")
    vocab.freeze()
    valid_store = test_store = None
    if config.dataset.valid:
        valid_store, _ = load_triples(config.dataset.valid, vocab, split="valid",
                                      on_unknown=config.dataset.on_unknown)
    if config.dataset.test:
        test_store, _ = load_triples(config.dataset.test, vocab, split="test",
                                     on_unknown=config.dataset.on_unknown)
    return train_store, valid_store, test_store, vocab


def run_dir_for(config: RunConfig) -> Path:
    return Path(config.output_dir) / config.hash_hex()


def run_train(config: RunConfig, with_metrics: bool = True) -> dict:
    """Train per config, write all artifacts, return a summary dict."""
    train_cfg = config.to_train_config()
    if not Path(config.dataset.train).exists():
        raise ConfigError(f"training dataset not found: {config.dataset.train}")
    train_store, valid_store, test_store, vocab = load_dataset(config)
    if len(train_store) == 0:
        raise ConfigError("training set is empty")

    out = run_dir_for(config)
    out.mkdir(parents=True, exist_ok=True)
    config_hash = config.config_hash()

    ledger = InfluenceLedger.for_store(train_store, train_cfg.h, config_hash)
    step_rows: list[tuple[int, int, float, float]] = []

    def observe(info: StepInfo) -> None:
        step_rows.append((info.step, info.triple_id, info.loss, info.lr))

    negative_source = None
    excluded = sampling_excluded_ids(config, vocab)
    if excluded is not None:
        negative_source = negatives_fn(train_cfg.seed, excluded)

    observer = observe if config.training.step_log else None
    params = train(train_cfg, train_store, vocab.n_entities, vocab.n_relations,
                   delta_sink=ledger.record, step_observer=observer,
                   negative_source=negative_source)

    (out / "config.json").write_text(
        json.dumps(config.model_dump(), indent=2) + "\n", encoding="utf-8")
    model.save_checkpoint(params, out / CHECKPOINT_NAME, config_hash)
    ledger_mod.save_ledger(ledger, out / LEDGER_NAME)
    vocab.save(out / "entities.txt", out / "relations.txt")
    if config.training.step_log:
        with (out / "steps.csv").open("w", encoding="utf-8") as fh:
            fh.write("step,triple_id,loss,lr\n")
            for step, tid, loss, lr in step_rows:
                fh.write(f"{step},{tid},{loss!r},{lr!r}\n")

    summary = {
        "run_dir": str(out),
        "config_hash": config.hash_hex(),
        "n_train": len(train_store),
        "n_entities": vocab.n_entities,
        "n_relations": vocab.n_relations,
    }
    if with_metrics and test_store is not None:
        metrics = model.rank_metrics(params, test_store,
                                     [train_store, valid_store, test_store]
                                     if valid_store is not None
                                     else [train_store, test_store])
        summary["metrics"] = {"mrr": metrics.mrr, "hits1": metrics.hits1,
                              "hits10": metrics.hits10,
                              "n_queries": metrics.n_queries}
        (out / "metrics.json").write_text(
            json.dumps(summary["metrics"], indent=2) + "\n", encoding="utf-8")
    return summary


def load_run(run_dir) -> RunArtifacts:
    """Load a run directory, re-checking the checkpoint/ledger pairing."""
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise ConfigError(f"{run_dir}: no config.json (not a run directory)")
    from .runconfig import config_from_dict
    config = config_from_dict(json.loads(config_path.read_text(encoding="utf-8")))

    train_store, valid_store, test_store, vocab = load_dataset(config)
    params, ckpt_hash = model.load_checkpoint(run_dir / CHECKPOINT_NAME)
    expected = config.config_hash()
    if ckpt_hash != expected:
        raise ArtifactMismatchError(
            f"{run_dir}: checkpoint hash {ckpt_hash.hex()} does not match "
            f"config hash {expected.hex()}")
    ledger = ledger_mod.load_ledger(run_dir / LEDGER_NAME, train_store,
                                    expected_hash=ckpt_hash)
    return RunArtifacts(run_dir, config, vocab, train_store, params, ledger,
                        valid_store, test_store)
