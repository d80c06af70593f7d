"""Triple files, vocabularies, stores with stable ids, and adjacency lookup.

A store's triple ids are positions in the originally loaded file and NEVER
change: removing triples yields a new store whose survivors keep their old
ids. Everything downstream (keyed negative sampling, the influence ledger,
removal manifests) relies on that stability.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

from .errors import ParseError, VocabError

log = logging.getLogger(__name__)


class Triple(NamedTuple):
    s: int
    r: int
    o: int


class Vocab:
    """Dense name<->id mapping for entities and relations, first-seen order."""

    def __init__(self):
        self.entities: list[str] = []
        self.relations: list[str] = []
        self._entity_ids: dict[str, int] = {}
        self._relation_ids: dict[str, int] = {}
        self.frozen = False

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def freeze(self) -> "Vocab":
        self.frozen = True
        return self

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_ids[name]
        except KeyError:
            raise VocabError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_ids[name]
        except KeyError:
            raise VocabError(f"unknown relation {name!r}") from None

    def add_entity(self, name: str) -> int:
        eid = self._entity_ids.get(name)
        if eid is not None:
            return eid
        if self.frozen:
            raise VocabError(f"unknown entity {name!r} (vocabulary is frozen)")
        eid = len(self.entities)
        self.entities.append(name)
        self._entity_ids[name] = eid
        return eid

    def add_relation(self, name: str) -> int:
        rid = self._relation_ids.get(name)
        if rid is not None:
            return rid
        if self.frozen:
            raise VocabError(f"unknown relation {name!r} (vocabulary is frozen)")
        rid = len(self.relations)
        self.relations.append(name)
        self._relation_ids[name] = rid
        return rid

    def save(self, entities_path, relations_path) -> None:
        # One name per line; line number == id.
        Path(entities_path).write_text(
            "".join(f"{n}\n" for n in self.entities), encoding="utf-8"
        )
        Path(relations_path).write_text(
            "".join(f"{n}\n" for n in self.relations), encoding="utf-8"
        )

    @classmethod
    def load(cls, entities_path, relations_path) -> "Vocab":
        vocab = cls()
        for line in Path(entities_path).read_text(encoding="utf-8").splitlines():
            vocab.add_entity(line)
        for line in Path(relations_path).read_text(encoding="utf-8").splitlines():
            vocab.add_relation(line)
        return vocab


class TripleStore:
    """Ordered triples with stable integer ids.

    `ids[i]` is the stable id of row i; `id_capacity` is the size of the id
    space of the original full store (removals shrink the row count, never
    the capacity).
    """

    def __init__(self, ids: np.ndarray, triples: np.ndarray, split: str = "train",
                 id_capacity: Optional[int] = None,
                 removed_ids: Iterable[int] = ()):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if self.ids.shape[0] != self.triples.shape[0]:
            raise ValueError("ids and triples length mismatch")
        self.split = split
        self.id_capacity = (
            int(id_capacity) if id_capacity is not None else self.triples.shape[0]
        )
        self.removed_ids = sorted(int(i) for i in removed_ids)
        self._row_of = {int(t): i for i, t in enumerate(self.ids)}

    @classmethod
    def from_triples(cls, triples: Iterable[Triple], split: str = "train") -> "TripleStore":
        arr = np.asarray([tuple(t) for t in triples], dtype=np.int64).reshape(-1, 3)
        return cls(np.arange(arr.shape[0], dtype=np.int64), arr, split=split)

    def __len__(self) -> int:
        return self.triples.shape[0]

    def __iter__(self) -> Iterator[tuple[int, Triple]]:
        for i in range(len(self)):
            yield int(self.ids[i]), Triple(*map(int, self.triples[i]))

    def __contains__(self, triple_id: int) -> bool:
        return int(triple_id) in self._row_of

    def triple(self, triple_id: int) -> Triple:
        row = self._row_of.get(int(triple_id))
        if row is None:
            raise KeyError(f"unknown triple id {triple_id}")
        return Triple(*map(int, self.triples[row]))

    def remove(self, drop_ids: Iterable[int]) -> "TripleStore":
        """New store without `drop_ids`; survivors keep their original ids."""
        drop = {int(i) for i in drop_ids}
        unknown = drop - set(self._row_of)
        if unknown:
            raise KeyError(f"unknown triple ids: {sorted(unknown)[:5]}")
        keep = np.asarray([i for i in range(len(self)) if int(self.ids[i]) not in drop],
                          dtype=np.int64)
        return TripleStore(
            self.ids[keep], self.triples[keep], split=self.split,
            id_capacity=self.id_capacity,
            removed_ids=list(self.removed_ids) + sorted(drop),
        )

    def max_entity_id(self) -> int:
        if len(self) == 0:
            return -1
        return int(max(self.triples[:, 0].max(), self.triples[:, 2].max()))

    def max_relation_id(self) -> int:
        if len(self) == 0:
            return -1
        return int(self.triples[:, 1].max())


class AdjacencyIndex:
    """Inverted indexes: entity id -> triple ids (as subject or object),
    relation id -> triple ids."""

    def __init__(self, store: TripleStore):
        self.store = store
        self._by_entity: dict[int, set[int]] = {}
        self._by_relation: dict[int, set[int]] = {}
        for tid, (s, r, o) in store:
            self._by_entity.setdefault(s, set()).add(tid)
            self._by_entity.setdefault(o, set()).add(tid)
            self._by_relation.setdefault(r, set()).add(tid)

    def adjacent(self, d: Triple, exclude_exact: bool = True) -> np.ndarray:
        """Ids of training triples sharing s, r, or o with `d`, sorted.

        Exact (s, r, o) duplicates of `d` are excluded by default; components
        of `d` unknown to the index simply contribute no hits.
        """
        hits: set[int] = set()
        hits |= self._by_entity.get(d.s, set())
        hits |= self._by_entity.get(d.o, set())
        hits |= self._by_relation.get(d.r, set())
        if exclude_exact:
            hits = {tid for tid in hits if self.store.triple(tid) != d}
        return np.asarray(sorted(hits), dtype=np.int64)


def load_triples(path, vocab: Optional[Vocab] = None, split: str = "train",
                 on_unknown: str = "error") -> tuple[TripleStore, Vocab]:
    """Parse a UTF-8 TSV of `subject<TAB>relation<TAB>object` lines.

    A fresh or unfrozen vocab is extended in first-seen order. Against a
    frozen vocab, lines naming unseen entities/relations either raise
    (`on_unknown="error"`, the default) or are dropped with a warning
    (`on_unknown="skip"`). Duplicate lines are kept as distinct triples.
    """
    if on_unknown not in ("error", "skip"):
        raise ValueError(f"on_unknown must be 'error' or 'skip', got {on_unknown!r}")
    path = Path(path)
    vocab = vocab if vocab is not None else Vocab()
    rows: list[tuple[int, int, int]] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(path, line_no,
                                 f"expected 3 tab-separated fields, got {len(fields)}")
            s_name, r_name, o_name = fields
            try:
                s = vocab.add_entity(s_name)
                r = vocab.add_relation(r_name)
                o = vocab.add_entity(o_name)
            except VocabError as exc:
                if on_unknown == "skip":
                    log.warning("%s:%d: skipped (%s)", path, line_no, exc)
                    continue
                raise VocabError(f"{path}:{line_no}: {exc}") from None
            rows.append((s, r, o))
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    store = TripleStore(np.arange(arr.shape[0], dtype=np.int64), arr, split=split)
    return store, vocab


def save_triples(store: TripleStore, vocab: Vocab, path) -> None:
    """Write the store back out as a name-level TSV (load round-trips it)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for _, (s, r, o) in store:
            fh.write(f"{vocab.entities[s]}\t{vocab.relations[r]}\t{vocab.entities[o]}\n")


def write_removed_manifest(path, removed_ids: Iterable[int]) -> None:
    Path(path).write_text(json.dumps(sorted(int(i) for i in removed_ids)),
                          encoding="utf-8")


def read_removed_manifest(path) -> list[int]:
    return [int(i) for i in json.loads(Path(path).read_text(encoding="utf-8"))]
