"""The influence ledger: per-training-triple accumulated parameter deltas.

For each training triple the ledger keeps three h-vectors — the total change
the triple's steps applied to its own subject, relation, and object rows.
After training it acts as a lookup table: restricting a triple d''s
accumulated deltas to the rows of a target triple d, and subtracting them
from the trained weights, estimates what the model would score for d had it
been trained without d'.

Storage is exactly 3 * h * |D| floats plus constant metadata; the on-disk
format is float32 little-endian.

Entity matching is by parameter ROW, not by slot: d''s influence on entity
row x is its subject delta (if d'.s == x) plus its object delta (if
d'.o == x). Triples like (a, r, b) and (b, r, a) therefore see each other's
contributions on both entity rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ArtifactMismatchError
from .model import ParamOverlay, Parameters
from .training import UpdateDelta
from .triples import Triple, TripleStore

_SLOT_S, _SLOT_R, _SLOT_O = 0, 1, 2

_LEDGER_MAGIC = b"GRLG"
_LEDGER_VERSION = 1
_LEDGER_HEADER = struct.Struct("<4sIIQ8s")  # magic, version, h, |D|, config hash
LEDGER_HEADER_SIZE = _LEDGER_HEADER.size


class InfluenceLedger:
    def __init__(self, triple_ids: np.ndarray, h: int,
                 config_hash: bytes = b"\x00" * 8, dtype=np.float32):
        if len(config_hash) != 8:
            raise ValueError("config hash must be 8 bytes")
        self.triple_ids = np.asarray(triple_ids, dtype=np.int64)
        self.h = int(h)
        self.config_hash = bytes(config_hash)
        self.gamma = np.zeros((len(self.triple_ids), 3, self.h), dtype=dtype)
        self._slot_of = {int(t): i for i, t in enumerate(self.triple_ids)}

    @classmethod
    def for_store(cls, store: TripleStore, h: int,
                  config_hash: bytes = b"\x00" * 8, dtype=np.float32
                  ) -> "InfluenceLedger":
        return cls(store.ids, h, config_hash, dtype)

    @property
    def n_triples(self) -> int:
        return int(self.gamma.shape[0])

    def record(self, delta: UpdateDelta) -> None:
        """Accumulate one step's gold-row deltas into the triple's entry."""
        slot = self._slot_of.get(int(delta.triple_id))
        if slot is None:
            raise KeyError(f"triple id {delta.triple_id} not covered by ledger")
        g = self.gamma[slot]
        g[_SLOT_S] += delta.delta_s
        g[_SLOT_R] += delta.delta_r
        g[_SLOT_O] += delta.delta_o

    def gamma_for(self, triple_id: int) -> np.ndarray:
        """The (3, h) accumulated deltas of one triple: rows s, r, o."""
        slot = self._slot_of.get(int(triple_id))
        if slot is None:
            raise KeyError(f"triple id {triple_id} not covered by ledger")
        return self.gamma[slot]


@dataclass
class RollbackSlice:
    """gamma restricted to a target triple's rows; absent components are zero.

    A component is present exactly when the contributing triple shares that
    parameter row with the target, so an all-absent slice means the two
    triples are not adjacent.
    """

    s: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    o: Optional[np.ndarray] = None

    @property
    def empty(self) -> bool:
        return self.s is None and self.r is None and self.o is None


def lookup(ledger: InfluenceLedger, d_prime_id: int, d: Triple,
           store: TripleStore) -> RollbackSlice:
    """Influence triple d' (a ledger entry) had on the parameter rows of d."""
    d_prime = store.triple(d_prime_id)
    g = ledger.gamma_for(d_prime_id)

    def entity_component(row: int) -> Optional[np.ndarray]:
        acc = None
        if d_prime.s == row:
            acc = g[_SLOT_S].copy()
        if d_prime.o == row:
            acc = g[_SLOT_O].copy() if acc is None else acc + g[_SLOT_O]
        return acc

    return RollbackSlice(
        s=entity_component(d.s),
        r=g[_SLOT_R].copy() if d_prime.r == d.r else None,
        o=entity_component(d.o),
    )


def rollback(params: Parameters, slice_: RollbackSlice, d: Triple) -> ParamOverlay:
    """View of `params` with d's rows shifted down by the slice.

    The underlying parameters are untouched; the view is only meant for
    scoring d and its candidate objects. Applying the same slice twice
    subtracts twice — rollback is plain row arithmetic, not idempotent.
    """
    entity_overrides: dict[int, np.ndarray] = {}
    if slice_.s is not None:
        entity_overrides[d.s] = params.entities[d.s] - slice_.s.astype(
            params.entities.dtype)
    if slice_.o is not None and d.o != d.s:
        entity_overrides[d.o] = params.entities[d.o] - slice_.o.astype(
            params.entities.dtype)
    relation_overrides: dict[int, np.ndarray] = {}
    if slice_.r is not None:
        relation_overrides[d.r] = params.relations[d.r] - slice_.r.astype(
            params.relations.dtype)
    return ParamOverlay(params, entity_overrides, relation_overrides)


def save_ledger(ledger: InfluenceLedger, path) -> None:
    header = _LEDGER_HEADER.pack(_LEDGER_MAGIC, _LEDGER_VERSION, ledger.h,
                                 ledger.n_triples, ledger.config_hash)
    with Path(path).open("wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ledger.gamma, dtype="<f4").tobytes())


def load_ledger(path, store: Optional[TripleStore] = None,
                expected_hash: Optional[bytes] = None) -> InfluenceLedger:
    """Read a ledger; refuses to load against a mismatching checkpoint hash
    or a store of different size."""
    raw = Path(path).read_bytes()
    if len(raw) < LEDGER_HEADER_SIZE:
        raise ArtifactMismatchError(f"{path}: truncated ledger header")
    magic, version, h, n, config_hash = _LEDGER_HEADER.unpack_from(raw)
    if magic != _LEDGER_MAGIC:
        raise ArtifactMismatchError(f"{path}: not a ledger file")
    if version != _LEDGER_VERSION:
        raise ArtifactMismatchError(f"{path}: unsupported ledger version {version}")
    expected_size = LEDGER_HEADER_SIZE + n * 3 * h * 4
    if len(raw) != expected_size:
        raise ArtifactMismatchError(
            f"{path}: size {len(raw)} != expected {expected_size}")
    if expected_hash is not None and config_hash != expected_hash:
        raise ArtifactMismatchError(
            f"{path}: ledger config hash {config_hash.hex()} does not match "
            f"checkpoint hash {expected_hash.hex()}")
    if store is not None and len(store) != n:
        raise ArtifactMismatchError(
            f"{path}: ledger covers {n} triples, store has {len(store)}")
    triple_ids = store.ids if store is not None else np.arange(n, dtype=np.int64)
    ledger = InfluenceLedger(triple_ids, h, config_hash)
    body = np.frombuffer(raw, dtype="<f4", offset=LEDGER_HEADER_SIZE)
    ledger.gamma = body.reshape(n, 3, h).copy()
    return ledger


def ledger_info(path) -> dict:
    """Header fields and size accounting without loading the body."""
    raw = Path(path).read_bytes()
    if len(raw) < LEDGER_HEADER_SIZE:
        raise ArtifactMismatchError(f"{path}: truncated ledger header")
    magic, version, h, n, config_hash = _LEDGER_HEADER.unpack_from(raw)
    if magic != _LEDGER_MAGIC:
        raise ArtifactMismatchError(f"{path}: not a ledger file")
    return {
        "version": version,
        "h": h,
        "n_triples": n,
        "config_hash": config_hash.hex(),
        "header_bytes": LEDGER_HEADER_SIZE,
        "payload_bytes": len(raw) - LEDGER_HEADER_SIZE,
        "expected_payload_bytes": n * 3 * h * 4,
        "file_bytes": len(raw),
    }
