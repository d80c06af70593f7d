"""Embedding parameters, scoring functions, losses, and their gradients.

Two scoring functions are supported: a trilinear inner product ("distmult")
and its complex-valued variant ("complex", stored split-real: first h/2
coordinates real part, last h/2 imaginary part). Gradients are closed-form
and sparse: one example touches only the gold subject/relation/object rows
plus the candidate-object rows of its loss.

Scoring accepts either `Parameters` or a `ParamOverlay` (a read-only view
with a few replaced rows), which is how rolled-back probabilities are
computed without copying matrices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ArtifactMismatchError
from .triples import Triple, TripleStore

DISTMULT = "distmult"
COMPLEX = "complex"
SCORING_KINDS = (DISTMULT, COMPLEX)

SOFTMAX_CE = "softmax"
SIGMOID_CE = "sigmoid"
LOSS_KINDS = (SOFTMAX_CE, SIGMOID_CE)


@dataclass
class Parameters:
    """Entity matrix (|E| x h) and relation matrix (|R| x h)."""

    entities: np.ndarray
    relations: np.ndarray
    scoring: str = DISTMULT

    def __post_init__(self):
        self.entities = np.atleast_2d(np.asarray(self.entities))
        self.relations = np.atleast_2d(np.asarray(self.relations))
        if self.entities.shape[1] != self.relations.shape[1]:
            raise ValueError("entity and relation embedding widths differ")
        if self.scoring not in SCORING_KINDS:
            raise ValueError(f"unknown scoring kind {self.scoring!r}")
        if self.scoring == COMPLEX and self.h % 2 != 0:
            raise ValueError("complex scoring requires an even embedding width")

    @property
    def h(self) -> int:
        return int(self.entities.shape[1])

    @property
    def n_entities(self) -> int:
        return int(self.entities.shape[0])

    @property
    def n_relations(self) -> int:
        return int(self.relations.shape[0])

    def copy(self) -> "Parameters":
        return Parameters(self.entities.copy(), self.relations.copy(), self.scoring)

    def entity(self, i: int) -> np.ndarray:
        return self.entities[i]

    def relation(self, i: int) -> np.ndarray:
        return self.relations[i]

    def entity_rows(self, ids: np.ndarray) -> np.ndarray:
        return self.entities[np.asarray(ids, dtype=np.int64)]

    def overridden_entities(self) -> dict[int, np.ndarray]:
        return {}


class ParamOverlay:
    """Read-only view of `Parameters` with a handful of rows replaced.

    Used to score a triple against rolled-back rows; every row not named in
    the overrides reads through to the base parameters.
    """

    def __init__(self, base: Parameters,
                 entity_overrides: Optional[dict[int, np.ndarray]] = None,
                 relation_overrides: Optional[dict[int, np.ndarray]] = None):
        self.base = base
        self.entity_overrides = dict(entity_overrides or {})
        self.relation_overrides = dict(relation_overrides or {})

    @property
    def scoring(self) -> str:
        return self.base.scoring

    @property
    def h(self) -> int:
        return self.base.h

    @property
    def n_entities(self) -> int:
        return self.base.n_entities

    def entity(self, i: int) -> np.ndarray:
        ov = self.entity_overrides.get(int(i))
        return ov if ov is not None else self.base.entities[i]

    def relation(self, i: int) -> np.ndarray:
        ov = self.relation_overrides.get(int(i))
        return ov if ov is not None else self.base.relations[i]

    def entity_rows(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        rows = self.base.entities[ids].copy()
        for i, eid in enumerate(ids):
            ov = self.entity_overrides.get(int(eid))
            if ov is not None:
                rows[i] = ov
        return rows

    def overridden_entities(self) -> dict[int, np.ndarray]:
        return self.entity_overrides


class SparseGrad:
    """Per-example gradient: vectors keyed by touched parameter row.

    Rows not present have exactly zero gradient; duplicate contributions to
    one row (e.g. a triple with s == o) are summed into a single entry.
    """

    def __init__(self):
        self.entity: dict[int, np.ndarray] = {}
        self.relation: dict[int, np.ndarray] = {}

    def add_entity(self, i: int, g: np.ndarray) -> None:
        i = int(i)
        if i in self.entity:
            self.entity[i] = self.entity[i] + g
        else:
            self.entity[i] = np.array(g, copy=True)

    def add_relation(self, i: int, g: np.ndarray) -> None:
        i = int(i)
        if i in self.relation:
            self.relation[i] = self.relation[i] + g
        else:
            self.relation[i] = np.array(g, copy=True)

    def norm(self) -> float:
        total = 0.0
        for g in self.entity.values():
            total += float(np.dot(g, g))
        for g in self.relation.values():
            total += float(np.dot(g, g))
        return float(np.sqrt(total))

    def rows(self):
        """Deterministic iteration order: entities then relations, by id."""
        for i in sorted(self.entity):
            yield ("e", i, self.entity[i])
        for i in sorted(self.relation):
            yield ("r", i, self.relation[i])


def _split(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    half = v.shape[-1] // 2
    return v[..., :half], v[..., half:]


def score_vectors(sv: np.ndarray, rv: np.ndarray, ov: np.ndarray, scoring: str) -> float:
    if sv.shape != rv.shape or sv.shape != ov.shape:
        raise ValueError("embedding dimension mismatch")
    if scoring == DISTMULT:
        return float(np.sum(sv * rv * ov))
    if scoring == COMPLEX:
        if sv.shape[-1] % 2 != 0:
            raise ValueError("complex scoring requires an even embedding width")
        sr, si = _split(sv)
        rr, ri = _split(rv)
        orr, oi = _split(ov)
        return float(np.sum((sr * rr - si * ri) * orr + (sr * ri + si * rr) * oi))
    raise ValueError(f"unknown scoring kind {scoring!r}")


def score(params, d: Triple) -> float:
    """phi(w; d) for the parameters' scoring kind."""
    return score_vectors(params.entity(d.s), params.relation(d.r),
                         params.entity(d.o), params.scoring)


def candidate_logits(params, s: int, r: int,
                     candidates: Optional[np.ndarray] = None) -> np.ndarray:
    """Scores of (s, r, c) for every candidate object c.

    `candidates=None` means all entities. Overlay overrides on s, r, and any
    candidate row are honored.
    """
    sv = params.entity(s)
    rv = params.relation(r)
    if candidates is None:
        base_e = params.base.entities if isinstance(params, ParamOverlay) else params.entities
        logits = _all_object_logits(sv, rv, base_e, params.scoring)
        for eid, row in params.overridden_entities().items():
            logits[eid] = score_vectors(sv, rv, row, params.scoring)
        return logits
    candidates = np.asarray(candidates, dtype=np.int64)
    rows = params.entity_rows(candidates)
    return _all_object_logits(sv, rv, rows, params.scoring)


def _all_object_logits(sv, rv, obj_rows, scoring) -> np.ndarray:
    if scoring == DISTMULT:
        return obj_rows @ (sv * rv)
    sr, si = _split(sv)
    rr, ri = _split(rv)
    e1, e2 = _split(obj_rows)
    return e1 @ (sr * rr - si * ri) + e2 @ (sr * ri + si * rr)


def score_grad(params, d: Triple) -> SparseGrad:
    """Gradient of phi(w; d) w.r.t. the s, r, o rows (merged when s == o)."""
    sv = params.entity(d.s)
    rv = params.relation(d.r)
    ov = params.entity(d.o)
    grad = SparseGrad()
    if params.scoring == DISTMULT:
        grad.add_entity(d.s, rv * ov)
        grad.add_relation(d.r, sv * ov)
        grad.add_entity(d.o, sv * rv)
        return grad
    sr, si = _split(sv)
    rr, ri = _split(rv)
    orr, oi = _split(ov)
    grad.add_entity(d.s, np.concatenate([rr * orr + ri * oi, -ri * orr + rr * oi]))
    grad.add_relation(d.r, np.concatenate([sr * orr + si * oi, -si * orr + sr * oi]))
    grad.add_entity(d.o, np.concatenate([sr * rr - si * ri, sr * ri + si * rr]))
    return grad


def softmax_prob(params, s: int, r: int, o: int,
                 candidates: Optional[np.ndarray] = None) -> float:
    """Pr(o | s, r) = exp(phi(s,r,o)) normalized over the candidate objects.

    Computed with max-logit subtraction. `candidates` must contain `o` and be
    duplicate-free; None means all entities.
    """
    if candidates is None:
        candidates = np.arange(params.n_entities, dtype=np.int64)
    else:
        candidates = np.asarray(candidates, dtype=np.int64)
        if len(np.unique(candidates)) != len(candidates):
            raise ValueError("candidate set contains duplicates")
    pos = np.nonzero(candidates == o)[0]
    if len(pos) == 0:
        raise ValueError(f"gold object {o} not in candidate set")
    logits = candidate_logits(params, s, r, candidates).astype(np.float64)
    shifted = logits - logits.max()
    expd = np.exp(shifted)
    return float(expd[pos[0]] / expd.sum())


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(np.zeros_like(x), x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def loss_and_grad(params, loss_kind: str, d: Triple,
                  negatives: Sequence[int]) -> tuple[float, SparseGrad]:
    """Per-example loss and its exact gradient over all touched rows.

    softmax: -log Pr(o | s, r) over candidates [o] + negatives.
    sigmoid: -log sig(phi(d)) - sum_neg log(1 - sig(phi(s,r,o'))).

    Negatives must not contain the gold object. An empty negative list is
    permitted (degenerate for softmax, used by tests and tracking setups).
    """
    negatives = np.asarray(list(negatives), dtype=np.int64)
    if np.any(negatives == d.o):
        raise ValueError("negatives must exclude the gold object")
    candidates = np.concatenate([[d.o], negatives]).astype(np.int64)
    logits = candidate_logits(params, d.s, d.r, candidates)
    logits64 = logits.astype(np.float64)

    if loss_kind == SOFTMAX_CE:
        if len(np.unique(candidates)) != len(candidates):
            raise ValueError("candidate set contains duplicates")
        m = logits64.max()
        lse = m + np.log(np.sum(np.exp(logits64 - m)))
        loss = float(lse - logits64[0])
        coeff = np.exp(logits64 - lse)  # softmax probabilities
        coeff[0] -= 1.0
    elif loss_kind == SIGMOID_CE:
        loss = float(_softplus(-logits64[0:1])[0] + _softplus(logits64[1:]).sum())
        coeff = _sigmoid(logits64)
        coeff[0] -= 1.0
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")

    grad = _chain_candidate_grads(params, d, candidates, coeff)
    return loss, grad


def _chain_candidate_grads(params, d: Triple, candidates: np.ndarray,
                           coeff: np.ndarray) -> SparseGrad:
    """Backpropagate per-candidate logit coefficients into row gradients."""
    dtype = params.entity(d.s).dtype
    coeff = coeff.astype(dtype)
    sv = params.entity(d.s)
    rv = params.relation(d.r)
    obj_rows = params.entity_rows(candidates)
    grad = SparseGrad()
    if params.scoring == DISTMULT:
        weighted = coeff @ obj_rows  # sum_j coeff_j * o_j
        grad.add_entity(d.s, rv * weighted)
        grad.add_relation(d.r, sv * weighted)
        go = sv * rv
        for j, c in enumerate(candidates):
            grad.add_entity(int(c), coeff[j] * go)
        return grad
    sr, si = _split(sv)
    rr, ri = _split(rv)
    e1, e2 = _split(obj_rows)
    u = coeff @ e1  # sum_j coeff_j * Re(o_j)
    v = coeff @ e2  # sum_j coeff_j * Im(o_j)
    grad.add_entity(d.s, np.concatenate([rr * u + ri * v, -ri * u + rr * v]))
    grad.add_relation(d.r, np.concatenate([sr * u + si * v, -si * u + sr * v]))
    go = np.concatenate([sr * rr - si * ri, sr * ri + si * rr])
    for j, c in enumerate(candidates):
        grad.add_entity(int(c), coeff[j] * go)
    return grad


def predict_top(params, s: int, r: int, exclude: Optional[set] = None) -> int:
    """argmax over non-excluded objects of phi(s, r, o); ties -> lowest id."""
    logits = candidate_logits(params, s, r, None)
    if exclude:
        exclude = {int(e) for e in exclude}
        if len(exclude) >= len(logits):
            raise ValueError("exclusion set covers every entity")
        logits = logits.copy().astype(np.float64)
        logits[sorted(exclude)] = -np.inf
    return int(np.argmax(logits))


@dataclass
class RankMetrics:
    mrr: float
    hits1: float
    hits10: float
    n_queries: int = 0


def rank_metrics(params, test: TripleStore,
                 filter_stores: Sequence[TripleStore] = (),
                 filtered: bool = True) -> RankMetrics:
    """Tail-prediction ranking metrics, in percent.

    For each test (s, r, o) the gold object is ranked among all entities by
    score (descending, ties by lower id). In the filtered setting, other
    objects known true for (s, r) in any filter store are removed from the
    ranking first.
    """
    known: dict[tuple[int, int], set[int]] = {}
    if filtered:
        for fs in filter_stores:
            for _, (s, r, o) in fs:
                known.setdefault((s, r), set()).add(o)
    ids = np.arange(params.n_entities, dtype=np.int64)
    rr_sum = 0.0
    hits1 = 0
    hits10 = 0
    n = 0
    for _, (s, r, o) in test:
        logits = candidate_logits(params, s, r, None).astype(np.float64)
        valid = np.ones(params.n_entities, dtype=bool)
        for other in known.get((s, r), ()):
            if other != o:
                valid[other] = False
        gold = logits[o]
        beats = valid & ((logits > gold) | ((logits == gold) & (ids < o)))
        rank = 1 + int(np.count_nonzero(beats))
        rr_sum += 1.0 / rank
        hits1 += rank <= 1
        hits10 += rank <= 10
        n += 1
    if n == 0:
        return RankMetrics(0.0, 0.0, 0.0, 0)
    return RankMetrics(100.0 * rr_sum / n, 100.0 * hits1 / n, 100.0 * hits10 / n, n)


# --- checkpoint file format -------------------------------------------------
#
# header: magic "GRCK", version u32, |E| u64, |R| u64, h u32, kind u8,
# config hash (8 bytes); then row-major little-endian float32 for E, then R.

_CKPT_MAGIC = b"GRCK"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIQQIB8s")
_KIND_CODES = {DISTMULT: 0, COMPLEX: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def save_checkpoint(params: Parameters, path, config_hash: bytes = b"\x00" * 8) -> None:
    if len(config_hash) != 8:
        raise ValueError("config hash must be 8 bytes")
    header = _CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION,
                               params.n_entities, params.n_relations,
                               params.h, _KIND_CODES[params.scoring], config_hash)
    with Path(path).open("wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(params.entities, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(params.relations, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[Parameters, bytes]:
    """Read a checkpoint; returns (parameters, config hash)."""
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise ArtifactMismatchError(f"{path}: truncated checkpoint header")
    magic, version, n_e, n_r, h, kind_code, config_hash = _CKPT_HEADER.unpack_from(raw)
    if magic != _CKPT_MAGIC:
        raise ArtifactMismatchError(f"{path}: not a checkpoint file")
    if version != _CKPT_VERSION:
        raise ArtifactMismatchError(f"{path}: unsupported checkpoint version {version}")
    if kind_code not in _KIND_NAMES:
        raise ArtifactMismatchError(f"{path}: unknown scoring code {kind_code}")
    expected = _CKPT_HEADER.size + 4 * h * (n_e + n_r)
    if len(raw) != expected:
        raise ArtifactMismatchError(
            f"{path}: size {len(raw)} != expected {expected} for header")
    body = np.frombuffer(raw, dtype="<f4", offset=_CKPT_HEADER.size)
    entities = body[: n_e * h].reshape(n_e, h).copy()
    relations = body[n_e * h:].reshape(n_r, h).copy()
    return Parameters(entities, relations, _KIND_NAMES[kind_code]), config_hash
