"""Ranked influence explanations for a single prediction.

For a target triple d, every adjacent training triple d' is scored with
delta(d', d) = Pr(w; o | s, r) - Pr(w - gamma[d', w(d)]; o | s, r): the drop
in predicted probability when d''s accumulated influence is rolled back.
Both probabilities use the same candidate object set (all entities unless
told otherwise), so delta is a pure rollback effect.

Selection modes:
  gr-k     the k largest deltas,
  gr-all   every triple with positive delta,
  gr-o-k   candidates restricted to training triples with the target's object,
  opposing the most negative deltas (triples suppressing the prediction).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import ledger as ledger_mod
from . import model
from .errors import ConfigError
from .ledger import InfluenceLedger
from .triples import AdjacencyIndex, Triple, TripleStore, Vocab

MODE_GR = "gr"
MODE_GR_ALL = "gr-all"
MODE_GR_O = "gr-o"
MODE_OPPOSING = "opposing"


@dataclass
class InfluenceScore:
    triple_id: int
    delta: float


@dataclass
class Explanation:
    target: Triple
    base_prob: float
    mode: str
    scores: list[InfluenceScore]
    selected: list[int]
    prob_evaluations: int = 0

    @property
    def selected_set(self) -> set[int]:
        return set(self.selected)


def parse_mode(mode: str) -> tuple[str, Optional[int]]:
    """'gr-1' -> ('gr', 1); 'gr-all' -> ('gr-all', None); 'gr-o-5' -> ('gr-o', 5)."""
    m = mode.strip().lower()
    if m == MODE_GR_ALL:
        return MODE_GR_ALL, None
    for prefix, kind in (("gr-o-", MODE_GR_O), ("gr-", MODE_GR),
                         ("opposing-", MODE_OPPOSING)):
        if m.startswith(prefix):
            tail = m[len(prefix):]
            if tail.isdigit() and int(tail) >= 1:
                return kind, int(tail)
    raise ConfigError(f"unknown explanation mode {mode!r} "
                      "(expected gr-<k>, gr-all, gr-o-<k>, or opposing-<k>)")


def influence_delta(params, ledger: InfluenceLedger, store: TripleStore,
                    d_prime_id: int, d: Triple,
                    candidates: Optional[np.ndarray] = None) -> InfluenceScore:
    """delta(d', d) with both probabilities over the same candidate set.

    Non-adjacent d' yield exactly 0.0 (the rollback view is then identical
    to the parameters)."""
    slice_ = ledger_mod.lookup(ledger, d_prime_id, d, store)
    if slice_.empty:
        return InfluenceScore(int(d_prime_id), 0.0)
    base = model.softmax_prob(params, d.s, d.r, d.o, candidates)
    rolled = model.softmax_prob(ledger_mod.rollback(params, slice_, d),
                                d.s, d.r, d.o, candidates)
    return InfluenceScore(int(d_prime_id), base - rolled)


def explain(params, ledger: InfluenceLedger, store: TripleStore,
            index: AdjacencyIndex, d: Triple, mode: str,
            candidates: Optional[np.ndarray] = None,
            include_self: bool = False) -> Explanation:
    """Score every adjacent training triple's rollback effect on d and select.

    Costs at most |adjacent(d)| + 1 probability evaluations: one for the
    base probability and one per candidate triple.
    """
    kind, k = parse_mode(mode)
    adjacent = index.adjacent(d, exclude_exact=not include_self)
    if kind == MODE_GR_O:
        adjacent = np.asarray(
            [tid for tid in adjacent if store.triple(int(tid)).o == d.o],
            dtype=np.int64)

    base = model.softmax_prob(params, d.s, d.r, d.o, candidates)
    evaluations = 1
    scores = []
    for tid in adjacent:
        tid = int(tid)
        slice_ = ledger_mod.lookup(ledger, tid, d, store)
        if slice_.empty:  # adjacency guarantees non-empty; keep the invariant
            scores.append(InfluenceScore(tid, 0.0))
            continue
        rolled = model.softmax_prob(ledger_mod.rollback(params, slice_, d),
                                    d.s, d.r, d.o, candidates)
        evaluations += 1
        scores.append(InfluenceScore(tid, base - rolled))

    ascending = kind == MODE_OPPOSING
    scores.sort(key=lambda sc: (sc.delta, sc.triple_id) if ascending
                else (-sc.delta, sc.triple_id))

    if kind == MODE_GR_ALL:
        selected = [sc.triple_id for sc in scores if sc.delta > 0]
    elif kind == MODE_OPPOSING:
        selected = [sc.triple_id for sc in scores[:k] if sc.delta < 0]
    else:  # gr-k / gr-o-k
        selected = [sc.triple_id for sc in scores[:k]]
    return Explanation(d, base, mode, scores, selected, evaluations)


def opposing_explain(params, ledger: InfluenceLedger, store: TripleStore,
                     index: AdjacencyIndex, d: Triple, k: int,
                     candidates: Optional[np.ndarray] = None) -> Explanation:
    """The k triples whose rollback would raise the probability the most."""
    return explain(params, ledger, store, index, d, f"opposing-{k}",
                   candidates=candidates)


def explanation_to_dict(expl: Explanation, store: TripleStore, vocab: Vocab) -> dict:
    def names(t: Triple) -> list[str]:
        return [vocab.entities[t.s], vocab.relations[t.r], vocab.entities[t.o]]

    rows = []
    for sc in expl.scores:
        t = store.triple(sc.triple_id)
        rows.append({"triple_id": sc.triple_id, "s": t.s, "r": t.r, "o": t.o,
                     "names": names(t), "delta": sc.delta})
    return {
        "target": {"s": expl.target.s, "r": expl.target.r, "o": expl.target.o,
                   "names": names(expl.target)},
        "base_prob": expl.base_prob,
        "mode": expl.mode,
        "scores": rows,
        "selected": list(expl.selected),
    }


def explanation_to_dot(expl: Explanation, store: TripleStore, vocab: Vocab) -> str:
    """Graph rendering: target as a dashed edge, selected triples as solid
    edges labeled by relation."""
    def q(name: str) -> str:
        return '"' + name.replace('"', r'\"') + '"'

    lines = ["digraph explanation {"]
    t = expl.target
    lines.append(f"  {q(vocab.entities[t.s])} -> {q(vocab.entities[t.o])} "
                 f"[label={q(vocab.relations[t.r])}, style=dashed];")
    for tid in expl.selected:
        tr = store.triple(tid)
        lines.append(f"  {q(vocab.entities[tr.s])} -> {q(vocab.entities[tr.o])} "
                     f"[label={q(vocab.relations[tr.r])}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_explanation(expl: Explanation, store: TripleStore, vocab: Vocab,
                      path, fmt: str = "json") -> None:
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(explanation_to_dict(expl, store, vocab),
                                   indent=2) + "\n", encoding="utf-8")
    elif fmt == "dot":
        path.write_text(explanation_to_dot(expl, store, vocab), encoding="utf-8")
    else:
        raise ConfigError(f"unknown explanation format {fmt!r}")
