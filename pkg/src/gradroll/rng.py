"""Counter-keyed randomness: every stream is derived from (master seed, purpose,
counters) instead of consumed from one sequential source.

This is what makes coupled retraining possible: the negatives for triple 17
in epoch 3 are a pure function of (seed, 17, 3), so removing triple 3 from
the training set cannot shift them. A shared sequential stream could not
provide that.
"""

from __future__ import annotations

import numpy as np

_TAG_INIT = 101
_TAG_ORDER = 202
_TAG_NEGATIVES = 303
_TAG_EVAL = 404


def _generator(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(e) for e in entropy]))


class RngPolicy:
    """Derivation rules for every random stream used in training."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)

    def init_generator(self) -> np.random.Generator:
        return _generator(self.seed, _TAG_INIT)

    def visit_order(self, epoch: int, id_capacity: int) -> np.ndarray:
        """Permutation of the ORIGINAL id space for this epoch.

        Stores with removed triples visit survivors in the order this full
        permutation induces, i.e. the original-order subsequence.
        """
        return _generator(self.seed, _TAG_ORDER, epoch).permutation(id_capacity)

    def negatives(self, triple_id: int, epoch: int, gold_object: int,
                  n_entities: int, k: int) -> np.ndarray:
        """k entity ids uniform over all entities except the gold object,
        without replacement, keyed by (seed, triple id, epoch)."""
        if k >= n_entities:
            raise ValueError(
                f"cannot draw {k} negatives without replacement from "
                f"{n_entities - 1} non-gold entities")
        if k == 0:
            return np.empty(0, dtype=np.int64)
        rng = _generator(self.seed, _TAG_NEGATIVES, triple_id, epoch)
        draws = rng.choice(n_entities - 1, size=k, replace=False).astype(np.int64)
        draws[draws >= gold_object] += 1
        return draws

    def negatives_excluding(self, excluded: frozenset, triple_id: int,
                            epoch: int, gold_object: int, n_entities: int,
                            k: int) -> np.ndarray:
        """Like `negatives` but drawing only from entities outside `excluded`
        (e.g. keeping user rows out of movie-candidate sampling). Same key,
        same removal invariance."""
        allowed = np.asarray(
            [e for e in range(n_entities) if e != gold_object and e not in excluded],
            dtype=np.int64)
        if k > len(allowed):
            raise ValueError(
                f"cannot draw {k} negatives from {len(allowed)} allowed entities")
        if k == 0:
            return np.empty(0, dtype=np.int64)
        rng = _generator(self.seed, _TAG_NEGATIVES, triple_id, epoch)
        picks = rng.choice(len(allowed), size=k, replace=False)
        return allowed[picks]

    def eval_generator(self, *counters: int) -> np.random.Generator:
        """Generator for evaluation-side sampling (test subsets, NH draws)."""
        return _generator(self.seed, _TAG_EVAL, *counters)


def negatives_fn(seed: int, excluded=None):
    """The negative-sampling callable for a training run: the plain keyed
    draw, or the entity-filtered variant when `excluded` is non-empty."""
    policy = RngPolicy(seed)
    if not excluded:
        return policy.negatives
    frozen = frozenset(int(e) for e in excluded)

    def draw(triple_id, epoch, gold_object, n_entities, k):
        return policy.negatives_excluding(frozen, triple_id, epoch,
                                          gold_object, n_entities, k)

    return draw


class NegativeCache:
    """Memoizes keyed negative draws across the many retrains of an
    evaluation run. Safe because draws are pure functions of their key."""

    def __init__(self, base):
        self.base = base if callable(base) else base.negatives
        self._cache: dict[tuple[int, int, int, int, int], np.ndarray] = {}

    def __call__(self, triple_id: int, epoch: int, gold_object: int,
                 n_entities: int, k: int) -> np.ndarray:
        key = (triple_id, epoch, gold_object, n_entities, k)
        hit = self._cache.get(key)
        if hit is None:
            hit = self.base(triple_id, epoch, gold_object, n_entities, k)
            self._cache[key] = hit
        return hit
