"""Faithfulness evaluation by remove-and-retrain, plus numerical checks of
the stability-theory quantities.

The protocol: for a test query (s, r) take the model's top prediction, pick
an explanation set S (rollback-ranked or a random-neighborhood baseline),
retrain FROM SCRATCH on the store without S under the identical seed and
keyed RNG policy, and compare probabilities and top-1 predictions before and
after. PD% counts probability drops, TC% counts top-1 changes.

All retrains are pure functions of (config, surviving store), so they can
run as parallel jobs; reports are reduced in query order.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import explain as explain_mod
from . import ledger as ledger_mod
from . import model
from .errors import ConfigError, TrainingDivergedError
from .ledger import InfluenceLedger
from .rng import NegativeCache, RngPolicy, negatives_fn
from .training import (SCHEDULE_INVERSE_T, SGD, StepInfo, TrainConfig, train)
from .triples import AdjacencyIndex, Triple, TripleStore


@dataclass
class Selector:
    """Explanation-set selector: gr-k, gr-all, gr-o-k, nh-k, nh-all, or none
    (the S-empty dry run)."""

    kind: str
    k: Optional[int] = None

    @classmethod
    def parse(cls, spec: str) -> "Selector":
        s = spec.strip().lower()
        if s == "none":
            return cls("none")
        if s == "gr-all":
            return cls("gr-all")
        if s == "nh-all":
            return cls("nh-all")
        for prefix, kind in (("gr-o-", "gr-o"), ("gr-", "gr"), ("nh-", "nh")):
            if s.startswith(prefix) and s[len(prefix):].isdigit():
                k = int(s[len(prefix):])
                if k >= 1:
                    return cls(kind, k)
        raise ConfigError(f"unknown selector {spec!r} (expected gr-<k>, gr-all, "
                          "gr-o-<k>, nh-<k>, nh-all, or none)")

    @property
    def label(self) -> str:
        return self.kind if self.k is None else f"{self.kind}-{self.k}"


@dataclass
class RoarRecord:
    query_s: int
    query_r: int
    predicted_o: int
    selector: str
    n_removed: int
    removed_ids: list[int]
    prob_before: float
    prob_after: float
    top1_before: int
    top1_after: int
    diverged: bool = False


@dataclass
class RoarReport:
    selector: str
    records: list[RoarRecord] = field(default_factory=list)

    @property
    def n_diverged(self) -> int:
        return sum(r.diverged for r in self.records)

    def aggregates(self) -> dict:
        ok = [r for r in self.records if not r.diverged]
        if not ok:
            return {"pd_pct": None, "tc_pct": None, "n_records": 0,
                    "n_diverged": self.n_diverged}
        pd = 100.0 * sum(r.prob_after < r.prob_before for r in ok) / len(ok)
        tc = 100.0 * sum(r.top1_after != r.top1_before for r in ok) / len(ok)
        return {"pd_pct": pd, "tc_pct": tc, "n_records": len(ok),
                "n_diverged": self.n_diverged}


def sample_queries(queries: Sequence[tuple[int, int]],
                   sample_size: Optional[int], seed: int) -> list[tuple[int, int]]:
    """Uniform subsample without replacement, deterministic in seed; original
    order is preserved."""
    if sample_size is None or sample_size >= len(queries):
        return list(queries)
    rng = RngPolicy(seed).eval_generator(1)
    picks = np.sort(rng.choice(len(queries), size=sample_size, replace=False))
    return [queries[int(i)] for i in picks]


def nh_select(index: AdjacencyIndex, store: TripleStore, d: Triple,
              k: Optional[int] = None, match_size: Optional[int] = None,
              seed: int = 0) -> list[int]:
    """Uniformly sample adjacent triples: exactly k of them, or `match_size`
    (the paired gr-all size). Returns every adjacent triple when the request
    exceeds the neighborhood."""
    if (k is None) == (match_size is None):
        raise ConfigError("nh_select needs exactly one of k / match_size")
    size = k if k is not None else match_size
    adjacent = index.adjacent(d)
    if len(adjacent) == 0 or size <= 0:
        return []
    if size >= len(adjacent):
        return [int(t) for t in adjacent]
    rng = RngPolicy(seed).eval_generator(2)
    picks = rng.choice(len(adjacent), size=size, replace=False)
    return sorted(int(adjacent[i]) for i in picks)


def select_explanation_set(selector: Selector, params, ledger: InfluenceLedger,
                           store: TripleStore, index: AdjacencyIndex, d: Triple,
                           seed: int) -> list[int]:
    if selector.kind == "none":
        return []
    if selector.kind in ("gr", "gr-all", "gr-o"):
        mode = selector.label if selector.kind != "gr-all" else "gr-all"
        return list(explain_mod.explain(params, ledger, store, index, d,
                                        mode).selected)
    if selector.kind == "nh":
        return nh_select(index, store, d, k=selector.k, seed=seed)
    if selector.kind == "nh-all":
        paired = explain_mod.explain(params, ledger, store, index, d, "gr-all")
        return nh_select(index, store, d, match_size=len(paired.selected),
                         seed=seed)
    raise ConfigError(f"unknown selector kind {selector.kind!r}")


def _retrain(config: TrainConfig, store: TripleStore, removed_ids: Sequence[int],
             n_entities: int, n_relations: int,
             negative_source=None) -> model.Parameters:
    survivors = store.remove(removed_ids) if removed_ids else store
    return train(config, survivors, n_entities, n_relations,
                 negative_source=negative_source)


def _roar_job(payload) -> dict:
    (config, store, n_entities, n_relations, removed_ids, s, r, o_hat,
     exclude, sampling_excluded) = payload
    source = negatives_fn(config.seed, sampling_excluded)
    try:
        retrained = _retrain(config, store, removed_ids, n_entities,
                             n_relations, negative_source=source)
    except TrainingDivergedError:
        return {"diverged": True, "prob_after": math.nan, "top1_after": -1}
    return {
        "diverged": False,
        "prob_after": model.softmax_prob(retrained, s, r, o_hat),
        "top1_after": model.predict_top(retrained, s, r, exclude),
    }


def roar(params, ledger: InfluenceLedger, config: TrainConfig,
         store: TripleStore, n_entities: int, n_relations: int,
         queries: Sequence[tuple[int, int]], selector: Selector,
         sample_size: Optional[int] = None, eval_seed: int = 42,
         exclude: Optional[set] = None, workers: int = 1,
         index: Optional[AdjacencyIndex] = None,
         sampling_excluded: Optional[frozenset] = None) -> RoarReport:
    """Remove-and-retrain faithfulness over sampled test queries.

    Retraining uses the same seed, visit-order policy, and removal-invariant
    negatives as the main model; only the store differs. Divergent retrains
    are flagged and excluded from the aggregates.
    """
    index = index if index is not None else AdjacencyIndex(store)
    picked = sample_queries(queries, sample_size, eval_seed)
    report = RoarReport(selector.label)

    jobs = []
    for qi, (s, r) in enumerate(picked):
        o_hat = model.predict_top(params, s, r, exclude)
        d = Triple(s, r, o_hat)
        removed = select_explanation_set(selector, params, ledger, store, index,
                                         d, seed=eval_seed * 1_000_003 + qi)
        prob_before = model.softmax_prob(params, s, r, o_hat)
        jobs.append(((config, store, n_entities, n_relations, removed, s, r,
                      o_hat, exclude, sampling_excluded),
                     RoarRecord(s, r, o_hat, selector.label, len(removed),
                                removed, prob_before, math.nan, o_hat, -1)))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_roar_job, [p for p, _ in jobs]))
    else:
        cache = NegativeCache(negatives_fn(config.seed, sampling_excluded))
        outcomes = []
        for payload, _ in jobs:
            cfg, st, n_e, n_r, removed, s, r, o_hat, excl, _ = payload
            try:
                retrained = _retrain(cfg, st, removed, n_e, n_r,
                                     negative_source=cache)
                outcomes.append({
                    "diverged": False,
                    "prob_after": model.softmax_prob(retrained, s, r, o_hat),
                    "top1_after": model.predict_top(retrained, s, r, excl),
                })
            except TrainingDivergedError:
                outcomes.append({"diverged": True, "prob_after": math.nan,
                                 "top1_after": -1})

    for (_, record), outcome in zip(jobs, outcomes):
        record.diverged = outcome["diverged"]
        record.prob_after = outcome["prob_after"]
        record.top1_after = outcome["top1_after"]
        report.records.append(record)
    return report


@dataclass
class CorrelationReport:
    pairs: list[tuple[float, float]]  # (rollback estimate, retrained prob)
    pearson_r: Optional[float]
    n_skipped: int = 0

    @property
    def defined(self) -> bool:
        return self.pearson_r is not None


def pearson(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Pearson r; None when either side has (numerically) zero variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if len(x) < 2:
        return None
    sx = x.std()
    sy = y.std()
    if sx < 1e-15 or sy < 1e-15:
        return None
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


def approximation_correlation(params, ledger: InfluenceLedger,
                              config: TrainConfig, store: TripleStore,
                              n_entities: int, n_relations: int,
                              queries: Sequence[tuple[int, int]],
                              sample_size: Optional[int] = None,
                              eval_seed: int = 42,
                              exclude: Optional[set] = None,
                              index: Optional[AdjacencyIndex] = None,
                              sampling_excluded: Optional[frozenset] = None
                              ) -> CorrelationReport:
    """Correlate the rolled-back probability of each query's gr-1 pick with
    the probability after truly retraining without that pick."""
    index = index if index is not None else AdjacencyIndex(store)
    picked = sample_queries(queries, sample_size, eval_seed)
    cache = NegativeCache(negatives_fn(config.seed, sampling_excluded))
    pairs = []
    skipped = 0
    for s, r in picked:
        o_hat = model.predict_top(params, s, r, exclude)
        d = Triple(s, r, o_hat)
        expl = explain_mod.explain(params, ledger, store, index, d, "gr-1")
        if not expl.selected:
            skipped += 1
            continue
        d_prime = expl.selected[0]
        top = next(sc for sc in expl.scores if sc.triple_id == d_prime)
        estimate = expl.base_prob - top.delta  # == rolled-back probability
        try:
            retrained = _retrain(config, store, [d_prime], n_entities,
                                 n_relations, negative_source=cache)
        except TrainingDivergedError:
            skipped += 1
            continue
        pairs.append((estimate, model.softmax_prob(retrained, s, r, o_hat)))
    return CorrelationReport(pairs, pearson([p[0] for p in pairs],
                                            [p[1] for p in pairs]), skipped)


# --- stability constants and bounds ------------------------------------------


@dataclass
class StabilityInputs:
    """Empirical inputs to the non-convex SGD stability bound. L, beta, and C
    are lower bounds of the true suprema (observed, not proven)."""

    L: float
    beta: float
    C: float
    c: float  # initial learning rate
    T: int    # total steps
    n: int    # training-set size


class ConstantsProbe:
    """Step observer that snapshots parameters and tracks per-example
    gradient norms so constants can be estimated after training."""

    def __init__(self, snapshot_every: int = 50):
        self.snapshot_every = max(1, int(snapshot_every))
        self.grad_norms: list[float] = []
        self.snapshots: list[model.Parameters] = []

    def __call__(self, info: StepInfo) -> None:
        self.grad_norms.append(info.grad_norm)
        if info.step % self.snapshot_every == 0 or info.step == 1:
            self.snapshots.append(info.params.copy())

    def max_row_norm(self) -> float:
        worst = 0.0
        for snap in self.snapshots:
            for matrix in (snap.entities, snap.relations):
                norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
                worst = max(worst, float(norms.max()))
        return worst


def _params_distance(a: model.Parameters, b: model.Parameters) -> float:
    de = a.entities.astype(np.float64) - b.entities.astype(np.float64)
    dr = a.relations.astype(np.float64) - b.relations.astype(np.float64)
    return float(np.sqrt(np.sum(de * de) + np.sum(dr * dr)))


def _grad_distance(ga: model.SparseGrad, gb: model.SparseGrad) -> float:
    total = 0.0
    for dict_a, dict_b in ((ga.entity, gb.entity), (ga.relation, gb.relation)):
        for key in set(dict_a) | set(dict_b):
            diff = dict_a.get(key, 0.0) - dict_b.get(key, 0.0)
            total += float(np.sum(np.asarray(diff, dtype=np.float64) ** 2))
    return math.sqrt(total)


def estimate_constants(probe: ConstantsProbe, config: TrainConfig,
                       probe_examples: Sequence[tuple[Triple, np.ndarray]],
                       n: int) -> StabilityInputs:
    """C, L, beta from training instrumentation.

    beta is the largest observed gradient-variation ratio between parameter
    snapshots, evaluated on fixed probe examples with fixed negatives.
    Requires at least two snapshots.
    """
    if len(probe.snapshots) < 2:
        raise ConfigError("beta estimation needs at least 2 parameter snapshots")
    if not probe.grad_norms:
        raise ConfigError("no per-example gradient norms recorded")
    beta = 0.0
    snaps = probe.snapshots
    for i in range(len(snaps)):
        for j in range(i + 1, len(snaps)):
            dist = _params_distance(snaps[i], snaps[j])
            if dist < 1e-12:
                continue
            for d, negs in probe_examples:
                _, gi = model.loss_and_grad(snaps[i], config.loss, d, negs)
                _, gj = model.loss_and_grad(snaps[j], config.loss, d, negs)
                beta = max(beta, _grad_distance(gi, gj) / dist)
    return StabilityInputs(
        L=float(max(probe.grad_norms)),
        beta=beta,
        C=probe.max_row_norm(),
        c=config.lr0,
        T=len(probe.grad_norms),
        n=n,
    )


def stability_bound(inputs: StabilityInputs) -> float:
    """The non-convex SGD stability bound
    (1 + 1/(beta c)) / (n - 1) * (c L^2)^(1/(beta c + 1)) * T^(beta c/(beta c + 1))."""
    if inputs.n < 2:
        raise ConfigError("stability bound requires n >= 2")
    for name in ("L", "beta", "C", "c"):
        if getattr(inputs, name) <= 0:
            raise ConfigError(f"stability input {name} must be positive")
    if inputs.T < 1:
        raise ConfigError("stability input T must be >= 1")
    bc = inputs.beta * inputs.c
    return ((1.0 + 1.0 / bc) / (inputs.n - 1)
            * (inputs.c * inputs.L ** 2) ** (1.0 / (bc + 1.0))
            * inputs.T ** (bc / (bc + 1.0)))


@dataclass
class TheoremReport:
    mean_rollback_error: float
    mean_baseline_error: float
    bound: float
    inputs: StabilityInputs
    trials: int
    holds: bool
    rollback_beats_baseline: bool
    note: str = ("constants are empirical lower bounds of the true suprema; "
                 "this is a numerical check, not a proof")


def verify_approximation_theorem(config: TrainConfig, store: TripleStore,
                                 n_entities: int, n_relations: int,
                                 trials: int = 30, eval_seed: int = 42,
                                 snapshot_every: int = 50,
                                 n_probe_examples: int = 5) -> TheoremReport:
    """Desk-scale check that the mean rollback approximation error stays
    under the stability bound computed from estimated constants.

    Requires the theory's training regime: SGD with the inverse-t step-size
    schedule (alpha_t = c/t, monotonically non-increasing).
    """
    if config.optimizer != SGD:
        raise ConfigError("theorem check requires the SGD optimizer")
    if config.lr_schedule != SCHEDULE_INVERSE_T:
        raise ConfigError("theorem check requires the inverse-t step-size schedule")
    if len(store) < 2:
        raise ConfigError("theorem check requires at least 2 training triples")

    probe = ConstantsProbe(snapshot_every=snapshot_every)
    ledger = InfluenceLedger.for_store(store, config.h)
    params = train(config, store, n_entities, n_relations,
                   delta_sink=ledger.record, step_observer=probe)
    probe.snapshots.append(params.copy())  # final iterate always probed

    policy = RngPolicy(config.seed)
    rng = RngPolicy(eval_seed).eval_generator(3)
    live_ids = [int(t) for t in store.ids]
    probe_examples = []
    for tid in rng.choice(len(live_ids), size=min(n_probe_examples, len(live_ids)),
                          replace=False):
        d = store.triple(live_ids[int(tid)])
        negs = policy.negatives(live_ids[int(tid)], 0, d.o, n_entities,
                                config.num_negatives)
        probe_examples.append((d, negs))
    inputs = estimate_constants(probe, config, probe_examples, n=len(store))
    bound = stability_bound(inputs)

    index = AdjacencyIndex(store)
    cache = NegativeCache(policy)
    rollback_errors = []
    baseline_errors = []
    for _ in range(trials):
        d_prime_id = live_ids[int(rng.choice(len(live_ids)))]
        d_prime = store.triple(d_prime_id)
        adjacent = index.adjacent(d_prime)
        if len(adjacent) > 0:
            d = store.triple(int(adjacent[int(rng.choice(len(adjacent)))]))
        else:
            d = d_prime
        retrained = _retrain(config, store, [d_prime_id], n_entities,
                             n_relations, negative_source=cache)
        slice_ = ledger_mod.lookup(ledger, d_prime_id, d, store)
        rolled = model.softmax_prob(ledger_mod.rollback(params, slice_, d),
                                    d.s, d.r, d.o)
        truth = model.softmax_prob(retrained, d.s, d.r, d.o)
        base = model.softmax_prob(params, d.s, d.r, d.o)
        rollback_errors.append(abs(rolled - truth))
        baseline_errors.append(abs(base - truth))

    mean_err = float(np.mean(rollback_errors))
    mean_base = float(np.mean(baseline_errors))
    return TheoremReport(mean_err, mean_base, bound, inputs, trials,
                         holds=mean_err < bound,
                         rollback_beats_baseline=mean_err <= mean_base + 1e-9)


# --- report emission ----------------------------------------------------------

_ROAR_COLUMNS = ["query_s", "query_r", "predicted_o", "selector", "n_removed",
                 "removed_ids", "prob_before", "prob_after", "top1_before",
                 "top1_after", "diverged"]


def write_roar_csv(report: RoarReport, path) -> None:
    """One row per record, aggregate footer as comment lines; empty reports
    produce a header-only file."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_ROAR_COLUMNS)
        for r in report.records:
            writer.writerow([r.query_s, r.query_r, r.predicted_o, r.selector,
                             r.n_removed, " ".join(map(str, r.removed_ids)),
                             repr(r.prob_before), repr(r.prob_after),
                             r.top1_before, r.top1_after, int(r.diverged)])
        if report.records:
            agg = report.aggregates()
            fh.write(f"# aggregate pd_pct {agg['pd_pct']!r}\n")
            fh.write(f"# aggregate tc_pct {agg['tc_pct']!r}\n")
            fh.write(f"# aggregate n_records {agg['n_records']}\n")
            fh.write(f"# aggregate n_diverged {agg['n_diverged']}\n")


def roar_report_to_dict(report: RoarReport) -> dict:
    return {
        "selector": report.selector,
        "records": [vars(r).copy() for r in report.records],
        "aggregates": report.aggregates(),
    }


def write_roar_json(report: RoarReport, path) -> None:
    Path(path).write_text(json.dumps(roar_report_to_dict(report), indent=2) + "\n",
                          encoding="utf-8")


def write_correlation_json(report: CorrelationReport, path) -> None:
    doc = {
        "pearson_r": report.pearson_r,
        "n_pairs": len(report.pairs),
        "n_skipped": report.n_skipped,
        "pairs": [{"estimate": a, "retrained": b} for a, b in report.pairs],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def write_correlation_csv(report: CorrelationReport, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimate", "retrained"])
        for a, b in report.pairs:
            writer.writerow([repr(a), repr(b)])
        if report.pairs:
            fh.write(f"# aggregate pearson_r {report.pearson_r!r}\n")
            fh.write(f"# aggregate n_skipped {report.n_skipped}\n")


def theorem_report_to_dict(report: TheoremReport) -> dict:
    doc = vars(report).copy()
    doc["inputs"] = vars(report.inputs).copy()
    return doc


def write_theorem_json(report: TheoremReport, path) -> None:
    Path(path).write_text(json.dumps(theorem_report_to_dict(report), indent=2)
                          + "\n", encoding="utf-8")
