"""Acceptance gate: one test per criterion, each printing a PASS line with
the measured values (visible in the -rA summary).

Criteria 1-3 need the real Nations split under data/nations/ and are skipped
with a loud reason when it is absent (this sandbox has no network access;
scripts/fetch_nations.sh retrieves it elsewhere). Criteria 4-8 run
unconditionally.
"""

import time

import numpy as np
import pytest

from gradroll import model
from gradroll.evaluation import (Selector, approximation_correlation, roar,
                                 verify_approximation_theorem)
from gradroll.explain import explain
from gradroll.ledger import InfluenceLedger, LEDGER_HEADER_SIZE
from gradroll.model import (COMPLEX, DISTMULT, SIGMOID_CE, SOFTMAX_CE,
                            Parameters, loss_and_grad, score, score_grad)
from gradroll.rng import RngPolicy
from gradroll.runconfig import preset_config
from gradroll.runs import load_run, run_dir_for, run_train
from gradroll.training import TrainConfig, train
from gradroll.triples import AdjacencyIndex, Triple

from conftest import NATIONS_DIR, make_store, skip_without_nations, synthetic_kg
from oracles import (fd_loss_grad, max_rel_error, random_bounded_params,
                     sparse_to_dict)


def report(criterion: int, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: PASS - {detail}")


# --- Nations fixtures (criteria 1-3) ------------------------------------------


def nations_config(tmp_path_factory, **training_overrides):
    out = tmp_path_factory.mktemp("nations-runs")
    config = preset_config("nations",
                           str(NATIONS_DIR / "train.txt"),
                           str(NATIONS_DIR / "valid.txt"),
                           str(NATIONS_DIR / "test.txt"),
                           output_dir=str(out))
    if training_overrides:
        doc = config.model_dump()
        doc["training"].update(training_overrides)
        from gradroll.runconfig import config_from_dict
        config = config_from_dict(doc)
    return config


@pytest.fixture(scope="module")
def nations_run(tmp_path_factory):
    if not (NATIONS_DIR / "train.txt").exists():
        pytest.skip("Nations triple files not present under data/nations/")
    config = nations_config(tmp_path_factory)
    t0 = time.monotonic()
    summary = run_train(config)
    elapsed = time.monotonic() - t0
    art = load_run(run_dir_for(config))
    return config, summary, art, elapsed


@skip_without_nations
def test_criterion_1_nations_reproduction(nations_run):
    """DistMult with the shipped preset: filtered MRR within +-3 of 58.88
    and Hits@10 within +-3 of 97.51, in under 5 minutes."""
    _, summary, _, elapsed = nations_run
    mrr = summary["metrics"]["mrr"]
    hits10 = summary["metrics"]["hits10"]
    assert elapsed <= 300, f"training took {elapsed:.1f}s"
    assert abs(mrr - 58.88) <= 3.0, f"MRR {mrr:.2f} not within 58.88 +- 3"
    assert abs(hits10 - 97.51) <= 3.0, f"Hits@10 {hits10:.2f} not within 97.51 +- 3"
    report(1, f"MRR {mrr:.2f} (target 58.88 +- 3), Hits@10 {hits10:.2f} "
              f"(target 97.51 +- 3), {elapsed:.0f}s")


@skip_without_nations
def test_criterion_2_roar_faithfulness(nations_run):
    """ROAR over 30 sampled test predictions: GR-1 PD% >= 80, NH-1 PD% in
    [35, 70], GR-ALL PD% >= 90 and TC% >= 85. Runtime <= 1 hour."""
    config, _, art, _ = nations_run
    cfg = config.to_train_config()
    queries = art.test_queries()
    t0 = time.monotonic()
    common = dict(sample_size=30, eval_seed=42, index=art.index)
    n_e, n_r = art.vocab.n_entities, art.vocab.n_relations

    gr1 = roar(art.params, art.ledger, cfg, art.train_store, n_e, n_r,
               queries, Selector.parse("gr-1"), **common).aggregates()
    nh1 = roar(art.params, art.ledger, cfg, art.train_store, n_e, n_r,
               queries, Selector.parse("nh-1"), **common).aggregates()
    grall = roar(art.params, art.ledger, cfg, art.train_store, n_e, n_r,
                 queries, Selector.parse("gr-all"), **common).aggregates()
    elapsed = time.monotonic() - t0

    assert elapsed <= 3600, f"ROAR took {elapsed:.0f}s"
    assert gr1["pd_pct"] >= 80, f"GR-1 PD% {gr1['pd_pct']:.1f} < 80"
    assert 35 <= nh1["pd_pct"] <= 70, f"NH-1 PD% {nh1['pd_pct']:.1f} not in [35, 70]"
    assert grall["pd_pct"] >= 90, f"GR-ALL PD% {grall['pd_pct']:.1f} < 90"
    assert grall["tc_pct"] >= 85, f"GR-ALL TC% {grall['tc_pct']:.1f} < 85"
    report(2, f"GR-1 PD% {gr1['pd_pct']:.1f}, NH-1 PD% {nh1['pd_pct']:.1f}, "
              f"GR-ALL PD% {grall['pd_pct']:.1f} TC% {grall['tc_pct']:.1f}, "
              f"{elapsed:.0f}s")


@skip_without_nations
def test_criterion_3_approximation_quality(tmp_path_factory):
    """Pearson r >= 0.75 unconstrained; strictly increasing when tightening
    the norm constraint max-3 -> max-2 -> unit. Runtime <= 2 hours."""
    t0 = time.monotonic()
    correlations = {}
    variants = {
        "none": {},
        "max3": {"norm_constraint": "max", "max_norm": 3.0},
        "max2": {"norm_constraint": "max", "max_norm": 2.0},
        "unit": {"norm_constraint": "unit"},
    }
    for label, overrides in variants.items():
        config = nations_config(tmp_path_factory, **overrides)
        run_train(config)
        art = load_run(run_dir_for(config))
        rep = approximation_correlation(
            art.params, art.ledger, config.to_train_config(), art.train_store,
            art.vocab.n_entities, art.vocab.n_relations, art.test_queries(),
            sample_size=30, eval_seed=42, index=art.index)
        assert rep.defined, f"{label}: Pearson r undefined"
        correlations[label] = rep.pearson_r
    elapsed = time.monotonic() - t0

    assert elapsed <= 7200, f"correlation study took {elapsed:.0f}s"
    assert correlations["none"] >= 0.75, \
        f"unconstrained r {correlations['none']:.3f} < 0.75"
    assert correlations["max3"] < correlations["max2"] < correlations["unit"], \
        f"constraint ordering violated: {correlations}"
    report(3, "r " + ", ".join(f"{k}={v:.4f}" for k, v in correlations.items())
              + f", {elapsed:.0f}s")


def test_criterion_4_gradient_correctness():
    """100 randomized analytic-vs-central-finite-difference checks across
    both scoring functions and both losses; max relative error < 1e-4."""
    rng = np.random.default_rng(42)
    worst = 0.0
    checks = 0
    for scoring in (DISTMULT, COMPLEX):
        for loss_kind in (SOFTMAX_CE, SIGMOID_CE):
            for _ in range(25):
                p = Parameters(rng.normal(size=(6, 8)),
                               rng.normal(size=(3, 8)), scoring)
                d = Triple(int(rng.integers(6)), int(rng.integers(3)),
                           int(rng.integers(6)))
                negs = [int(o) for o in rng.permutation(6) if o != d.o][:3]
                analytic = sparse_to_dict(loss_and_grad(p, loss_kind, d, negs)[1])
                worst = max(worst, max_rel_error(analytic,
                                                 fd_loss_grad(p, loss_kind, d, negs)))
                checks += 1
    assert checks == 100
    assert worst < 1e-4, f"max relative error {worst:.2e}"
    report(4, f"100 checks, max relative error {worst:.2e} < 1e-4")


def test_criterion_5_regularity_bounds():
    """1,000 random samples per bound, zero violations beyond 1e-9 slack:
    score is 2C^2-Lipschitz, its gradient 4C-smooth, and the gradient update
    rule expansive by at most alpha*beta with a rollback offset."""
    rng = np.random.default_rng(1234)

    def block_norm(pa, pb, d):
        return float(np.linalg.norm(np.concatenate([
            pa.entities[d.s] - pb.entities[d.s],
            pa.relations[d.r] - pb.relations[d.r],
            pa.entities[d.o] - pb.entities[d.o]])))

    def grad_block(p, d):
        g = score_grad(p, d)
        return np.concatenate([g.entity[d.s], g.relation[d.r], g.entity[d.o]])

    lipschitz_violations = smoothness_violations = 0
    for _ in range(1000):
        c = float(rng.uniform(0.2, 3.0))
        h = int(rng.integers(2, 9))
        pa = random_bounded_params(rng, 4, 2, h, c)
        pb = random_bounded_params(rng, 4, 2, h, c)
        d = Triple(0, int(rng.integers(2)), 1)
        dist = block_norm(pa, pb, d)
        if abs(score(pa, d) - score(pb, d)) > 2 * c * c * dist + 1e-9:
            lipschitz_violations += 1
        if (np.linalg.norm(grad_block(pa, d) - grad_block(pb, d))
                > 4 * c * dist + 1e-9):
            smoothness_violations += 1

    expansiveness_violations = 0
    for trial in range(1000):
        dim = int(rng.integers(2, 12))
        w = rng.normal(size=dim)
        w2 = rng.normal(size=dim)
        gamma = rng.normal(size=dim) * rng.uniform(0, 2)
        alpha = float(rng.uniform(0, 1.5))
        if trial % 2 == 0:
            q = rng.normal(size=(dim, dim))
            a = q @ q.T
            beta = float(np.linalg.eigvalsh(a).max())
            b = rng.normal(size=dim)
            grad = lambda x: a @ x + b
        else:
            beta = 1.0
            grad = lambda x: np.exp(x - x.max()) / np.exp(x - x.max()).sum()
        lhs = np.linalg.norm((w - alpha * grad(w)) - gamma
                             - (w2 - alpha * grad(w2)))
        rhs = (np.linalg.norm(w - gamma - w2)
               + alpha * beta * np.linalg.norm(w - w2))
        if lhs > rhs + 1e-9:
            expansiveness_violations += 1

    assert lipschitz_violations == 0
    assert smoothness_violations == 0
    assert expansiveness_violations == 0
    report(5, "0 violations in 3 x 1000 samples (2C^2 Lipschitz, 4C "
              "smoothness, expansiveness with rollback offset)")


def test_criterion_6_stability_bound_desk_check():
    """Synthetic 100-triple store, SGD with alpha_t <= c/t and the unit-norm
    constraint: over 30 trials the mean rollback approximation error stays
    under the stability bound from estimated constants."""
    store, _, _ = synthetic_kg(n_train=100)
    cfg = TrainConfig(seed=6, epochs=6, h=8, optimizer="sgd", lr0=0.05,
                      lr_schedule="inverse-t", loss="softmax", num_negatives=5,
                      norm_constraint="unit")
    t0 = time.monotonic()
    rep = verify_approximation_theorem(cfg, store, 30, 6, trials=30,
                                       eval_seed=9, snapshot_every=50)
    elapsed = time.monotonic() - t0
    assert elapsed <= 600, f"theorem check took {elapsed:.0f}s"
    assert rep.mean_rollback_error < rep.bound, \
        f"mean error {rep.mean_rollback_error:.3e} >= bound {rep.bound:.3e}"
    assert rep.holds
    report(6, f"mean |Pr(w-gamma) - Pr(w')| = {rep.mean_rollback_error:.3e} < "
              f"bound {rep.bound:.3e} (30 trials, n=100, T={rep.inputs.T})")


def test_criterion_7_resource_claims(tmp_path, monkeypatch):
    """Ledger file size is exactly header + 3*h*|D|*4 bytes, and one
    explanation performs at most |adjacent(d)| + 1 probability evaluations
    (counted by instrumenting the probability function)."""
    store, _, queries = synthetic_kg(n_train=120)
    cfg = TrainConfig(seed=3, epochs=4, h=7, optimizer="adam", lr0=1e-2,
                      lr_schedule="constant", loss="softmax", num_negatives=4)
    ledger = InfluenceLedger.for_store(store, cfg.h)
    params = train(cfg, store, 30, 6, delta_sink=ledger.record)

    from gradroll.ledger import save_ledger
    path = tmp_path / "ledger.bin"
    save_ledger(ledger, path)
    expected = LEDGER_HEADER_SIZE + 3 * cfg.h * len(store) * 4
    assert path.stat().st_size == expected

    calls = {"n": 0}
    real = model.softmax_prob

    def counting(*args, **kwargs):
        calls["n"] += 1
        return real(*args, **kwargs)

    monkeypatch.setattr(model, "softmax_prob", counting)
    index = AdjacencyIndex(store)
    worst_margin = None
    for s, r in queries[:10]:
        d = Triple(s, r, model.predict_top(params, s, r))
        calls["n"] = 0
        expl = explain(params, ledger, store, index, d, "gr-all")
        budget = len(index.adjacent(d)) + 1
        assert calls["n"] <= budget
        assert expl.prob_evaluations == calls["n"]
        margin = budget - calls["n"]
        worst_margin = margin if worst_margin is None else min(worst_margin, margin)
    report(7, f"ledger bytes == {LEDGER_HEADER_SIZE} + 3h|D|*4 exactly; "
              f"explanation evaluations within budget (min slack {worst_margin})")


def test_criterion_8_determinism_and_coupling():
    """The S-empty retrain reproduces the main checkpoint bit-exactly, and
    negatives of every surviving triple are unchanged under any
    single-triple removal."""
    store = make_store([(i % 6, i % 3, (i + 1) % 7) for i in range(12)])
    cfg = TrainConfig(seed=11, epochs=3, h=6, optimizer="adam", lr0=5e-3,
                      lr_schedule="linear", loss="softmax", num_negatives=3)
    main = train(cfg, store, 7, 3)
    retrained = train(cfg, store.remove([]), 7, 3)
    assert np.array_equal(main.entities, retrained.entities)
    assert np.array_equal(main.relations, retrained.relations)

    policy = RngPolicy(cfg.seed)
    baseline = {
        (tid, epoch): policy.negatives(tid, epoch, t.o, 7, cfg.num_negatives)
        for tid, t in store for epoch in range(cfg.epochs)
    }
    for removed_tid, _ in store:
        survivors = store.remove([removed_tid])
        for tid, t in survivors:
            for epoch in range(cfg.epochs):
                again = policy.negatives(tid, epoch, t.o, 7, cfg.num_negatives)
                assert np.array_equal(again, baseline[(tid, epoch)])
    report(8, "S-empty retrain bit-exact; negatives invariant under all 12 "
              "single-triple removals x 3 epochs")
