import numpy as np
import pytest

from gradroll import model
from gradroll.errors import ArtifactMismatchError
from gradroll.ledger import (LEDGER_HEADER_SIZE, InfluenceLedger, ledger_info,
                             load_ledger, lookup, rollback, save_ledger)
from gradroll.training import TrainConfig, UpdateDelta, init_params, train
from gradroll.triples import Triple

from conftest import make_store


def delta(tid, s, r, o, ds, dr, do, step=1):
    return UpdateDelta(tid, step, Triple(s, r, o),
                       np.asarray(ds, dtype=np.float32),
                       np.asarray(dr, dtype=np.float32),
                       np.asarray(do, dtype=np.float32))


def test_fresh_ledger_is_zero(tiny_store):
    led = InfluenceLedger.for_store(tiny_store, 4)
    assert led.gamma.shape == (5, 3, 4)
    assert np.all(led.gamma == 0)


def test_record_single_and_accumulated(tiny_store):
    led = InfluenceLedger.for_store(tiny_store, 2)
    led.record(delta(0, 0, 0, 1, [1, 2], [3, 4], [5, 6]))
    np.testing.assert_allclose(led.gamma_for(0),
                               [[1, 2], [3, 4], [5, 6]])
    led.record(delta(0, 0, 0, 1, [1, 0], [0, 1], [1, 1]))
    np.testing.assert_allclose(led.gamma_for(0),
                               [[2, 2], [3, 5], [6, 7]])


def test_record_unknown_id_errors(tiny_store):
    led = InfluenceLedger.for_store(tiny_store, 2)
    with pytest.raises(KeyError):
        led.record(delta(99, 0, 0, 1, [0, 0], [0, 0], [0, 0]))


def test_full_training_telescopes_into_gamma():
    # entity 2 appears only as the object of triple 1; with gold-rows-only
    # updates (sigmoid, no negatives) its total movement is exactly gamma_o
    cfg = TrainConfig(seed=5, epochs=6, h=4, optimizer="sgd", lr0=0.05,
                      lr_schedule="constant", loss="sigmoid", num_negatives=0)
    store = make_store([(0, 0, 1), (1, 1, 2), (0, 1, 3)])
    led = InfluenceLedger.for_store(store, cfg.h)
    final = train(cfg, store, 4, 2, delta_sink=led.record)
    init = init_params(cfg, 4, 2)
    np.testing.assert_allclose(final.entities[2] - init.entities[2],
                               led.gamma_for(1)[2], atol=1e-6)


def test_lookup_disjoint_triples_empty(tiny_store):
    led = InfluenceLedger.for_store(tiny_store, 2)
    led.gamma += 1.0
    # store triple 2 is (2, 1, 3); probe shares nothing with (0, 0, 1)... use
    # a probe disjoint from triple id 1 = (1, 0, 2): d = (0, 1, 3) shares r=1
    sl = lookup(led, 1, Triple(4, 2, 5), tiny_store)
    assert sl.empty


def test_lookup_same_triple_full_slice(tiny_store):
    led = InfluenceLedger.for_store(tiny_store, 2)
    led.gamma[0] = [[1, 1], [2, 2], [3, 3]]
    sl = lookup(led, 0, tiny_store.triple(0), tiny_store)
    np.testing.assert_allclose(sl.s, [1, 1])
    np.testing.assert_allclose(sl.r, [2, 2])
    np.testing.assert_allclose(sl.o, [3, 3])


def test_lookup_positional_matching_rule():
    # d' = (a=0, r1=0, b=1), d = (b=1, r2=1, c=2): only d.s matches, via
    # d'.o == d.s, so the slice carries d''s object gamma on the s component
    store = make_store([(0, 0, 1)])
    led = InfluenceLedger.for_store(store, 2)
    led.gamma[0] = [[1, 1], [2, 2], [3, 3]]
    sl = lookup(led, 0, Triple(1, 1, 2), store)
    np.testing.assert_allclose(sl.s, [3, 3])
    assert sl.r is None and sl.o is None


def test_lookup_row_matching_sums_both_slots():
    # d' = (a, r, a) style overlap: d'.s == d.s and d'.o == d.s
    store = make_store([(0, 0, 0)])
    led = InfluenceLedger.for_store(store, 2)
    led.gamma[0] = [[1, 1], [2, 2], [4, 4]]
    sl = lookup(led, 0, Triple(0, 1, 3), store)
    np.testing.assert_allclose(sl.s, [5, 5])  # gamma_s + gamma_o on row 0


def test_lookup_reflected_triples_see_each_other():
    # (a, r, b) vs (b, r, a): both entity rows shared through opposite slots
    store = make_store([(0, 0, 1)])
    led = InfluenceLedger.for_store(store, 2)
    led.gamma[0] = [[1, 0], [7, 7], [0, 2]]
    sl = lookup(led, 0, Triple(1, 0, 0), store)
    np.testing.assert_allclose(sl.s, [0, 2])  # d.s == d'.o
    np.testing.assert_allclose(sl.o, [1, 0])  # d.o == d'.s
    np.testing.assert_allclose(sl.r, [7, 7])


def test_lookup_empty_iff_not_adjacent():
    # slice emptiness mirrors element sharing exactly
    import itertools
    from gradroll.triples import AdjacencyIndex
    rng = np.random.default_rng(8)
    rows = [(int(rng.integers(6)), int(rng.integers(3)), int(rng.integers(6)))
            for _ in range(25)]
    store = make_store(rows)
    index = AdjacencyIndex(store)
    led = InfluenceLedger.for_store(store, 2)
    led.gamma += 1.0
    probes = [Triple(int(rng.integers(6)), int(rng.integers(3)),
                     int(rng.integers(6))) for _ in range(10)]
    for d, (tid, _) in itertools.product(probes, store):
        shared = tid in set(int(t) for t in index.adjacent(d, exclude_exact=False))
        assert lookup(led, tid, d, store).empty == (not shared)


def test_rollback_empty_slice_identical_scores(tiny_store):
    rng = np.random.default_rng(0)
    params = model.Parameters(rng.normal(size=(5, 3)).astype(np.float32),
                              rng.normal(size=(3, 3)).astype(np.float32))
    led = InfluenceLedger.for_store(tiny_store, 3)
    sl = lookup(led, 1, Triple(4, 2, 0), tiny_store)
    view = rollback(params, sl, Triple(4, 2, 0))
    for o in range(5):
        assert model.softmax_prob(view, 4, 2, o) == model.softmax_prob(
            params, 4, 2, o)


def test_rollback_recovers_initial_rows():
    # single triple trained with pure SGD and no constraint: subtracting its
    # full gamma returns the gold rows to their initialization
    cfg = TrainConfig(seed=9, epochs=8, h=4, optimizer="sgd", lr0=0.1,
                      lr_schedule="constant", loss="softmax", num_negatives=2)
    store = make_store([(0, 0, 1)])
    led = InfluenceLedger.for_store(store, cfg.h)
    final = train(cfg, store, 4, 1, delta_sink=led.record)
    init = init_params(cfg, 4, 1)
    d = store.triple(0)
    view = rollback(final, lookup(led, 0, d, store), d)
    np.testing.assert_allclose(view.entity(0), init.entities[0], atol=1e-6)
    np.testing.assert_allclose(view.relation(0), init.relations[0], atol=1e-6)
    np.testing.assert_allclose(view.entity(1), init.entities[1], atol=1e-6)
    # untouched candidate rows read through to the trained parameters
    assert np.array_equal(view.entity(3), final.entities[3])


def test_rollback_not_idempotent(tiny_store):
    params = model.Parameters(np.ones((5, 2), dtype=np.float32),
                              np.ones((3, 2), dtype=np.float32))
    led = InfluenceLedger.for_store(tiny_store, 2)
    led.gamma[0] = [[0.25, 0.25], [0, 0], [0, 0]]
    d = tiny_store.triple(0)
    sl = lookup(led, 0, d, tiny_store)
    once = rollback(params, sl, d)
    np.testing.assert_allclose(once.entity(0), [0.75, 0.75])
    twice = rollback(model.Parameters(np.asarray(once.entity_rows(np.arange(5))),
                                      params.relations), sl, d)
    np.testing.assert_allclose(twice.entity(0), [0.5, 0.5])


def test_save_load_roundtrip_bit_exact(tmp_path, tiny_store):
    led = InfluenceLedger.for_store(tiny_store, 3, b"abcdefgh")
    led.gamma[:] = np.random.default_rng(2).normal(
        size=led.gamma.shape).astype(np.float32)
    path = tmp_path / "ledger.bin"
    save_ledger(led, path)
    again = load_ledger(path, tiny_store, expected_hash=b"abcdefgh")
    assert np.array_equal(again.gamma, led.gamma)
    save_ledger(again, tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_load_rejects_wrong_hash(tmp_path, tiny_store):
    led = InfluenceLedger.for_store(tiny_store, 3, b"abcdefgh")
    path = tmp_path / "ledger.bin"
    save_ledger(led, path)
    with pytest.raises(ArtifactMismatchError):
        load_ledger(path, tiny_store, expected_hash=b"differen")


def test_load_rejects_wrong_store_size(tmp_path, tiny_store):
    led = InfluenceLedger.for_store(tiny_store, 3)
    path = tmp_path / "ledger.bin"
    save_ledger(led, path)
    with pytest.raises(ArtifactMismatchError):
        load_ledger(path, tiny_store.remove([0]))


def test_file_size_is_exactly_header_plus_payload(tmp_path):
    for n, h in ((1, 1), (7, 5), (100, 10)):
        store = make_store([(i, 0, i) for i in range(n)])
        led = InfluenceLedger.for_store(store, h)
        path = tmp_path / f"l{n}_{h}.bin"
        save_ledger(led, path)
        assert path.stat().st_size == LEDGER_HEADER_SIZE + 3 * h * n * 4
        info = ledger_info(path)
        assert info["payload_bytes"] == info["expected_payload_bytes"]
        assert info["n_triples"] == n and info["h"] == h
