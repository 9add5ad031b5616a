import random

import pytest

from calmsim.runtime import DeliverySchedule, NetworkCondition
from calmsim.sketch import (CmsParams, SketchMatrix, choose_params,
                            corpus_stream, design1_run, design2_run,
                            row_seeds, sequential_sketch)
from calmsim.tables import IDK, Value

from conftest import make_corpus


def params(h=3, m=64, seed=0):
    return CmsParams(h, m, row_seeds(h, seed))


# -- parameters -------------------------------------------------------------


def test_choose_params_standard_sizing():
    p = choose_params(0.01, 0.01)
    # ceil(e / 0.01) and ceil(ln 100), computed by hand.
    assert (p.m, p.h) == (272, 5)
    assert choose_params(0.99, 0.6).m == 3
    assert choose_params(0.5, 0.5).h == 1


def test_params_validation():
    with pytest.raises(ValueError):
        CmsParams(0, 10, ())
    with pytest.raises(ValueError):
        CmsParams(2, 10, (1, 1))  # seeds must be distinct
    with pytest.raises(ValueError):
        CmsParams(2, 10, (1,))  # wrong arity
    with pytest.raises(ValueError):
        choose_params(0.0, 0.1)
    with pytest.raises(ValueError):
        choose_params(0.1, 1.0)


def test_row_seeds_reproducible_and_distinct():
    assert row_seeds(8, 3) == row_seeds(8, 3)
    assert len(set(row_seeds(8, 3))) == 8
    assert row_seeds(4, 1) != row_seeds(4, 2)


# -- matrix core ------------------------------------------------------------


def test_insert_idempotent():
    sk = SketchMatrix(params())
    for _ in range(5):
        sk.insert("ACGT", 7)
    assert sk.query("ACGT") == 1


def test_row_sum_identity():
    sk = SketchMatrix(params())
    pairs = [(f"K{i}", i) for i in range(50)]
    for item, tok in pairs:
        sk.insert(item, tok)
    # Every row holds each distinct token exactly once.
    for row in sk.cells:
        assert sum(len(c) for c in row) == 50


def test_exact_when_matrix_is_huge():
    rng = random.Random(5)
    stream = [(f"K{rng.randint(0, 9)}", tok) for tok in range(300)]
    sk = sequential_sketch(stream, params(h=4, m=1 << 16))
    truth = {}
    for item, _ in stream:
        truth[item] = truth.get(item, 0) + 1
    assert all(sk.query(item) == n for item, n in truth.items())


def test_estimates_never_undercount():
    rng = random.Random(6)
    stream = [(f"K{rng.randint(0, 40)}", tok) for tok in range(500)]
    sk = sequential_sketch(stream, params(h=3, m=16))  # heavy collisions
    truth = {}
    for item, _ in stream:
        truth[item] = truth.get(item, 0) + 1
    assert all(sk.query(item) >= n for item, n in truth.items())


def test_merge_is_union_of_streams():
    rng = random.Random(7)
    stream = [(f"K{rng.randint(0, 20)}", tok) for tok in range(200)]
    p = params()
    merged = sequential_sketch(stream[:90], p).merge(
        sequential_sketch(stream[90:], p))
    assert merged == sequential_sketch(stream, p)
    with pytest.raises(ValueError):
        merged.merge(SketchMatrix(params(m=32)))


def test_dump_shape():
    sk = SketchMatrix(params(h=2, m=8))
    sk.insert("AC", 1)
    d = sk.dump()
    assert (d["h"], d["m"], len(d["cells"])) == (2, 8, 16)
    assert sum(d["cells"]) == 2


# -- distributed designs ----------------------------------------------------


def adversarial(seed):
    return DeliverySchedule(seed=seed, duplicate_prob=0.4,
                            reorder_window=4, drop_prob=0.15)


@pytest.fixture(scope="module")
def cms_corpus():
    return make_corpus(random.Random(11), lines=20, width=80)


def test_design2_converges_to_sequential(cms_corpus):
    p = params(h=3, m=128)
    ref = sequential_sketch(corpus_stream(cms_corpus, 6), p)
    res = design2_run(cms_corpus, 6, p, workers=3, schedule=adversarial(1))
    assert res.converged()
    assert res.sketch() == ref


def test_design1_matches_design2_and_sequential(cms_corpus):
    p = params(h=3, m=96)
    ref = sequential_sketch(corpus_stream(cms_corpus, 6), p)
    d1 = design1_run(cms_corpus, 6, p, workers=4, schedule=adversarial(2))
    d2 = design2_run(cms_corpus, 6, p, workers=2, schedule=adversarial(3))
    for item in {km for km, _ in corpus_stream(cms_corpus, 6)}:
        assert d1.estimate(item) == d2.query(item) == ref.query(item)


def test_design1_query_gathers_from_cell_owners(cms_corpus):
    p = params(h=3, m=90)
    res = design1_run(cms_corpus, 6, p, workers=3)
    item = corpus_stream(cms_corpus, 6)[0][0]
    owners = {res.program.column_owner(j) for j in
              SketchMatrix(p).columns_of(item)}
    before = len(res.sim.events)
    res.query(item, at_worker=0)
    gathers = [ev for ev in res.sim.events[before:] if ev[1] == "gather"]
    assert len(gathers) == len(owners - {0})


def test_design1_partitioned_owner_means_idk(cms_corpus):
    p = params(h=3, m=90)
    res = design1_run(cms_corpus, 6, p, workers=3)
    item = corpus_stream(cms_corpus, 6)[0][0]
    assert isinstance(res.query(item, at_worker=0), Value)
    res.sim.set_partition([(0, 1), (0, 2)])
    out = res.query(item, at_worker=0)
    owners = {res.program.column_owner(j) for j in
              SketchMatrix(p).columns_of(item)}
    if owners - {0}:
        assert out is IDK
    res.sim.heal()
    assert isinstance(res.query(item, at_worker=0), Value)
