import random

import pytest

from calmsim.errors import DivergenceError
from calmsim.lattice import GSet
from calmsim.runtime import NetworkCondition
from calmsim.tables import (DNE, IDK, GlobalTable, PartitionPlan, Value,
                            detect_cycles, detect_skew, evaluate_stratified,
                            lookup, one_shot_eval, parse_rules, plan_query,
                            rewrite_one_shot, switch_partitioning)


def kmer_table(workers=(0, 1, 2, 3), strategy="hash", **kw):
    plan = PartitionPlan(strategy, tuple(workers),
                         column="seq" if strategy != "round_robin" else None,
                         **kw)
    return GlobalTable("kmers", GSet, ("seq", "token"), plan)


# -- planning ---------------------------------------------------------------


def test_hash_partition_on_group_by_is_coordination_free():
    assert plan_query(kmer_table(), "seq").coordination_free


def test_round_robin_needs_coordination():
    assert not plan_query(kmer_table(strategy="round_robin"), "seq").coordination_free


def test_single_worker_always_coordination_free():
    assert plan_query(kmer_table(workers=(0,), strategy="round_robin"),
                      "seq").coordination_free


def test_unknown_column_rejected():
    with pytest.raises(ValueError):
        plan_query(kmer_table(), "nope")


def test_detect_skew():
    t = kmer_table(workers=(0, 1, 2))
    for wid, n in zip((0, 1, 2), (100, 100, 100)):
        t.merge_shard(wid, GSet.of((f"w{wid}", i) for i in range(n)))
    assert not detect_skew(t, 2.0)
    t.merge_shard(0, GSet.of(("hot", i) for i in range(900)))
    assert detect_skew(t, 2.0)  # 1000 > 2 * 366.7


def test_detect_skew_edge_cases():
    assert not detect_skew(kmer_table())  # empty table
    t = kmer_table(workers=(0,))
    t.merge_shard(0, GSet.of([("a", 1)]))
    assert not detect_skew(t)  # one worker: max == mean
    with pytest.raises(ValueError):
        detect_skew(kmer_table(), factor=1.0)


def test_switch_partitioning_keeps_contents():
    t = kmer_table()
    rows = [(f"K{i}", i) for i in range(40)]
    for row in rows:
        t.insert(row)
    before = t.merged()
    t2 = switch_partitioning(
        t, PartitionPlan("round_robin", t.plan.workers))
    assert t2.merged() == before
    assert not plan_query(t2, "seq").coordination_free
    # Switching to the identical plan changes nothing observable.
    t3 = switch_partitioning(t, t.plan)
    assert t3.merged() == before and plan_query(t3, "seq").coordination_free


def test_post_switch_inserts_route_by_new_plan():
    t = kmer_table(workers=(0, 1))
    log = [(f"K{i}", i) for i in range(20)]
    for row in log[:10]:
        t.insert(row)
    t2 = switch_partitioning(t, PartitionPlan("round_robin", (0, 1)))
    for row in log[10:]:
        t2.insert(row)
    assert t2.merged() == GSet.of(log)


# -- tri-state lookups ------------------------------------------------------


def test_lookup_tristates():
    t = kmer_table(workers=(0, 1))
    t.insert(("ATAG", 1))
    owner = t.plan.owner_of_key("ATAG")
    out = lookup(t, "ATAG", at_worker=owner)
    assert isinstance(out, Value) and ("ATAG", 1) in out.payload
    # Absent key, healthy network, key-local plan: a global assertion.
    assert lookup(t, "GGGG", at_worker=0) is DNE
    # Same miss during a partition of the owner: only a local assertion.
    other = 1 - t.plan.owner_of_key("GGGG")
    net = NetworkCondition([(0, 1)])
    assert lookup(t, "GGGG", at_worker=other, net=net) is IDK


def test_lookup_round_robin_miss_is_idk():
    t = kmer_table(workers=(0, 1), strategy="round_robin")
    t.insert(("AAAA", 0))
    assert lookup(t, "CCCC", at_worker=0) is IDK


def test_lookup_never_dne_when_key_exists_anywhere():
    rng = random.Random(2)
    t = kmer_table(workers=(0, 1, 2))
    keys = [f"K{i}" for i in range(30)]
    for i, key in enumerate(keys):
        t.insert((key, i))
    for key in keys:
        for wid in (0, 1, 2):
            out = lookup(t, key, at_worker=wid)
            assert out is not DNE
    # Cross-shard scan agrees: DNE only for keys in no shard.
    for _ in range(20):
        key = f"M{rng.randint(0, 9)}"
        everywhere = any(
            key in {r[0] for r in shard.elems} for shard in t.shards.values())
        assert everywhere == (lookup(t, key, at_worker=0) is not DNE)


# -- dataflow analysis ------------------------------------------------------

RECURSIVE = "cart <= cart - bad\n"
ONE_SHOT = "cart <= added - bad\n"


def test_detect_cycles():
    assert detect_cycles(parse_rules(RECURSIVE)) == [("cart",)]
    assert detect_cycles(parse_rules(ONE_SHOT)) == []
    assert detect_cycles(parse_rules("")) == []


def test_rewrite_one_shot_removes_self_difference():
    g = rewrite_one_shot(parse_rules(RECURSIVE))
    assert detect_cycles(g) == []
    assert g.rewrite_map == {"cart": ("cart_adds", "bad")}


def test_rewrite_leaves_acyclic_graph_unchanged():
    g = parse_rules(ONE_SHOT)
    g2 = rewrite_one_shot(g)
    assert g2.rules == g.rules and not g2.rewrite_map


def test_rewrite_reports_monotone_cycles():
    g = rewrite_one_shot(parse_rules("a <= b\nb <= a\n"))
    assert g.needs_stratification  # not the difference pattern; flagged


def test_shopping_cart_fixpoint():
    env = evaluate_stratified(parse_rules(RECURSIVE),
                              {"cart": {"a", "b", "c"}, "bad": {"b"}})
    assert env["cart"] == {"a", "c"}


def test_no_rules_means_inputs_unchanged():
    env = evaluate_stratified(parse_rules(""), {"x": {1, 2}})
    assert env == {"x": {1, 2}}


def test_one_shot_equals_fixpoint_on_random_instances():
    rng = random.Random(9)
    g1 = parse_rules(RECURSIVE)
    g2 = rewrite_one_shot(g1)
    for _ in range(50):
        added = {rng.randint(0, 30) for _ in range(rng.randint(0, 15))}
        bad = {rng.randint(0, 30) for _ in range(rng.randint(0, 10))}
        fix = evaluate_stratified(g1, {"cart": set(added), "bad": set(bad)})
        once = one_shot_eval(g2, {"cart": set(added), "bad": set(bad)})
        assert fix["cart"] == once["cart"] == added - bad


def test_divergent_fixpoint_hits_cap():
    # x feeds y and back through a difference that keeps oscillating is hard
    # to build with sets; use a tiny cap on a growing union instead.
    g = parse_rules("x <= x + y\n")
    env = evaluate_stratified(g, {"x": {1}, "y": {2}})
    assert env["x"] == {1, 2}
    with pytest.raises(DivergenceError):
        evaluate_stratified(g, {"x": {1}, "y": {2}}, cap=0)
