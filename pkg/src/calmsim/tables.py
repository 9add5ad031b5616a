"""Global tables over CRDTs, partition planning, tri-state lookups, and
dataflow cycle analysis with the one-shot rewrite of self-recursive
difference rules.

A global table is a named collection of tuples whose logical contents are
the merge of all per-worker shards.  The partition plan decides which worker
owns which tuples; when the plan partitions on the grouping column, each
worker's aggregate is complete locally and no communication is needed
("coordination-free" grouping).
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import networkx as nx

from . import lattice
from .errors import DivergenceError
from .hashing import hash64
from .lattice import GSet, LatticeValue, TwoPSet


# ---------------------------------------------------------------------------
# Partitioning


@dataclass(frozen=True)
class PartitionPlan:
    """How tuples of a table are routed to workers.

    strategy is one of ``hash`` / ``range`` (deterministic in the key
    column) or ``round_robin`` (depends only on arrival index).  Range
    boundaries are the upper-exclusive cut points between consecutive
    workers, supplied by the caller.
    """

    strategy: str
    workers: tuple
    column: str | None = None
    boundaries: tuple = ()

    def __post_init__(self):
        if self.strategy not in ("hash", "range", "round_robin"):
            raise ValueError(f"unknown partition strategy {self.strategy!r}")
        if self.strategy in ("hash", "range") and self.column is None:
            raise ValueError(f"{self.strategy} partitioning needs a key column")
        if not self.workers:
            raise ValueError("plan needs at least one worker")

    @property
    def keyed(self) -> bool:
        """True when tuple placement is a function of the key column."""
        return self.strategy in ("hash", "range")

    def owner_of_key(self, key) -> int:
        if self.strategy == "hash":
            return self.workers[hash64(str(key)) % len(self.workers)]
        if self.strategy == "range":
            return self.workers[min(bisect_right(self.boundaries, key),
                                    len(self.workers) - 1)]
        raise ValueError("round_robin placement is not a function of the key")

    def owner_of_arrival(self, index: int) -> int:
        return self.workers[index % len(self.workers)]


@dataclass
class GlobalTable:
    """A named tuple collection typed by CRDT kind, sharded per worker.

    The CRDT kind is fixed at creation.  Shards hold lattice values; the
    logical table contents are the merge of all shards, so re-delivered or
    re-ordered updates cannot corrupt the table.
    """

    name: str
    crdt_kind: type
    schema: tuple
    plan: PartitionPlan
    shards: dict = field(default_factory=dict)
    _arrivals: int = 0

    def __post_init__(self):
        if not issubclass(self.crdt_kind, LatticeValue):
            raise TypeError("crdt_kind must be a lattice type")
        for wid in self.plan.workers:
            self.shards.setdefault(wid, self.crdt_kind.bottom())

    def key_column(self) -> str:
        return self.plan.column if self.plan.column else self.schema[0]

    def owner_of_row(self, row: tuple) -> int:
        if self.plan.keyed:
            idx = self.schema.index(self.plan.column)
            return self.plan.owner_of_key(row[idx])
        wid = self.plan.owner_of_arrival(self._arrivals)
        self._arrivals += 1
        return wid

    def insert(self, row: tuple) -> int:
        """Route a tuple to its owner shard (G-Set tables only); returns the
        owner worker id."""
        if self.crdt_kind is not GSet:
            raise TypeError("direct row insert is only defined for G-Set tables")
        wid = self.owner_of_row(row)
        self.merge_shard(wid, GSet.of([row]))
        return wid

    def merge_shard(self, wid: int, delta: LatticeValue) -> None:
        cur = self.shards.get(wid, self.crdt_kind.bottom())
        self.shards[wid] = lattice.merge(cur, delta)

    def merged(self) -> LatticeValue:
        out = self.crdt_kind.bottom()
        for wid in sorted(self.shards):
            out = lattice.merge(out, self.shards[wid])
        return out

    def shard_sizes(self) -> dict:
        return {wid: _tuple_count(v) for wid, v in self.shards.items()}


def _tuple_count(value: LatticeValue) -> int:
    if isinstance(value, TwoPSet):
        return len(value.pos.elems) + len(value.neg.elems)
    if hasattr(value, "pos"):
        return len(value.pos) + len(value.neg)
    if hasattr(value, "__len__"):
        return len(value)
    return 0


def _shard_rows(value: LatticeValue) -> Iterable:
    """Tuples visible in a shard, for membership lookups."""
    if isinstance(value, GSet):
        return value.elems
    if isinstance(value, TwoPSet):
        return value.read()
    raise TypeError(f"{type(value).__name__} does not support keyed membership")


# ---------------------------------------------------------------------------
# Query planning


@dataclass(frozen=True)
class QueryPlan:
    coordination_free: bool
    plan: PartitionPlan


def plan_query(table: GlobalTable, group_by: str) -> QueryPlan:
    """Decide whether a GROUP BY needs cross-worker communication.

    Grouping is coordination-free when the plan already partitions tuples on
    the grouping column (hash or range), or trivially when there is a single
    worker: every group then lives wholly on one shard.
    """
    if group_by not in table.schema:
        raise ValueError(f"unknown column {group_by!r} in table {table.name!r}")
    free = len(table.plan.workers) == 1 or (
        table.plan.keyed and table.plan.column == group_by
    )
    return QueryPlan(coordination_free=free, plan=table.plan)


def detect_skew(table: GlobalTable, factor: float = 2.0) -> bool:
    """True when the largest shard exceeds ``factor`` times the mean size."""
    if factor <= 1:
        raise ValueError("skew factor must be > 1")
    sizes = list(table.shard_sizes().values())
    if not sizes or sum(sizes) == 0:
        return False
    return max(sizes) > factor * (sum(sizes) / len(sizes))


def switch_partitioning(table: GlobalTable, new: PartitionPlan) -> GlobalTable:
    """Swap the partition plan without moving any existing tuples.

    Only routing of future inserts and the coordination cost of grouped
    queries change; the merged logical contents are untouched.
    """
    return replace(table, plan=new, shards=dict(table.shards))


# ---------------------------------------------------------------------------
# Tri-state lookups


class Tristate:
    __slots__ = ()


@dataclass(frozen=True)
class Value(Tristate):
    payload: Any


class _Absent(Tristate):
    __slots__ = ("_name",)

    def __init__(self, name):
        self._name = name

    def __repr__(self):
        return self._name


#: Global assertion: the key exists nowhere (requires key-locality + healthy net).
DNE = _Absent("DNE")
#: Local assertion: this worker cannot tell.
IDK = _Absent("IDK")


def lookup(table: GlobalTable, key, at_worker: int, net=None) -> Tristate:
    """Keyed membership probe with a tri-state answer instead of an error.

    Returns ``Value(rows)`` when matching tuples are locally visible.  On a
    miss, ``DNE`` is only justified when the plan guarantees the key lives on
    exactly one owner and that owner is reachable; otherwise the honest
    answer is ``IDK``.
    """
    key_idx = table.schema.index(table.key_column())

    def rows_at(wid):
        shard = table.shards.get(wid, table.crdt_kind.bottom())
        return frozenset(r for r in _shard_rows(shard) if r[key_idx] == key)

    local = rows_at(at_worker)
    if local:
        return Value(local)
    if not table.plan.keyed:
        return IDK
    owner = table.plan.owner_of_key(key)
    reachable = net is None or not net.partitioned(at_worker, owner)
    if not reachable:
        return IDK
    owned = rows_at(owner)
    return Value(owned) if owned else DNE


# ---------------------------------------------------------------------------
# Dataflow graphs, cycle detection, one-shot rewrite


@dataclass(frozen=True)
class RuleSpec:
    """One dataflow rule: target receives op(sources).

    op is ``copy`` (one source), ``union``, or ``difference`` (two sources,
    the second negated).
    """

    target: str
    op: str
    sources: tuple

    def edges(self):
        for i, src in enumerate(self.sources):
            kind = "negation" if (self.op == "difference" and i == 1) else "monotone"
            yield (src, self.target, kind)


@dataclass
class DataflowGraph:
    rules: list
    rewrite_map: dict = field(default_factory=dict)
    needs_stratification: list = field(default_factory=list)

    def nodes(self) -> set:
        out = set()
        for r in self.rules:
            out.add(r.target)
            out.update(r.sources)
        return out

    def digraph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes())
        for r in self.rules:
            for src, dst, kind in r.edges():
                g.add_edge(src, dst, kind=kind)
        return g


def parse_rules(text: str) -> DataflowGraph:
    """Parse the one-rule-per-line text form.

    Grammar (see README): ``target <= a``, ``target <= a - b``,
    ``target <= a minus b``, ``target <= a + b``; ``<+`` in place of ``<=``
    defers the rule to the next tick (carried through as metadata for the
    tick-rule engine; pure graph analysis ignores it).
    """
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for arrow in ("<=", "<+"):
            if arrow in line:
                target, rhs = line.split(arrow, 1)
                break
        else:
            raise ValueError(f"line {lineno}: missing <= or <+ in {raw!r}")
        target = target.strip()
        rhs = rhs.replace(" minus ", " - ").strip()
        if " - " in rhs:
            a, b = (s.strip() for s in rhs.split(" - ", 1))
            rules.append(RuleSpec(target, "difference", (a, b)))
        elif " + " in rhs:
            parts = tuple(s.strip() for s in rhs.split(" + "))
            rules.append(RuleSpec(target, "union", parts))
        else:
            rules.append(RuleSpec(target, "copy", (rhs,)))
    return DataflowGraph(rules)


def detect_cycles(g: DataflowGraph) -> list:
    """All simple cycles in the dataflow graph.

    An empty result means the whole graph can be evaluated in a single pass.
    """
    return [tuple(c) for c in nx.simple_cycles(g.digraph())]


def rewrite_one_shot(g: DataflowGraph) -> DataflowGraph:
    """Replace each self-recursive difference ``X := X - Y`` with a
    two-phase-set reading.

    The recursive rule becomes ``X := X_adds - Y`` over a fresh base node
    holding the accumulated inserts: exactly a pos-set minus a tombstone
    set, so a single pass suffices.  Cycles that do not match the pattern
    (e.g. monotone recursion) are left intact and reported in
    ``needs_stratification``.
    """
    taken = g.nodes()
    rules = []
    rewrite_map = {}
    for r in g.rules:
        if r.op == "difference" and r.sources[0] == r.target:
            pos = f"{r.target}_adds"
            while pos in taken:
                pos += "_"
            taken.add(pos)
            rewrite_map[r.target] = (pos, r.sources[1])
            rules.append(RuleSpec(r.target, "difference", (pos, r.sources[1])))
        else:
            rules.append(r)
    out = DataflowGraph(rules, rewrite_map=rewrite_map)
    out.needs_stratification = detect_cycles(out)
    return out


def _eval_rule(rule: RuleSpec, env: Mapping[str, set]) -> set:
    vals = [env.get(s, set()) for s in rule.sources]
    if rule.op == "difference":
        return vals[0] - vals[1]
    out: set = set()
    for v in vals:
        out |= v
    return out


def _seed_env(g: DataflowGraph, inputs: Mapping[str, set]) -> dict:
    env = {n: set() for n in g.nodes()}
    for name, v in inputs.items():
        env[name] = set(v)
    # A rewritten target's accumulated inserts start as the target's input.
    for target, (pos, _neg) in g.rewrite_map.items():
        if not env.get(pos):
            env[pos] = set(inputs.get(target, ()))
    return env


def one_shot_eval(g: DataflowGraph, inputs: Mapping[str, set]) -> dict:
    """Single-pass evaluation, safe when ``detect_cycles(g)`` is empty."""
    env = _seed_env(g, inputs)
    for rule in g.rules:
        env[rule.target] = _eval_rule(rule, env)
    return env


def evaluate_stratified(
    g: DataflowGraph, inputs: Mapping[str, set], cap: int = 10_000
) -> dict:
    """Re-evaluate all rules until no node changes across a full pass."""
    env = _seed_env(g, inputs)
    for _ in range(cap):
        new: dict = {}
        for rule in g.rules:
            val = _eval_rule(rule, env)
            new[rule.target] = new.get(rule.target, set()) | val
        if all(env.get(t) == v for t, v in new.items()):
            return env
        env.update(new)
    raise DivergenceError(f"no fixed point after {cap} passes")
