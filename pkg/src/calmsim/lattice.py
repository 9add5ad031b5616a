"""Join-semilattice values and CRDT set types.

Every type in this module is a value with a least element (``bottom``), a
merge that is associative, commutative, and idempotent (ACI), and the
induced partial order ``a leq b  iff  merge(a, b) == b``.  Merges are pure:
they return new values and never mutate their operands, so values are safe
to copy between workers and to re-deliver arbitrarily often.

The one deliberate exception is :class:`ThresholdLSet`, whose merge stops
growing once the receiving operand reaches its threshold.  That sacrifices
commutativity; only the predicate ``size >= threshold`` is order-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .errors import LatticeLawError, LatticeTypeError, ThresholdMismatchError


class LatticeValue:
    """Contract shared by every lattice type.

    Subclasses supply ``bottom()`` and ``merge(other)``; ``leq`` is derived
    from the merge.
    """

    @classmethod
    def bottom(cls) -> "LatticeValue":
        raise NotImplementedError

    def merge(self, other: "LatticeValue") -> "LatticeValue":
        raise NotImplementedError

    def leq(self, other: "LatticeValue") -> bool:
        return merge(self, other) == other


def merge(a: LatticeValue, b: LatticeValue) -> LatticeValue:
    """Merge two values of the same lattice type."""
    if type(a) is not type(b):
        raise LatticeTypeError(
            f"cannot merge {type(a).__name__} with {type(b).__name__}"
        )
    return a.merge(b)


# ---------------------------------------------------------------------------
# Basic lattices


@dataclass(frozen=True)
class LMax(LatticeValue):
    """Monotonically increasing integer; merge takes the maximum.

    ``value=None`` is the least element (identity for max).
    """

    value: int | None = None

    @classmethod
    def bottom(cls) -> "LMax":
        return cls()

    def merge(self, other: "LMax") -> "LMax":
        if self.value is None:
            return other
        if other.value is None:
            return self
        return LMax(max(self.value, other.value))


@dataclass(frozen=True)
class LSet(LatticeValue):
    """Grow-only set of opaque elements; merge is union."""

    elems: frozenset = frozenset()

    @classmethod
    def bottom(cls) -> "LSet":
        return cls()

    @classmethod
    def of(cls, elems: Iterable) -> "LSet":
        return cls(frozenset(elems))

    def merge(self, other: "LSet") -> "LSet":
        return LSet(self.elems | other.elems)

    def __len__(self) -> int:
        return len(self.elems)


@dataclass(frozen=True)
class LMap(LatticeValue):
    """Map from key to lattice value; merge is pointwise.

    An absent key behaves as the value lattice's bottom, so keys union and
    values merge per key.
    """

    entries: Mapping[Any, LatticeValue] = field(default_factory=dict)

    @classmethod
    def bottom(cls) -> "LMap":
        return cls()

    def merge(self, other: "LMap") -> "LMap":
        out = dict(self.entries)
        for key, value in other.entries.items():
            cur = out.get(key)
            out[key] = value if cur is None else merge(cur, value)
        return LMap(out)

    def get(self, key, default=None):
        return self.entries.get(key, default)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ThresholdLSet(LatticeValue):
    """Grow-only set that stops absorbing once it holds ``threshold`` elements.

    merge(a, b) is union while ``len(a) < threshold`` and ``a`` unchanged
    otherwise.  The guard reads the left (receiving) operand, so the merge is
    deliberately not commutative.  Two facts survive any merge order:

    - below the threshold the set is exact (all unions apply), and
    - ``len(result) >= threshold`` iff the true distinct count is.
    """

    elems: frozenset = frozenset()
    threshold: int = 1

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError("threshold must be a positive integer")

    @classmethod
    def bottom(cls, threshold: int = 1) -> "ThresholdLSet":
        return cls(frozenset(), threshold)

    def merge(self, other: "ThresholdLSet") -> "ThresholdLSet":
        if self.threshold != other.threshold:
            raise ThresholdMismatchError(
                f"threshold mismatch: {self.threshold} != {other.threshold}"
            )
        if len(self.elems) < self.threshold:
            return ThresholdLSet(self.elems | other.elems, self.threshold)
        return self

    def __len__(self) -> int:
        return len(self.elems)


# ---------------------------------------------------------------------------
# CRDT sets


@dataclass(frozen=True)
class GSet(LatticeValue):
    """Grow-only set of tuples: insertion only, merge is union."""

    elems: frozenset = frozenset()

    @classmethod
    def bottom(cls) -> "GSet":
        return cls()

    @classmethod
    def of(cls, elems: Iterable) -> "GSet":
        return cls(frozenset(elems))

    def add(self, elem) -> "GSet":
        return GSet(self.elems | {elem})

    def merge(self, other: "GSet") -> "GSet":
        return GSet(self.elems | other.elems)

    def __contains__(self, elem) -> bool:
        return elem in self.elems

    def __len__(self) -> int:
        return len(self.elems)


@dataclass(frozen=True)
class TwoPSet(LatticeValue):
    """Two-phase set: a positive G-Set and a tombstone G-Set.

    An element is a member iff it is in ``pos`` and not in ``neg``; once an
    element lands in ``neg`` it can never be a member again.
    """

    pos: GSet = field(default_factory=GSet)
    neg: GSet = field(default_factory=GSet)

    @classmethod
    def bottom(cls) -> "TwoPSet":
        return cls()

    def add(self, elem) -> "TwoPSet":
        return TwoPSet(self.pos.add(elem), self.neg)

    def remove(self, elem) -> "TwoPSet":
        return TwoPSet(self.pos, self.neg.add(elem))

    def merge(self, other: "TwoPSet") -> "TwoPSet":
        return TwoPSet(self.pos.merge(other.pos), self.neg.merge(other.neg))

    def read(self) -> frozenset:
        # Single pass: pos minus tombstones, no fixpoint iteration needed.
        return self.pos.elems - self.neg.elems


@dataclass(frozen=True, order=True)
class Timestamp:
    """Logical timestamp: per-worker monotone counter, worker id tiebreak.

    The lexicographic (time, tiebreak) order is total, and two distinct
    workers can never produce equal timestamps.
    """

    time: int
    tiebreak: int = 0


@dataclass(frozen=True)
class LWWSet(LatticeValue):
    """Last-writer-wins set: timestamped add/remove entries, merge is union.

    An element is a member iff its latest add is later than its latest
    remove.
    """

    pos: frozenset = frozenset()  # of (elem, Timestamp)
    neg: frozenset = frozenset()  # of (elem, Timestamp)

    @classmethod
    def bottom(cls) -> "LWWSet":
        return cls()

    def add(self, elem, ts: Timestamp) -> "LWWSet":
        return LWWSet(self.pos | {(elem, ts)}, self.neg)

    def remove(self, elem, ts: Timestamp) -> "LWWSet":
        return LWWSet(self.pos, self.neg | {(elem, ts)})

    def merge(self, other: "LWWSet") -> "LWWSet":
        return LWWSet(self.pos | other.pos, self.neg | other.neg)

    def read(self) -> frozenset:
        latest_add: dict = {}
        for elem, ts in self.pos:
            if elem not in latest_add or ts > latest_add[elem]:
                latest_add[elem] = ts
        latest_rm: dict = {}
        for elem, ts in self.neg:
            if elem not in latest_rm or ts > latest_rm[elem]:
                latest_rm[elem] = ts
        return frozenset(
            e for e, ts in latest_add.items()
            if e not in latest_rm or ts > latest_rm[e]
        )


@dataclass(frozen=True)
class VersionVector:
    """Per-worker event counters; the partial order of causality."""

    counters: tuple = ()  # sorted tuple of (worker_id, count)

    @classmethod
    def of(cls, counts: Mapping[int, int]) -> "VersionVector":
        return cls(tuple(sorted((w, c) for w, c in counts.items() if c)))

    def get(self, worker: int) -> int:
        for w, c in self.counters:
            if w == worker:
                return c
        return 0

    def leq(self, other: "VersionVector") -> bool:
        return all(c <= other.get(w) for w, c in self.counters)

    def concurrent(self, other: "VersionVector") -> bool:
        return not self.leq(other) and not other.leq(self)

    def bump(self, worker: int) -> "VersionVector":
        counts = dict(self.counters)
        counts[worker] = counts.get(worker, 0) + 1
        return VersionVector.of(counts)


@dataclass(frozen=True)
class MVSet(LatticeValue):
    """Multi-value set: version-vectored add/remove entries.

    Concurrent (causally incomparable) writes are all retained.  A version of
    an element is live unless some remove entry causally dominates it; a read
    surfaces all maximal live versions per element rather than guessing a
    winner.
    """

    pos: frozenset = frozenset()  # of (elem, VersionVector)
    neg: frozenset = frozenset()  # of (elem, VersionVector)

    @classmethod
    def bottom(cls) -> "MVSet":
        return cls()

    def add(self, elem, vv: VersionVector) -> "MVSet":
        return MVSet(self.pos | {(elem, vv)}, self.neg)

    def remove(self, elem, vv: VersionVector) -> "MVSet":
        return MVSet(self.pos, self.neg | {(elem, vv)})

    def merge(self, other: "MVSet") -> "MVSet":
        return MVSet(self.pos | other.pos, self.neg | other.neg)

    def read(self) -> dict:
        removed: dict = {}
        for elem, vv in self.neg:
            removed.setdefault(elem, []).append(vv)
        live: dict = {}
        for elem, vv in self.pos:
            if any(vv.leq(rm) for rm in removed.get(elem, ())):
                continue
            live.setdefault(elem, []).append(vv)
        out = {}
        for elem, versions in live.items():
            maximal = [
                v for v in versions
                if not any(v is not w and v.leq(w) and v != w for w in versions)
            ]
            out[elem] = frozenset(maximal)
        return out


@dataclass(frozen=True)
class LWWTokenSet(LatticeValue):
    """Two-phase set over (token, use) identifiers with LWW liveness.

    Restores full set semantics on top of tombstones: add, remove,
    add-after-remove, and update all work without reading remote state.
    An insert records ``(token, use, ts, payload)`` in ``pos``; a removal
    records ``(token, ts)`` in ``neg`` with a later timestamp.  A token is
    live iff its latest insert timestamp beats its latest removal timestamp,
    and a read reports the payload of the latest insert.
    """

    pos: frozenset = frozenset()  # of (token, use, Timestamp, payload)
    neg: frozenset = frozenset()  # of (token, Timestamp)

    @classmethod
    def bottom(cls) -> "LWWTokenSet":
        return cls()

    def insert(self, token, use, ts: Timestamp, payload) -> "LWWTokenSet":
        """Record a new use of ``token``; no remote read required."""
        return LWWTokenSet(self.pos | {(token, use, ts, payload)}, self.neg)

    def remove(self, token, ts: Timestamp) -> "LWWTokenSet":
        """Tombstone ``token`` as of ``ts``; no remote read required."""
        return LWWTokenSet(self.pos, self.neg | {(token, ts)})

    def merge(self, other: "LWWTokenSet") -> "LWWTokenSet":
        return LWWTokenSet(self.pos | other.pos, self.neg | other.neg)

    def read(self) -> dict:
        latest: dict = {}  # token -> (ts, payload)
        for token, _use, ts, payload in self.pos:
            if token not in latest or ts > latest[token][0]:
                latest[token] = (ts, payload)
        dead: dict = {}
        for token, ts in self.neg:
            if token not in dead or ts > dead[token]:
                dead[token] = ts
        return {
            token: payload
            for token, (ts, payload) in latest.items()
            if token not in dead or ts > dead[token]
        }


# ---------------------------------------------------------------------------
# Custom lattices


def check_merge_laws(merge_fn: Callable, samples: Iterable) -> None:
    """Reject a candidate merge that breaks ACI on the given samples.

    Idempotence is what rules out the tempting sum-as-merge; commutativity
    and associativity are probed on sample pairs/triples.
    """
    samples = list(samples)
    for x in samples:
        if merge_fn(x, x) != x:
            raise LatticeLawError(f"merge is not idempotent on {x!r}")
    for x in samples:
        for y in samples:
            if merge_fn(x, y) != merge_fn(y, x):
                raise LatticeLawError(
                    f"merge is not commutative on {x!r}, {y!r}"
                )
    for x, y, z in zip(samples, samples[1:], samples[2:]):
        if merge_fn(merge_fn(x, y), z) != merge_fn(x, merge_fn(y, z)):
            raise LatticeLawError(
                f"merge is not associative on {x!r}, {y!r}, {z!r}"
            )


def custom_lattice(name: str, bottom_value, merge_fn: Callable, samples=()):
    """Build a lattice class from a raw merge function.

    The merge is checked against the ACI laws on ``samples`` at construction
    time; a non-idempotent merge (e.g. sum) is rejected immediately.
    """
    check_merge_laws(merge_fn, samples)

    @dataclass(frozen=True)
    class _Custom(LatticeValue):
        value: Any = bottom_value

        @classmethod
        def bottom(cls):
            return cls(bottom_value)

        def merge(self, other):
            return _Custom(merge_fn(self.value, other.value))

    _Custom.__name__ = _Custom.__qualname__ = name
    return _Custom
