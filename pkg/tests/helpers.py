"""Random value generators shared by the lattice law tests."""

import random

from calmsim.lattice import (GSet, LMap, LMax, LSet, LWWSet, LWWTokenSet,
                             MVSet, ThresholdLSet, Timestamp, TwoPSet,
                             VersionVector)

ELEMS = list("abcdefgh")


def rand_ts(rng: random.Random) -> Timestamp:
    return Timestamp(rng.randint(0, 12), rng.randint(0, 3))


def rand_vv(rng: random.Random) -> VersionVector:
    return VersionVector.of({w: rng.randint(0, 3) for w in range(3)})


def _subset(rng, pool, hi=4):
    return frozenset(rng.sample(pool, rng.randint(0, min(hi, len(pool)))))


def rand_gset(rng):
    return GSet(_subset(rng, ELEMS))


def random_value(kind, rng: random.Random):
    if kind is LMax:
        return LMax(None) if rng.random() < 0.1 else LMax(rng.randint(-5, 50))
    if kind is LSet:
        return LSet(_subset(rng, ELEMS))
    if kind is LMap:
        return LMap({k: LSet(_subset(rng, ELEMS, 3))
                     for k in rng.sample(ELEMS, rng.randint(0, 3))})
    if kind is ThresholdLSet:
        return ThresholdLSet(_subset(rng, ELEMS), threshold=3)
    if kind is GSet:
        return rand_gset(rng)
    if kind is TwoPSet:
        return TwoPSet(rand_gset(rng), rand_gset(rng))
    if kind is LWWSet:
        return LWWSet(
            frozenset((rng.choice(ELEMS), rand_ts(rng))
                      for _ in range(rng.randint(0, 4))),
            frozenset((rng.choice(ELEMS), rand_ts(rng))
                      for _ in range(rng.randint(0, 4))))
    if kind is MVSet:
        return MVSet(
            frozenset((rng.choice(ELEMS), rand_vv(rng))
                      for _ in range(rng.randint(0, 4))),
            frozenset((rng.choice(ELEMS), rand_vv(rng))
                      for _ in range(rng.randint(0, 4))))
    if kind is LWWTokenSet:
        return LWWTokenSet(
            frozenset((rng.randint(0, 4), rng.randint(0, 99), rand_ts(rng),
                       rng.choice(ELEMS))
                      for _ in range(rng.randint(0, 4))),
            frozenset((rng.randint(0, 4), rand_ts(rng))
                      for _ in range(rng.randint(0, 3))))
    raise ValueError(kind)


LAW_TYPES = (GSet, TwoPSet, LWWSet, MVSet, LWWTokenSet, LMax, LSet, LMap)
