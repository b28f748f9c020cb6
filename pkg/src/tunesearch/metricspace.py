"""Metric space of melody patterns: edit distances, clustering and search.

Each contour notation gets its own space.  Stored patterns are compared with
the symmetric weighted edit distance (so the space is an honest metric under
unit costs); queries are matched into stored patterns with the semi-global
variant that aligns the query against the cheapest substring of the target.

The space is partitioned into clusters seeded at farthest points and refined
around medoids; search prunes whole clusters by comparing the query to
medoids only.  Readers and writers of one space are serialized by an
internal lock so a search never observes a half-merged cluster.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PIT_Q = "PIT_Q"
IOI_Q = "IOI_Q"
BTH = "BTH"
NOTATIONS = (PIT_Q, IOI_Q, BTH)

_SYMBOLS = frozenset("*+-0")

SPACE_MAGIC = "tunesearch.space"
SPACE_VERSION = 1


@dataclass(frozen=True)
class CostModel:
    """Weights of the elementary edit operations."""

    insert_cost: float = 1.0
    delete_cost: float = 1.0
    substitute_cost: float = 1.0

    def __post_init__(self) -> None:
        for name in ("insert_cost", "delete_cost", "substitute_cost"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


UNIT_COSTS = CostModel()


@dataclass(frozen=True)
class Pattern:
    """A contour fragment stored as a tune's melody index entry."""

    notation: str
    tokens: tuple
    tune_id: str = ""
    pattern_id: str = ""

    def __post_init__(self) -> None:
        if self.notation not in NOTATIONS:
            raise ValueError(f"unknown notation {self.notation!r}")
        if not self.tokens:
            raise ValueError("pattern tokens must be non-empty")
        if self.notation == BTH:
            for tok in self.tokens:
                if not (isinstance(tok, tuple) and len(tok) == 2 and all(s in _SYMBOLS for s in tok)):
                    raise ValueError(f"invalid joined-notation token {tok!r}")
        else:
            for tok in self.tokens:
                if tok not in _SYMBOLS:
                    raise ValueError(f"invalid contour token {tok!r}")

    def sort_key(self):
        return (self.tokens, self.tune_id, self.pattern_id)


@dataclass
class Cluster:
    """A medoid-centered group of patterns with coverage radius ``d``."""

    medoid: Pattern
    members: list[Pattern]
    d: float
    seed: Pattern


@dataclass
class PatternSpace:
    """All stored patterns of one notation, partitioned into clusters."""

    notation: str
    clusters: list[Cluster] = field(default_factory=list)
    d0: float = 3.0
    costs: CostModel = UNIT_COSTS
    max_iter: int = 50
    dirty: bool = False
    build_iterations: int = 0
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    def patterns(self) -> list[Pattern]:
        return [p for c in self.clusters for p in c.members]

    def __len__(self) -> int:
        return sum(len(c.members) for c in self.clusters)


# ---------------------------------------------------------------------------
# edit distances


def edit_distance(a: Sequence, b: Sequence, costs: CostModel = UNIT_COSTS) -> float:
    """Weighted edit distance between two token sequences (global alignment)."""
    ins, dele, sub = costs.insert_cost, costs.delete_cost, costs.substitute_cost
    prev = [j * ins for j in range(len(b) + 1)]
    for i in range(1, len(a) + 1):
        cur = [i * dele]
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            cur.append(
                min(
                    prev[j] + dele,
                    cur[j - 1] + ins,
                    prev[j - 1] + (0.0 if ai == b[j - 1] else sub),
                )
            )
        prev = cur
    return float(prev[-1])


def substring_distance(query: Sequence, target: Sequence, costs: CostModel = UNIT_COSTS) -> float:
    """Cheapest edit distance from ``query`` to any contiguous substring of ``target``."""
    ins, dele, sub = costs.insert_cost, costs.delete_cost, costs.substitute_cost
    prev = [0.0] * (len(target) + 1)
    for i in range(1, len(query) + 1):
        cur = [i * dele]
        qi = query[i - 1]
        for j in range(1, len(target) + 1):
            cur.append(
                min(
                    prev[j] + dele,
                    cur[j - 1] + ins,
                    prev[j - 1] + (0.0 if qi == target[j - 1] else sub),
                )
            )
        prev = cur
    return float(min(prev))


# ---------------------------------------------------------------------------
# batched distance kernel
#
# The clustering and search paths need one-query-against-many distances; the
# row-wise DP below runs all targets in lockstep, with the in-row insertion
# chain folded into a prefix minimum.  Results match the scalar functions
# exactly for integer-valued costs.


def _encode(seqs: Sequence[Sequence], vocab: dict) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    width = int(lengths.max()) if len(seqs) else 0
    mat = np.full((len(seqs), width), -1, dtype=np.int64)
    for r, seq in enumerate(seqs):
        for c, tok in enumerate(seq):
            code = vocab.get(tok)
            if code is None:
                code = len(vocab)
                vocab[tok] = code
            mat[r, c] = code
    return mat, lengths


def _batch_distances(
    query: Sequence,
    targets: Sequence[Sequence],
    costs: CostModel,
    substring: bool,
) -> np.ndarray:
    if not targets:
        return np.zeros(0)
    vocab: dict = {}
    tmat, tlen = _encode(targets, vocab)
    q = np.array([vocab.setdefault(tok, len(vocab)) for tok in query], dtype=np.int64)
    ins, dele, sub = costs.insert_cost, costs.delete_cost, costs.substitute_cost
    r, n = tmat.shape
    jcol = np.arange(n + 1, dtype=np.float64)
    if substring:
        dp = np.zeros((r, n + 1))
    else:
        dp = np.tile(jcol * ins, (r, 1))
    ins_ramp = jcol * ins
    for i in range(1, len(q) + 1):
        eq = tmat == q[i - 1]
        stay = np.where(eq, 0.0, sub) + dp[:, :-1]
        drop = dp[:, 1:] + dele
        pre = np.empty_like(dp)
        pre[:, 0] = i * dele
        pre[:, 1:] = np.minimum(stay, drop)
        pre -= ins_ramp
        np.minimum.accumulate(pre, axis=1, out=pre)
        dp = pre + ins_ramp
    if substring:
        dp = np.where(jcol[None, :] <= tlen[:, None], dp, np.inf)
        return dp.min(axis=1)
    return dp[np.arange(r), tlen]


def _pairwise_matrix(patterns: Sequence[Pattern], costs: CostModel) -> np.ndarray:
    token_lists = [p.tokens for p in patterns]
    rows = [_batch_distances(toks, token_lists, costs, substring=False) for toks in token_lists]
    return np.vstack(rows)


# ---------------------------------------------------------------------------
# clustering


class _Proto:
    __slots__ = ("seed", "members", "medoid", "d")

    def __init__(self, seed: int, members: list[int]):
        self.seed = seed
        self.members = members
        self.medoid = seed
        self.d = 0.0


def _farthest_point_pass(indices: np.ndarray, dist: np.ndarray, d0: float) -> list[_Proto]:
    """Seed clusters at farthest points until every index is covered.

    The seed of each round is the still-uncovered point with the largest
    total distance to the other uncovered points; it absorbs every uncovered
    point within ``d0``.
    """
    protos = []
    remaining = indices.copy()
    while remaining.size:
        sums = dist[np.ix_(remaining, remaining)].sum(axis=1)
        seed = int(remaining[int(np.argmax(sums))])
        near = remaining[dist[seed, remaining] <= d0]
        protos.append(_Proto(seed, [int(i) for i in near]))
        remaining = remaining[dist[seed, remaining] > d0]
    return protos


def _medoid_index(members: Sequence[int], dist: np.ndarray) -> int:
    """Member minimizing total distance to the others; ties take the lowest
    index, which is the lexicographically smallest pattern because inputs
    are canonically sorted."""
    idx = np.asarray(members)
    sums = dist[np.ix_(idx, idx)].sum(axis=1)
    return int(idx[int(np.argmin(sums))])


def _merge_pass(protos: list[_Proto], dist: np.ndarray, d0: float) -> None:
    """Join clusters whose medoid falls inside another cluster's radius."""
    changed = True
    while changed:
        changed = False
        for i in range(len(protos)):
            for j in range(len(protos)):
                if i == j:
                    continue
                if dist[protos[i].medoid, protos[j].medoid] <= protos[j].d:
                    target = protos[j]
                    target.members = sorted(set(target.members) | set(protos[i].members))
                    target.medoid = _medoid_index(target.members, dist)
                    target.d = max(d0, float(dist[target.medoid, target.seed]))
                    del protos[i]
                    changed = True
                    break
            if changed:
                break


def build_clusters(
    points: Iterable[Pattern],
    d0: float,
    costs: CostModel = UNIT_COSTS,
    max_iter: int = 50,
) -> PatternSpace:
    """Partition patterns into medoid clusters.

    Pass one covers the space with balls of radius ``d0`` around successive
    farthest points.  Pass two iterates: compute each cluster's medoid and
    radius ``d = max(d0, distance(medoid, seed))``, join clusters whose
    medoid lies inside another's radius, then regather every point to the
    nearest accepting medoid (leftovers re-seed fresh clusters at ``d0``),
    until the medoid set stabilizes or ``max_iter`` passes run.

    Points are ordered canonically before clustering, so the result is a
    deterministic function of the pattern set.
    """
    if d0 <= 0:
        raise ValueError("d0 must be > 0")
    pts = sorted(points, key=Pattern.sort_key)
    notations = {p.notation for p in pts}
    if len(notations) > 1:
        raise ValueError(f"mixed notations in one space: {sorted(notations)}")
    notation = notations.pop() if notations else PIT_Q
    space = PatternSpace(notation, [], d0, costs, max_iter)
    if not pts:
        return space

    dist = _pairwise_matrix(pts, costs)
    protos = _farthest_point_pass(np.arange(len(pts)), dist, d0)

    prev_sig = None
    iterations = 0
    while True:
        iterations += 1
        for c in protos:
            c.medoid = _medoid_index(c.members, dist)
            c.d = max(d0, float(dist[c.medoid, c.seed]))
        _merge_pass(protos, dist, d0)
        sig = tuple(sorted(c.medoid for c in protos))
        if sig == prev_sig or iterations >= max_iter:
            break
        prev_sig = sig

        medoids = np.array([c.medoid for c in protos])
        radii = np.array([c.d for c in protos])
        to_medoid = dist[medoids]
        accept = to_medoid <= radii[:, None]
        choice = np.where(accept, to_medoid, np.inf).argmin(axis=0)
        assigned = accept.any(axis=0)
        regathered = []
        for ci, c in enumerate(protos):
            members = np.flatnonzero((choice == ci) & assigned)
            if members.size:
                fresh = _Proto(c.seed, [int(i) for i in members])
                fresh.medoid = c.medoid
                fresh.d = c.d
                regathered.append(fresh)
        leftovers = np.flatnonzero(~assigned)
        regathered.extend(_farthest_point_pass(leftovers, dist, d0))
        protos = regathered

    for c in protos:
        # a capped run may stop right after a merge; grow d so the radius
        # invariant holds unconditionally (a converged run never needs this)
        reach = float(dist[c.medoid, np.asarray(c.members)].max())
        c.d = max(c.d, reach)

    space.clusters = [
        Cluster(
            medoid=pts[c.medoid],
            members=[pts[i] for i in sorted(c.members)],
            d=c.d,
            seed=pts[c.seed],
        )
        for c in protos
    ]
    space.build_iterations = iterations
    return space


def insert(space: PatternSpace, p: Pattern) -> int:
    """Add a pattern to the cluster with the nearest medoid.

    A pattern landing beyond that cluster's radius is still accepted; the
    radius grows to cover it and the space is flagged for the next rebuild.
    Returns the cluster index.
    """
    if p.notation != space.notation:
        raise ValueError(f"pattern notation {p.notation!r} does not match space {space.notation!r}")
    with space._lock:
        if not space.clusters:
            space.clusters.append(Cluster(medoid=p, members=[p], d=space.d0, seed=p))
            return 0
        dists = _batch_distances(p.tokens, [c.medoid.tokens for c in space.clusters], space.costs, substring=False)
        best = int(np.argmin(dists))
        cluster = space.clusters[best]
        cluster.members.append(p)
        cluster.members.sort(key=Pattern.sort_key)
        if dists[best] > cluster.d:
            cluster.d = float(dists[best])
            space.dirty = True
        return best


def remove_tune(space: PatternSpace, tune_id: str) -> int:
    """Drop every pattern owned by a tune; returns the number removed.

    Clusters losing their medoid get a fresh one; emptied clusters vanish.
    Any change flags the space for rebuild.
    """
    removed = 0
    with space._lock:
        survivors = []
        for c in space.clusters:
            kept = [m for m in c.members if m.tune_id != tune_id]
            removed += len(c.members) - len(kept)
            if not kept:
                continue
            if len(kept) != len(c.members):
                if c.medoid not in kept:
                    dist = _pairwise_matrix(kept, space.costs)
                    c.medoid = kept[_medoid_index(list(range(len(kept))), dist)]
                if c.seed.tune_id == tune_id:
                    c.seed = c.medoid
                reach = max(edit_distance(c.medoid.tokens, m.tokens, space.costs) for m in kept)
                c.d = max(space.d0, reach)
                c.members = kept
            survivors.append(c)
        if removed:
            space.clusters = survivors
            space.dirty = True
    return removed


def rebuild(space: PatternSpace) -> PatternSpace:
    """Repartition the space from scratch over its current members."""
    with space._lock:
        return build_clusters(space.patterns(), space.d0, space.costs, space.max_iter)


def melody_search(space: PatternSpace, query: Pattern, d1: float) -> list[tuple[Pattern, float]]:
    """Search the space around a query pattern.

    Clusters whose medoid is within ``d1`` of the query (plain edit
    distance) contribute all their members; members are scored by aligning
    the query into them (:func:`substring_distance`) and returned sorted
    ascending, ties by owning tune then tokens.
    """
    if query.notation != space.notation:
        raise ValueError(f"query notation {query.notation!r} does not match space {space.notation!r}")
    with space._lock:
        if not space.clusters:
            return []
        med_d = _batch_distances(
            query.tokens, [c.medoid.tokens for c in space.clusters], space.costs, substring=False
        )
        members = [m for c, dm in zip(space.clusters, med_d) if dm <= d1 for m in c.members]
        if not members:
            return []
        scores = _batch_distances(query.tokens, [m.tokens for m in members], space.costs, substring=True)
    hits = sorted(
        zip(members, (float(s) for s in scores)),
        key=lambda ms: (ms[1], ms[0].tune_id, ms[0].tokens, ms[0].pattern_id),
    )
    return hits


# ---------------------------------------------------------------------------
# serialization


def _tokens_to_wire(notation: str, tokens: tuple) -> list:
    if notation == BTH:
        return [list(t) for t in tokens]
    return list(tokens)


def _tokens_from_wire(notation: str, wire: list) -> tuple:
    if notation == BTH:
        return tuple((a, b) for a, b in wire)
    return tuple(wire)


def _pattern_to_wire(p: Pattern) -> dict:
    return {
        "tokens": _tokens_to_wire(p.notation, p.tokens),
        "tune_id": p.tune_id,
        "pattern_id": p.pattern_id,
    }


def _pattern_from_wire(notation: str, obj: dict) -> Pattern:
    return Pattern(
        notation=notation,
        tokens=_tokens_from_wire(notation, obj["tokens"]),
        tune_id=obj["tune_id"],
        pattern_id=obj["pattern_id"],
    )


def space_to_dict(space: PatternSpace) -> dict:
    with space._lock:
        return {
            "magic": SPACE_MAGIC,
            "version": SPACE_VERSION,
            "notation": space.notation,
            "d0": space.d0,
            "max_iter": space.max_iter,
            "dirty": space.dirty,
            "costs": {
                "insert_cost": space.costs.insert_cost,
                "delete_cost": space.costs.delete_cost,
                "substitute_cost": space.costs.substitute_cost,
            },
            "clusters": [
                {
                    "medoid": _pattern_to_wire(c.medoid),
                    "d": c.d,
                    "seed": _pattern_to_wire(c.seed),
                    "members": [_pattern_to_wire(m) for m in c.members],
                }
                for c in space.clusters
            ],
        }


def space_from_dict(obj: dict) -> PatternSpace:
    if obj.get("magic") != SPACE_MAGIC:
        raise ValueError(f"not a pattern-space document (magic {obj.get('magic')!r})")
    if obj.get("version") != SPACE_VERSION:
        raise ValueError(f"unsupported pattern-space version {obj.get('version')!r}")
    notation = obj["notation"]
    costs = CostModel(**obj["costs"])
    space = PatternSpace(
        notation=notation,
        d0=obj["d0"],
        costs=costs,
        max_iter=obj["max_iter"],
        dirty=obj["dirty"],
    )
    for cw in obj["clusters"]:
        space.clusters.append(
            Cluster(
                medoid=_pattern_from_wire(notation, cw["medoid"]),
                members=[_pattern_from_wire(notation, m) for m in cw["members"]],
                d=cw["d"],
                seed=_pattern_from_wire(notation, cw["seed"]),
            )
        )
    return space


def save_space(space: PatternSpace, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(space_to_dict(space), sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )


def load_space(path: str | Path) -> PatternSpace:
    return space_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
