"""User profiles, scrobble ingestion, grouping and result ordering.

Every listened tune is reported ("scrobbled") into the listener's profile
and a global popularity tally.  Users are grouped by k-means over their
profile features; a user's group peers drive both the recommendation list
and the ``listened`` component of the result-ordering factor

    score = alpha * 1/(1 + distance) + beta * genre_match
          + gamma * listened + delta * popularity

which is evaluated per candidate and sorted descending.  The distance term
uses 1/(1+d) rather than 1/d so an exact melody match scores the finite
maximum ``alpha``; text-only matches count as distance 0.  By default the
listened and popularity counts are normalized (by group size and by the
candidate set's maximum popularity) so the four terms stay commensurate;
raw counts are available behind the ``normalize`` flag.

Scrobble recording is a serialized write; ranking and recommendation only
read.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Collection, Iterable, Mapping, Sequence

import numpy as np

SEXES = ("f", "m", "x")

_KMEANS_CAP = 100


@dataclass(frozen=True)
class ScrobbleEvent:
    """One listen report: who played what, when (unix seconds)."""

    user_id: str
    tune_id: str
    timestamp: int


@dataclass
class UserProfile:
    user_id: str
    age: int = 0
    sex: str = "x"
    preferred_genres: frozenset[str] = frozenset()
    search_history: list[str] = field(default_factory=list)
    scrobble_counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.sex not in SEXES:
            raise ValueError(f"sex must be one of {SEXES}, got {self.sex!r}")
        if self.age < 0:
            raise ValueError("age must be >= 0")


@dataclass(frozen=True)
class Group:
    group_id: str
    members: tuple[str, ...]


@dataclass(frozen=True)
class RelevancyParams:
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.3
    delta: float = 0.2
    normalize: bool = True

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _feature_matrix(profiles: Sequence[UserProfile]) -> np.ndarray:
    genres = sorted({g for p in profiles for g in p.preferred_genres})
    rows = []
    for p in profiles:
        indicator = [1.0 if g in p.preferred_genres else 0.0 for g in genres]
        rows.append(indicator + [p.age / 100.0])
    return np.array(rows)


def assign_groups(profiles: Sequence[UserProfile], g: int) -> list[Group]:
    """Partition users into ``g`` groups by k-means over profile features.

    Features are a genre-preference indicator vector plus normalized age.
    Seeding is deterministic: the first ``g`` users in id order become the
    initial centers.  ``g`` larger than the user count is reduced; clusters
    that end up empty are dropped.
    """
    if g < 1:
        raise ValueError("group count must be >= 1")
    ordered = sorted(profiles, key=lambda p: p.user_id)
    if not ordered:
        return []
    g = min(g, len(ordered))
    feats = _feature_matrix(ordered)
    centers = feats[:g].copy()
    assignment: np.ndarray | None = None
    for _ in range(_KMEANS_CAP):
        dist = np.linalg.norm(feats[:, None, :] - centers[None, :, :], axis=2)
        new_assignment = dist.argmin(axis=1)
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for c in range(g):
            chosen = feats[assignment == c]
            if len(chosen):
                centers[c] = chosen.mean(axis=0)
    assert assignment is not None
    groups = []
    for c in range(g):
        members = tuple(ordered[i].user_id for i in np.flatnonzero(assignment == c))
        if members:
            groups.append(Group(group_id=f"g{len(groups)}", members=members))
    return groups


def relevancy(
    dist: float,
    gen: float,
    listened: float,
    pop: float,
    params: RelevancyParams,
    *,
    group_size: int | None = None,
    max_pop: float | None = None,
) -> float:
    """Evaluate the result-ordering factor; higher is better.

    ``group_size`` and ``max_pop``, when given, normalize the listened and
    popularity counts; pass None for raw mode.
    """
    if dist < 0:
        raise ValueError("distance must be >= 0")
    listened_term = listened / group_size if group_size else listened
    pop_term = pop / max_pop if max_pop else pop
    return (
        params.alpha / (1.0 + dist)
        + params.beta * gen
        + params.gamma * listened_term
        + params.delta * pop_term
    )


def _group_of(user_id: str, groups: Iterable[Group]) -> Group:
    for grp in groups:
        if user_id in grp.members:
            return grp
    return Group(group_id="_self", members=(user_id,))


def _genre_match(profile: UserProfile, tune_genre: str) -> float:
    if not profile.preferred_genres:
        return 0.0
    matched = 1 if tune_genre and tune_genre in profile.preferred_genres else 0
    return matched / len(profile.preferred_genres)


def rank_results(
    candidates: Sequence[tuple[str, float | None]],
    user: UserProfile,
    groups: Iterable[Group],
    params: RelevancyParams,
    profiles: Mapping[str, UserProfile],
    popularity: Mapping[str, int],
    genres: Mapping[str, str],
) -> list[tuple[str, float, float | None]]:
    """Order search candidates by the relevancy factor.

    Candidates are (tune_id, melody distance or None).  Returns
    (tune_id, score, distance) triples sorted by descending score, ties by
    ascending distance then tune id.  A user outside every group counts as
    their own singleton group.
    """
    group = _group_of(user.user_id, groups)
    peers = [profiles[uid] for uid in group.members if uid != user.user_id and uid in profiles]
    max_pop = max((popularity.get(tid, 0) for tid, _ in candidates), default=0)
    scored = []
    for tune_id, dist in candidates:
        gen = _genre_match(user, genres.get(tune_id, ""))
        listened = sum(1 for p in peers if p.scrobble_counts.get(tune_id, 0) > 0)
        pop = popularity.get(tune_id, 0)
        kwargs = (
            {"group_size": len(group.members), "max_pop": max_pop} if params.normalize else {}
        )
        score = relevancy(dist or 0.0, gen, listened, pop, params, **kwargs)
        scored.append((tune_id, score, dist))
    scored.sort(key=lambda row: (-row[1], row[2] if row[2] is not None else 0.0, row[0]))
    return scored


def recommend(
    user: UserProfile,
    groups: Iterable[Group],
    top: int,
    profiles: Mapping[str, UserProfile],
) -> list[str]:
    """Tunes the user's group peers listen to that the user never has.

    Sorted by total peer listen count descending, ties by tune id, truncated
    to ``top``.
    """
    group = _group_of(user.user_id, groups)
    peer_listens: dict[str, int] = {}
    for uid in group.members:
        if uid == user.user_id or uid not in profiles:
            continue
        for tune_id, count in profiles[uid].scrobble_counts.items():
            peer_listens[tune_id] = peer_listens.get(tune_id, 0) + count
    fresh = [
        (tune_id, count)
        for tune_id, count in peer_listens.items()
        if count > 0 and user.scrobble_counts.get(tune_id, 0) == 0
    ]
    fresh.sort(key=lambda tc: (-tc[1], tc[0]))
    return [tune_id for tune_id, _ in fresh[: max(top, 0)]]


class ProfileStore:
    """Mutable holder of profiles, scrobbles and groups."""

    def __init__(self) -> None:
        self.profiles: dict[str, UserProfile] = {}
        self.popularity: dict[str, int] = {}
        self.events: list[ScrobbleEvent] = []
        self.groups: list[Group] | None = None

    def set_profile(self, profile: UserProfile) -> None:
        existing = self.profiles.get(profile.user_id)
        if existing is not None:
            profile.scrobble_counts.update(existing.scrobble_counts)
            profile.search_history[:0] = existing.search_history
        self.profiles[profile.user_id] = profile
        self.groups = None

    def record_scrobble(self, event: ScrobbleEvent, known_tunes: Collection[str]) -> None:
        """Count one listen; both the user and the tune must exist."""
        profile = self.profiles.get(event.user_id)
        if profile is None:
            raise ValueError(f"unknown user {event.user_id!r}")
        if event.tune_id not in known_tunes:
            raise ValueError(f"unknown tune {event.tune_id!r}")
        profile.scrobble_counts[event.tune_id] = profile.scrobble_counts.get(event.tune_id, 0) + 1
        self.popularity[event.tune_id] = self.popularity.get(event.tune_id, 0) + 1
        self.events.append(event)

    def assign_groups(self, g: int) -> list[Group]:
        self.groups = assign_groups(list(self.profiles.values()), g)
        return self.groups

    def groups_or_default(self, g: int) -> list[Group]:
        if self.groups is None:
            self.assign_groups(g)
        return self.groups or []

    def rank_results(
        self,
        candidates: Sequence[tuple[str, float | None]],
        user_id: str,
        params: RelevancyParams,
        genres: Mapping[str, str],
        g: int = 1,
    ) -> list[tuple[str, float, float | None]]:
        user = self.profiles.get(user_id)
        if user is None:
            raise ValueError(f"unknown user {user_id!r}")
        return rank_results(
            candidates, user, self.groups_or_default(g), params, self.profiles,
            self.popularity, genres,
        )

    def recommend(self, user_id: str, top: int, g: int = 1) -> list[str]:
        user = self.profiles.get(user_id)
        if user is None:
            raise ValueError(f"unknown user {user_id!r}")
        return recommend(user, self.groups_or_default(g), top, self.profiles)
