"""Scrobbles, grouping, relevancy ordering and recommendations."""

from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tunesearch.profile import (
    Group,
    ProfileStore,
    RelevancyParams,
    ScrobbleEvent,
    UserProfile,
    assign_groups,
    rank_results,
    recommend,
    relevancy,
)

from oracles import relevancy_score


def store_with(users, tunes=("t1", "t2", "t3")):
    st_ = ProfileStore()
    for u in users:
        st_.set_profile(u)
    return st_, set(tunes)


class TestRecordScrobble:
    def test_first_scrobble_counts_once(self):
        store, tunes = store_with([UserProfile("u1")])
        store.record_scrobble(ScrobbleEvent("u1", "t1", 0), tunes)
        assert store.profiles["u1"].scrobble_counts["t1"] == 1
        assert store.popularity["t1"] == 1

    def test_duplicate_event_counts_twice(self):
        store, tunes = store_with([UserProfile("u1")])
        for _ in range(2):
            store.record_scrobble(ScrobbleEvent("u1", "t1", 5), tunes)
        assert store.profiles["u1"].scrobble_counts["t1"] == 2
        assert store.popularity["t1"] == 2

    def test_unknown_user_and_tune_rejected(self):
        store, tunes = store_with([UserProfile("u1")])
        with pytest.raises(ValueError, match="user"):
            store.record_scrobble(ScrobbleEvent("ghost", "t1", 0), tunes)
        with pytest.raises(ValueError, match="tune"):
            store.record_scrobble(ScrobbleEvent("u1", "ghost", 0), tunes)

    def test_random_events_match_tally(self):
        rng = random.Random(13)
        users = [UserProfile(f"u{i}") for i in range(4)]
        tunes = tuple(f"t{i}" for i in range(6))
        store, known = store_with(users, tunes)
        tally_user: dict[tuple[str, str], int] = {}
        tally_pop: dict[str, int] = {}
        for n in range(100):
            uid = rng.choice(users).user_id
            tid = rng.choice(tunes)
            store.record_scrobble(ScrobbleEvent(uid, tid, n), known)
            tally_user[(uid, tid)] = tally_user.get((uid, tid), 0) + 1
            tally_pop[tid] = tally_pop.get(tid, 0) + 1
        for (uid, tid), count in tally_user.items():
            assert store.profiles[uid].scrobble_counts[tid] == count
        assert store.popularity == tally_pop


class TestAssignGroups:
    def test_single_group(self):
        users = [UserProfile(f"u{i}") for i in range(5)]
        groups = assign_groups(users, 1)
        assert len(groups) == 1
        assert sorted(groups[0].members) == [u.user_id for u in users]

    def test_identical_profiles_stay_together(self):
        twins = [
            UserProfile("u1", age=30, preferred_genres=frozenset({"rock"})),
            UserProfile("u2", age=30, preferred_genres=frozenset({"rock"})),
            UserProfile("u3", age=60, preferred_genres=frozenset({"jazz"})),
            UserProfile("u4", age=61, preferred_genres=frozenset({"jazz"})),
        ]
        groups = assign_groups(twins, 2)
        by_user = {uid: g.group_id for g in groups for uid in g.members}
        assert by_user["u1"] == by_user["u2"]

    def test_three_genre_blocks_recovered(self):
        # ids interleave the blocks so deterministic seeding picks one
        # center per block
        genres = {"0": "rock", "1": "jazz", "2": "folk"}
        users = [
            UserProfile(f"u{i:02d}", age=40, preferred_genres=frozenset({genres[str(i % 3)]}))
            for i in range(12)
        ]
        groups = assign_groups(users, 3)
        assert len(groups) == 3
        for g in groups:
            block = {int(uid[1:]) % 3 for uid in g.members}
            assert len(block) == 1
        assert sorted(len(g.members) for g in groups) == [4, 4, 4]

    def test_group_count_capped_at_user_count(self):
        users = [UserProfile("u1"), UserProfile("u2")]
        groups = assign_groups(users, 10)
        members = sorted(uid for g in groups for uid in g.members)
        assert members == ["u1", "u2"]

    def test_partition_property(self):
        rng = random.Random(5)
        pool = ["rock", "jazz", "folk", "pop"]
        users = [
            UserProfile(
                f"u{i:02d}",
                age=rng.randint(15, 75),
                preferred_genres=frozenset(rng.sample(pool, rng.randint(0, 3))),
            )
            for i in range(17)
        ]
        for g in (1, 2, 4, 9):
            groups = assign_groups(users, g)
            members = sorted(uid for grp in groups for uid in grp.members)
            assert members == sorted(u.user_id for u in users)

    def test_empty_and_invalid(self):
        assert assign_groups([], 3) == []
        with pytest.raises(ValueError):
            assign_groups([UserProfile("u1")], 0)


class TestRelevancy:
    def test_exact_match_ceiling(self):
        params = RelevancyParams(alpha=1.0, beta=0.0, gamma=0.0, delta=0.0)
        assert relevancy(0.0, 1.0, 5.0, 9.0, params) == pytest.approx(1.0)

    def test_all_zero_params(self):
        params = RelevancyParams(alpha=0.0, beta=0.0, gamma=0.0, delta=0.0)
        assert relevancy(3.0, 1.0, 2.0, 4.0, params) == 0.0

    def test_matches_term_by_term_oracle(self):
        params = RelevancyParams(alpha=1.1, beta=0.6, gamma=0.25, delta=0.4)
        for dist, gen, listened, pop in [(0.0, 1.0, 3.0, 7.0), (2.5, 0.5, 0.0, 1.0)]:
            want = relevancy_score(dist, gen, listened, pop, 1.1, 0.6, 0.25, 0.4)
            assert relevancy(dist, gen, listened, pop, params) == pytest.approx(want, abs=1e-12)

    def test_normalization_denominators(self):
        params = RelevancyParams(alpha=0.0, beta=0.0, gamma=1.0, delta=1.0)
        got = relevancy(0.0, 0.0, 2.0, 10.0, params, group_size=4, max_pop=20)
        assert got == pytest.approx(2.0 / 4 + 10.0 / 20)

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            relevancy(-0.1, 0, 0, 0, RelevancyParams())

    @given(st.floats(0, 50), st.floats(0.01, 10))
    def test_strictly_decreasing_in_distance(self, dist, bump):
        params = RelevancyParams(alpha=1.0, beta=0.0, gamma=0.0, delta=0.0)
        assert relevancy(dist, 0, 0, 0, params) > relevancy(dist + bump, 0, 0, 0, params)

    def test_strictly_increasing_in_other_terms(self):
        params = RelevancyParams(alpha=1.0, beta=1.0, gamma=1.0, delta=1.0)
        base = relevancy(1.0, 0.5, 2.0, 3.0, params)
        assert relevancy(1.0, 0.6, 2.0, 3.0, params) > base
        assert relevancy(1.0, 0.5, 2.5, 3.0, params) > base
        assert relevancy(1.0, 0.5, 2.0, 3.5, params) > base


def seeded_store():
    users = [
        UserProfile("u1", age=30, preferred_genres=frozenset({"classical"})),
        UserProfile("u2", age=31, preferred_genres=frozenset({"classical"})),
        UserProfile("u3", age=29, preferred_genres=frozenset({"classical"})),
    ]
    tunes = {"ode", "elise", "cali"}
    store, known = store_with(users, tunes)
    for uid, tid, times in [
        ("u2", "ode", 3),
        ("u3", "ode", 1),
        ("u2", "elise", 1),
        ("u1", "cali", 2),
    ]:
        for n in range(times):
            store.record_scrobble(ScrobbleEvent(uid, tid, n), known)
    genres = {"ode": "classical", "elise": "classical", "cali": "rock"}
    return store, genres


class TestRankResults:
    def test_closer_distance_wins_all_else_equal(self):
        store, genres = seeded_store()
        params = RelevancyParams(alpha=1.0, beta=0.0, gamma=0.0, delta=0.0)
        got = store.rank_results([("ode", 2.0), ("elise", 0.5)], "u1", params, genres)
        assert [row[0] for row in got] == ["elise", "ode"]

    def test_peer_scrobbled_wins_when_gamma_positive(self):
        store, genres = seeded_store()
        params = RelevancyParams(alpha=0.0, beta=0.0, gamma=1.0, delta=0.0)
        got = store.rank_results([("ode", 1.0), ("cali", 1.0)], "u1", params, genres)
        assert [row[0] for row in got] == ["ode", "cali"]

    def test_matches_oracle_order_and_scores(self):
        store, genres = seeded_store()
        params = RelevancyParams(alpha=1.0, beta=0.7, gamma=0.4, delta=0.3)
        candidates = [("ode", 1.0), ("elise", 0.0), ("cali", 3.0)]
        got = store.rank_results(candidates, "u1", params, genres, g=1)

        group_size = 3
        max_pop = max(store.popularity.get(t, 0) for t, _ in candidates)
        rows = []
        for tid, dist in candidates:
            gen = 1.0 if genres[tid] == "classical" else 0.0
            peers = [p for uid, p in store.profiles.items() if uid != "u1"]
            listened = sum(1 for p in peers if p.scrobble_counts.get(tid, 0) > 0)
            pop = store.popularity.get(tid, 0)
            want = relevancy_score(
                dist, gen, listened / group_size, pop / max_pop, 1.0, 0.7, 0.4, 0.3
            )
            rows.append((tid, want, dist))
        rows.sort(key=lambda r: (-r[1], r[2], r[0]))
        assert [r[0] for r in got] == [r[0] for r in rows]
        for (_, got_score, _), (_, want_score, _) in zip(got, rows):
            assert abs(got_score - want_score) <= 1e-9

    def test_text_only_distance_counts_as_exact(self):
        store, genres = seeded_store()
        params = RelevancyParams(alpha=1.0, beta=0.0, gamma=0.0, delta=0.0)
        got = store.rank_results([("ode", None), ("cali", 2.0)], "u1", params, genres)
        assert got[0][0] == "ode"
        assert got[0][1] == pytest.approx(1.0)

    def test_user_outside_groups_is_singleton(self):
        store, genres = seeded_store()
        params = RelevancyParams()
        loner = UserProfile("loner")
        store.set_profile(loner)
        got = rank_results(
            [("ode", 0.0)], loner, [Group("g0", ("u1", "u2", "u3"))], params,
            store.profiles, store.popularity, genres,
        )
        assert got[0][0] == "ode"

    def test_unknown_user_rejected(self):
        store, genres = seeded_store()
        with pytest.raises(ValueError, match="unknown user"):
            store.rank_results([("ode", 0.0)], "ghost", RelevancyParams(), genres)


class TestRecommend:
    def test_peer_tunes_ranked_by_listen_count(self):
        store, _ = seeded_store()
        got = store.recommend("u1", top=5, g=1)
        assert got == ["ode", "elise"]

    def test_already_heard_excluded(self):
        store, _ = seeded_store()
        known = {"ode", "elise", "cali"}
        for n in range(2):
            store.record_scrobble(ScrobbleEvent("u1", "ode", 100 + n), known)
        assert store.recommend("u1", top=5, g=1) == ["elise"]

    def test_user_who_heard_everything_gets_nothing(self):
        store, _ = seeded_store()
        known = {"ode", "elise", "cali"}
        for tid in ("ode", "elise"):
            store.record_scrobble(ScrobbleEvent("u1", tid, 50), known)
        assert store.recommend("u1", top=5, g=1) == []

    def test_singleton_group_gets_nothing(self):
        store, _ = seeded_store()
        got = recommend(store.profiles["u1"], [Group("g", ("u1",))], 5, store.profiles)
        assert got == []

    def test_matches_brute_force_tally(self):
        rng = random.Random(23)
        users = [UserProfile(f"u{i}") for i in range(3)]
        tunes = tuple(f"t{i}" for i in range(8))
        store, known = store_with(users, tunes)
        for n in range(60):
            store.record_scrobble(
                ScrobbleEvent(rng.choice(users).user_id, rng.choice(tunes), n), known
            )
        got = store.recommend("u0", top=4, g=1)
        tally: dict[str, int] = {}
        for uid, p in store.profiles.items():
            if uid == "u0":
                continue
            for tid, c in p.scrobble_counts.items():
                tally[tid] = tally.get(tid, 0) + c
        want = sorted(
            (t for t, c in tally.items()
             if c > 0 and store.profiles["u0"].scrobble_counts.get(t, 0) == 0),
            key=lambda t: (-tally[t], t),
        )[:4]
        assert got == want

    def test_truncation(self):
        store, _ = seeded_store()
        assert store.recommend("u1", top=1, g=1) == ["ode"]


class TestProfileValidation:
    def test_sex_enumeration(self):
        with pytest.raises(ValueError, match="sex"):
            UserProfile("u1", sex="q")

    def test_set_profile_preserves_scrobbles(self):
        store, known = store_with([UserProfile("u1")], ("t1",))
        store.record_scrobble(ScrobbleEvent("u1", "t1", 0), known)
        store.set_profile(UserProfile("u1", age=44))
        assert store.profiles["u1"].age == 44
        assert store.profiles["u1"].scrobble_counts == {"t1": 1}
