"""Ingest, persistence round trips and failure atomicity."""

from __future__ import annotations

import json

import pytest

from tunesearch import store as st
from tunesearch.fixtures import ode_to_joy_line
from tunesearch.melody import render_note_events
from tunesearch.metricspace import BTH, IOI_Q, PIT_Q
from tunesearch.profile import ScrobbleEvent, UserProfile
from tunesearch.query import execute, parse, to_dnf
from tunesearch.store import (
    CorruptDatabaseError,
    Database,
    DirectoryLock,
    IngestError,
    LockError,
    VersionMismatchError,
    load,
    parse_metadata,
    save,
)

ODE_META = """\
title: Ode to Joy
genre: classical
composer: Ludwig van Beethoven
lyricist: Friedrich Schiller
release_kind: album
release_name: Ninth Symphony
release_year: 1824
performance: Proms|1989-12-25
company: Harmonia
lyrics: freude schoener goetterfunken
"""


def write_ode_inputs(tmp_path):
    meta = tmp_path / "ode.meta"
    meta.write_text(ODE_META)
    notes = tmp_path / "ode.notes"
    notes.write_text(render_note_events(ode_to_joy_line().events))
    return meta, notes


class TestParseMetadata:
    def test_all_fields(self, tmp_path):
        meta, _ = write_ode_inputs(tmp_path)
        fields = parse_metadata(meta)
        assert fields["title"] == "Ode to Joy"
        assert fields["artists"] == (
            ("Ludwig van Beethoven", "composer"),
            ("Friedrich Schiller", "lyricist"),
        )
        assert fields["release"] == ("album", "Ninth Symphony", 1824)
        assert fields["performances"] == (("Proms", "1989-12-25"),)

    def test_unknown_key_names_line(self, tmp_path):
        path = tmp_path / "bad.meta"
        path.write_text("title: x\nmood: blue\n")
        with pytest.raises(IngestError, match="line 2.*mood"):
            parse_metadata(path)

    def test_missing_separator_names_line(self, tmp_path):
        path = tmp_path / "bad.meta"
        path.write_text("just words\n")
        with pytest.raises(IngestError, match="line 1"):
            parse_metadata(path)

    def test_bad_performance_shape(self, tmp_path):
        path = tmp_path / "bad.meta"
        path.write_text("title: x\nperformance: no separator\n")
        with pytest.raises(IngestError, match="performance"):
            parse_metadata(path)


class TestIngest:
    def test_full_ingest_populates_all_spaces(self, tmp_path):
        db = Database()
        meta, notes = write_ode_inputs(tmp_path)
        tune_id = db.ingest_tune(meta, notes)
        record = db.tunes[tune_id]
        assert record.pattern_ids
        for notation in (PIT_Q, IOI_Q, BTH):
            owned = [p for p in db.spaces[notation].patterns() if p.tune_id == tune_id]
            assert owned, notation
        db.check_integrity()

    def test_metadata_only_ingest_is_text_searchable(self, tmp_path):
        db = Database()
        meta, _ = write_ode_inputs(tmp_path)
        tune_id = db.ingest_tune(meta)
        assert db.index.lookup("title", "joy") == {tune_id}
        assert db.tunes[tune_id].pattern_ids == ()
        assert all(len(s) == 0 for s in db.spaces.values())

    def test_reingest_replaces_without_orphans(self, tmp_path):
        db = Database()
        meta, notes = write_ode_inputs(tmp_path)
        first = db.ingest_tune(meta, notes)
        second = db.ingest_tune(meta, notes)
        assert first == second
        for notation in (PIT_Q, IOI_Q, BTH):
            owned = [p for p in db.spaces[notation].patterns() if p.tune_id == first]
            ids = [p.pattern_id for p in owned]
            assert len(ids) == len(set(ids))
        db.check_integrity()

    def test_id_derived_from_title_and_performer(self):
        assert st.derive_tune_id({"title": "Ode to Joy"}) == "ode-to-joy"
        fields = {"title": "Ode", "artists": (("X Y", "performer"),)}
        assert st.derive_tune_id(fields) == "ode-x-y"

    def test_bad_notes_file_names_line(self, tmp_path):
        db = Database()
        meta, _ = write_ode_inputs(tmp_path)
        notes = tmp_path / "bad.notes"
        notes.write_text("0,250,64,80,0,0\nnot,a,note,line,at,all\n")
        with pytest.raises(IngestError, match="line 2"):
            db.ingest_tune(meta, notes)


def fixture_db(tmp_path):
    db = Database()
    meta, notes = write_ode_inputs(tmp_path)
    db.ingest_tune(meta, notes)
    meta2 = tmp_path / "other.meta"
    meta2.write_text("title: Some Rock Song\ngenre: rock\nperformer: The Band\n")
    db.ingest_tune(meta2)
    db.profiles.set_profile(UserProfile("u1", age=30, preferred_genres=frozenset({"classical"})))
    db.profiles.set_profile(UserProfile("u2", age=31))
    db.record_scrobble(ScrobbleEvent("u1", "ode-to-joy", 100))
    db.record_scrobble(ScrobbleEvent("u2", "ode-to-joy", 101))
    db.record_scrobble(ScrobbleEvent("u2", "some-rock-song-the-band", 102))
    db.set_associations("ode-to-joy", [("liveaid", 1.25)])
    return db


QUERIES = [
    "[ALBUM]Ninth",
    "joy",
    "beethoven or band",
    "classical !rock",
    "liveaid",
]


def run_queries(db):
    out = {}
    for q in QUERIES:
        out[q] = execute(to_dnf(parse(q)), db.index, db.spaces, d1=10.0)
    return out


class TestSaveLoad:
    def test_empty_round_trip(self, tmp_path):
        db = Database()
        save(db, tmp_path / "db")
        loaded = load(tmp_path / "db")
        assert loaded.tunes == {}
        assert all(len(s) == 0 for s in loaded.spaces.values())

    def test_round_trip_preserves_query_answers(self, tmp_path):
        db = fixture_db(tmp_path)
        save(db, tmp_path / "db")
        loaded = load(tmp_path / "db")
        assert run_queries(loaded) == run_queries(db)
        assert loaded.tunes == db.tunes
        assert loaded.profiles.popularity == db.profiles.popularity
        assert loaded.profiles.events == db.profiles.events
        loaded.check_integrity()

    def test_double_save_is_byte_identical(self, tmp_path):
        db = fixture_db(tmp_path)
        save(db, tmp_path / "a")
        save(db, tmp_path / "b")
        files_a = sorted(p.name for p in (tmp_path / "a").iterdir())
        files_b = sorted(p.name for p in (tmp_path / "b").iterdir())
        assert files_a == files_b
        for name in files_a:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_save_load_save_is_byte_identical(self, tmp_path):
        db = fixture_db(tmp_path)
        save(db, tmp_path / "a")
        save(load(tmp_path / "a"), tmp_path / "b")
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_truncated_records_fail_atomically(self, tmp_path):
        db = fixture_db(tmp_path)
        save(db, tmp_path / "db")
        rec = tmp_path / "db" / "records.jsonl"
        lines = rec.read_text().splitlines()
        rec.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(CorruptDatabaseError, match="truncated"):
            load(tmp_path / "db")

    def test_truncated_space_file_fails(self, tmp_path):
        db = fixture_db(tmp_path)
        save(db, tmp_path / "db")
        sp = tmp_path / "db" / "space_pit_q.json"
        sp.write_text(sp.read_text()[: 40])
        with pytest.raises(CorruptDatabaseError):
            load(tmp_path / "db")

    def test_version_mismatch_distinct_error(self, tmp_path):
        db = fixture_db(tmp_path)
        save(db, tmp_path / "db")
        rec = tmp_path / "db" / "records.jsonl"
        lines = rec.read_text().splitlines()
        header = json.loads(lines[0])
        header["version"] = 99
        rec.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        with pytest.raises(VersionMismatchError):
            load(tmp_path / "db")

    def test_appended_scrobbles_replayed_on_load(self, tmp_path):
        db = fixture_db(tmp_path)
        save(db, tmp_path / "db")
        with (tmp_path / "db" / "scrobbles.log").open("a") as fh:
            fh.write("u1,ode-to-joy,200\n")
        loaded = load(tmp_path / "db")
        assert loaded.profiles.popularity["ode-to-joy"] == db.profiles.popularity["ode-to-joy"] + 1
        assert loaded.profiles.profiles["u1"].scrobble_counts["ode-to-joy"] == 2

    def test_lock_blocks_second_writer(self, tmp_path):
        db = fixture_db(tmp_path)
        target = tmp_path / "db"
        target.mkdir()
        with DirectoryLock(target):
            with pytest.raises(LockError):
                save(db, target)
        save(db, target)


class TestIntegrity:
    def test_detects_pattern_for_missing_tune(self, tmp_path):
        db = fixture_db(tmp_path)
        del db.tunes["ode-to-joy"]
        with pytest.raises(CorruptDatabaseError, match="missing tune"):
            db.check_integrity()

    def test_delete_tune_keeps_integrity(self, tmp_path):
        db = fixture_db(tmp_path)
        assert db.delete_tune("ode-to-joy")
        db.check_integrity()
        assert db.index.lookup("title", "joy") == set()
