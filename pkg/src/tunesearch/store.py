"""Database assembly and persistence.

A database owns the tune records, the lexical trees (rebuilt from records at
load time), one pattern space per notation, and the profile store.  On disk
it is a directory::

    records.jsonl      header line + one JSON record per tune, id-sorted
    space_pit_q.json   pattern space, quantized pitch contours
    space_ioi_q.json   pattern space, quantized rhythm contours
    space_bth.json     pattern space, joined notation
    profiles.json      profiles, popularity, groups, scrobble log position
    scrobbles.log      header line + "user_id,tune_id,timestamp" lines

Every file opens with a magic string and format version.  Serialization is
deterministic, so saving the same state twice produces identical bytes.
Loading builds a fresh database and fails without side effects on any
corruption; extra scrobble lines appended to the log since the recorded
position are replayed into the counts.  An advisory lock file serializes
writers on the directory.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from . import melody as mel
from . import metricspace as ms
from .metricspace import BTH, IOI_Q, PIT_Q, CostModel, Pattern, PatternSpace
from .profile import Group, ProfileStore, ScrobbleEvent, UserProfile
from .textindex import ROLES, TextIndex, TuneRecord, tokenize

RECORDS_MAGIC = "tunesearch.records"
PROFILES_MAGIC = "tunesearch.profiles"
SCROBBLES_MAGIC = "tunesearch.scrobbles"
FORMAT_VERSION = 1

_SPACE_FILES = {PIT_Q: "space_pit_q.json", IOI_Q: "space_ioi_q.json", BTH: "space_bth.json"}
LOCK_FILE = "lock"


class StoreError(Exception):
    """Base class for persistence failures."""


class CorruptDatabaseError(StoreError):
    """A database file is truncated or otherwise unreadable."""


class VersionMismatchError(StoreError):
    """A database file was written by an incompatible format version."""


class IngestError(StoreError):
    """An input file cannot be parsed; the message names line and field."""


class LockError(StoreError):
    """Another writer holds the database directory."""


class DirectoryLock:
    """Advisory exclusive lock on a database directory."""

    def __init__(self, directory: Path) -> None:
        self.path = directory / LOCK_FILE
        self._fd: int | None = None

    def __enter__(self) -> "DirectoryLock":
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(f"database is locked by another writer ({self.path})") from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        self.path.unlink(missing_ok=True)


@dataclass
class Database:
    """In-memory image of the whole search index."""

    tunes: dict[str, TuneRecord] = field(default_factory=dict)
    index: TextIndex = field(default_factory=TextIndex)
    spaces: dict[str, PatternSpace] = field(default_factory=dict)
    profiles: ProfileStore = field(default_factory=ProfileStore)
    scrobble_log_position: int = 0
    d0: float = 3.0
    costs: CostModel = ms.UNIT_COSTS

    def __post_init__(self) -> None:
        for notation in (PIT_Q, IOI_Q, BTH):
            self.spaces.setdefault(notation, PatternSpace(notation, d0=self.d0, costs=self.costs))

    # -- tune lifecycle -----------------------------------------------------

    def put_record(self, record: TuneRecord, patterns: Iterable[Pattern] = ()) -> None:
        """Install or replace a record and its melody patterns."""
        self.delete_tune(record.tune_id)
        for p in patterns:
            ms.insert(self.spaces[p.notation], p)
        self.tunes[record.tune_id] = record
        self.index.index_tune(record)

    def delete_tune(self, tune_id: str) -> bool:
        if tune_id not in self.tunes:
            return False
        for space in self.spaces.values():
            ms.remove_tune(space, tune_id)
        self.index.remove_tune(tune_id)
        del self.tunes[tune_id]
        return True

    def ingest_tune(
        self,
        metadata_file: str | Path,
        notes_file: str | Path | None = None,
        *,
        k: int = 4,
        pattern_length: int = 8,
        top: int = 3,
        grid: int = mel.DEFAULT_GRID_MS,
    ) -> str:
        """Parse input files, transcribe, extract patterns, index, store.

        Re-ingesting the same files replaces the record without leaving
        orphan patterns.  A tune without notes (or whose melody flattens to
        nothing) is indexed text-only.
        """
        fields = parse_metadata(metadata_file)
        tune_id = fields.pop("id", None) or derive_tune_id(fields)
        patterns: list[Pattern] = []
        if notes_file is not None:
            try:
                events = mel.read_note_events(notes_file)
            except ValueError as exc:
                raise IngestError(f"{notes_file}: {exc}") from None
            line = mel.flatten(events, grid=grid)
            patterns = extract_tune_patterns(line, tune_id, k=k, pattern_length=pattern_length, top=top)
        record = TuneRecord(
            tune_id=tune_id,
            pattern_ids=tuple(p.pattern_id for p in patterns),
            **fields,
        )
        self.put_record(record, patterns)
        return tune_id

    def set_associations(self, tune_id: str, scores: Iterable[tuple[str, float]]) -> None:
        """Write mined associations back to a record and reindex it."""
        record = self.tunes.get(tune_id)
        if record is None:
            raise ValueError(f"unknown tune {tune_id!r}")
        updated = dataclasses.replace(record, associations=tuple(scores))
        self.tunes[tune_id] = updated
        self.index.index_tune(updated)

    def record_scrobble(self, event: ScrobbleEvent) -> None:
        self.profiles.record_scrobble(event, self.tunes)

    def genres(self) -> dict[str, str]:
        return {tid: rec.genre for tid, rec in self.tunes.items()}

    def check_integrity(self) -> None:
        """Raise if cross-references between records and spaces are broken."""
        owned: dict[str, str] = {}
        for notation, space in self.spaces.items():
            for pattern in space.patterns():
                if pattern.tune_id not in self.tunes:
                    raise CorruptDatabaseError(
                        f"pattern {pattern.pattern_id!r} references missing tune {pattern.tune_id!r}"
                    )
                if pattern.pattern_id in owned:
                    raise CorruptDatabaseError(f"pattern id {pattern.pattern_id!r} stored twice")
                owned[pattern.pattern_id] = notation
        for record in self.tunes.values():
            for pid in record.pattern_ids:
                if pid not in owned:
                    raise CorruptDatabaseError(
                        f"tune {record.tune_id!r} references missing pattern {pid!r}"
                    )


def extract_tune_patterns(
    line: mel.MonophonicLine,
    tune_id: str,
    *,
    k: int = 4,
    pattern_length: int = 8,
    top: int = 3,
) -> list[Pattern]:
    """Transcribe a line in all three notations and cut index patterns."""
    if len(line) < 2:
        return []
    sources = {
        PIT_Q: mel.quantize_pit(mel.transcribe_pit(line)).tokens,
        IOI_Q: mel.quantize_ioi(mel.transcribe_ioi(line, k)).tokens,
        BTH: mel.transcribe_bth(line, k).tokens,
    }
    patterns = []
    for notation, tokens in sources.items():
        for i, frag in enumerate(mel.extract_patterns(tokens, pattern_length, top)):
            patterns.append(
                Pattern(
                    notation=notation,
                    tokens=frag,
                    tune_id=tune_id,
                    pattern_id=f"{tune_id}:{notation}:{i}",
                )
            )
    return patterns


# ---------------------------------------------------------------------------
# input files

_ROLE_KEYS = {"composer", "lyricist", "performer"}
_SCALAR_KEYS = {"id", "title", "lyrics", "genre", "company"}
_RELEASE_KEYS = {"release_kind", "release_name", "release_year"}


def parse_metadata(path: str | Path) -> dict:
    """Parse a "key: value" metadata file into TuneRecord field values.

    Keys: id, title, lyrics, genre, company (scalar); composer, lyricist,
    performer, performance (repeatable); release_kind, release_name,
    release_year.  A performance value is "event|date".
    """
    fields: dict = {}
    artists: list[tuple[str, str]] = []
    performances: list[tuple[str, str]] = []
    release: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        key = key.strip().lower()
        value = value.strip()
        if not sep:
            raise IngestError(f"{path}: line {lineno}: expected 'key: value', got {raw!r}")
        if key in _SCALAR_KEYS:
            fields[key] = value
        elif key in _ROLE_KEYS:
            artists.append((value, key))
        elif key == "performance":
            event, sep2, date = value.partition("|")
            if not sep2:
                raise IngestError(
                    f"{path}: line {lineno}: field 'performance' must be 'event|date'"
                )
            performances.append((event.strip(), date.strip()))
        elif key in _RELEASE_KEYS:
            release[key] = value
        else:
            raise IngestError(f"{path}: line {lineno}: unknown field {key!r}")
    if artists:
        fields["artists"] = tuple(artists)
    if performances:
        fields["performances"] = tuple(performances)
    if release:
        if "release_kind" not in release or "release_name" not in release:
            raise IngestError(f"{path}: field 'release' needs release_kind and release_name")
        try:
            year = int(release.get("release_year", "0"))
        except ValueError:
            raise IngestError(f"{path}: field 'release_year' must be an integer") from None
        fields["release"] = (release["release_kind"], release["release_name"], year)
    return fields


def derive_tune_id(fields: dict) -> str:
    """Deterministic id from title plus first performer (or any artist)."""
    parts = tokenize(fields.get("title", ""))
    artists = fields.get("artists", ())
    performers = [name for name, role in artists if role == "performer"]
    named = performers[0] if performers else (artists[0][0] if artists else "")
    parts.extend(tokenize(named))
    slug = "-".join(parts)
    if not slug:
        raise IngestError("metadata has neither id nor title to derive an id from")
    return slug


# ---------------------------------------------------------------------------
# persistence

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _record_to_wire(r: TuneRecord) -> dict:
    return {
        "tune_id": r.tune_id,
        "title": r.title,
        "lyrics": r.lyrics,
        "genre": r.genre,
        "artists": [list(a) for a in r.artists],
        "release": list(r.release) if r.release else None,
        "performances": [list(p) for p in r.performances],
        "company": r.company,
        "associations": [[w, d] for w, d in r.associations],
        "pattern_ids": list(r.pattern_ids),
    }


def _record_from_wire(obj: dict) -> TuneRecord:
    return TuneRecord(
        tune_id=obj["tune_id"],
        title=obj["title"],
        lyrics=obj["lyrics"],
        genre=obj["genre"],
        artists=tuple((n, r) for n, r in obj["artists"]),
        release=tuple(obj["release"]) if obj["release"] else None,
        performances=tuple((e, d) for e, d in obj["performances"]),
        company=obj["company"],
        associations=tuple((w, d) for w, d in obj["associations"]),
        pattern_ids=tuple(obj["pattern_ids"]),
    )


def save(db: Database, path: str | Path) -> None:
    """Write the database directory; layout documented in the module docstring."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    with DirectoryLock(directory):
        ids = sorted(db.tunes)
        records_lines = [_dump({"magic": RECORDS_MAGIC, "version": FORMAT_VERSION, "count": len(ids)})]
        records_lines += [_dump(_record_to_wire(db.tunes[tid])) for tid in ids]
        (directory / "records.jsonl").write_text("\n".join(records_lines) + "\n", encoding="utf-8")

        for notation, name in _SPACE_FILES.items():
            ms.save_space(db.spaces[notation], directory / name)

        profs = db.profiles
        profiles_doc = {
            "magic": PROFILES_MAGIC,
            "version": FORMAT_VERSION,
            "log_position": len(profs.events),
            "popularity": dict(sorted(profs.popularity.items())),
            "groups": (
                None
                if profs.groups is None
                else [{"group_id": g.group_id, "members": list(g.members)} for g in profs.groups]
            ),
            "profiles": {
                uid: {
                    "age": p.age,
                    "sex": p.sex,
                    "preferred_genres": sorted(p.preferred_genres),
                    "search_history": list(p.search_history),
                    "scrobble_counts": dict(sorted(p.scrobble_counts.items())),
                }
                for uid, p in sorted(profs.profiles.items())
            },
        }
        (directory / "profiles.json").write_text(_dump(profiles_doc) + "\n", encoding="utf-8")

        log_lines = [f"#{SCROBBLES_MAGIC}:{FORMAT_VERSION}"]
        log_lines += [f"{e.user_id},{e.tune_id},{e.timestamp}" for e in profs.events]
        (directory / "scrobbles.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
        db.scrobble_log_position = len(profs.events)


def _read_json(path: Path, magic: str) -> dict:
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CorruptDatabaseError(f"missing database file {path.name}") from None
    except json.JSONDecodeError as exc:
        raise CorruptDatabaseError(f"{path.name}: {exc}") from None
    if obj.get("magic") != magic:
        raise CorruptDatabaseError(f"{path.name}: wrong magic {obj.get('magic')!r}")
    if obj.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path.name}: format version {obj.get('version')!r}, expected {FORMAT_VERSION}"
        )
    return obj


def _parse_scrobble_line(line: str, lineno: int) -> ScrobbleEvent:
    parts = line.split(",")
    if len(parts) != 3:
        raise CorruptDatabaseError(f"scrobbles.log: line {lineno}: expected 3 fields")
    try:
        stamp = int(parts[2])
    except ValueError:
        raise CorruptDatabaseError(f"scrobbles.log: line {lineno}: bad timestamp") from None
    return ScrobbleEvent(parts[0], parts[1], stamp)


def load(path: str | Path) -> Database:
    """Read a database directory written by :func:`save`.

    The result is built up privately and returned only on full success, so a
    corrupt file never leaves a half-loaded database behind.
    """
    directory = Path(path)
    rec_path = directory / "records.jsonl"
    try:
        rec_lines = rec_path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise CorruptDatabaseError(f"missing database file {rec_path.name}") from None
    if not rec_lines:
        raise CorruptDatabaseError("records.jsonl: empty file")
    try:
        header = json.loads(rec_lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptDatabaseError(f"records.jsonl: header: {exc}") from None
    if header.get("magic") != RECORDS_MAGIC:
        raise CorruptDatabaseError(f"records.jsonl: wrong magic {header.get('magic')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"records.jsonl: format version {header.get('version')!r}, expected {FORMAT_VERSION}"
        )
    body = [ln for ln in rec_lines[1:] if ln.strip()]
    if len(body) != header.get("count"):
        raise CorruptDatabaseError(
            f"records.jsonl: truncated ({len(body)} records, header says {header.get('count')})"
        )

    db = Database()
    for i, line in enumerate(body, start=2):
        try:
            record = _record_from_wire(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptDatabaseError(f"records.jsonl: line {i}: {exc}") from None
        db.tunes[record.tune_id] = record
        db.index.index_tune(record)

    for notation, name in _SPACE_FILES.items():
        space_path = directory / name
        try:
            space = ms.load_space(space_path)
        except FileNotFoundError:
            raise CorruptDatabaseError(f"missing database file {name}") from None
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorruptDatabaseError(f"{name}: {exc}") from None
        except ValueError as exc:
            if "version" in str(exc):
                raise VersionMismatchError(f"{name}: {exc}") from None
            raise CorruptDatabaseError(f"{name}: {exc}") from None
        if space.notation != notation:
            raise CorruptDatabaseError(f"{name}: holds notation {space.notation!r}")
        db.spaces[notation] = space
    db.d0 = db.spaces[PIT_Q].d0
    db.costs = db.spaces[PIT_Q].costs

    pdoc = _read_json(directory / "profiles.json", PROFILES_MAGIC)
    try:
        for uid, pw in pdoc["profiles"].items():
            db.profiles.profiles[uid] = UserProfile(
                user_id=uid,
                age=pw["age"],
                sex=pw["sex"],
                preferred_genres=frozenset(pw["preferred_genres"]),
                search_history=list(pw["search_history"]),
                scrobble_counts=dict(pw["scrobble_counts"]),
            )
        db.profiles.popularity = dict(pdoc["popularity"])
        if pdoc["groups"] is not None:
            db.profiles.groups = [
                Group(group_id=gw["group_id"], members=tuple(gw["members"])) for gw in pdoc["groups"]
            ]
        position = int(pdoc["log_position"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptDatabaseError(f"profiles.json: {exc}") from None

    log_path = directory / "scrobbles.log"
    try:
        log_lines = log_path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise CorruptDatabaseError("missing database file scrobbles.log") from None
    if not log_lines or not log_lines[0].startswith(f"#{SCROBBLES_MAGIC}:"):
        raise CorruptDatabaseError("scrobbles.log: missing header")
    if log_lines[0] != f"#{SCROBBLES_MAGIC}:{FORMAT_VERSION}":
        raise VersionMismatchError(f"scrobbles.log: unsupported header {log_lines[0]!r}")
    entries = [ln for ln in log_lines[1:] if ln.strip()]
    if len(entries) < position:
        raise CorruptDatabaseError(
            f"scrobbles.log: truncated ({len(entries)} entries, position says {position})"
        )
    events = [_parse_scrobble_line(ln, i + 2) for i, ln in enumerate(entries)]
    db.profiles.events = events[:position]
    # replay entries appended since the recorded position
    for event in events[position:]:
        db.profiles.record_scrobble(event, db.tunes)
    db.scrobble_log_position = len(db.profiles.events)

    db.check_integrity()
    return db
