"""Symbolic melody handling: flattening and contour transcription.

A tune enters the system as raw note events (one per played note, any number
of voices).  The functions here reduce those events to a single leading
melody line and derive the three contour notations used for indexing and
search:

* pitch intervals in half-tones relative to the previous note (``PIT``),
* inter-onset intervals in multiples of a data-derived time unit (``IOI``),
* the per-note pairing of the quantized forms of both (``BTH``).

All transcriptions open with the wildcard symbol ``*`` where no predecessor
exists.  Everything in this module is a pure function over immutable inputs
and is safe to call concurrently.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

WILDCARD = "*"
SIGN_SYMBOLS = ("+", "-", "0")

#: onset tolerance (ms) under which two events count as simultaneous
DEFAULT_GRID_MS = 30


def sign_symbol(value) -> str:
    """Map a numeric difference to its contour symbol '+', '-' or '0'."""
    if value > 0:
        return "+"
    if value < 0:
        return "-"
    return "0"


@dataclass(frozen=True)
class NoteEvent:
    """One played note: MIDI-style pitch/velocity with millisecond timing."""

    pitch: int
    onset: int
    duration: int
    loudness: int = 80
    voice: int = 0
    percussive: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if self.onset < 0:
            raise ValueError(f"onset {self.onset} must be >= 0")
        if self.duration <= 0:
            raise ValueError(f"duration {self.duration} must be > 0")
        if not 0 <= self.loudness <= 127:
            raise ValueError(f"loudness {self.loudness} outside 0..127")


@dataclass(frozen=True)
class MonophonicLine:
    """A single-voice melody: strictly increasing onsets, no percussion."""

    events: tuple[NoteEvent, ...]

    def __post_init__(self) -> None:
        prev = None
        for ev in self.events:
            if ev.percussive:
                raise ValueError("percussive event in a melody line")
            if prev is not None and ev.onset <= prev:
                raise ValueError("onsets must be strictly increasing")
            prev = ev.onset

    def __len__(self) -> int:
        return len(self.events)

    def pitches(self) -> list[int]:
        return [ev.pitch for ev in self.events]

    def intervals(self) -> list[int]:
        """Inter-onset gaps; the final note contributes its own duration."""
        evs = self.events
        if not evs:
            return []
        gaps = [evs[i + 1].onset - evs[i].onset for i in range(len(evs) - 1)]
        gaps.append(evs[-1].duration)
        return gaps


@dataclass(frozen=True)
class PitString:
    """Pitch-interval transcription: '*' then signed half-tone steps."""

    tokens: tuple

    def __str__(self) -> str:
        return " ".join(str(t) for t in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def parse(cls, text: str) -> "PitString":
        parts = text.split()
        tokens: list = []
        for i, part in enumerate(parts):
            if part == WILDCARD:
                tokens.append(WILDCARD)
            else:
                tokens.append(int(part))
            if i == 0 and tokens[0] != WILDCARD:
                raise ValueError("pitch-interval string must start with '*'")
        return cls(tuple(tokens))


@dataclass(frozen=True)
class QuantizedPitString:
    """Sign-only pitch contour over the alphabet *, +, -, 0."""

    symbols: str

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self.symbols)

    def __str__(self) -> str:
        return self.symbols

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True)
class IoiString:
    """Inter-onset intervals as positive multiples of ``unit`` milliseconds."""

    tokens: tuple[int, ...]
    unit: Fraction

    def __str__(self) -> str:
        return " ".join(str(t) for t in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def parse(cls, text: str, unit: Fraction | int = 1) -> "IoiString":
        tokens = tuple(int(p) for p in text.split())
        if any(t < 1 for t in tokens):
            raise ValueError("interval multiples must be >= 1")
        return cls(tokens, Fraction(unit))


@dataclass(frozen=True)
class QuantizedIoiString:
    """Sign-only rhythm contour: change of spacing between successive notes."""

    symbols: str

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self.symbols)

    def __str__(self) -> str:
        return self.symbols

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True)
class BthString:
    """Joined notation: per-note (pitch symbol, rhythm symbol) pairs."""

    pairs: tuple[tuple[str, str], ...]

    @property
    def tokens(self) -> tuple[tuple[str, str], ...]:
        return self.pairs

    def __str__(self) -> str:
        return "".join(f"({p},{q})" for p, q in self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class Personality:
    """Variability statistics of a line: spread of pitch and of note spacing."""

    pitch_stddev: float
    ioi_stddev: float


def flatten(events: Iterable[NoteEvent], grid: int = DEFAULT_GRID_MS) -> MonophonicLine:
    """Reduce polyphonic note material to one leading melody line.

    Percussive events are dropped.  Events whose onsets fall into the same
    ``grid``-millisecond cell are collapsed to a single survivor: highest
    pitch wins, ties go to the loudest, then to the earliest onset.
    """
    if grid <= 0:
        raise ValueError("grid must be > 0")
    pitched = sorted(
        (ev for ev in events if not ev.percussive),
        key=lambda ev: (ev.onset, -ev.pitch, -ev.loudness),
    )
    survivors: dict[int, NoteEvent] = {}
    for ev in pitched:
        cell = ev.onset // grid
        cur = survivors.get(cell)
        if cur is None or (ev.pitch, ev.loudness, -ev.onset) > (cur.pitch, cur.loudness, -cur.onset):
            survivors[cell] = ev
    line = tuple(survivors[c] for c in sorted(survivors))
    return MonophonicLine(line)


def transcribe_pit(line: MonophonicLine) -> PitString:
    """Half-tone steps between consecutive notes, '*' for the first."""
    pitches = line.pitches()
    if not pitches:
        return PitString(())
    tokens: list = [WILDCARD]
    tokens.extend(pitches[i] - pitches[i - 1] for i in range(1, len(pitches)))
    return PitString(tuple(tokens))


def quantize_pit(p: PitString) -> QuantizedPitString:
    """Keep only the direction of each pitch step."""
    out = []
    for t in p.tokens:
        out.append(WILDCARD if t == WILDCARD else sign_symbol(t))
    return QuantizedPitString("".join(out))


def _round_half_up(q: Fraction) -> int:
    return int((q + Fraction(1, 2)).__floor__())


def transcribe_ioi(line: MonophonicLine, k: int) -> IoiString:
    """Express note spacing as multiples of the mean of the k shortest gaps.

    The final note has no successor, so its own duration stands in for the
    missing gap.  Multiples are rounded half-up and clamped to 1 so that
    grace notes never produce a zero token.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    intervals = line.intervals()
    if not intervals:
        return IoiString((), Fraction(1))
    shortest = sorted(intervals)[: min(k, len(intervals))]
    unit = Fraction(sum(shortest), len(shortest))
    tokens = tuple(max(1, _round_half_up(Fraction(iv) / unit)) for iv in intervals)
    return IoiString(tokens, unit)


def quantize_ioi(s: IoiString) -> QuantizedIoiString:
    """Keep only the sign of the change between consecutive spacing tokens."""
    if not s.tokens:
        return QuantizedIoiString("")
    out = [WILDCARD]
    out.extend(sign_symbol(s.tokens[i] - s.tokens[i - 1]) for i in range(1, len(s.tokens)))
    return QuantizedIoiString("".join(out))


def transcribe_bth(line: MonophonicLine, k: int) -> BthString:
    """Pair the quantized pitch and rhythm contours note by note."""
    qp = quantize_pit(transcribe_pit(line))
    qi = quantize_ioi(transcribe_ioi(line, k))
    assert len(qp) == len(qi)
    return BthString(tuple(zip(qp.tokens, qi.tokens)))


def extract_patterns(tokens: Sequence, length: int, top: int) -> list[tuple]:
    """Most frequent fixed-length fragments of a transcription.

    Counts every sliding window of exactly ``length`` tokens (overlaps
    included) and returns the ``top`` most frequent, ties broken by earliest
    first occurrence.  A transcription shorter than ``length`` is its own
    single pattern.
    """
    if length < 2:
        raise ValueError("pattern length must be >= 2")
    if top < 1:
        raise ValueError("top must be >= 1")
    toks = tuple(tokens)
    if not toks:
        return []
    if len(toks) < length:
        return [toks]
    counts: dict[tuple, int] = {}
    first_seen: dict[tuple, int] = {}
    for i in range(len(toks) - length + 1):
        window = toks[i : i + length]
        counts[window] = counts.get(window, 0) + 1
        first_seen.setdefault(window, i)
    ranked = sorted(counts, key=lambda w: (-counts[w], first_seen[w]))
    return ranked[:top]


def personality(line: MonophonicLine) -> Personality:
    """Population standard deviation of pitches and of note spacing (ms)."""
    if len(line) < 2:
        return Personality(0.0, 0.0)
    return Personality(
        statistics.pstdev(line.pitches()),
        statistics.pstdev(line.intervals()),
    )


def line_from_transcription(start_pitch: int, pit: PitString, ioi: IoiString) -> MonophonicLine:
    """Rebuild a melody line from its transcriptions.

    Inverse of :func:`transcribe_pit`/:func:`transcribe_ioi` for exact
    (unrounded) data: note i+1 starts ``ioi.tokens[i] * ioi.unit`` ms after
    note i, the final token is the last note's duration, and every other
    note rings until its successor.  All spacings must come out as whole
    milliseconds.
    """
    if len(pit) != len(ioi):
        raise ValueError("pitch and interval transcriptions must have equal length")
    if not pit.tokens:
        return MonophonicLine(())
    if pit.tokens[0] != WILDCARD:
        raise ValueError("pitch-interval string must start with '*'")
    pitches = [start_pitch]
    for step in pit.tokens[1:]:
        pitches.append(pitches[-1] + int(step))
    spans = []
    for tok in ioi.tokens:
        span = Fraction(tok) * ioi.unit
        if span.denominator != 1:
            raise ValueError("interval does not resolve to whole milliseconds")
        spans.append(int(span))
    events = []
    onset = 0
    for i, pitch in enumerate(pitches):
        events.append(NoteEvent(pitch=pitch, onset=onset, duration=spans[i]))
        onset += spans[i]
    return MonophonicLine(tuple(events))


_NOTE_FIELDS = ("onset_ms", "duration_ms", "pitch", "velocity", "channel", "percussive")
_TRUE = {"1", "true", "yes"}
_FALSE = {"0", "false", "no", ""}


def _parse_flag(raw: str, lineno: int) -> bool:
    low = raw.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"line {lineno}: field 'percussive' has invalid value {raw!r}")


def read_note_events(source: str | Path | Iterable[str]) -> list[NoteEvent]:
    """Parse the note-event file format.

    One event per line, comma-separated fields in the order
    ``onset_ms,duration_ms,pitch,velocity,channel,percussive``.  A header
    row naming those fields is accepted (and may reorder columns).  Blank
    lines and lines starting with '#' are skipped.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
        lines = text.splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in source]

    rows: list[tuple[int, str]] = [
        (i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not rows:
        return []

    header = [c.strip().lower() for c in rows[0][1].split(",")]
    has_header = set(header) == set(_NOTE_FIELDS)
    order = header if has_header else list(_NOTE_FIELDS)
    if has_header:
        rows = rows[1:]

    events = []
    for lineno, raw in rows:
        cols = [c.strip() for c in raw.split(",")]
        if len(cols) != len(order):
            raise ValueError(f"line {lineno}: expected {len(order)} fields, got {len(cols)}")
        rec = dict(zip(order, cols))
        vals = {}
        for name in ("onset_ms", "duration_ms", "pitch", "velocity", "channel"):
            try:
                vals[name] = int(rec[name])
            except ValueError:
                raise ValueError(f"line {lineno}: field {name!r} has invalid value {rec[name]!r}") from None
        try:
            events.append(
                NoteEvent(
                    pitch=vals["pitch"],
                    onset=vals["onset_ms"],
                    duration=vals["duration_ms"],
                    loudness=vals["velocity"],
                    voice=vals["channel"],
                    percussive=_parse_flag(rec["percussive"], lineno),
                )
            )
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return events


def render_note_events(events: Iterable[NoteEvent]) -> str:
    """Serialize events to the note-event file format, header included."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_NOTE_FIELDS)
    for ev in events:
        writer.writerow(
            [ev.onset, ev.duration, ev.pitch, ev.loudness, ev.voice, int(ev.percussive)]
        )
    return buf.getvalue()
