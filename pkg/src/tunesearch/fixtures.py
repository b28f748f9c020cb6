"""Bundled reference melody: a 32-note fragment of Beethoven's Ode to Joy.

The line is reconstructed from its own transcriptions (start pitch E4,
quarter-note unit of 250 ms, final note held four units), which makes the
fragment an exact round-trip case for the transcription functions.  It is
used by the test suite and by the demo scripts.
"""

from __future__ import annotations

from fractions import Fraction

from .melody import IoiString, MonophonicLine, PitString, line_from_transcription

ODE_TO_JOY_START_PITCH = 64
ODE_TO_JOY_UNIT_MS = 250

ODE_TO_JOY_PIT = (
    "* 0 2 -4 2 2 1 -1 -4 2 2 1 -1 -2 -2 2 -7"
    " 9 0 1 2 0 -2 -1 -2 -2 0 2 2 -2 -2 0"
)

ODE_TO_JOY_IOI = (
    "2 2 2 2 2 1 1 2 2 2 1 1 2 2 2 2 4"
    " 2 2 2 2 2 2 2 2 2 2 2 2 2 1 4"
)


def ode_to_joy_line() -> MonophonicLine:
    """The reference 32-note melody line."""
    pit = PitString.parse(ODE_TO_JOY_PIT)
    ioi = IoiString.parse(ODE_TO_JOY_IOI, unit=Fraction(ODE_TO_JOY_UNIT_MS))
    return line_from_transcription(ODE_TO_JOY_START_PITCH, pit, ioi)
