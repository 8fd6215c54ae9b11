"""Timed multi-tone pulse schedules and their line-oriented text format.

Each pulse is one tone of the drive; tones may overlap in time. A schedule
also carries trailing frame phases (virtual Z rotations) that have no
physical pulse but complete the intended unitary.

Text format, one record per line::

    # molqudit pulse schedule v1
    frame <theta_0> <theta_1> ...
    pulse <t_start_us> <duration_us> <target> <phase_rad> <amplitude_T> <group> <angle_rad>

``target`` is ``f<eta>`` for a labeled transition or ``@<MHz>`` for a bare
carrier. Floats are written with ``repr`` so a round trip is bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

HEADER = "# molqudit pulse schedule v1"


@dataclass(frozen=True)
class PulseEvent:
    """One drive tone.

    ``phase`` is the in-plane rotation-axis phase: 0 rotates about y, and
    ``pi/2`` rotates about -x. ``angle`` is the nominal rotation angle the
    pulse is meant to produce; playback engines recompute the actual angle
    from amplitude, duration and the transition matrix element.
    """

    t_start: float
    duration: float
    transition: int | None = None
    frequency: float | None = None
    phase: float = 0.0
    amplitude: float = 0.0
    group: int = 0
    angle: float = float("nan")

    def __post_init__(self):
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ValueError(f"pulse duration must be positive, got {self.duration}")
        if not self.amplitude >= 0:
            raise ValueError(f"pulse amplitude must be non-negative, got {self.amplitude}")
        if self.transition is None and self.frequency is None:
            raise ValueError("pulse needs a transition label or a carrier frequency")

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    @property
    def t_center(self) -> float:
        return self.t_start + self.duration / 2

    @property
    def target(self) -> str:
        if self.transition is not None:
            return f"f{self.transition}"
        return f"@{self.frequency!r}"


@dataclass(frozen=True)
class PulseSchedule:
    pulses: tuple[PulseEvent, ...] = ()
    frame: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        object.__setattr__(self, "frame", tuple(float(x) for x in self.frame))

    def __len__(self):
        return len(self.pulses)

    @property
    def duration(self) -> float:
        return max((p.t_end for p in self.pulses), default=0.0)

    @property
    def groups(self) -> list[list[PulseEvent]]:
        out: dict[int, list[PulseEvent]] = {}
        for p in self.pulses:
            out.setdefault(p.group, []).append(p)
        return [out[k] for k in sorted(out)]

    def count(self, transition: int | None = None) -> int:
        if transition is None:
            return len(self.pulses)
        return sum(1 for p in self.pulses if p.transition == transition)

    def shifted(self, dt: float) -> "PulseSchedule":
        moved = [
            PulseEvent(p.t_start + dt, p.duration, p.transition, p.frequency,
                       p.phase, p.amplitude, p.group, p.angle)
            for p in self.pulses
        ]
        return PulseSchedule(moved, self.frame)

    def then(self, other: "PulseSchedule", gap: float = 0.0) -> "PulseSchedule":
        """Append ``other`` after this schedule; group ids are renumbered."""
        offset = self.duration + gap if self.pulses else 0.0
        g0 = max((p.group for p in self.pulses), default=-1) + 1
        moved = [
            PulseEvent(p.t_start + offset, p.duration, p.transition, p.frequency,
                       p.phase, p.amplitude, p.group + g0, p.angle)
            for p in other.pulses
        ]
        if self.frame and other.frame:
            raise ValueError("cannot concatenate two schedules that both carry frame phases")
        return PulseSchedule(self.pulses + tuple(moved), self.frame or other.frame)

    def to_text(self) -> str:
        lines = [HEADER]
        if self.frame:
            lines.append("frame " + " ".join(repr(x) for x in self.frame))
        for p in self.pulses:
            lines.append(
                f"pulse {p.t_start!r} {p.duration!r} {p.target} {p.phase!r} "
                f"{p.amplitude!r} {p.group} {p.angle!r}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PulseSchedule":
        pulses = []
        frame: Sequence[float] = ()
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if parts[0] == "frame":
                    frame = [float(x) for x in parts[1:]]
                elif parts[0] == "pulse" and len(parts) == 8:
                    target = parts[3]
                    transition = int(target[1:]) if target.startswith("f") else None
                    frequency = float(target[1:]) if target.startswith("@") else None
                    if transition is None and frequency is None:
                        raise ValueError(f"bad target {target!r}")
                    pulses.append(PulseEvent(
                        float(parts[1]), float(parts[2]), transition, frequency,
                        float(parts[4]), float(parts[5]), int(parts[6]), float(parts[7]),
                    ))
                else:
                    raise ValueError(f"unrecognized record {parts[0]!r}")
            except (ValueError, IndexError) as exc:
                raise ValueError(f"line {n}: {exc}") from exc
        return cls(pulses, frame)


def sequential(groups: Iterable[Sequence[dict]], gap: float = 0.0, t0: float = 0.0) -> PulseSchedule:
    """Build a schedule from groups of simultaneous pulse specs.

    Each spec is a dict of ``PulseEvent`` fields minus ``t_start`` and
    ``group``; pulses in a group start together and the next group starts
    after the longest one ends plus ``gap``.
    """
    t = t0
    pulses = []
    for g, specs in enumerate(groups):
        if not specs:
            continue
        for spec in specs:
            pulses.append(PulseEvent(t_start=t, group=g, **spec))
        t += max(s["duration"] for s in specs) + gap
    return PulseSchedule(pulses)
