"""SVG piano-roll rendering.

Output is a plain string built from fixed-precision numbers, so the same
score and spec always produce byte-identical SVG. Velocity maps to fill
opacity through an affine ramp that never drops below ``opacity_floor``;
notes outside the pitch range are clamped to the nearest edge row and drawn
with a dashed outline so they stay visible without distorting the scale.
"""

from __future__ import annotations

from dataclasses import dataclass

from .midi import MidiScore

NOTE_FILL = "#2b6cb0"
GRID_COLOR = "#d0d0d0"
EDGE_COLOR = "#444444"


@dataclass(frozen=True)
class RollSpec:
    width: int = 1000
    height: int = 600
    pitch_min: int = 36
    pitch_max: int = 96
    time_span_sec: float = 10.0
    opacity_floor: float = 0.2

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("canvas must be at least 1x1")
        if self.pitch_min >= self.pitch_max:
            raise ValueError(f"pitch range [{self.pitch_min}, "
                             f"{self.pitch_max}] is empty")
        if self.time_span_sec <= 0:
            raise ValueError("time_span_sec must be positive")
        if not 0.0 <= self.opacity_floor < 1.0:
            raise ValueError("opacity_floor must be in [0, 1)")

    @property
    def rows(self) -> int:
        return self.pitch_max - self.pitch_min + 1

    @property
    def row_height(self) -> float:
        return self.height / self.rows

    def x(self, sec: float) -> float:
        return sec / self.time_span_sec * self.width

    def y(self, pitch: int) -> float:
        return (self.pitch_max - pitch) * self.row_height

    def opacity(self, velocity: int) -> float:
        return self.opacity_floor + (1.0 - self.opacity_floor) * velocity / 127.0


def _f(value: float) -> str:
    return f"{value:.2f}"


def piano_roll_svg(score: MidiScore, spec: RollSpec = RollSpec()) -> str:
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{spec.width}" '
        f'height="{spec.height}" viewBox="0 0 {spec.width} {spec.height}">',
        f'<rect x="0" y="0" width="{spec.width}" height="{spec.height}" '
        f'fill="#ffffff" stroke="{EDGE_COLOR}"/>',
    ]

    # octave gridlines with C labels
    for pitch in range(spec.pitch_min, spec.pitch_max + 1):
        if pitch % 12 != 0:
            continue
        y = spec.y(pitch) + spec.row_height
        lines.append(f'<line x1="0" y1="{_f(y)}" x2="{spec.width}" '
                     f'y2="{_f(y)}" stroke="{GRID_COLOR}"/>')
        lines.append(f'<text x="2" y="{_f(y - 2)}" font-size="10" '
                     f'fill="{EDGE_COLOR}">C{pitch // 12 - 1}</text>')

    # one tick per second
    for sec in range(int(spec.time_span_sec) + 1):
        x = spec.x(sec)
        lines.append(f'<line x1="{_f(x)}" y1="0" x2="{_f(x)}" '
                     f'y2="{spec.height}" stroke="{GRID_COLOR}"/>')
        lines.append(f'<text x="{_f(x + 2)}" y="{spec.height - 4}" '
                     f'font-size="10" fill="{EDGE_COLOR}">{sec}s</text>')

    for note in sorted(score.notes,
                       key=lambda n: (n.onset_sec, n.pitch, n.offset_sec)):
        if note.onset_sec >= spec.time_span_sec:
            continue
        x0 = spec.x(note.onset_sec)
        x1 = min(spec.x(note.offset_sec), float(spec.width))
        clamped = not spec.pitch_min <= note.pitch <= spec.pitch_max
        pitch = min(max(note.pitch, spec.pitch_min), spec.pitch_max)
        dash = ' stroke-dasharray="3 2"' if clamped else ""
        lines.append(
            f'<rect class="note" x="{_f(x0)}" y="{_f(spec.y(pitch))}" '
            f'width="{_f(x1 - x0)}" height="{_f(spec.row_height)}" '
            f'fill="{NOTE_FILL}" fill-opacity="{spec.opacity(note.velocity):.3f}" '
            f'stroke="{EDGE_COLOR}"{dash}/>')

    lines.append("</svg>")
    return "\n".join(lines) + "\n"
