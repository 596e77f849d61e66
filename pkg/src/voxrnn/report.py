"""Listening-test score table: parse the line-oriented score file, render a
fixed-width comparison table flagging the best system per metric, and parse
that table back (the renderer round-trips its own output exactly).
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from .errors import DataError

METRICS = ("production_quality", "production_complexity", "content_enjoyment", "content_usefulness")
BUNDLED_SCORES = "scores_listening_test.txt"


@dataclass
class SystemScores:
    name: str
    production_quality: float
    production_complexity: float
    content_enjoyment: float
    content_usefulness: float

    def __post_init__(self):
        for metric in METRICS:
            v = getattr(self, metric)
            if not 0.0 <= v <= 10.0:
                raise DataError(f"{self.name}: {metric} = {v} outside [0, 10]")

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, m) for m in METRICS)


def bundled_scores_path():
    return resources.files("voxrnn").joinpath("assets", BUNDLED_SCORES)


def parse_score_file(text: str) -> list[SystemScores]:
    """One system per line: name tokens then four reals; '#' comments skipped."""
    systems = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 5:
            raise DataError(f"line {line_no}: need a name and four scores, got {line!r}")
        try:
            vals = [float(p) for p in parts[-4:]]
        except ValueError as exc:
            raise DataError(f"line {line_no}: bad score value: {exc}") from exc
        systems.append(SystemScores(" ".join(parts[:-4]), *vals))
    if not systems:
        raise DataError("score file lists no systems")
    return systems


def render_score_table(systems: list[SystemScores]) -> str:
    """Fixed-width table, one row per system; '*' marks every system tied
    for the best value of a metric. Scores print at two decimals."""
    best = [max(s.values()[j] for s in systems) for j in range(len(METRICS))]
    name_w = max(len("system"), *(len(s.name) for s in systems))
    header = "system".ljust(name_w)
    for m in METRICS:
        header += "  " + m
    lines = [header]
    for s in systems:
        row = s.name.ljust(name_w)
        for j, m in enumerate(METRICS):
            v = s.values()[j]
            cell = f"{v:.2f}" + ("*" if v == best[j] else "")
            row += "  " + cell.rjust(len(m))
        lines.append(row)
    return "\n".join(lines)


def parse_rendered_table(text: str) -> list[SystemScores]:
    """Inverse of render_score_table."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    systems = []
    for ln in lines[1:]:
        parts = ln.split()
        vals = [float(p.rstrip("*")) for p in parts[-4:]]
        systems.append(SystemScores(" ".join(parts[:-4]), *vals))
    return systems
