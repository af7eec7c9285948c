"""Group subtitle cues into clips without splitting any cue."""

from __future__ import annotations

import json
import re
import warnings
from pathlib import Path

from ..exceptions import ValidationError
from .types import SubtitleCue


def _check_cues(cues):
    if not cues:
        raise ValidationError("no cues")
    for prev, cur in zip(cues, cues[1:]):
        if cur.start_s < prev.end_s:
            raise ValidationError(
                f"cues not time-ordered / overlapping at [{cur.start_s}, {cur.end_s}]"
            )


def clipify(cues, min_len=10.0, max_len=15.0):
    """Greedily pack whole cues into clips of at least ``min_len`` seconds.

    A clip is closed as soon as it reaches ``min_len``. A cue longer than the
    remaining budget is still included whole, so a clip may overshoot
    ``max_len``; this is reported with a warning. A final remainder shorter
    than ``min_len`` is merged into the previous clip. Silence between cues
    is absorbed into the clip preceding it, so the clips tile
    ``[cues[0].start_s, cues[-1].end_s]`` exactly.

    Returns a list of ``(start_s, end_s, cue_indices)``.
    """
    if not 0 < min_len <= max_len:
        raise ValidationError("need 0 < min_len <= max_len")
    cues = list(cues)
    _check_cues(cues)

    groups = []
    current = []
    for i, cue in enumerate(cues):
        current.append(i)
        if cue.end_s - cues[current[0]].start_s >= min_len:
            groups.append(current)
            current = []
    if current:
        if groups:
            groups[-1].extend(current)
        else:
            groups.append(current)

    clips = []
    for g, idx in enumerate(groups):
        start = cues[idx[0]].start_s
        end = cues[groups[g + 1][0]].start_s if g + 1 < len(groups) else cues[idx[-1]].end_s
        if end - start > max_len:
            warnings.warn(
                f"clip [{start}, {end}] exceeds max_len={max_len} (indivisible cues)",
                stacklevel=2,
            )
        clips.append((start, end, idx))
    return clips


_SRT_TIME = re.compile(
    r"(\d+):(\d{2}):(\d{2})[,.](\d{3})\s*-->\s*(\d+):(\d{2}):(\d{2})[,.](\d{3})"
)


def _srt_seconds(h, m, s, ms):
    return int(h) * 3600 + int(m) * 60 + int(s) + int(ms) / 1000.0


def read_cues(path) -> list[SubtitleCue]:
    """Load cues from an ``.srt`` file or a JSON list of ``{start_s, end_s, text}``."""
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        return [SubtitleCue(float(c["start_s"]), float(c["end_s"]), c.get("text", "")) for c in json.loads(raw)]
    cues = []
    for block in re.split(r"\n\s*\n", raw.strip()):
        lines = block.strip().splitlines()
        for j, line in enumerate(lines):
            m = _SRT_TIME.search(line)
            if m:
                g = m.groups()
                text = " ".join(lines[j + 1:]).strip()
                cues.append(SubtitleCue(_srt_seconds(*g[:4]), _srt_seconds(*g[4:]), text))
                break
    return cues
