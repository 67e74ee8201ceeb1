"""Key-presence timelines over a time-ordered series of memory dumps.

A key counts as present from the first to the last sample of each run of
dumps it was found in.  Presence between samples is inferred, never
observed, and every summary says so.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

from .errors import DuplicateLabel, EmptySeries, InputError
from .keyscan import load_report

SAMPLING_CAVEAT = ("presence between dumps is inferred from the sampling interval; "
                   "a key may also have been present at unsampled times")


@dataclass(frozen=True)
class ScanRecord:
    label: str
    t_offset: float
    fingerprints: Mapping[str, int] = field(default_factory=dict)  # fingerprint -> key size

    def __post_init__(self):
        if self.t_offset < 0:
            raise InputError(f"record {self.label!r}: negative t_offset {self.t_offset}")


@dataclass(frozen=True)
class Event:
    t_offset: float
    label: str


@dataclass(frozen=True)
class Timeline:
    series: tuple[ScanRecord, ...]
    intervals: Mapping[str, tuple[tuple[float, float], ...]]
    key_sizes: Mapping[str, int] = field(default_factory=dict)
    events: tuple[Event, ...] = ()
    gap_rule: int = 0


def build_timeline(records: Iterable[ScanRecord], gap_rule: int = 0,
                   events: Iterable[Event] = ()) -> Timeline:
    """Turn per-dump findings into closed presence intervals per key.

    A run of a fingerprint survives up to ``gap_rule`` consecutive dumps
    without it; one more absence ends the interval at the last sighting.
    """
    records = list(records)
    if not records:
        raise EmptySeries("no scan records")
    if gap_rule < 0:
        raise InputError(f"gap_rule must be >= 0, got {gap_rule}")
    labels = [r.label for r in records]
    dupes = sorted({lb for lb in labels if labels.count(lb) > 1})
    if dupes:
        raise DuplicateLabel(f"duplicate dump labels: {dupes}")
    series = tuple(sorted(records, key=lambda r: (r.t_offset, r.label)))

    key_sizes: dict[str, int] = {}
    for rec in series:
        for fp, size in rec.fingerprints.items():
            key_sizes.setdefault(fp, size)

    intervals = {}
    for fp in sorted(key_sizes):
        spans = []
        start = end = None
        missed = 0
        for rec in series:
            if fp in rec.fingerprints:
                if start is None:
                    start = rec.t_offset
                end = rec.t_offset
                missed = 0
            elif start is not None:
                missed += 1
                if missed > gap_rule:
                    spans.append((start, end))
                    start = end = None
                    missed = 0
        if start is not None:
            spans.append((start, end))
        intervals[fp] = tuple(spans)
    evs = tuple(sorted(events, key=lambda e: (e.t_offset, e.label)))
    return Timeline(series, intervals, key_sizes, evs, gap_rule)


def summarize(timeline: Timeline) -> dict:
    keys = {}
    for fp, spans in timeline.intervals.items():
        keys[fp] = {
            "total_present_seconds": sum(b - a for a, b in spans),
            "first_seen": spans[0][0] if spans else None,
            "last_seen": spans[-1][1] if spans else None,
            "interval_count": len(spans),
        }
    return {"keys": keys, "caveat": SAMPLING_CAVEAT}


# -- serialisation ---------------------------------------------------------------

def _num(x: float):
    return int(x) if float(x).is_integer() else x


def to_dict(timeline: Timeline) -> dict:
    summary = summarize(timeline)
    return {
        "gap_rule": timeline.gap_rule,
        "series": [{"label": r.label, "t_offset_seconds": _num(r.t_offset),
                    "keys": [{"fingerprint": fp, "key_size": r.fingerprints[fp]}
                             for fp in sorted(r.fingerprints)]}
                   for r in timeline.series],
        "keys": [{"fingerprint": fp, "key_size": timeline.key_sizes.get(fp),
                  "intervals": [[_num(a), _num(b)] for a, b in spans],
                  "total_present_seconds": _num(summary["keys"][fp]["total_present_seconds"]),
                  "interval_count": len(spans)}
                 for fp, spans in sorted(timeline.intervals.items())],
        "events": [{"t_offset_seconds": _num(e.t_offset), "label": e.label} for e in timeline.events],
        "caveat": SAMPLING_CAVEAT,
    }


def from_dict(doc: dict) -> Timeline:
    series = tuple(ScanRecord(r["label"], r["t_offset_seconds"],
                              {k["fingerprint"]: k["key_size"] for k in r["keys"]})
                   for r in doc["series"])
    intervals = {k["fingerprint"]: tuple((a, b) for a, b in k["intervals"]) for k in doc["keys"]}
    sizes = {k["fingerprint"]: k["key_size"] for k in doc["keys"]}
    events = tuple(Event(e["t_offset_seconds"], e["label"]) for e in doc["events"])
    return Timeline(series, intervals, sizes, events, doc.get("gap_rule", 0))


def _minutes(t: float) -> str:
    m, s = divmod(t, 60)
    return f"{int(m)}m{s:04.1f}s" if s else f"{int(m)}m"


def render_text(timeline: Timeline) -> str:
    summary = summarize(timeline)["keys"]
    lines = [f"{len(timeline.series)} dumps, {len(timeline.intervals)} keys, gap rule {timeline.gap_rule}"]
    if timeline.intervals:
        lines.append(f"{'fingerprint':<16}  {'bits':>4}  {'present':>10}  intervals")
    for fp, spans in sorted(timeline.intervals.items()):
        s = summary[fp]
        ivs = ", ".join(f"[{_minutes(a)} .. {_minutes(b)}]" for a, b in spans)
        lines.append(f"{fp[:16]:<16}  {timeline.key_sizes.get(fp, 0):>4}  "
                     f"{_minutes(s['total_present_seconds']):>10}  {ivs}")
    if timeline.events:
        lines.append("events:")
        for e in timeline.events:
            lines.append(f"  {_minutes(e.t_offset):>10}  {e.label}")
    lines.append(f"note: {SAMPLING_CAVEAT}")
    return "\n".join(lines) + "\n"


def render_json(timeline: Timeline) -> str:
    return json.dumps(to_dict(timeline), indent=2) + "\n"


# SVG geometry
_LEFT, _RIGHT, _TOP, _LANE, _AXIS = 150, 30, 40, 28, 40


def render_svg(timeline: Timeline, width: int = 900) -> str:
    """Self-contained SVG: one lane per key, filled presence spans, event markers."""
    fps = sorted(timeline.intervals)
    times = [r.t_offset for r in timeline.series] + [e.t_offset for e in timeline.events]
    t_max = max(times, default=0.0) or 60.0
    plot_w = width - _LEFT - _RIGHT
    lanes_h = max(1, len(fps)) * _LANE
    height = _TOP + lanes_h + _AXIS + 14 * max(1, len(timeline.events))

    def x(t: float) -> float:
        return round(_LEFT + plot_w * t / t_max, 2)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           '<title>Key presence timeline</title>',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    axis_y = _TOP + lanes_h
    out.append(f'<line x1="{_LEFT}" y1="{axis_y}" x2="{_LEFT + plot_w}" y2="{axis_y}" stroke="black"/>')
    step = _tick_step(t_max)
    t = 0.0
    while t <= t_max + 1e-9:
        out.append(f'<line x1="{x(t)}" y1="{axis_y}" x2="{x(t)}" y2="{axis_y + 4}" stroke="black"/>')
        out.append(f'<text x="{x(t)}" y="{axis_y + 16}" text-anchor="middle">{_num(round(t / 60, 2))}</text>')
        t += step
    out.append(f'<text x="{_LEFT + plot_w / 2}" y="{axis_y + 32}" text-anchor="middle">minutes since launch</text>')

    for r in timeline.series:
        out.append(f'<circle class="sample" cx="{x(r.t_offset)}" cy="{axis_y}" r="2" fill="gray">'
                   f'<title>{escape(r.label)}</title></circle>')
    for i, fp in enumerate(fps):
        y = _TOP + i * _LANE
        out.append(f'<text x="{_LEFT - 8}" y="{y + _LANE / 2 + 4}" text-anchor="end">'
                   f'AES-{timeline.key_sizes.get(fp, 0)} {fp[:12]}</text>')
        for a, b in timeline.intervals[fp]:
            w = max(2.0, round(x(b) - x(a), 2))
            out.append(f'<rect class="span" x="{x(a)}" y="{y + 5}" width="{w}" height="{_LANE - 10}" '
                       f'fill="#c0392b"><title>{_minutes(a)} to {_minutes(b)}</title></rect>')
    for i, e in enumerate(timeline.events):
        ly = axis_y + _AXIS + 12 * (i + 1)
        out.append(f'<g class="event"><line x1="{x(e.t_offset)}" y1="{_TOP - 10}" x2="{x(e.t_offset)}" '
                   f'y2="{axis_y}" stroke="#2c3e50" stroke-dasharray="4,3"/>'
                   f'<text x="{x(e.t_offset)}" y="{ly}" text-anchor="middle">{escape(e.label)}</text></g>')
    out.append('</svg>')
    return "\n".join(out) + "\n"


def _tick_step(t_max: float) -> float:
    for minutes in (1, 2, 5, 10, 15, 30, 60, 120, 240):
        if t_max / (minutes * 60) <= 12:
            return minutes * 60.0
    return t_max / 10


def render(timeline: Timeline, fmt: str = "text") -> bytes:
    renderers = {"text": render_text, "json": render_json, "svg": render_svg}
    try:
        return renderers[fmt](timeline).encode()
    except KeyError:
        raise InputError(f"unknown format {fmt!r}") from None


# -- manifests -------------------------------------------------------------------

def _read_json(path) -> object:
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def records_from_manifest(path: str | os.PathLike) -> list[ScanRecord]:
    """Load ``[{label, t_offset_seconds, scan_report_path}]``; report paths are
    resolved relative to the manifest."""
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise InputError(f"{path}: manifest must be a JSON list")
    base = os.path.dirname(os.path.abspath(path))
    records = []
    for entry in doc:
        try:
            report_path = os.path.join(base, entry["scan_report_path"])
            label, t = str(entry["label"]), float(entry["t_offset_seconds"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: bad manifest entry {entry!r}") from exc
        report = load_report(report_path)
        fps = {c["fingerprint"]: int(c["key_size"]) for c in report["candidates"]}
        records.append(ScanRecord(label, t, fps))
    return records


def events_from_file(path: str | os.PathLike) -> list[Event]:
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise InputError(f"{path}: events file must be a JSON list")
    try:
        return [Event(float(e["t_offset_seconds"]), str(e["label"])) for e in doc]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad event entry") from exc


def records_from_observations(observations: Sequence[tuple[str, float, Mapping[str, int]]]) -> list[ScanRecord]:
    return [ScanRecord(label, t, dict(fps)) for label, t, fps in observations]
