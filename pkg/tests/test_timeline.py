import json
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from memkeys.errors import DuplicateLabel, EmptySeries, InputError
from memkeys.timeline import (
    SAMPLING_CAVEAT,
    Event,
    ScanRecord,
    build_timeline,
    events_from_file,
    from_dict,
    records_from_manifest,
    render,
    summarize,
)

GOLDEN = Path(__file__).parent / "golden"
SVG_NS = "{http://www.w3.org/2000/svg}"
FP_A, FP_B = "a" * 64, "b" * 64


def series(minutes_present, every=2, until=28, fp=FP_A, size=128):
    return [ScanRecord(f"dump{t:03d}", t * 60.0, {fp: size} if t in minutes_present else {})
            for t in range(0, until + 1, every)]


def reboot_series():
    """Key loaded at minute 2 and still present at minute 60; reboots at 60 and 75."""
    recs = series(set(range(2, 61, 2)), until=80)
    return build_timeline(recs, 0, [Event(3600, "reboot (fake chkdsk)"), Event(4500, "reboot, ransom note")])


class TestBuild:
    def test_fifteen_dump_protocol(self):
        t = build_timeline(series(set(range(2, 29, 2))))
        assert len(t.series) == 15
        assert t.intervals[FP_A] == ((120.0, 1680.0),)

    def test_split_on_absence(self):
        present = set(range(2, 11, 2)) | set(range(20, 25, 2))
        t = build_timeline(series(present))
        assert t.intervals[FP_A] == ((120.0, 600.0), (1200.0, 1440.0))

    def test_gap_rule_bridges(self):
        present = set(range(2, 11, 2)) | set(range(14, 25, 2))  # one missing sample at minute 12
        assert len(build_timeline(series(present), 0).intervals[FP_A]) == 2
        assert build_timeline(series(present), 1).intervals[FP_A] == ((120.0, 1440.0),)

    def test_absent_fingerprint(self):
        t = build_timeline(series(set()))
        assert FP_A not in t.intervals
        assert summarize(t)["keys"] == {}

    def test_sorted_input_order_irrelevant(self):
        recs = series({2, 4, 8})
        assert build_timeline(recs).intervals == build_timeline(list(reversed(recs))).intervals

    def test_errors(self):
        with pytest.raises(EmptySeries):
            build_timeline([])
        with pytest.raises(DuplicateLabel):
            build_timeline([ScanRecord("x", 0), ScanRecord("x", 60)])
        with pytest.raises(InputError):
            ScanRecord("x", -1)

    @given(present=st.lists(st.booleans(), min_size=1, max_size=30), gap=st.integers(0, 5))
    def test_properties(self, present, gap):
        recs = [ScanRecord(f"d{i}", i * 30.0, {FP_A: 128} if p else {}) for i, p in enumerate(present)]
        t, t_more = build_timeline(recs, gap), build_timeline(recs, gap + 1)
        spans = t.intervals.get(FP_A, ())
        seen = [r.t_offset for r in recs if FP_A in r.fingerprints]
        # endpoints are sample times at which the key was seen; sorted and disjoint
        for a, b in spans:
            assert a in seen and b in seen and a <= b
        assert all(b1 < a2 for (_, b1), (a2, _) in zip(spans, spans[1:]))
        if seen:
            assert spans[0][0] == seen[0] and spans[-1][1] == seen[-1]
        # monotone gap rule
        s, s_more = summarize(t)["keys"], summarize(t_more)["keys"]
        if FP_A in s:
            assert s_more[FP_A]["interval_count"] <= s[FP_A]["interval_count"]
            assert s_more[FP_A]["total_present_seconds"] >= s[FP_A]["total_present_seconds"]


class TestSummarize:
    def test_fifty_nine_minutes(self):
        t = build_timeline([ScanRecord("a", 120, {FP_A: 128}), ScanRecord("b", 3660, {FP_A: 128})])
        s = summarize(t)
        assert s["keys"][FP_A]["total_present_seconds"] == 3540
        assert s["caveat"] == SAMPLING_CAVEAT

    def test_additive(self):
        recs = [ScanRecord("a", 60, {FP_A: 128}), ScanRecord("b", 90, {FP_A: 128}), ScanRecord("c", 200),
                ScanRecord("d", 300, {FP_A: 128}), ScanRecord("e", 330, {FP_A: 128})]
        k = summarize(build_timeline(recs))["keys"][FP_A]
        assert (k["total_present_seconds"], k["interval_count"], k["first_seen"], k["last_seen"]) == (60, 2, 60, 330)


class TestRender:
    def test_reboot_series_svg(self):
        root = ET.fromstring(render(reboot_series(), "svg"))
        spans = root.findall(f".//{SVG_NS}rect[@class='span']")
        events = root.findall(f".//{SVG_NS}g[@class='event']")
        assert len(spans) == 1 and len(events) == 2
        assert not any("href" in k for el in root.iter() for k in el.attrib)  # self-contained

    def test_reboot_series_json_golden(self):
        assert json.loads(render(reboot_series(), "json")) == json.loads((GOLDEN / "timeline_reboot_series.json").read_text())

    def test_json_stable_and_round_trip(self):
        t = reboot_series()
        a, b = render(t, "json"), render(reboot_series(), "json")
        assert a == b
        assert from_dict(json.loads(a)) == t

    def test_text(self):
        out = render(reboot_series(), "text").decode()
        assert "0m" in out and "58m" in out and "reboot" in out and SAMPLING_CAVEAT in out

    @pytest.mark.parametrize("fmt", ["text", "json", "svg"])
    def test_empty_timeline(self, fmt):
        t = build_timeline([ScanRecord("only", 0)])
        out = render(t, fmt)
        if fmt == "json":
            assert json.loads(out)["keys"] == []
        elif fmt == "svg":
            assert ET.fromstring(out).tag == f"{SVG_NS}svg"
        else:
            assert out.startswith(b"1 dumps, 0 keys")

    def test_unknown_format(self):
        with pytest.raises(InputError):
            render(reboot_series(), "png")


class TestFiles:
    def test_manifest_and_events(self, tmp_path):
        for i, fps in enumerate([[FP_A], [FP_A, FP_B], []]):
            rep = {"image": f"d{i}", "candidates": [{"offset": 0, "key_size": 128, "entropy": 4.0, "fingerprint": f}
                                                     for f in fps]}
            (tmp_path / f"r{i}.json").write_text(json.dumps(rep))
        manifest = [{"label": f"d{i}", "t_offset_seconds": 60 * i, "scan_report_path": f"r{i}.json"} for i in range(3)]
        (tmp_path / "m.json").write_text(json.dumps(manifest))
        (tmp_path / "e.json").write_text(json.dumps([{"t_offset_seconds": 90, "label": "reboot"}]))
        t = build_timeline(records_from_manifest(tmp_path / "m.json"), 0, events_from_file(tmp_path / "e.json"))
        assert t.intervals == {FP_A: ((0, 60),), FP_B: ((60, 60),)}
        assert t.events == (Event(90.0, "reboot"),)

    def test_bad_manifest(self, tmp_path):
        (tmp_path / "m.json").write_text("{}")
        with pytest.raises(InputError):
            records_from_manifest(tmp_path / "m.json")
        (tmp_path / "m.json").write_text('[{"label": "x"}]')
        with pytest.raises(InputError):
            records_from_manifest(tmp_path / "m.json")
