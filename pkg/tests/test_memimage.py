import os
import shutil
import struct
import subprocess

import pytest
from hypothesis import given, settings, strategies as st

from memkeys.errors import (
    ChunkTooSmall,
    EmptyImage,
    MalformedElf,
    OutOfRange,
    SpansSegments,
    UnreadableFile,
)
from memkeys.memimage import (
    CHUNK_OVERLAP,
    ImageFormat,
    Segment,
    chunks,
    open_image,
    read_window,
)
from memkeys.synth import ImageSpec, make_memory_image


def write(path, data):
    with open(path, "wb") as f:
        f.write(data)
    return str(path)


def elf_core(segments, elf_class=64, endian="<", extra_phdrs=(), truncate=None):
    """Hand-rolled core file; ``segments`` is a list of (phys_addr, data)."""
    e64 = elf_class == 64
    ehsize, phentsize = (64, 56) if e64 else (52, 32)
    phdrs = list(extra_phdrs) + [(1, p, d) for p, d in segments]
    off = ehsize + phentsize * len(phdrs)
    off += -off % 16
    ident = b"\x7fELF" + bytes([2 if e64 else 1, 1 if endian == "<" else 2, 1]) + bytes(9)
    if e64:
        hdr = ident + struct.pack(endian + "HHIQQQIHHHHHH", 4, 62, 1, 0, ehsize, 0, 0, ehsize, phentsize,
                                  len(phdrs), 0, 0, 0)
    else:
        hdr = ident + struct.pack(endian + "HHIIIIIHHHHHH", 4, 3, 1, 0, ehsize, 0, 0, ehsize, phentsize,
                                  len(phdrs), 0, 0, 0)
    table, body = b"", b""
    for ptype, paddr, data in phdrs:
        if e64:
            table += struct.pack(endian + "IIQQQQQQ", ptype, 6, off + len(body), paddr, paddr, len(data),
                                 len(data), 16)
        else:
            table += struct.pack(endian + "IIIIIIII", ptype, off + len(body), paddr, paddr, len(data),
                                 len(data), 6, 16)
        body += data
    blob = hdr + table
    blob += bytes(off - len(blob)) + body
    return blob[:truncate] if truncate else blob


class TestOpenImage:
    def test_raw_fallback(self, tmp_path):
        p = write(tmp_path / "r.bin", os.urandom(1 << 20))
        img = open_image(p)
        assert img.format is ImageFormat.RAW
        assert img.segments == (Segment(0, 0, 1 << 20),)
        assert img.total_bytes == 1 << 20

    def test_synth_elf_two_segments(self, tmp_path):
        p = str(tmp_path / "c.core")
        make_memory_image(ImageSpec(8192, container="elf", segments=(4096, 4096)), p)
        img = open_image(p)
        assert img.format is ImageFormat.ELF_CORE
        assert len(img.segments) == 2 and img.total_bytes == 8192
        assert [s.length for s in img.segments] == [4096, 4096]

    def test_synth_elf_matches_pyelftools(self, tmp_path):
        elffile = pytest.importorskip("elftools.elf.elffile")
        p = str(tmp_path / "c.core")
        make_memory_image(ImageSpec(3 * 8192, container="elf", segments=(8192, 4096, 12288)), p)
        with open(p, "rb") as f:
            ef = elffile.ELFFile(f)
            assert ef.header["e_type"] == "ET_CORE"
            loads = [(s["p_offset"], s["p_paddr"], s["p_filesz"]) for s in ef.iter_segments()
                     if s["p_type"] == "PT_LOAD"]
        img = open_image(p)
        assert [(s.file_offset, s.phys_addr, s.length) for s in img.segments] == loads

    @pytest.mark.skipif(shutil.which("readelf") is None, reason="readelf not installed")
    @pytest.mark.parametrize("elf_class", [32, 64])
    def test_synth_elf_matches_readelf(self, tmp_path, elf_class):
        p = str(tmp_path / "c.core")
        make_memory_image(ImageSpec(8192, container="elf", segments=(4096, 4096), elf_class=elf_class), p)
        out = subprocess.run(["readelf", "-lW", p], capture_output=True, text=True, check=True).stdout
        assert "CORE" in out
        rows = [ln.split() for ln in out.splitlines() if ln.strip().startswith("LOAD")]
        readelf = [(int(r[1], 16), int(r[3], 16), int(r[4], 16)) for r in rows]
        img = open_image(p)
        assert [(s.file_offset, s.phys_addr, s.length) for s in img.segments] == readelf

    @pytest.mark.parametrize("elf_class", [32, 64])
    @pytest.mark.parametrize("endian", ["<", ">"])
    def test_hand_rolled_elf_variants(self, tmp_path, elf_class, endian):
        a, b = os.urandom(300), os.urandom(500)
        note = (4, 0, b"NOTEDATA")
        empty_load = (1, 0x9000, b"")
        p = write(tmp_path / "h.core", elf_core([(0x1000, a), (0x8000, b)], elf_class, endian,
                                                 extra_phdrs=[note, empty_load]))
        img = open_image(p)
        assert img.format is ImageFormat.ELF_CORE
        assert [s.phys_addr for s in img.segments] == [0x1000, 0x8000]
        assert read_window(img, 0, 300) == a
        assert read_window(img, 300, 500) == b

    def test_zero_length(self, tmp_path):
        with pytest.raises(EmptyImage):
            open_image(write(tmp_path / "z", b""))

    def test_missing(self, tmp_path):
        with pytest.raises(UnreadableFile):
            open_image(tmp_path / "nope")

    def test_no_loadable_bytes(self, tmp_path):
        with pytest.raises(EmptyImage):
            open_image(write(tmp_path / "n.core", elf_core([], extra_phdrs=[(4, 0, b"x" * 8)])))

    def test_segment_past_eof(self, tmp_path):
        blob = elf_core([(0, os.urandom(4096))])
        with pytest.raises(MalformedElf):
            open_image(write(tmp_path / "t.core", blob[:-100]))

    def test_truncated_program_headers(self, tmp_path):
        with pytest.raises(MalformedElf):
            open_image(write(tmp_path / "t.core", elf_core([(0, b"x" * 64)], truncate=80)))

    def test_forced_raw_on_elf(self, tmp_path):
        blob = elf_core([(0, b"y" * 64)])
        img = open_image(write(tmp_path / "e.core", blob), "Raw")
        assert img.format is ImageFormat.RAW and img.total_bytes == len(blob)

    def test_non_core_elf_is_raw(self, tmp_path):
        blob = bytearray(elf_core([(0, b"y" * 64)]))
        blob[16] = 2  # ET_EXEC
        img = open_image(write(tmp_path / "exe", bytes(blob)))
        assert img.format is ImageFormat.RAW

    def test_locate_and_phys(self, tmp_path):
        p = write(tmp_path / "h.core", elf_core([(0x1000, b"a" * 100), (0x8000, b"b" * 50)]))
        img = open_image(p)
        assert img.locate(99) == (0, 99) and img.locate(100) == (1, 0)
        assert img.phys_addr_of(120) == 0x8000 + 20
        with pytest.raises(OutOfRange):
            img.locate(150)


class TestChunks:
    def test_base_offsets_example(self, tmp_path):
        img = open_image(write(tmp_path / "r", os.urandom(10000)))
        assert [c.base_offset for c in chunks(img, 4096)] == [0, 3857, 7714]

    def test_short_segment_one_chunk(self, tmp_path):
        img = open_image(write(tmp_path / "r", os.urandom(100)))
        cs = list(chunks(img, 4096))
        assert len(cs) == 1 and len(cs[0]) == 100 and cs[0].owned == 100

    def test_never_crosses_segments(self, tmp_path):
        img = open_image(write(tmp_path / "h.core", elf_core([(0, os.urandom(1000)), (0x10000, os.urandom(700))])))
        for c in chunks(img, 480):
            start = img.segment_start(c.segment_index)
            assert start <= c.base_offset
            assert c.base_offset + len(c) <= start + img.segments[c.segment_index].length

    def test_too_small(self, tmp_path):
        img = open_image(write(tmp_path / "r", b"x" * 1000))
        with pytest.raises(ChunkTooSmall):
            next(chunks(img, 479))

    @given(seg_lens=st.lists(st.integers(1, 3000), min_size=1, max_size=3), chunk_size=st.integers(480, 2000))
    @settings(max_examples=40)
    def test_round_trip_and_lookahead(self, tmp_path_factory, seg_lens, chunk_size):
        segs = [(0x1000 * (i + 1) * 16, os.urandom(n)) for i, n in enumerate(seg_lens)]
        p = write(tmp_path_factory.mktemp("c") / "h.core", elf_core(segs))
        img = open_image(p)
        rebuilt = {i: b"" for i in range(len(segs))}
        owned_offsets = []
        prev = None
        for c in chunks(img, chunk_size):
            rebuilt[c.segment_index] += c.data[:c.owned]
            owned_offsets.extend(range(c.base_offset, c.base_offset + c.owned))
            seg_end = img.segment_start(c.segment_index) + img.segments[c.segment_index].length
            # every owned offset has the full overlap of look-ahead or reaches the segment end
            for i in (0, c.owned - 1):
                assert len(c) - i > CHUNK_OVERLAP or c.base_offset + len(c) == seg_end
            if prev is not None and prev.segment_index == c.segment_index:
                assert prev.base_offset + len(prev) - c.base_offset == CHUNK_OVERLAP
            prev = c
        assert [rebuilt[i] for i in range(len(segs))] == [d for _, d in segs]
        assert owned_offsets == list(range(img.total_bytes))

    def test_offset_soundness(self, tmp_path):
        img = open_image(write(tmp_path / "h.core", elf_core([(0, os.urandom(1200)), (0x9000, os.urandom(900))])))
        for c in chunks(img, 600):
            for i in range(0, len(c), 37):
                assert c.data[i:i + 1] == read_window(img, c.base_offset + i, 1)


class TestReadWindow:
    def test_first_bytes(self, tmp_path):
        data = os.urandom(4096)
        img = open_image(write(tmp_path / "r", data))
        assert read_window(img, 0, 16) == data[:16]

    def test_out_of_range(self, tmp_path):
        img = open_image(write(tmp_path / "r", b"x" * 64))
        with pytest.raises(OutOfRange):
            read_window(img, 64, 1)
        with pytest.raises(OutOfRange):
            read_window(img, 60, 10)

    def test_spans_segments(self, tmp_path):
        img = open_image(write(tmp_path / "h.core", elf_core([(0, b"a" * 100), (0x8000, b"b" * 100)])))
        assert read_window(img, 96, 4) == b"aaaa"
        with pytest.raises(SpansSegments):
            read_window(img, 96, 8)
