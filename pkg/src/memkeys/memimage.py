"""Memory image access: ELF core dumps and raw flat dumps.

Only the ELF header and program header table are interpreted.  Every
PT_LOAD segment with file-backed bytes becomes a :class:`Segment`; the
segments are laid end to end (in file-offset order) to form the image's
flat address space, which is what scan offsets refer to.
"""

from __future__ import annotations

import bisect
import enum
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator

from .errors import (
    ChunkTooSmall,
    EmptyImage,
    MalformedElf,
    OutOfRange,
    SpansSegments,
    UnreadableFile,
)

ELF_MAGIC = b"\x7fELF"
ET_CORE = 4
PT_LOAD = 1

MAX_SCHEDULE_LEN = 240  # AES-256 key schedule
CHUNK_OVERLAP = MAX_SCHEDULE_LEN - 1
MIN_CHUNK_SIZE = 2 * MAX_SCHEDULE_LEN
DEFAULT_CHUNK_SIZE = 4 << 20


class ImageFormat(str, enum.Enum):
    ELF_CORE = "ElfCore"
    RAW = "Raw"


@dataclass(frozen=True)
class Segment:
    file_offset: int
    phys_addr: int
    length: int


@dataclass(frozen=True)
class Chunk:
    segment_index: int
    base_offset: int  # flat image offset of data[0]
    data: bytes
    owned: int  # leading bytes of data whose offsets this chunk is responsible for

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class MemoryImage:
    source_path: str
    format: ImageFormat
    segments: tuple[Segment, ...]
    total_bytes: int
    # flat start offset of every segment, for bisecting
    _starts: tuple[int, ...] = field(repr=False, compare=False, default=())

    def segment_start(self, index: int) -> int:
        return self._starts[index]

    def locate(self, offset: int) -> tuple[int, int]:
        """Map a flat offset to ``(segment_index, offset_within_segment)``."""
        if offset < 0 or offset >= self.total_bytes:
            raise OutOfRange(f"offset {offset} outside image of {self.total_bytes} bytes")
        idx = bisect.bisect_right(self._starts, offset) - 1
        return idx, offset - self._starts[idx]

    def file_offset_of(self, offset: int) -> int:
        idx, rel = self.locate(offset)
        return self.segments[idx].file_offset + rel

    def phys_addr_of(self, offset: int) -> int:
        idx, rel = self.locate(offset)
        return self.segments[idx].phys_addr + rel


def _build(path: str, fmt: ImageFormat, segments: list[Segment]) -> MemoryImage:
    starts = []
    pos = 0
    for seg in segments:
        starts.append(pos)
        pos += seg.length
    if pos == 0:
        raise EmptyImage(f"{path}: no loadable bytes")
    return MemoryImage(path, fmt, tuple(segments), pos, tuple(starts))


def is_elf_core(header: bytes) -> bool:
    if len(header) < 18 or header[:4] != ELF_MAGIC:
        return False
    endian = "<" if header[5] == 1 else ">"
    (e_type,) = struct.unpack_from(endian + "H", header, 16)
    return e_type == ET_CORE


def _parse_elf_segments(path: str, f, file_size: int) -> list[Segment]:
    ident = f.read(16)
    if len(ident) < 16:
        raise MalformedElf(f"{path}: truncated ELF identification")
    ei_class, ei_data = ident[4], ident[5]
    if ei_class not in (1, 2) or ei_data not in (1, 2):
        raise MalformedElf(f"{path}: bad ELF class/data bytes {ei_class}/{ei_data}")
    e = "<" if ei_data == 1 else ">"
    if ei_class == 2:
        hdr_fmt, ph_fmt = e + "HHIQQQIHHHHHH", e + "IIQQQQQQ"
    else:
        hdr_fmt, ph_fmt = e + "HHIIIIIHHHHHH", e + "IIIIIIII"
    rest = f.read(struct.calcsize(hdr_fmt))
    if len(rest) < struct.calcsize(hdr_fmt):
        raise MalformedElf(f"{path}: truncated ELF header")
    (_type, _machine, _version, _entry, phoff, _shoff, _flags, _ehsize,
     phentsize, phnum, *_rest) = struct.unpack(hdr_fmt, rest)
    if phnum == 0:
        return []
    if phentsize < struct.calcsize(ph_fmt):
        raise MalformedElf(f"{path}: program header entry size {phentsize} too small")
    table_end = phoff + phentsize * phnum
    if table_end > file_size:
        raise MalformedElf(f"{path}: program header table runs past EOF")
    f.seek(phoff)
    table = f.read(phentsize * phnum)
    if len(table) < phentsize * phnum:
        raise MalformedElf(f"{path}: truncated program header table")

    segments = []
    for i in range(phnum):
        raw = table[i * phentsize:i * phentsize + struct.calcsize(ph_fmt)]
        fields = struct.unpack(ph_fmt, raw)
        if ei_class == 2:
            p_type, _flags, p_offset, _vaddr, p_paddr, p_filesz, _memsz, _align = fields
        else:
            p_type, p_offset, _vaddr, p_paddr, p_filesz, _memsz, _flags, _align = fields
        if p_type != PT_LOAD or p_filesz == 0:
            continue
        if p_offset + p_filesz > file_size:
            raise MalformedElf(
                f"{path}: PT_LOAD #{i} [{p_offset:#x}, +{p_filesz:#x}) extends past EOF ({file_size:#x})")
        segments.append(Segment(p_offset, p_paddr, p_filesz))

    segments.sort(key=lambda s: s.file_offset)
    for a, b in zip(segments, segments[1:]):
        if a.file_offset + a.length > b.file_offset:
            raise MalformedElf(f"{path}: PT_LOAD segments overlap at file offset {b.file_offset:#x}")
    return segments


def open_image(path: str | os.PathLike, format_hint: ImageFormat | str | None = None) -> MemoryImage:
    """Open a memory capture.

    Without a hint, files starting with the ELF magic and typed ET_CORE are
    parsed as cores and everything else is taken verbatim as a raw dump.
    """
    path = os.fspath(path)
    try:
        file_size = os.path.getsize(path)
        f = open(path, "rb")
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc.strerror or exc}") from exc
    with f:
        if file_size == 0:
            raise EmptyImage(f"{path}: zero-length file")
        if format_hint is None:
            fmt = ImageFormat.ELF_CORE if is_elf_core(f.read(64)) else ImageFormat.RAW
            f.seek(0)
        else:
            fmt = ImageFormat(format_hint)
        if fmt is ImageFormat.RAW:
            return _build(path, fmt, [Segment(0, 0, file_size)])
        if f.read(4) != ELF_MAGIC:
            raise MalformedElf(f"{path}: missing ELF magic")
        f.seek(0)
        return _build(path, fmt, _parse_elf_segments(path, f, file_size))


def chunks(image: MemoryImage, chunk_size: int = DEFAULT_CHUNK_SIZE,
           overlap: int = CHUNK_OVERLAP) -> Iterator[Chunk]:
    """Stream the image as overlapping windows, one segment at a time.

    Consecutive chunks of a segment overlap by ``overlap`` bytes so every
    offset gets at least ``overlap`` bytes of look-ahead in some chunk.  Each
    chunk *owns* the offsets up to where the next chunk starts; the last
    chunk of a segment owns everything it holds.
    """
    if chunk_size < MIN_CHUNK_SIZE:
        raise ChunkTooSmall(f"chunk_size {chunk_size} < {MIN_CHUNK_SIZE}")
    step = chunk_size - overlap
    try:
        f = open(image.source_path, "rb")
    except OSError as exc:
        raise UnreadableFile(f"{image.source_path}: {exc.strerror or exc}") from exc
    with f:
        fd = f.fileno()
        for idx, seg in enumerate(image.segments):
            flat = image.segment_start(idx)
            rel = 0
            while True:
                n = min(chunk_size, seg.length - rel)
                data = os.pread(fd, n, seg.file_offset + rel)
                if len(data) != n:
                    raise UnreadableFile(f"{image.source_path}: short read at {seg.file_offset + rel:#x}")
                last = rel + n >= seg.length
                yield Chunk(idx, flat + rel, data, n if last else step)
                if last:
                    break
                rel += step


def read_window(image: MemoryImage, offset: int, length: int) -> bytes:
    """Return ``length`` bytes at flat ``offset``; the window must sit in one segment."""
    if length <= 0:
        raise OutOfRange(f"window length must be positive, got {length}")
    idx, rel = image.locate(offset)
    seg = image.segments[idx]
    if rel + length > seg.length:
        if offset + length > image.total_bytes:
            raise OutOfRange(f"window [{offset}, +{length}) runs past image end {image.total_bytes}")
        raise SpansSegments(f"window [{offset}, +{length}) crosses the end of segment {idx}")
    with open(image.source_path, "rb") as f:
        return os.pread(f.fileno(), length, seg.file_offset + rel)
