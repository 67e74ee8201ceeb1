"""Ground-truth fixtures: memory images with planted key schedules and
encrypted control-file corpora.

Everything here is deterministic for a given seed.  Random streams come
from ``numpy.random.default_rng`` seeded with ``[seed, purpose, index]`` so
independent outputs never share a stream.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import struct
import zipfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import (
    InputError,
    InputTooShort,
    ManifestMismatch,
    OverlappingPlants,
    PlantOutOfRange,
    UsageError,
)
from .filerec import (
    BLOCK,
    HEADER_LEN,
    Family,
    FamilyLayout,
    Verdict,
    family_layout,
    load_signature_table,
    parse_layout,
    decrypt_payload,
    try_keys,
)
from .keyscan import SCHEDULE_LEN, CandidateKey, expand_key, fingerprint, shannon_entropy

PAGE = 4096
FILL_BLOCK = 1 << 20
FILLERS = ("zeros", "random", "mixed")

# stream purposes for seeding
_FILL, _PLANT, _KEY, _IV, _KEYBLOCK, _CONTROL = range(6)


def _rng(seed: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([seed, *extra])


# -- memory images -----------------------------------------------------------

@dataclass(frozen=True)
class Plant:
    offset: int
    key_bytes: bytes
    key_size: int = 0

    def __post_init__(self):
        if not self.key_size:
            object.__setattr__(self, "key_size", len(self.key_bytes) * 8)
        if self.key_size not in SCHEDULE_LEN or len(self.key_bytes) * 8 != self.key_size:
            raise UsageError(f"plant at {self.offset}: {len(self.key_bytes)}-byte key for size {self.key_size}")

    @property
    def end(self) -> int:
        return self.offset + SCHEDULE_LEN[self.key_size]


@dataclass(frozen=True)
class ImageSpec:
    """What to write.  ``segments`` lists PT_LOAD lengths for ElfCore
    containers (default: two equal halves when page-aligned, else one)."""

    total_bytes: int
    filler: str = "zeros"
    seed: int = 0
    high_entropy_fraction: float = 0.1
    plants: tuple[Plant, ...] = ()
    container: str = "raw"  # "raw" | "elf"
    segments: tuple[int, ...] | None = None
    elf_class: int = 64

    def __post_init__(self):
        if self.total_bytes <= 0:
            raise UsageError("total_bytes must be positive")
        if self.filler not in FILLERS:
            raise UsageError(f"filler must be one of {FILLERS}")
        if self.container not in ("raw", "elf"):
            raise UsageError("container must be 'raw' or 'elf'")
        if not 0.0 <= self.high_entropy_fraction <= 1.0:
            raise UsageError("high_entropy_fraction must lie in [0, 1]")
        if self.elf_class not in (32, 64):
            raise UsageError("elf_class must be 32 or 64")
        if self.segment_lengths() and sum(self.segment_lengths()) != self.total_bytes:
            raise UsageError(f"segment lengths sum to {sum(self.segment_lengths())}, not {self.total_bytes}")

    def segment_lengths(self) -> tuple[int, ...]:
        if self.container == "raw":
            return (self.total_bytes,)
        if self.segments is not None:
            return tuple(self.segments)
        if self.total_bytes % (2 * PAGE) == 0:
            return (self.total_bytes // 2,) * 2
        return (self.total_bytes,)


def check_plants(spec: ImageSpec) -> None:
    """Raise unless every plant sits inside one segment and none overlap."""
    bounds = np.cumsum((0,) + spec.segment_lengths())
    for p in spec.plants:
        if p.offset < 0 or p.end > spec.total_bytes:
            raise PlantOutOfRange(f"AES-{p.key_size} schedule at {p.offset} needs "
                                  f"{SCHEDULE_LEN[p.key_size]} bytes; image has {spec.total_bytes}")
        seg = int(np.searchsorted(bounds, p.offset, side="right")) - 1
        if p.end > bounds[seg + 1]:
            raise PlantOutOfRange(f"plant at {p.offset} crosses the end of segment {seg}")
    ordered = sorted(spec.plants, key=lambda p: p.offset)
    for a, b in zip(ordered, ordered[1:]):
        if b.offset < a.end:
            raise OverlappingPlants(f"plants at {a.offset} and {b.offset} overlap")


def random_key(rng: np.random.Generator, key_size: int, min_entropy: float = 3.0) -> bytes:
    """Uniform key bytes, redrawn until the key clears ``min_entropy``."""
    while True:
        key = rng.bytes(key_size // 8)
        if shannon_entropy(key) >= min_entropy:
            return key


def low_entropy_key(rng: np.random.Generator, key_size: int) -> bytes:
    """A structured key (two alternating byte values) that the prefilter rejects."""
    a, b = rng.choice(256, size=2, replace=False)
    return bytes([int(a), int(b)] * (key_size // 16))


def random_plants(total_bytes: int, count: int, seed: int = 0, key_sizes: Sequence[int] = (128, 192, 256),
                  segments: Sequence[int] | None = None, low_entropy: bool = False) -> tuple[Plant, ...]:
    """``count`` non-overlapping plants, one per equal slot of the image.

    Key sizes cycle through ``key_sizes``; offsets are drawn uniformly
    inside each slot so that the schedule stays within its slot and segment.
    """
    if count <= 0:
        return ()
    rng = _rng(seed, _PLANT)
    krng = _rng(seed, _KEY)
    bounds = np.cumsum((0,) + tuple(segments or (total_bytes,)))
    slot = total_bytes // count
    if slot < 2 * max(SCHEDULE_LEN.values()):
        raise PlantOutOfRange(f"{count} plants do not fit in {total_bytes} bytes")
    plants = []
    for i in range(count):
        size = key_sizes[i % len(key_sizes)]
        need = SCHEDULE_LEN[size]
        lo, hi = i * slot, (i + 1) * slot - need
        for _ in range(1000):
            off = int(rng.integers(lo, hi + 1))
            seg = int(np.searchsorted(bounds, off, side="right")) - 1
            if off + need <= bounds[seg + 1]:
                break
        else:
            raise PlantOutOfRange(f"no room for plant {i} inside one segment")
        key = low_entropy_key(krng, size) if low_entropy else random_key(krng, size)
        plants.append(Plant(off, key, size))
    return tuple(plants)


def _fill_block(spec: ImageSpec, rng: np.random.Generator, n: int) -> bytes:
    """Next ``n`` filler bytes (n is a multiple of PAGE except at image end)."""
    if spec.filler == "zeros":
        return bytes(n)
    if spec.filler == "random":
        return rng.bytes(n)
    # mixed: each page is random (with the given probability), all-zero, or
    # a table of small little-endian counters
    npages = -(-n // PAGE)
    kinds = rng.random(npages)
    split = rng.random(npages)
    out = np.zeros(npages * PAGE, dtype=np.uint8)
    for i in range(npages):
        if kinds[i] < spec.high_entropy_fraction:
            out[i * PAGE:(i + 1) * PAGE] = np.frombuffer(rng.bytes(PAGE), dtype=np.uint8)
        elif split[i] < 0.5:
            counters = rng.integers(0, 64, size=PAGE // 4, dtype=np.uint32)
            out[i * PAGE:(i + 1) * PAGE] = counters.astype("<u4").view(np.uint8)
    return out[:n].tobytes()


def _elf_header(spec: ImageSpec, phnum: int) -> tuple[bytes, int]:
    """ELF header plus the size of one program header entry."""
    e64 = spec.elf_class == 64
    ident = b"\x7fELF" + bytes([2 if e64 else 1, 1, 1, 0]) + bytes(8)
    if e64:
        hdr = ident + struct.pack("<HHIQQQIHHHHHH", 4, 62, 1, 0, 64, 0, 0, 64, 56, phnum, 0, 0, 0)
        return hdr, 56
    hdr = ident + struct.pack("<HHIIIIIHHHHHH", 4, 3, 1, 0, 52, 0, 0, 52, 32, phnum, 0, 0, 0)
    return hdr, 32


def _note() -> bytes:
    # one NT_PRPSINFO-typed note whose payload is only a tool tag
    name, desc = b"CORE\0", b"memkeys synthetic core\0\0"
    pad = lambda b: b + bytes(-len(b) % 4)  # noqa: E731
    return struct.pack("<III", len(name), len(desc), 3) + pad(name) + pad(desc)


def _layout(spec: ImageSpec) -> tuple[bytes, list[dict]]:
    """Container prefix bytes (empty for raw) and the segment table."""
    lengths = spec.segment_lengths()
    if spec.container == "raw":
        return b"", [{"file_offset": 0, "phys_addr": 0, "length": lengths[0]}]
    note = _note()
    hdr, phentsize = _elf_header(spec, len(lengths) + 1)
    note_off = len(hdr) + phentsize * (len(lengths) + 1)
    pos = -(-(note_off + len(note)) // PAGE) * PAGE
    segs, phys = [], 0x100000
    for n in lengths:
        segs.append({"file_offset": pos, "phys_addr": phys, "length": n})
        pos += -(-n // PAGE) * PAGE
        phys += -(-n // PAGE) * PAGE + 0x100000  # leave a hole between segments
    e64 = spec.elf_class == 64
    phdrs = b""
    if e64:
        phdrs += struct.pack("<IIQQQQQQ", 4, 0, note_off, 0, 0, len(note), 0, 4)
    else:
        phdrs += struct.pack("<IIIIIIII", 4, note_off, 0, 0, len(note), 0, 0, 4)
    for s in segs:
        if e64:
            phdrs += struct.pack("<IIQQQQQQ", 1, 6, s["file_offset"], s["phys_addr"], s["phys_addr"],
                                 s["length"], s["length"], PAGE)
        else:
            phdrs += struct.pack("<IIIIIIII", 1, s["file_offset"], s["phys_addr"], s["phys_addr"],
                                 s["length"], s["length"], 6, PAGE)
    return hdr + phdrs + note, segs


def plant_record(p: Plant) -> dict:
    return {"offset": p.offset, "key_size": p.key_size, "key_hex": p.key_bytes.hex(),
            "fingerprint": fingerprint(p.key_bytes)}


def make_memory_image(spec: ImageSpec, path: str | os.PathLike,
                      manifest_path: str | os.PathLike | None = None) -> dict:
    """Write the image (and optionally its manifest); return the manifest."""
    check_plants(spec)
    prefix, segs = _layout(spec)
    rng = _rng(spec.seed, _FILL)
    with open(path, "wb") as f:
        f.write(prefix)
        fd = f.fileno()
        flat = 0
        for s in segs:
            f.seek(s["file_offset"])
            left = s["length"]
            while left:
                # filler blocks are aligned to flat offsets
                n = min(FILL_BLOCK - flat % FILL_BLOCK, left)
                f.write(_fill_block(spec, rng, n))
                flat += n
                left -= n
        f.truncate(segs[-1]["file_offset"] + -(-segs[-1]["length"] // PAGE) * PAGE
                   if spec.container == "elf" else spec.total_bytes)
        f.flush()
        starts = np.cumsum([0] + [s["length"] for s in segs])
        for p in spec.plants:
            i = int(np.searchsorted(starts, p.offset, side="right")) - 1
            os.pwrite(fd, expand_key(p.key_bytes, p.key_size).bytes,
                      segs[i]["file_offset"] + p.offset - int(starts[i]))
    manifest = {
        "image": os.fspath(path),
        "container": "ElfCore" if spec.container == "elf" else "Raw",
        "elf_class": spec.elf_class if spec.container == "elf" else None,
        "total_bytes": spec.total_bytes,
        "filler": spec.filler,
        "high_entropy_fraction": spec.high_entropy_fraction if spec.filler == "mixed" else None,
        "seed": spec.seed,
        "segments": segs,
        "plants": [plant_record(p) for p in sorted(spec.plants, key=lambda p: p.offset)],
    }
    if manifest_path is not None:
        write_json(manifest, manifest_path)
    return manifest


def write_json(doc, path) -> None:
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


# -- control files -------------------------------------------------------------

PDF_HEAD = b"%PDF-1.5\n%\xc7\xec\x8f\xa2\n"
ZIP_FLAGS = 0x0006  # "super fast" deflate option bits, as in Office-written archives


def control_pdf(rng: np.random.Generator, lines: int = 40) -> bytes:
    """Small valid PDF with object 5 first, so its first 16 bytes match the
    signature table exactly."""
    words = [b"memory", b"forensics", b"key", b"schedule", b"recovery", b"sample", b"control"]
    text = b"\n".join(b"BT /F1 10 Tf 40 %d Td (" % (800 - 14 * i)
                      + b" ".join(words[int(j)] for j in rng.integers(0, len(words), 6)) + b") Tj ET"
                      for i in range(lines))
    objs = {
        5: b"<< /Length %d >>\nstream\n" % len(text) + text + b"\nendstream",
        1: b"<< /Type /Catalog /Pages 2 0 R >>",
        2: b"<< /Type /Pages /Kids [3 0 R] /Count 1 >>",
        3: b"<< /Type /Page /Parent 2 0 R /MediaBox [0 0 612 842] "
           b"/Resources << /Font << /F1 4 0 R >> >> /Contents 5 0 R >>",
        4: b"<< /Type /Font /Subtype /Type1 /BaseFont /Helvetica >>",
    }
    out = bytearray(PDF_HEAD)
    offsets = {}
    for num in (5, 1, 2, 3, 4):
        offsets[num] = len(out)
        out += b"%d 0 obj\n" % num + objs[num] + b"\nendobj\n"
    xref = len(out)
    out += b"xref\n0 6\n0000000000 65535 f \n"
    for num in range(1, 6):
        out += b"%010d 00000 n \n" % offsets[num]
    out += b"trailer\n<< /Size 6 /Root 1 0 R >>\nstartxref\n%d\n%%%%EOF\n" % xref
    return bytes(out)


def _patch_zip_flags(data: bytes) -> bytes:
    buf = bytearray(data)
    for sig, at in ((b"PK\x03\x04", 6), (b"PK\x01\x02", 8)):
        pos = buf.find(sig)
        while pos >= 0:
            struct.pack_into("<H", buf, pos + at, ZIP_FLAGS)
            pos = buf.find(sig, pos + 4)
    return bytes(buf)


def control_ooxml(rng: np.random.Generator, kind: str, pad: int) -> bytes:
    """Minimal docx/xlsx whose length gives a final-block pad of ``pad``
    bytes when the first 16 bytes are cut off (tuned with the zip comment)."""
    main = {"docx": ("word/document.xml", "application/vnd.openxmlformats-officedocument."
                     "wordprocessingml.document.main+xml"),
            "xlsx": ("xl/workbook.xml", "application/vnd.openxmlformats-officedocument."
                     "spreadsheetml.sheet.main+xml")}[kind]
    rows = "".join(f"<r>{int(v)}</r>" for v in rng.integers(0, 10**6, 64))
    parts = [
        ("[Content_Types].xml",
         '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>\n<Types xmlns="http://schemas.'
         'openxmlformats.org/package/2006/content-types"><Default Extension="xml" ContentType='
         f'"application/xml"/><Override PartName="/{main[0]}" ContentType="{main[1]}"/></Types>'),
        ("_rels/.rels",
         '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>\n<Relationships xmlns="http://'
         'schemas.openxmlformats.org/package/2006/relationships"><Relationship Id="rId1" Type="http://'
         'schemas.openxmlformats.org/officeDocument/2006/relationships/officeDocument" '
         f'Target="{main[0]}"/></Relationships>'),
        (main[0], f'<?xml version="1.0" encoding="UTF-8"?>\n<root>{rows}</root>'),
    ]

    def build(comment: bytes) -> bytes:
        bio = io.BytesIO()
        with zipfile.ZipFile(bio, "w", zipfile.ZIP_DEFLATED) as zf:
            for name, body in parts:
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                zf.writestr(info, body)
            zf.comment = comment
        return _patch_zip_flags(bio.getvalue())

    base = build(b"")
    comment = b"x" * ((-(len(base) - HEADER_LEN) - pad) % BLOCK)
    return build(comment)


def control_ole2(rng: np.random.Generator, stream_name: str, stream_len: int = 4096) -> bytes:
    """Minimal version-3 compound file holding one stream of random bytes.

    Layout: header, one FAT sector, one directory sector, then the stream in
    regular sectors (``stream_len`` >= 4096 so no mini stream is needed).
    """
    ss = 512
    n_stream = -(-stream_len // ss)
    endchain, fatsect, freesect = 0xFFFFFFFE, 0xFFFFFFFD, 0xFFFFFFFF
    header = bytearray(ss)
    header[0:8] = bytes.fromhex("d0cf11e0a1b11ae1")
    struct.pack_into("<HHHHH", header, 24, 0x3E, 3, 0xFFFE, 9, 6)
    # directory/FAT sector counts, first directory sector, mini cutoff, no mini FAT, no DIFAT chain
    struct.pack_into("<IIIIIIIII", header, 40, 0, 1, 1, 0, 4096, endchain, 0, endchain, 0)
    header[76:512] = struct.pack("<I", 0) + b"\xff" * (436 - 4)  # DIFAT[0] -> FAT in sector 0
    fat = [fatsect, endchain] + [2 + i + 1 for i in range(n_stream - 1)] + [endchain]
    fat += [freesect] * (ss // 4 - len(fat))
    fat_bytes = struct.pack(f"<{ss // 4}I", *fat)

    def entry(name: str, etype: int, child: int, start: int, size: int) -> bytes:
        raw = name.encode("utf-16-le") + b"\0\0"
        e = bytearray(128)
        e[:len(raw)] = raw
        struct.pack_into("<HBB", e, 64, len(raw), etype, 1)
        struct.pack_into("<III", e, 68, freesect, freesect, child)
        struct.pack_into("<II", e, 116, start, size)
        return bytes(e)

    dirs = entry("Root Entry", 5, 1, endchain, 0) + entry(stream_name, 2, freesect, 2, stream_len)
    dirs += entry("", 0, freesect, 0, 0) * 2
    stream = rng.bytes(stream_len).ljust(n_stream * ss, b"\0")
    return bytes(header) + fat_bytes + dirs + stream


def control_text(rng: np.random.Generator, lines: int = 30) -> bytes:
    words = ["incident", "memory", "dump", "key", "schedule", "file", "recovered", "sample", "host"]
    out = []
    for i in range(lines):
        n = int(rng.integers(4, 12))
        out.append(f"{i:03d} " + " ".join(words[int(j)] for j in rng.integers(0, len(words), n)))
    return ("\n".join(out) + "\n").encode()


# pads reproduce the appendix trims: 7 for the docx specimen, 3 for xlsx
CONTROL_TYPES = ("pdf", "doc", "docx", "xls", "xlsx", "txt")


def make_control_files(out_dir: str | os.PathLike, seed: int = 0) -> list[str]:
    """Write one control file of each supported type; return their paths."""
    os.makedirs(out_dir, exist_ok=True)
    makers = {
        "pdf": lambda r: control_pdf(r),
        "doc": lambda r: control_ole2(r, "WordDocument"),
        "docx": lambda r: control_ooxml(r, "docx", pad=7),
        "xls": lambda r: control_ole2(r, "Workbook"),
        "xlsx": lambda r: control_ooxml(r, "xlsx", pad=3),
        "txt": lambda r: control_text(r),
    }
    paths = []
    for i, ext in enumerate(CONTROL_TYPES):
        p = os.path.join(out_dir, f"control.{ext}")
        with open(p, "wb") as f:
            f.write(makers[ext](_rng(seed, _CONTROL, i)))
        paths.append(p)
    return paths


# -- encrypted corpora -------------------------------------------------------

@dataclass(frozen=True)
class CorpusSpec:
    input_dir: str
    output_dir: str
    family: str
    key_bytes: bytes
    seed: int = 0
    manifest_path: str | None = None
    marker: bytes = b"LOCK96"
    key_size: int | None = None

    def layout(self) -> FamilyLayout:
        layout = family_layout(self.family, self.key_size)
        if len(self.key_bytes) * 8 != layout.key_size:
            raise UsageError(f"{self.family} expects a {layout.key_size}-bit key, got {len(self.key_bytes) * 8}")
        return layout


def _cbc_encrypt(key: bytes, iv: bytes, data: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.CBC(iv)).encryptor()
    return enc.update(data) + enc.finalize()


def phobos_keyblock(seed: int) -> bytes:
    return _rng(seed, _KEYBLOCK).bytes(128)


def phobos_name(name: str, seed: int, marker: bytes) -> str:
    victim = hashlib.sha256(f"{seed}".encode()).hexdigest()[:8].upper()
    return f"{name}.id[{victim}-1096].[recovery@example.invalid].{marker.decode()}"


def encrypt_file(data: bytes, layout: FamilyLayout, key: bytes, iv: bytes,
                 keyblock: bytes = b"", marker: bytes = b"LOCK96") -> tuple[bytes, int]:
    """Encrypt ``data`` in the family layout; returns (output, pad length)."""
    if layout.family is Family.HEADER_IV:
        if len(data) <= HEADER_LEN:
            raise InputTooShort(f"{len(data)}-byte file; the header-IV layout needs at least 17 bytes")
        body = data[HEADER_LEN:]
        pad = -len(body) % BLOCK
        return iv + _cbc_encrypt(key, iv, body + bytes(pad)), pad
    if not data:
        raise InputTooShort("empty file")
    pad = -len(data) % BLOCK
    return _cbc_encrypt(key, iv, data + bytes(pad)) + iv + keyblock + marker, pad


def encrypt_corpus(spec: CorpusSpec) -> dict:
    """Encrypt every regular file of ``spec.input_dir`` (sorted by name)."""
    layout = spec.layout()
    os.makedirs(spec.output_dir, exist_ok=True)
    keyblock = phobos_keyblock(spec.seed) if layout.family is Family.PHOBOS_FOOTER else b""
    names = sorted(n for n in os.listdir(spec.input_dir) if os.path.isfile(os.path.join(spec.input_dir, n)))
    entries = []
    for i, name in enumerate(names):
        with open(os.path.join(spec.input_dir, name), "rb") as f:
            data = f.read()
        iv = _rng(spec.seed, _IV, i).bytes(16)
        out, pad = encrypt_file(data, layout, spec.key_bytes, iv, keyblock, spec.marker)
        enc_name = phobos_name(name, spec.seed, spec.marker) if keyblock else name
        with open(os.path.join(spec.output_dir, enc_name), "wb") as f:
            f.write(out)
        entries.append({
            "name": name,
            "encrypted_name": enc_name,
            "original_first16": data[:HEADER_LEN].hex(),
            "original_length": len(data),
            "iv": iv.hex(),
            "pad": pad,
            "trim": pad,
            "sha256": hashlib.sha256(data).hexdigest(),
        })
    manifest = {
        "family": spec.family.lower(),
        "layout": layout.family.value,
        "key_size": layout.key_size,
        "key_fingerprint": fingerprint(spec.key_bytes),
        "key_hex": spec.key_bytes.hex(),  # fixtures only; real casework keys never land here
        "seed": spec.seed,
        "input_dir": os.path.abspath(spec.input_dir),
        "marker": spec.marker.decode() if keyblock else None,
        "keyblock_hex": keyblock.hex() if keyblock else None,
        "files": entries,
    }
    if spec.manifest_path:
        write_json(manifest, spec.manifest_path)
    return manifest


def exact_plaintext(plain: bytes, entry: dict, layout: FamilyLayout) -> bytes:
    """Original bytes rebuilt from raw decryption output plus manifest data."""
    n = entry["original_length"]
    if layout.family is Family.HEADER_IV:
        return bytes.fromhex(entry["original_first16"]) + plain[:n - HEADER_LEN]
    return plain[:n]


def diff_blocks(a: bytes, b: bytes) -> list[int]:
    """Indices of 16-byte blocks where ``a`` and ``b`` differ (length tail included)."""
    n = max(len(a), len(b))
    return [i for i in range(math.ceil(n / BLOCK)) if a[i * BLOCK:(i + 1) * BLOCK] != b[i * BLOCK:(i + 1) * BLOCK]]


def corpus_roundtrip_check(encrypted_dir: str | os.PathLike, manifest: dict, key: bytes | CandidateKey,
                           sig_table=None, original_dir: str | os.PathLike | None = None) -> dict:
    """Decrypt every manifest file and compare against the originals.

    Two checks per file: the manifest-exact rebuild must hash to the
    recorded sha256 (and, when the originals are at hand, the differing
    16-byte blocks are listed), and the signature-table recovery via
    ``try_keys`` must reach a Valid verdict.
    """
    cand = key if isinstance(key, CandidateKey) else CandidateKey.from_key(key)
    layout = family_layout(manifest["family"], manifest.get("key_size"),
                           [manifest["marker"].encode()] if manifest.get("marker") else ())
    sig_table = sig_table if sig_table is not None else load_signature_table()
    original_dir = original_dir or manifest.get("input_dir")
    files = []
    for entry in manifest["files"]:
        path = os.path.join(encrypted_dir, entry["encrypted_name"])
        try:
            with open(path, "rb") as f:
                blob = f.read()
        except OSError as exc:
            raise ManifestMismatch(f"{path}: listed in manifest but unreadable ({exc.strerror})") from exc
        payload = parse_layout(blob, layout)
        expect_ct = entry["original_length"] - (HEADER_LEN if layout.family is Family.HEADER_IV else 0) + entry["pad"]
        if len(payload.ciphertext) != expect_ct:
            raise ManifestMismatch(f"{path}: ciphertext is {len(payload.ciphertext)} bytes, manifest implies {expect_ct}")
        if cand.key_size == layout.key_size:
            exact = exact_plaintext(decrypt_payload(payload, cand, layout.key_size, layout.mode), entry, layout)
        else:
            exact = b""
        equal = hashlib.sha256(exact).hexdigest() == entry["sha256"]
        rec = {"name": entry["name"], "byte_equal": equal}
        if not equal and original_dir:
            try:
                with open(os.path.join(original_dir, entry["name"]), "rb") as f:
                    rec["diff_blocks"] = diff_blocks(exact, f.read())
            except OSError:
                pass
        result = try_keys(blob, [cand], layout, sig_table, name=entry["encrypted_name"])
        rec["verdict"] = result.verdict.value
        rec["signature"] = result.signature_used.type_name if result.signature_used else None
        files.append(rec)
    n = len(files)
    return {
        "family": manifest["family"],
        "key_fingerprint": cand.fingerprint,
        "files": files,
        "byte_equal_fraction": sum(f["byte_equal"] for f in files) / n if n else 0.0,
        "valid_fraction": sum(f["verdict"] == Verdict.VALID.value for f in files) / n if n else 0.0,
    }


def read_manifest(path: str | os.PathLike) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("files"), list):
        raise ManifestMismatch(f"{path}: not a corpus manifest")
    return doc
