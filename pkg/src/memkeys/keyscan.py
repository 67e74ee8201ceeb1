"""Locate AES master keys in memory images by key-schedule verification.

A candidate offset ``o`` is reported for key size ``n`` when the ``n/8``
bytes at ``o`` expand (FIPS-197) to exactly the schedule stored at ``o``.
An optional Shannon-entropy gate on the master-key window runs first and
spares the schedule computation for structured data.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernel
from .errors import BadKeyLength, EmptyWindow, InputError, InvalidOptions
from .memimage import DEFAULT_CHUNK_SIZE, MemoryImage, chunks

KEY_SIZES = (128, 192, 256)
SCHEDULE_LEN = {128: 176, 192: 208, 256: 240}
DEFAULT_ENTROPY_THRESHOLD = 3.0

_SBOX = bytes(int(v) for v in _kernel.SBOX)
_RCON = bytes(int(v) for v in _kernel.RCON)


@dataclass(frozen=True)
class KeySchedule:
    key_size: int
    bytes: bytes

    @property
    def master(self) -> bytes:
        return self.bytes[:self.key_size // 8]

    def round_key(self, r: int) -> bytes:
        return self.bytes[16 * r:16 * (r + 1)]


def expand_key(master: bytes, key_size: int | None = None) -> KeySchedule:
    """FIPS-197 key expansion for 128/192/256-bit keys."""
    master = bytes(master)
    if key_size is None:
        key_size = len(master) * 8
    if key_size not in SCHEDULE_LEN or len(master) != key_size // 8:
        raise BadKeyLength(f"{len(master)}-byte key does not match key size {key_size}")
    nk = key_size // 32
    nw = 4 * (nk + 7)
    w = [list(master[4 * i:4 * i + 4]) for i in range(nk)]
    sbox = _SBOX
    for i in range(nk, nw):
        t = w[i - 1]
        if i % nk == 0:
            t = [sbox[t[1]] ^ _RCON[i // nk], sbox[t[2]], sbox[t[3]], sbox[t[0]]]
        elif nk == 8 and i % 8 == 4:
            t = [sbox[b] for b in t]
        prev = w[i - nk]
        w.append([prev[0] ^ t[0], prev[1] ^ t[1], prev[2] ^ t[2], prev[3] ^ t[3]])
    return KeySchedule(key_size, bytes(b for word in w for b in word))


def verify_schedule_at(window: bytes, key_size: int) -> bool:
    """True iff ``window`` is exactly the expanded schedule of its own head."""
    if len(window) != SCHEDULE_LEN.get(key_size, -1):
        return False
    return bytes(window) == expand_key(window[:key_size // 8], key_size).bytes


def count_schedules(rows: np.ndarray, key_size: int) -> int:
    """Number of rows in a 2-D uint8 array that verify as ``key_size`` schedules."""
    rows = np.ascontiguousarray(rows, dtype=np.uint8)
    if rows.ndim != 2 or rows.shape[1] < SCHEDULE_LEN[key_size]:
        raise InvalidOptions(f"rows must be (N, >={SCHEDULE_LEN[key_size]}) uint8")
    return int(_kernel.verify_rows(rows, key_size // 32, _kernel.SBOX, _kernel.RCON))


def shannon_entropy(window: bytes) -> float:
    """Byte-level Shannon entropy in bits per byte."""
    n = len(window)
    if n == 0:
        raise EmptyWindow("entropy of an empty window")
    h = -math.fsum((c / n) * math.log2(c / n) for c in Counter(bytes(window)).values())
    return h + 0.0  # normalise -0.0


def fingerprint(key_bytes: bytes) -> str:
    return hashlib.sha256(bytes(key_bytes)).hexdigest()


@dataclass(frozen=True)
class CandidateKey:
    key_bytes: bytes
    key_size: int
    offset: int | None
    entropy: float
    fingerprint: str
    phys_addr: int | None = None

    @classmethod
    def from_key(cls, key_bytes: bytes, offset: int | None = None,
                 phys_addr: int | None = None) -> CandidateKey:
        key_bytes = bytes(key_bytes)
        if len(key_bytes) * 8 not in SCHEDULE_LEN:
            raise BadKeyLength(f"{len(key_bytes)}-byte key is not an AES key")
        return cls(key_bytes, len(key_bytes) * 8, offset, shannon_entropy(key_bytes),
                   fingerprint(key_bytes), phys_addr)

    @property
    def key_hex(self) -> str:
        return self.key_bytes.hex()


@dataclass(frozen=True)
class ScanOptions:
    key_sizes: tuple[int, ...] = KEY_SIZES
    entropy_threshold: float = DEFAULT_ENTROPY_THRESHOLD
    prefilter_enabled: bool = True
    stride: int = 1
    worker_count: int = 1

    def __post_init__(self):
        sizes = tuple(sorted(set(self.key_sizes)))
        if not sizes or any(s not in SCHEDULE_LEN for s in sizes):
            raise InvalidOptions(f"key sizes must be a non-empty subset of {KEY_SIZES}, got {self.key_sizes}")
        object.__setattr__(self, "key_sizes", sizes)
        if not 0.0 <= self.entropy_threshold <= 8.0:
            raise InvalidOptions(f"entropy threshold {self.entropy_threshold} outside [0, 8]")
        if self.stride < 1:
            raise InvalidOptions(f"stride must be >= 1, got {self.stride}")
        if self.worker_count < 1:
            raise InvalidOptions(f"worker_count must be >= 1, got {self.worker_count}")


class _KernelArgs:
    """Per-options constants handed to the compiled scan loop."""

    def __init__(self, opts: ScanOptions):
        self.sizes = np.array([s in opts.key_sizes for s in KEY_SIZES], dtype=np.int64)
        ks = [s // 8 for s in KEY_SIZES]
        self.limits = np.array([_kernel.entropy_limit(k, opts.entropy_threshold) for k in ks],
                               dtype=np.int64)
        self.clogs = np.zeros((len(ks), 33), dtype=np.int64)
        for j, k in enumerate(ks):
            self.clogs[j, :k + 1] = _kernel.clog_table(k)
        self.min_distinct = max(1, math.ceil(2 ** (opts.entropy_threshold - _kernel.ENTROPY_SLACK)))
        self.prefilter = bool(opts.prefilter_enabled)


def _scan_chunk(chunk, image: MemoryImage, opts: ScanOptions, kargs: _KernelArgs) -> list[CandidateKey]:
    buf = np.frombuffer(chunk.data, dtype=np.uint8)
    offs, bits = _kernel.scan_buffer(buf, chunk.owned, chunk.base_offset, opts.stride, kargs.sizes,
                                    kargs.prefilter, kargs.limits, kargs.min_distinct, kargs.clogs,
                                    _kernel.SBOX, _kernel.RCON)
    seg = image.segments[chunk.segment_index]
    seg_start = image.segment_start(chunk.segment_index)
    found = []
    for rel, nbits in zip(offs, bits):
        key = chunk.data[rel:rel + nbits // 8]
        cand = CandidateKey.from_key(key, chunk.base_offset + rel,
                                     seg.phys_addr + chunk.base_offset + rel - seg_start)
        # the compiled gate carries a tiny slack; the exact comparison decides
        if opts.prefilter_enabled and cand.entropy < opts.entropy_threshold:
            continue
        found.append(cand)
    return found


def scan(image: MemoryImage, opts: ScanOptions | None = None, chunk_size: int = DEFAULT_CHUNK_SIZE,
         progress: Callable[[int], None] | None = None) -> list[CandidateKey]:
    """Scan every segment of ``image`` for AES key schedules.

    Results are sorted by (offset, key_size) and do not depend on
    ``worker_count`` or ``chunk_size``.  ``progress`` receives the number
    of bytes owned by each finished chunk.
    """
    opts = opts or ScanOptions()
    kargs = _KernelArgs(opts)
    results: list[CandidateKey] = []
    if opts.worker_count == 1:
        for ch in chunks(image, chunk_size):
            results.extend(_scan_chunk(ch, image, opts, kargs))
            if progress:
                progress(ch.owned)
    else:
        # bounded submission keeps resident memory at O(chunk_size * workers)
        slots = threading.BoundedSemaphore(2 * opts.worker_count)
        futures = []
        with ThreadPoolExecutor(max_workers=opts.worker_count) as pool:
            for ch in chunks(image, chunk_size):
                slots.acquire()
                fut = pool.submit(_scan_chunk, ch, image, opts, kargs)
                fut.add_done_callback(lambda _f: slots.release())
                if progress:
                    fut.add_done_callback(lambda _f, n=ch.owned: progress(n))
                futures.append(fut)
            for fut in futures:
                results.extend(fut.result())
    results.sort(key=lambda c: (c.offset, c.key_size))
    return results


@dataclass
class KeyGroup:
    fingerprint: str
    key_bytes: bytes
    key_size: int
    offsets: list[int] = field(default_factory=list)


def dedupe(candidates: Iterable[CandidateKey]) -> list[KeyGroup]:
    """Group candidates by key, keeping every offset, in first-seen order."""
    groups: dict[tuple[bytes, int], KeyGroup] = {}
    for c in candidates:
        g = groups.get((c.key_bytes, c.key_size))
        if g is None:
            g = groups[(c.key_bytes, c.key_size)] = KeyGroup(c.fingerprint, c.key_bytes, c.key_size)
        g.offsets.append(c.offset)
    return list(groups.values())


# -- scan report ---------------------------------------------------------------

def candidate_record(c: CandidateKey, reveal_keys: bool = False) -> dict:
    rec = {"offset": c.offset, "key_size": c.key_size, "entropy": round(c.entropy, 6),
           "fingerprint": c.fingerprint}
    if c.phys_addr is not None:
        rec["phys_addr"] = c.phys_addr
    if reveal_keys:
        rec["key_hex"] = c.key_hex
    return rec


def build_report(image: MemoryImage, opts: ScanOptions, candidates: Sequence[CandidateKey],
                 reveal_keys: bool = False) -> dict:
    opt_rec = asdict(opts)
    opt_rec["key_sizes"] = list(opts.key_sizes)
    return {
        "image": image.source_path,
        "format": image.format.value,
        "scanned_bytes": image.total_bytes,
        "options": opt_rec,
        "candidates": [candidate_record(c, reveal_keys) for c in candidates],
    }


def write_report(report: dict, path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2)
        f.write("\n")


def load_report(path: str | os.PathLike) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read scan report {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("candidates"), list):
        raise InputError(f"{path}: not a scan report (no candidates list)")
    return doc


def keys_from_report(doc: dict) -> list[CandidateKey]:
    """Rebuild candidate keys from a report written with revealed keys."""
    keys = []
    for rec in doc["candidates"]:
        if "key_hex" not in rec:
            raise InputError("scan report has no key_hex fields; rescan with --reveal-keys")
        keys.append(CandidateKey.from_key(bytes.fromhex(rec["key_hex"]), rec.get("offset"),
                                          rec.get("phys_addr")))
    return keys
