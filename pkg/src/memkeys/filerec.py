"""Decrypt ransomware-encrypted files with recovered keys and repair them.

Two ciphertext layouts are modelled:

``HeaderIv``
    The first 16 bytes of the file were overwritten with the IV; the rest
    is the CBC ciphertext of the original bytes [16, EOF) plus zero padding.
    Those first 16 original bytes are lost and must be rebuilt from a
    per-type signature table.

``PhobosFooter``
    ``ciphertext || pad || IV(16) || keyblock(128) || marker``.  The whole
    original file is recoverable.
"""

from __future__ import annotations

import enum
import json
import os
import string
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Sequence

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import BadKeySize, InputError, MarkerNotFound, MisalignedCiphertext, TooShort
from .keyscan import CandidateKey

BLOCK = 16
HEADER_LEN = 16
MARKER_SEARCH_WINDOW = 64
EOCD_SIG = b"PK\x05\x06"
EOCD_SEARCH = 65557  # 22-byte record + 65535-byte max comment
OLE2_MAGIC = bytes.fromhex("d0cf11e0a1b11ae1")
ZIP_MAGIC = b"PK\x03\x04"

_MODES = {"CBC": modes.CBC}  # other IV-based modes can be registered here


class Family(str, enum.Enum):
    HEADER_IV = "HeaderIv"
    PHOBOS_FOOTER = "PhobosFooter"


class Verdict(str, enum.Enum):
    VALID = "Valid"
    PLAUSIBLE = "Plausible"
    FAILED = "Failed"


@dataclass(frozen=True)
class FooterSpec:
    markers: tuple[bytes, ...] = (b"LOCK96", b"DAT260")
    keyblock_len: int = 128
    iv_before_keyblock: bool = True


@dataclass(frozen=True)
class FamilyLayout:
    family: Family
    key_size: int
    iv_len: int = 16
    footer: FooterSpec | None = None
    mode: str = "CBC"


FAMILIES = {
    "notpetya": FamilyLayout(Family.HEADER_IV, 128),
    "badrabbit": FamilyLayout(Family.HEADER_IV, 128),
    "phobos": FamilyLayout(Family.PHOBOS_FOOTER, 256, footer=FooterSpec()),
}


def family_layout(name: str, key_size: int | None = None, extra_markers: Sequence[bytes] = ()) -> FamilyLayout:
    try:
        layout = FAMILIES[name.lower()]
    except KeyError:
        raise InputError(f"unknown family {name!r}; expected one of {sorted(FAMILIES)}") from None
    if key_size is not None:
        layout = replace(layout, key_size=key_size)
    if extra_markers and layout.footer is not None:
        markers = layout.footer.markers + tuple(m for m in extra_markers if m not in layout.footer.markers)
        layout = replace(layout, footer=replace(layout.footer, markers=markers))
    return layout


@dataclass(frozen=True)
class EncryptedPayload:
    iv: bytes
    ciphertext: bytes
    source_family: Family
    footer_keyblock: bytes | None = None
    marker: bytes | None = None
    discarded_pad: int = 0


def parse_layout(file_bytes: bytes, layout: FamilyLayout) -> EncryptedPayload:
    """Slice IV, ciphertext and footer out of an encrypted file."""
    data = bytes(file_bytes)
    if layout.family is Family.HEADER_IV:
        if len(data) < layout.iv_len + BLOCK:
            raise TooShort(f"{len(data)} bytes cannot hold a {layout.iv_len}-byte IV and one block")
        ct = data[layout.iv_len:]
        if len(ct) % BLOCK:
            raise MisalignedCiphertext(f"ciphertext length {len(ct)} is not a multiple of {BLOCK}")
        return EncryptedPayload(data[:layout.iv_len], ct, layout.family)

    footer = layout.footer or FooterSpec()
    tail_start = max(0, len(data) - MARKER_SEARCH_WINDOW)
    tail = data[tail_start:]
    best = None
    for m in footer.markers:
        pos = tail.rfind(m)
        if pos >= 0 and (best is None or pos + len(m) > best[0] + len(best[1])):
            best = (pos, m)
    if best is None:
        raise MarkerNotFound(f"none of {[m.decode('latin-1') for m in footer.markers]} in the final "
                             f"{MARKER_SEARCH_WINDOW} bytes")
    marker_at = tail_start + best[0]
    meta_len = footer.keyblock_len + layout.iv_len
    region_end = marker_at - meta_len
    if region_end < BLOCK:
        raise TooShort(f"{len(data)} bytes cannot hold footer ({meta_len + len(best[1])}) and one block")
    if footer.iv_before_keyblock:
        iv = data[region_end:region_end + layout.iv_len]
        keyblock = data[region_end + layout.iv_len:marker_at]
    else:
        keyblock = data[region_end:region_end + footer.keyblock_len]
        iv = data[region_end + footer.keyblock_len:marker_at]
    pad = region_end % BLOCK
    return EncryptedPayload(iv, data[:region_end - pad], layout.family, keyblock, best[1], pad)


def decrypt_payload(payload: EncryptedPayload, key: CandidateKey, key_size: int | None = None,
                    mode: str = "CBC") -> bytes:
    """Raw block decryption; no padding is interpreted or removed."""
    if key_size is None:
        key_size = 256 if payload.source_family is Family.PHOBOS_FOOTER else 128
    if key.key_size != key_size or len(key.key_bytes) * 8 != key_size:
        raise BadKeySize(f"{key.key_size}-bit key where {key_size}-bit expected")
    if not payload.ciphertext or len(payload.ciphertext) % BLOCK:
        raise MisalignedCiphertext(f"ciphertext length {len(payload.ciphertext)}")
    if mode not in _MODES:
        raise InputError(f"unsupported cipher mode {mode!r}")
    dec = Cipher(algorithms.AES(key.key_bytes), _MODES[mode](payload.iv)).decryptor()
    return dec.update(payload.ciphertext) + dec.finalize()


# -- signatures and probes -----------------------------------------------------

@dataclass(frozen=True)
class FileSignature:
    type_name: str
    header16: bytes
    trailer_trim: int
    probe: str
    extensions: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.header16) != HEADER_LEN:
            raise InputError(f"{self.type_name}: header must be {HEADER_LEN} bytes, got {len(self.header16)}")
        if self.trailer_trim < 0:
            raise InputError(f"{self.type_name}: negative trailer trim")
        if self.probe not in PROBES:
            raise InputError(f"{self.type_name}: unknown probe {self.probe!r}")


def _printable_ratio(data: bytes) -> float:
    body = data.rstrip(b"\0")  # zero padding from the final cipher block is not content
    if not body:
        return 0.0
    ok = sum(1 for b in body if b in _TEXT_BYTES)
    return ok / len(body)


_TEXT_BYTES = frozenset(string.printable.encode())


def _ole2_header_ok(data: bytes) -> bool:
    if len(data) < 34:
        return False
    major = int.from_bytes(data[26:28], "little")
    shift = int.from_bytes(data[30:32], "little")
    return (data[28:30] == b"\xfe\xff" and (major, shift) in ((3, 9), (4, 12))
            and data[32:34] == b"\x06\x00")


# Each probe is a list of (start, end, predicate) sub-conditions; start/end
# give the byte range the condition inspects (None = relative to EOF) so
# conditions answered purely by a reconstructed header can be discounted.
PROBES = {
    "pdf": [
        (0, 4, lambda d: d.startswith(b"%PDF")),
        (None, 1024, lambda d: b"%%EOF" in d[-1024:]),
    ],
    "zip": [
        (0, 4, lambda d: d.startswith(ZIP_MAGIC)),
        (None, EOCD_SEARCH, lambda d: EOCD_SIG in d[-EOCD_SEARCH:]),
    ],
    "ole2": [
        (0, 8, lambda d: d.startswith(OLE2_MAGIC)),
        (24, 34, _ole2_header_ok),
    ],
    "text": [
        (0, None, lambda d: _printable_ratio(d) >= 0.95),
    ],
}


def validate_plaintext(data: bytes, sig: FileSignature, trusted_prefix: int = 0) -> tuple[Verdict, float]:
    """Score ``data`` against the probe of ``sig``.

    ``trusted_prefix`` names leading bytes that were written by the repair
    step rather than recovered by decryption; conditions that only look at
    those bytes are not counted, and the text probe skips them.
    """
    met = counted = 0
    for start, end, pred in PROBES[sig.probe]:
        if start is not None and end is not None and end <= trusted_prefix:
            continue
        counted += 1
        target = data[trusted_prefix:] if end is None and start == 0 else data
        met += bool(pred(target))
    score = met / counted if counted else 0.0
    if score == 1.0:
        return Verdict.VALID, score
    if score >= 0.5:
        return Verdict.PLAUSIBLE, score
    return Verdict.FAILED, score


def reconstruct_header(plaintext: bytes, sig: FileSignature, trim: int | None = None) -> bytes:
    """``header16 || plaintext`` with ``trim`` (default: the signature's) bytes cut off the end."""
    trim = sig.trailer_trim if trim is None else trim
    out = sig.header16 + bytes(plaintext)
    return out[:len(out) - trim] if trim else out


def auto_trim(data: bytes, sig: FileSignature) -> bytes:
    """Drop trailing padding using the format's own end marker where it has one."""
    if sig.probe == "zip":
        pos = data.rfind(EOCD_SIG)
        while pos >= 0:
            if pos + 22 <= len(data):
                end = pos + 22 + int.from_bytes(data[pos + 20:pos + 22], "little")
                if end <= len(data):
                    return data[:end]
            pos = data.rfind(EOCD_SIG, 0, pos)
        return data
    if sig.probe == "pdf":
        pos = data.rfind(b"%%EOF")
        if pos < 0:
            return data
        end = pos + 5
        while end < len(data) and data[end] in b"\r\n":
            end += 1
        return data[:end]
    if sig.probe == "text":
        return data.rstrip(b"\0")
    return data


def load_signature_table(path: str | os.PathLike | None = None) -> list[FileSignature]:
    if path is None:
        text = resources.files("memkeys").joinpath("data/signatures.json").read_text()
        source = "built-in table"
    else:
        try:
            with open(path) as f:
                text = f.read()
        except OSError as exc:
            raise InputError(f"cannot read signature table {path}: {exc}") from exc
        source = os.fspath(path)
    try:
        doc = json.loads(text)
        return [FileSignature(r["name"], bytes.fromhex(r["header_hex"]), int(r.get("trim", 0)), r["probe"],
                              tuple(r.get("extensions", [r["name"]])))
                for r in doc["signatures"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{source}: malformed signature table: {exc}") from exc


def signatures_for_name(name: str | None, table: Sequence[FileSignature]) -> list[FileSignature]:
    """Signatures whose extension appears in ``name``; all of them when none does.

    Every dot-separated part is considered (rightmost wins) so renamed files
    such as ``report.docx.id[...].LOCK96`` still resolve.
    """
    if name:
        parts = os.path.basename(name).lower().split(".")[1:]
        for part in reversed(parts):
            hits = [s for s in table if part in s.extensions]
            if hits:
                return hits
    return list(table)


# -- batch recovery ------------------------------------------------------------

@dataclass
class RecoveryResult:
    key_fingerprint: str | None
    plaintext: bytes
    signature_used: FileSignature | None
    verdict: Verdict
    score: float
    payload: EncryptedPayload | None = field(default=None, repr=False)


def try_keys(file_bytes: bytes, keys: Sequence[CandidateKey], layout: FamilyLayout,
             sig_table: Sequence[FileSignature], name: str | None = None,
             use_auto_trim: bool = False) -> RecoveryResult:
    """Try every key against every applicable signature.

    Returns the first Valid result, else the best-scoring Plausible one,
    else Failed.  Keys of the wrong size for the layout are skipped.
    """
    payload = parse_layout(file_bytes, layout)
    sigs = signatures_for_name(name, sig_table)
    best: RecoveryResult | None = None
    best_failed = 0.0
    for key in keys:
        if key.key_size != layout.key_size:
            continue
        plain = decrypt_payload(payload, key, layout.key_size, layout.mode)
        for sig in sigs:
            if layout.family is Family.HEADER_IV:
                out = reconstruct_header(plain, sig, 0 if use_auto_trim else None)
                trusted = HEADER_LEN
            else:
                out, trusted = plain, 0
            if use_auto_trim:
                out = auto_trim(out, sig)
            verdict, score = validate_plaintext(out, sig, trusted)
            if verdict is Verdict.VALID:
                return RecoveryResult(key.fingerprint, out, sig, verdict, score, payload)
            if verdict is Verdict.PLAUSIBLE:
                if best is None or score > best.score:
                    best = RecoveryResult(key.fingerprint, out, sig, verdict, score, payload)
            else:
                best_failed = max(best_failed, score)
    if best is not None:
        return best
    return RecoveryResult(None, b"", None, Verdict.FAILED, best_failed, payload)


def result_record(path: str, family: str, result: RecoveryResult, output_path: str | None) -> dict:
    return {
        "file": path,
        "family": family,
        "key_fingerprint": result.key_fingerprint,
        "verdict": result.verdict.value,
        "score": result.score,
        "signature": result.signature_used.type_name if result.signature_used else None,
        "output_path": output_path,
    }
