"""memkeys command line.

Subcommands: scan, decrypt, fixup, timeline, synth {image,corpus,check}.

Exit codes: 0 findings (keys found / at least one Valid file), 1 finished
without findings, 2 usage error, 3 input error, 4 internal error.
Raw keys are only printed or written with ``--reveal-keys``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback

from . import __version__
from .errors import InputError, MemkeysError, UsageError
from .filerec import (
    Verdict,
    auto_trim,
    family_layout,
    load_signature_table,
    reconstruct_header,
    result_record,
    try_keys,
    validate_plaintext,
    FAMILIES,
)
from .keyscan import (
    KEY_SIZES,
    CandidateKey,
    ScanOptions,
    build_report,
    keys_from_report,
    load_report,
    scan,
    write_report,
)
from .memimage import DEFAULT_CHUNK_SIZE, open_image

EXIT_FOUND, EXIT_NONE, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3, 4

_SUFFIXES = {"": 1, "K": 1 << 10, "M": 1 << 20, "G": 1 << 30}


def parse_size(text: str) -> int:
    """``16M`` -> 16777216; suffixes K/M/G are binary multiples."""
    t = text.strip().upper().removesuffix("IB").removesuffix("B")
    unit = t[-1:] if t[-1:] in _SUFFIXES else ""
    try:
        n = int(t[:len(t) - len(unit)]) * _SUFFIXES[unit]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}") from None
    if n <= 0:
        raise argparse.ArgumentTypeError(f"size must be positive: {text!r}")
    return n


def parse_key_sizes(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad key size list {text!r}") from None
    bad = [s for s in sizes if s not in KEY_SIZES]
    if not sizes or bad:
        raise argparse.ArgumentTypeError(f"key sizes must be drawn from {KEY_SIZES}")
    return sizes


def _out(msg: str = "") -> None:
    print(msg, flush=True)


# -- scan ----------------------------------------------------------------------

def cmd_scan(args) -> int:
    opts = ScanOptions(
        key_sizes=args.key_sizes,
        entropy_threshold=args.entropy_threshold,
        prefilter_enabled=not (args.no_prefilter or args.mode == "interrogate"),
        stride=args.stride,
        worker_count=args.workers,
    )
    image = open_image(args.image, args.format)
    cands = scan(image, opts, chunk_size=args.chunk_size)
    report = build_report(image, opts, cands, args.reveal_keys)
    if args.out:
        write_report(report, args.out)
    _out(f"{image.source_path}: {image.format.value}, {len(image.segments)} segment(s), "
         f"{image.total_bytes} bytes, prefilter {'on' if opts.prefilter_enabled else 'off'}")
    for c in cands:
        line = f"  offset {c.offset:#012x}  AES-{c.key_size}  entropy {c.entropy:.3f}  {c.fingerprint[:16]}"
        if c.phys_addr is not None and image.format.value == "ElfCore":
            line += f"  phys {c.phys_addr:#x}"
        if args.reveal_keys:
            line += f"  key {c.key_hex}"
        _out(line)
    _out(f"{len(cands)} candidate(s)")
    return EXIT_FOUND if cands else EXIT_NONE


# -- decrypt -------------------------------------------------------------------

def load_keys(spec: str) -> list[CandidateKey]:
    """A scan report path (written with --reveal-keys) or comma-separated hex keys."""
    if os.path.isfile(spec):
        return keys_from_report(load_report(spec))
    keys = []
    for item in (s.strip() for s in spec.split(",")):
        if not item:
            continue
        try:
            raw = bytes.fromhex(item)
        except ValueError:
            raise UsageError(f"--keys: {item[:20]!r} is neither a file nor hex") from None
        keys.append(CandidateKey.from_key(raw))
    if not keys:
        raise UsageError("--keys: no keys given")
    return keys


def cmd_decrypt(args) -> int:
    layout = family_layout(args.family, args.key_size, [m.encode() for m in args.marker])
    keys = load_keys(args.keys)
    table = load_signature_table(args.sig_table)
    os.makedirs(args.out_dir, exist_ok=True)
    records, n_valid, n_error = [], 0, 0
    for path in args.files:
        try:
            with open(path, "rb") as f:
                blob = f.read()
            result = try_keys(blob, keys, layout, table, name=path, use_auto_trim=args.auto_trim)
        except (OSError, InputError) as exc:
            n_error += 1
            _out(f"{path}: error: {exc}")
            rec = {"file": path, "family": args.family, "key_fingerprint": None, "verdict": "Failed",
                   "score": 0.0, "signature": None, "output_path": None, "error": str(exc)}
            records.append(rec)
            continue
        out_path = None
        if result.verdict is not Verdict.FAILED:
            out_path = os.path.join(args.out_dir, os.path.basename(path) + ".recovered")
            with open(out_path, "wb") as f:
                f.write(result.plaintext)
        n_valid += result.verdict is Verdict.VALID
        sig = result.signature_used.type_name if result.signature_used else "-"
        fp = result.key_fingerprint[:16] if result.key_fingerprint else "-"
        _out(f"{path}: {result.verdict.value} (score {result.score:.2f}, {sig}, key {fp})")
        records.append(result_record(path, args.family, result, out_path))
    report = {"family": args.family, "files": records}
    report_path = args.report or os.path.join(args.out_dir, "recovery_report.json")
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    _out(f"{n_valid}/{len(records)} Valid; report {report_path}")
    if n_valid:
        return EXIT_FOUND
    return EXIT_INPUT if n_error == len(records) else EXIT_NONE


# -- fixup ---------------------------------------------------------------------

def cmd_fixup(args) -> int:
    table = {s.type_name: s for s in load_signature_table(args.sig_table)}
    if args.type not in table:
        raise UsageError(f"unknown --type {args.type!r}; known: {', '.join(sorted(table))}")
    sig = table[args.type]
    if args.output and len(args.files) != 1:
        raise UsageError("-o/--output needs exactly one input file")
    n_valid = 0
    for path in args.files:
        try:
            with open(path, "rb") as f:
                plain = f.read()
        except OSError as exc:
            raise InputError(f"{path}: {exc.strerror}") from exc
        out = reconstruct_header(plain, sig, 0 if args.auto_trim else args.trim)
        if args.auto_trim:
            out = auto_trim(out, sig)
        if args.output:
            dest = args.output
        else:
            dest = os.path.join(args.out_dir or os.path.dirname(path) or ".",
                                "reconstructed-" + os.path.basename(path))
        with open(dest, "wb") as f:
            f.write(out)
        verdict, score = validate_plaintext(out, sig, trusted_prefix=16)
        n_valid += verdict is Verdict.VALID
        _out(f"{path} -> {dest}: {len(out)} bytes, {verdict.value} (score {score:.2f})")
    return EXIT_FOUND if n_valid else EXIT_NONE


# -- timeline ------------------------------------------------------------------

def cmd_timeline(args) -> int:
    from . import timeline as tl

    records = tl.records_from_manifest(args.manifest)
    events = tl.events_from_file(args.events) if args.events else []
    t = tl.build_timeline(records, args.gap, events)
    body = tl.render(t, args.format)
    if args.out:
        with open(args.out, "wb") as f:
            f.write(body)
        _out(tl.render_text(t).rstrip("\n"))
    else:
        sys.stdout.buffer.write(body)
        sys.stdout.flush()
    return EXIT_FOUND if t.intervals else EXIT_NONE


# -- synth ---------------------------------------------------------------------

def cmd_synth_image(args) -> int:
    from . import synth

    segments = tuple(parse_size(s) for s in args.segments.split(",")) if args.segments else None
    probe = synth.ImageSpec(args.size, container=args.container, segments=segments)
    plants = synth.random_plants(args.size, args.plants, args.seed, args.key_sizes,
                                 probe.segment_lengths(), args.low_entropy)
    spec = synth.ImageSpec(args.size, args.filler, args.seed, args.high_entropy_fraction, plants,
                           args.container, segments, args.elf_class)
    manifest_path = args.manifest or args.out + ".manifest.json"
    m = synth.make_memory_image(spec, args.out, manifest_path)
    _out(f"{args.out}: {m['container']}, {args.size} bytes, {args.filler} filler, "
         f"{len(plants)} plant(s); manifest {manifest_path}")
    for p in m["plants"]:
        _out(f"  offset {p['offset']:#012x}  AES-{p['key_size']}  {p['fingerprint'][:16]}")
    return EXIT_FOUND


def cmd_synth_corpus(args) -> int:
    from . import synth

    layout = family_layout(args.family)
    if args.key:
        try:
            key = bytes.fromhex(args.key)
        except ValueError:
            raise UsageError("--key must be hex") from None
    else:
        key = synth.random_key(synth._rng(args.seed, synth._KEY), layout.key_size)
    input_dir = args.input_dir
    if input_dir is None:
        input_dir = os.path.join(args.out_dir, "originals")
        synth.make_control_files(input_dir, args.seed)
    enc_dir = os.path.join(args.out_dir, "encrypted")
    manifest_path = args.manifest or os.path.join(args.out_dir, "manifest.json")
    spec = synth.CorpusSpec(input_dir, enc_dir, args.family, key, args.seed, manifest_path,
                            args.marker.encode())
    m = synth.encrypt_corpus(spec)
    _out(f"{len(m['files'])} file(s) -> {enc_dir} ({m['layout']}, AES-{m['key_size']}, "
         f"key {m['key_fingerprint'][:16]}); manifest {manifest_path}")
    return EXIT_FOUND


def cmd_synth_check(args) -> int:
    from . import synth

    manifest = synth.read_manifest(args.manifest)
    key = load_keys(args.key or manifest.get("key_hex") or "")[0]
    report = synth.corpus_roundtrip_check(args.encrypted_dir, manifest, key,
                                          load_signature_table(args.sig_table))
    for f in report["files"]:
        extra = f" diff blocks {f['diff_blocks']}" if f.get("diff_blocks") else ""
        _out(f"  {f['name']}: byte_equal={f['byte_equal']} verdict={f['verdict']}{extra}")
    _out(f"byte-equal {report['byte_equal_fraction']:.0%}, Valid {report['valid_fraction']:.0%}")
    if args.out:
        synth.write_json(report, args.out)
    ok = report["files"] and report["byte_equal_fraction"] == 1.0 and report["valid_fraction"] == 1.0
    return EXIT_FOUND if ok else EXIT_NONE


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memkeys", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"memkeys {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scan", help="search a memory image for AES key schedules")
    s.add_argument("image")
    s.add_argument("-k", "--key-sizes", type=parse_key_sizes, default=KEY_SIZES,
                   help="comma-separated subset of 128,192,256 (default: all)")
    s.add_argument("--entropy-threshold", type=float, default=3.0,
                   help="minimum master-key entropy in bits/byte (default 3.0)")
    s.add_argument("--no-prefilter", action="store_true", help="verify every offset")
    s.add_argument("--mode", choices=("findaes", "interrogate"), default="findaes",
                   help="'interrogate' is shorthand for --no-prefilter")
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--chunk-size", type=parse_size, default=DEFAULT_CHUNK_SIZE)
    s.add_argument("--format", choices=("ElfCore", "Raw"), default=None,
                   help="force the container format instead of sniffing it")
    s.add_argument("--reveal-keys", action="store_true", help="include raw key bytes in output")
    s.add_argument("--out", help="write the JSON scan report here")
    s.set_defaults(func=cmd_scan)

    d = sub.add_parser("decrypt", help="recover encrypted files with candidate keys")
    d.add_argument("--family", required=True, choices=sorted(FAMILIES))
    d.add_argument("--keys", required=True, help="scan report (with key_hex) or comma-separated hex keys")
    d.add_argument("--key-size", type=int, choices=KEY_SIZES, help="override the family's key size")
    d.add_argument("--marker", action="append", default=[], help="extra Phobos footer marker")
    d.add_argument("--sig-table", help="signature table JSON (default: built-in)")
    d.add_argument("--auto-trim", action="store_true", help="trim by format end markers, not fixed counts")
    d.add_argument("--out-dir", required=True)
    d.add_argument("--report", help="batch report path (default: OUT_DIR/recovery_report.json)")
    d.add_argument("files", nargs="+")
    d.set_defaults(func=cmd_decrypt)

    f = sub.add_parser("fixup", help="rebuild the lost 16-byte header of decrypted files")
    f.add_argument("--type", required=True, help="signature type, e.g. pdf, doc, docx, xls, xlsx, txt")
    f.add_argument("--trim", type=int, default=None, help="override the trailing-byte trim")
    f.add_argument("--auto-trim", action="store_true")
    f.add_argument("--sig-table")
    f.add_argument("-o", "--output", help="output path (single input only)")
    f.add_argument("--out-dir", help="directory for reconstructed-<name> outputs")
    f.add_argument("files", nargs="+")
    f.set_defaults(func=cmd_fixup)

    t = sub.add_parser("timeline", help="key-presence timeline from a series of scan reports")
    t.add_argument("--manifest", required=True, help="JSON list of {label, t_offset_seconds, scan_report_path}")
    t.add_argument("--events", help="JSON list of {t_offset_seconds, label}")
    t.add_argument("--gap", type=int, default=0, help="absent samples to bridge (default 0)")
    t.add_argument("--format", choices=("text", "json", "svg"), default="text")
    t.add_argument("--out")
    t.set_defaults(func=cmd_timeline)

    sy = sub.add_parser("synth", help="generate fixtures (seeds default to 0)")
    ssub = sy.add_subparsers(dest="synth_command", required=True)
    si = ssub.add_parser("image", help="memory image with planted key schedules")
    si.add_argument("--size", type=parse_size, required=True, help="e.g. 16M")
    si.add_argument("--plants", type=int, default=1)
    si.add_argument("--seed", type=int, default=0)
    si.add_argument("--filler", choices=("zeros", "random", "mixed"), default="zeros")
    si.add_argument("--high-entropy-fraction", type=float, default=0.1)
    si.add_argument("--container", choices=("raw", "elf"), default="raw")
    si.add_argument("--elf-class", type=int, choices=(32, 64), default=64)
    si.add_argument("--segments", help="comma-separated PT_LOAD lengths, e.g. 8M,8M")
    si.add_argument("-k", "--key-sizes", type=parse_key_sizes, default=KEY_SIZES)
    si.add_argument("--low-entropy", action="store_true", help="plant structured keys the prefilter skips")
    si.add_argument("--out", required=True)
    si.add_argument("--manifest", help="default: OUT.manifest.json")
    si.set_defaults(func=cmd_synth_image)

    sc = ssub.add_parser("corpus", help="encrypt control files in a family layout")
    sc.add_argument("--family", required=True, choices=sorted(FAMILIES))
    sc.add_argument("--input-dir", help="files to encrypt (default: generate control files)")
    sc.add_argument("--key", help="hex key (default: derived from the seed)")
    sc.add_argument("--seed", type=int, default=0)
    sc.add_argument("--marker", default="LOCK96")
    sc.add_argument("--out-dir", required=True)
    sc.add_argument("--manifest", help="default: OUT_DIR/manifest.json")
    sc.set_defaults(func=cmd_synth_corpus)

    sk = ssub.add_parser("check", help="round-trip an encrypted corpus against its manifest")
    sk.add_argument("--manifest", required=True)
    sk.add_argument("--encrypted-dir", required=True)
    sk.add_argument("--key", help="hex key (default: the manifest's fixture key)")
    sk.add_argument("--sig-table")
    sk.add_argument("--out")
    sk.set_defaults(func=cmd_synth_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_FOUND
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"memkeys: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MemkeysError as exc:
        print(f"memkeys: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:  # noqa: BLE001 - last-resort guard for the documented exit code
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
