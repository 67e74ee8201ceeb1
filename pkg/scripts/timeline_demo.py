"""Build a NotPetya-style dump series, scan every dump and render the key timeline.

One synthetic dump per sampling interval; the key is resident from minute 2
until the simulated reboot at minute 61.  Outputs land in --out-dir:
dumps, per-dump scan reports, manifest.json, timeline.svg and timeline.json.
"""

import argparse
import json
import os

from memkeys import synth
from memkeys.cli import main as memkeys


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="timeline_demo")
    ap.add_argument("--every", type=int, default=1, help="sampling interval in minutes")
    ap.add_argument("--until", type=int, default=75, help="last sample, minutes")
    ap.add_argument("--load", type=int, default=2, help="minute the key appears")
    ap.add_argument("--reboot", type=int, default=61, help="minute of the reboot that clears it")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    key = synth.random_key(synth._rng(args.seed), 128)
    entries = []
    for m in range(0, args.until + 1, args.every):
        name = f"dump{m:03d}"
        plants = (synth.Plant(8192 + 16 * m, key),) if args.load <= m <= args.reboot else ()
        synth.make_memory_image(synth.ImageSpec(1 << 20, "mixed", args.seed + m, plants=plants),
                                os.path.join(args.out_dir, name + ".raw"))
        memkeys(["scan", os.path.join(args.out_dir, name + ".raw"),
                 "--out", os.path.join(args.out_dir, name + ".json")])
        entries.append({"label": name, "t_offset_seconds": 60 * m, "scan_report_path": name + ".json"})
    manifest = os.path.join(args.out_dir, "manifest.json")
    with open(manifest, "w") as f:
        json.dump(entries, f, indent=2)
    events = os.path.join(args.out_dir, "events.json")
    with open(events, "w") as f:
        json.dump([{"t_offset_seconds": 60 * args.reboot, "label": "reboot"}], f)

    for fmt in ("svg", "json"):
        memkeys(["timeline", "--manifest", manifest, "--events", events, "--format", fmt,
                 "--out", os.path.join(args.out_dir, "timeline." + fmt)])
    memkeys(["timeline", "--manifest", manifest, "--events", events])


if __name__ == "__main__":
    main()
