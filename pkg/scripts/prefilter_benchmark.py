"""Time a scan with and without the entropy prefilter on a synthetic image.

    python3 scripts/prefilter_benchmark.py --size 256M --hef 0.1 --out bench.json
"""

import argparse
import json
import os
import tempfile
import time

from memkeys import synth
from memkeys.cli import parse_size
from memkeys.keyscan import ScanOptions, scan
from memkeys.memimage import open_image


def run(size, hef, plants, seed, workers):
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "img.raw")
        spec = synth.ImageSpec(size, "mixed", seed, high_entropy_fraction=hef,
                               plants=synth.random_plants(size, plants, seed=seed))
        manifest = synth.make_memory_image(spec, path)
        img = open_image(path)
        rows = {}
        for pf in (True, False):
            t0 = time.perf_counter()
            found = scan(img, ScanOptions(prefilter_enabled=pf, worker_count=workers))
            rows["on" if pf else "off"] = {"seconds": time.perf_counter() - t0, "candidates": len(found)}
    rows["speedup"] = rows["off"]["seconds"] / rows["on"]["seconds"]
    rows.update(size=size, high_entropy_fraction=hef, plants=len(manifest["plants"]), seed=seed)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", default="256M", type=parse_size)
    ap.add_argument("--hef", type=float, nargs="+", default=[0.1],
                    help="high-entropy page fraction(s) of the mixed filler")
    ap.add_argument("--plants", type=int, default=8)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", help="write results as JSON")
    args = ap.parse_args()

    results = []
    for hef in args.hef:
        r = run(args.size, hef, args.plants, args.seed, args.workers)
        print(f"hef={hef:<5} on {r['on']['seconds']:7.2f}s  off {r['off']['seconds']:7.2f}s  "
              f"speedup {r['speedup']:.2f}x  candidates {r['on']['candidates']}/{r['off']['candidates']}")
        results.append(r)
    if args.out:
        with open(args.out, "w") as f:
            json.dump(results, f, indent=2)


if __name__ == "__main__":
    main()
