"""Regenerate aes_schedules.json from the test oracle (not from memkeys)."""

import json
import os
import random
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from oracles import oracle_expand  # noqa: E402

rng = random.Random(2024)
doc = {"zero_key": {}, "random_keys": []}
for size in (128, 192, 256):
    doc["zero_key"][str(size)] = oracle_expand(bytes(size // 8)).hex()
    for _ in range(4):
        key = bytes(rng.getrandbits(8) for _ in range(size // 8))
        doc["random_keys"].append({"key_size": size, "key": key.hex(), "schedule": oracle_expand(key).hex()})

out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "aes_schedules.json")
with open(out, "w") as f:
    json.dump(doc, f, indent=1)
    f.write("\n")
