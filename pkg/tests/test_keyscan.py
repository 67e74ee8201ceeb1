import json
import math
import random
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from memkeys import keyscan
from memkeys.errors import BadKeyLength, EmptyWindow, InvalidOptions
from memkeys.keyscan import (
    CandidateKey,
    ScanOptions,
    count_schedules,
    dedupe,
    expand_key,
    fingerprint,
    scan,
    shannon_entropy,
    verify_schedule_at,
)
from memkeys.memimage import open_image, read_window
from memkeys.synth import ImageSpec, Plant, make_memory_image
from oracles import FIPS_VECTORS, oracle_expand

GOLDEN = json.loads((Path(__file__).parent / "golden" / "aes_schedules.json").read_text())
keys_of = {size: st.binary(min_size=size // 8, max_size=size // 8) for size in (128, 192, 256)}
any_key = st.sampled_from([128, 192, 256]).flatmap(lambda s: keys_of[s])


class TestExpandKey:
    def test_zero_key_round1(self):
        s = expand_key(bytes(16))
        assert s.bytes[16:32] == bytes.fromhex("62636363") * 4
        assert len(s.bytes) == 176

    @pytest.mark.parametrize("size", [128, 192, 256])
    def test_fips_vectors(self, size):
        key, last = FIPS_VECTORS[size]
        s = expand_key(bytes.fromhex(key))
        assert s.bytes[-16:].hex() == last
        assert s.master == bytes.fromhex(key)

    def test_frozen_goldens(self):
        for size, sched in GOLDEN["zero_key"].items():
            assert expand_key(bytes(int(size) // 8)).bytes.hex() == sched
        for rec in GOLDEN["random_keys"]:
            assert expand_key(bytes.fromhex(rec["key"]), rec["key_size"]).bytes.hex() == rec["schedule"]

    @given(key=any_key)
    def test_matches_oracle(self, key):
        assert expand_key(key).bytes == oracle_expand(key)

    def test_bad_length(self):
        with pytest.raises(BadKeyLength):
            expand_key(bytes(17), 128)
        with pytest.raises(BadKeyLength):
            expand_key(bytes(16), 192)

    def test_round_key(self):
        s = expand_key(bytes.fromhex(FIPS_VECTORS[128][0]))
        assert s.round_key(10).hex() == FIPS_VECTORS[128][1]


class TestVerify:
    @given(key=any_key)
    def test_duality(self, key):
        sched = expand_key(key)
        assert verify_schedule_at(sched.bytes, sched.key_size)

    @given(key=any_key, data=st.data())
    def test_flip_breaks(self, key, data):
        sched = bytearray(expand_key(key).bytes)
        pos = data.draw(st.integers(len(key), len(sched) - 1))
        sched[pos] ^= data.draw(st.integers(1, 255))
        assert not verify_schedule_at(bytes(sched), len(key) * 8)

    def test_wrong_window_length(self):
        assert not verify_schedule_at(expand_key(bytes(16)).bytes[:175], 128)

    @pytest.mark.parametrize("size", [128, 192, 256])
    def test_compiled_verifier_agrees(self, size):
        rng = np.random.default_rng(size)
        n, L = 200, keyscan.SCHEDULE_LEN[size]
        rows = rng.integers(0, 256, size=(n, L), dtype=np.uint8)
        good = rng.choice(n, 37, replace=False)
        for i in good:
            rows[i] = np.frombuffer(oracle_expand(rows[i, :size // 8].tobytes()), dtype=np.uint8)
        # corrupt the final byte of a few valid rows: only full verification catches it
        for i in good[:5]:
            rows[i, -1] ^= 1
        assert count_schedules(rows, size) == 32
        assert sum(verify_schedule_at(r.tobytes(), size) for r in rows) == 32


class TestEntropy:
    def test_examples(self):
        assert shannon_entropy(bytes(16)) == 0.0
        assert shannon_entropy(bytes(range(16))) == 4.0
        assert shannon_entropy(bytes(range(256))) == 8.0

    def test_empty(self):
        with pytest.raises(EmptyWindow):
            shannon_entropy(b"")

    @given(w=st.binary(min_size=1, max_size=600), seed=st.integers(0, 2**32 - 1))
    def test_bounds_and_permutation(self, w, seed):
        h = shannon_entropy(w)
        assert 0.0 <= h <= min(8.0, math.log2(len(w))) + 1e-12
        perm = list(w)
        random.Random(seed).shuffle(perm)
        assert shannon_entropy(bytes(perm)) == pytest.approx(h, abs=1e-12)

    def test_threshold_keeps_random_keys(self):
        rng = random.Random(5)
        kept = sum(shannon_entropy(rng.randbytes(16)) >= 3.0 for _ in range(20000))
        assert kept / 20000 > 0.99


class TestOptions:
    @pytest.mark.parametrize("kw", [dict(key_sizes=(64,)), dict(key_sizes=()), dict(entropy_threshold=9),
                                    dict(entropy_threshold=-1), dict(stride=0), dict(worker_count=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidOptions):
            ScanOptions(**kw)

    def test_sizes_normalised(self):
        assert ScanOptions(key_sizes=(256, 128, 256)).key_sizes == (128, 256)


def _image(tmp_path, total, plants, filler="zeros", seed=0, **kw):
    p = str(tmp_path / "img.raw")
    make_memory_image(ImageSpec(total, filler, seed, plants=tuple(plants), **kw), p)
    return open_image(p)


class TestScan:
    def test_single_plant_16mib(self, tmp_path):
        key = random.Random(1).randbytes(16)
        img = _image(tmp_path, 16 << 20, [Plant(1048576, key)])
        found = scan(img, ScanOptions(prefilter_enabled=False))
        assert [(c.offset, c.key_size, c.key_bytes) for c in found] == [(1048576, 128, key)]
        assert scan(img, ScanOptions(key_sizes=(256,))) == []

    def test_zero_key_prefilter_miss_class(self, tmp_path):
        img = _image(tmp_path, 1 << 16, [Plant(5000, bytes(16))])
        assert scan(img, ScanOptions(entropy_threshold=3.0)) == []
        found = scan(img, ScanOptions(prefilter_enabled=False))
        assert [c.offset for c in found] == [5000] and found[0].entropy == 0.0

    def test_all_sizes_random_filler(self, tmp_path):
        rng = random.Random(9)
        plants = [Plant(1000, rng.randbytes(16)), Plant(70001, rng.randbytes(24)), Plant(200003, rng.randbytes(32))]
        img = _image(tmp_path, 1 << 18, plants, filler="random", seed=3)
        found = scan(img)
        assert [(c.offset, c.key_size) for c in found] == [(p.offset, p.key_size) for p in plants]
        for c in found:
            assert verify_schedule_at(read_window(img, c.offset, keyscan.SCHEDULE_LEN[c.key_size]), c.key_size)
            assert c.fingerprint == fingerprint(c.key_bytes)
            assert c.entropy >= 3.0

    def test_plant_at_segment_end_and_stride(self, tmp_path):
        key = random.Random(2).randbytes(32)
        img = _image(tmp_path, 8192, [Plant(8192 - 240, key)], container="elf", segments=(4096, 4096))
        assert [c.offset for c in scan(img)] == [8192 - 240]
        assert (8192 - 240) % 3 and scan(img, ScanOptions(stride=3)) == []
        assert [c.offset for c in scan(img, ScanOptions(stride=8))] == [8192 - 240]
        assert scan(img)[0].phys_addr == img.phys_addr_of(8192 - 240)

    def test_repeated_key_and_dedupe(self, tmp_path):
        key = random.Random(3).randbytes(16)
        img = _image(tmp_path, 1 << 14, [Plant(100, key), Plant(900, key)], filler="random", seed=1)
        found = scan(img)
        groups = dedupe(found)
        assert len(groups) == 1 and groups[0].offsets == [100, 900]

    def test_dedupe_examples(self):
        a, b = CandidateKey.from_key(bytes(range(16)), 5), CandidateKey.from_key(bytes(range(1, 17)), 7)
        a2 = CandidateKey.from_key(bytes(range(16)), 50)
        assert dedupe([]) == []
        groups = dedupe([a, b, a2])
        assert [g.offsets for g in groups] == [[5, 50], [7]]

    @given(thr_lo=st.floats(0, 4), thr_hi=st.floats(0, 4))
    @settings(max_examples=15)
    def test_prefilter_monotone(self, tmp_path_factory, thr_lo, thr_hi):
        assume(thr_lo <= thr_hi)
        rng = random.Random(11)
        keys = [bytes([1, 2] * 8), bytes([1, 2, 3, 4] * 4), bytes(range(8)) * 2, rng.randbytes(16), bytes(16)]
        plants = [Plant(300 + 400 * i, k) for i, k in enumerate(keys)]
        d = tmp_path_factory.mktemp("mono")
        img = _image(d, 4096, plants)
        off = lambda opts: {c.offset for c in scan(img, opts)}  # noqa: E731
        lo, hi = off(ScanOptions(entropy_threshold=thr_lo)), off(ScanOptions(entropy_threshold=thr_hi))
        assert hi <= lo <= off(ScanOptions(prefilter_enabled=False))
        # the compiled gate and the exact entropy agree at every threshold
        assert hi == {p.offset for p in plants if shannon_entropy(p.key_bytes) >= thr_hi}

    def test_progress_callback(self, tmp_path):
        img = _image(tmp_path, 100000, [])
        seen = []
        scan(img, chunk_size=4096, progress=seen.append)
        assert sum(seen) == 100000


class TestReport:
    def test_report_hides_keys_by_default(self, tmp_path):
        key = random.Random(4).randbytes(16)
        img = _image(tmp_path, 4096, [Plant(64, key)])
        found = scan(img)
        rep = keyscan.build_report(img, ScanOptions(), found)
        assert "key_hex" not in rep["candidates"][0]
        assert key.hex() not in json.dumps(rep)
        rep2 = keyscan.build_report(img, ScanOptions(), found, reveal_keys=True)
        path = tmp_path / "r.json"
        keyscan.write_report(rep2, path)
        assert keyscan.keys_from_report(keyscan.load_report(path))[0].key_bytes == key
        with pytest.raises(keyscan.InputError):
            keyscan.keys_from_report(rep)
