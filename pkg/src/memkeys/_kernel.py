"""Compiled inner loops for the key scan.

Everything here works on a ``uint8`` numpy view of one chunk and returns
chunk-relative offsets; the Python layer in :mod:`memkeys.keyscan` owns
offsets, options and result objects.  Functions release the GIL so chunks
can be processed on a thread pool.

Words are held little-endian in int64 (byte 0 of the AES word is the low
byte), which makes RotWord a right rotation by 8 bits.
"""

import math

import numba as nb
import numpy as np

SBOX = np.array([
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
], dtype=np.int64)

# Rcon[i] for i = 1..10 (AES-128 uses all ten, AES-256 the first seven)
RCON = np.array([0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36], dtype=np.int64)

# Fixed-point scale for the sliding entropy sums.
ENTROPY_SCALE = 1 << 32
# Slack (bits/byte) on the compiled entropy gate; callers re-check exactly.
ENTROPY_SLACK = 1e-9
PREFILTER_BLOCK = 256


def clog_table(k):
    """``round(c * log2(c) * SCALE)`` for c in 0..k."""
    return np.array([0] + [round(c * math.log2(c) * ENTROPY_SCALE) for c in range(1, k + 1)],
                    dtype=np.int64)


def entropy_limit(k, threshold):
    """Largest fixed-point sum(c log2 c) whose window entropy is >= threshold - slack.

    Entropy of a k-byte window is ``log2(k) - S/k``; the gate passes when
    ``S <= k * (log2(k) - threshold + slack)``.
    """
    return math.floor(k * (math.log2(k) - threshold + ENTROPY_SLACK) * ENTROPY_SCALE)


@nb.njit(nogil=True, inline="always")
def _load32(buf, p):
    # unsigned index: spares numba's negative-index wraparound on every load
    p = np.uint64(p)
    return (np.int64(buf[p]) | (np.int64(buf[p + np.uint64(1)]) << 8)
            | (np.int64(buf[p + np.uint64(2)]) << 16) | (np.int64(buf[p + np.uint64(3)]) << 24))


@nb.njit(nogil=True, inline="always")
def _subword(t, sbox):
    return (sbox[t & 0xff] | (sbox[(t >> 8) & 0xff] << 8)
            | (sbox[(t >> 16) & 0xff] << 16) | (sbox[(t >> 24) & 0xff] << 24))


@nb.njit(nogil=True, inline="always")
def _rot_sub(t, sbox):
    return _subword(((t >> 8) | (t << 24)) & 0xffffffff, sbox)


# The three routines below expand the master key at ``buf[o:]`` in full and
# then compare every derived word with the bytes that follow.  There is no
# early exit: the whole schedule is computed for each candidate that reaches
# them, which is the cost the entropy gate exists to avoid.

@nb.njit(nogil=True, inline="always")
def _match128(buf, o, sbox, rcon):
    w0 = _load32(buf, o)
    w1 = _load32(buf, o + 4)
    w2 = _load32(buf, o + 8)
    w3 = _load32(buf, o + 12)
    diff = 0
    for r in range(1, 11):
        w0 ^= _rot_sub(w3, sbox) ^ rcon[r]
        w1 ^= w0
        w2 ^= w1
        w3 ^= w2
        p = o + 16 * r
        diff |= ((w0 ^ _load32(buf, p)) | (w1 ^ _load32(buf, p + 4))
                 | (w2 ^ _load32(buf, p + 8)) | (w3 ^ _load32(buf, p + 12)))
    return diff == 0


@nb.njit(nogil=True, inline="always")
def _match192(buf, o, sbox, rcon):
    w0 = _load32(buf, o)
    w1 = _load32(buf, o + 4)
    w2 = _load32(buf, o + 8)
    w3 = _load32(buf, o + 12)
    w4 = _load32(buf, o + 16)
    w5 = _load32(buf, o + 20)
    diff = 0
    for r in range(1, 9):
        w0 ^= _rot_sub(w5, sbox) ^ rcon[r]
        w1 ^= w0
        w2 ^= w1
        w3 ^= w2
        p = o + 24 * r
        diff |= ((w0 ^ _load32(buf, p)) | (w1 ^ _load32(buf, p + 4))
                 | (w2 ^ _load32(buf, p + 8)) | (w3 ^ _load32(buf, p + 12)))
        if r < 8:  # 52 words: the last group stops after four
            w4 ^= w3
            w5 ^= w4
            diff |= (w4 ^ _load32(buf, p + 16)) | (w5 ^ _load32(buf, p + 20))
    return diff == 0


@nb.njit(nogil=True, inline="always")
def _match256(buf, o, sbox, rcon):
    w0 = _load32(buf, o)
    w1 = _load32(buf, o + 4)
    w2 = _load32(buf, o + 8)
    w3 = _load32(buf, o + 12)
    w4 = _load32(buf, o + 16)
    w5 = _load32(buf, o + 20)
    w6 = _load32(buf, o + 24)
    w7 = _load32(buf, o + 28)
    diff = 0
    for r in range(1, 8):
        w0 ^= _rot_sub(w7, sbox) ^ rcon[r]
        w1 ^= w0
        w2 ^= w1
        w3 ^= w2
        p = o + 32 * r
        diff |= ((w0 ^ _load32(buf, p)) | (w1 ^ _load32(buf, p + 4))
                 | (w2 ^ _load32(buf, p + 8)) | (w3 ^ _load32(buf, p + 12)))
        if r < 7:  # 60 words: the last group stops after four
            w4 ^= _subword(w3, sbox)
            w5 ^= w4
            w6 ^= w5
            w7 ^= w6
            diff |= ((w4 ^ _load32(buf, p + 16)) | (w5 ^ _load32(buf, p + 20))
                     | (w6 ^ _load32(buf, p + 24)) | (w7 ^ _load32(buf, p + 28)))
    return diff == 0


@nb.njit(nogil=True, inline="always")
def schedule_matches(buf, o, nk, sbox, rcon):
    """True iff ``buf[o:]`` holds the complete schedule of its leading
    ``4*nk``-byte key."""
    if nk == 4:
        return _match128(buf, o, sbox, rcon)
    if nk == 6:
        return _match192(buf, o, sbox, rcon)
    return _match256(buf, o, sbox, rcon)


@nb.njit(nogil=True, cache=True)
def verify_rows(rows, nk, sbox, rcon):
    """Count rows of a 2-D uint8 array that are complete key schedules."""
    hits = 0
    for r in range(rows.shape[0]):
        if schedule_matches(rows[r], 0, nk, sbox, rcon):
            hits += 1
    return hits


def _make_pass(match, k, sched_len, bits):
    """Build the scan loop for one key size.

    Each size gets its own tight loop: interleaving sizes per offset, or
    keeping the entropy state in arrays inside the loop, defeats LLVM's
    optimisation of the inlined expansion.  ``state[j]`` carries
    (offset the histogram describes, fixed-point sum c*log2(c)) across
    blocks; ``counts[j]`` is the histogram of the k-byte window.
    """
    @nb.njit(nogil=True, cache=True)
    def run(buf, b0, b1, stride, prefilter, j, counts, state, clogs, limits,
            sbox, rcon, out_off, out_bits):
        n = buf.shape[0]
        stop = min(b1, n - sched_len + 1)
        lim = limits[j]
        last = state[j, 0]
        s = state[j, 1]
        for o in range(b0, stop, stride):
            if prefilter:
                if last == o - 1:
                    x = buf[np.uint64(o - 1)]
                    cx = counts[j, x]
                    s += clogs[j, cx - 1] - clogs[j, cx]
                    counts[j, x] = cx - 1
                    y = buf[np.uint64(o + k - 1)]
                    cy = counts[j, y]
                    s += clogs[j, cy + 1] - clogs[j, cy]
                    counts[j, y] = cy + 1
                else:
                    for v in range(256):
                        counts[j, v] = 0
                    for p in range(o, o + k):
                        counts[j, buf[np.uint64(p)]] += 1
                    s = 0
                    for v in range(256):
                        s += clogs[j, counts[j, v]]
                last = o
                if s > lim:
                    continue
            if match(buf, o, sbox, rcon):
                out_off.append(o)
                out_bits.append(bits)
        state[j, 0] = last
        state[j, 1] = s
    return run


_pass128 = _make_pass(_match128, 16, 176, 128)
_pass192 = _make_pass(_match192, 24, 208, 192)
_pass256 = _make_pass(_match256, 32, 240, 256)


@nb.njit(nogil=True, cache=True)
def scan_buffer(buf, owned, base, stride, sizes, prefilter, limits, min_distinct, clogs, sbox, rcon):
    """Find key schedules starting in ``buf[0:owned]``.

    ``base`` is the flat image offset of ``buf[0]`` (used for stride
    alignment).  ``sizes`` holds three flags for AES-128/192/256;
    ``limits[j]`` is the fixed-point entropy gate for size ``j`` and
    ``clogs[j]`` its ``c log2 c`` table.  Returns parallel lists of
    (chunk-relative offset, key bits) in no particular order.
    """
    n = buf.shape[0]
    maxk = 32 if sizes[2] else (24 if sizes[1] else 16)
    out_off = [0]
    out_bits = [0]
    out_off.pop()
    out_bits.pop()

    counts = np.zeros((3, 256), np.int64)
    state = np.zeros((3, 2), np.int64)
    state[:, 0] = -2
    seen = np.zeros(256, np.int64)
    stamp = 0

    b0 = (stride - base % stride) % stride
    while b0 < owned:
        b1 = min(b0 + PREFILTER_BLOCK * stride, owned)
        if prefilter:
            # A window with H >= t needs at least 2**t distinct byte values.
            # If the union of every window starting in this block has fewer,
            # no offset in the block can pass and it is skipped whole.
            stamp += 1
            distinct = 0
            for p in range(b0, min(n, b1 - 1 + maxk)):
                v = buf[p]
                if seen[v] != stamp:
                    seen[v] = stamp
                    distinct += 1
                    if distinct >= min_distinct:
                        break
            if distinct < min_distinct:
                b0 = b1
                continue
        if sizes[0]:
            _pass128(buf, b0, b1, stride, prefilter, 0, counts, state, clogs, limits,
                     sbox, rcon, out_off, out_bits)
        if sizes[1]:
            _pass192(buf, b0, b1, stride, prefilter, 1, counts, state, clogs, limits,
                     sbox, rcon, out_off, out_bits)
        if sizes[2]:
            _pass256(buf, b0, b1, stride, prefilter, 2, counts, state, clogs, limits,
                     sbox, rcon, out_off, out_bits)
        b0 = b1
    return out_off, out_bits
