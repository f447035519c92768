#!/usr/bin/env python3
"""Writes the golden fixtures used by the vpr-core integration tests.

Everything here is computed from the byte layouts and algorithms as
documented, without calling into the Rust code.
"""
import json
import math
import struct
from pathlib import Path

HERE = Path(__file__).resolve().parent
MASK = (1 << 64) - 1


def vprf(image_id, dim, cls, patches):
    raw = image_id.encode("utf-8")
    out = b"VPRF" + struct.pack("<HBH", 1, 1, len(raw)) + raw
    out += struct.pack("<II", dim, len(patches))
    out += struct.pack("<%df" % dim, *cls)
    for row in patches:
        out += struct.pack("<%df" % dim, *row)
    return out


def f32(x):
    return struct.unpack("<f", struct.pack("<f", x))[0]


def vpri(p, dim, records):
    out = b"VPRI" + struct.pack("<HBdBII", 1, 1, p, 4, dim, len(records))
    for image_id, vec in sorted(records):
        raw = image_id.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<%df" % dim, *vec)
    return out


def unit(v):
    n = math.sqrt(sum(x * x for x in v))
    return [f32(x / n) for x in v]


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK


class Xoshiro256StarStar:
    def __init__(self, seed):
        state, self.s = seed, []
        for _ in range(4):
            state, out = splitmix64(state)
            self.s.append(out)

    def next(self):
        s = self.s
        result = (rotl((s[1] * 5) & MASK, 7) * 9) & MASK
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        return result

    def bounded(self, r):
        limit = (MASK // r) * r
        while True:
            x = self.next()
            if x < limit:
                return x % r


def sample(length, n, seed):
    rng = Xoshiro256StarStar(seed)
    slots = list(range(length))
    for i in range(n):
        j = i + rng.bounded(length - i)
        slots[i], slots[j] = slots[j], slots[i]
    return sorted(slots[:n])


def main():
    (HERE / "golden.vprf").write_bytes(vprf("golden", 2, [1.0, 0.0], [[1.0, 2.0], [3.0, 4.0]]))

    refs = {
        "r-a": unit([1.0, 0.0, 0.0]),
        "r-b": unit([0.6, 0.8, 0.0]),
        "r-c": unit([0.0, 0.6, 0.8]),
        "r-d": unit([0.8, 0.0, 0.6]),
        "r-e": unit([0.0, 1.0, 0.0]),
        "r-f": unit([0.3, 0.3, 0.9]),
    }
    (HERE / "golden.vpri").write_bytes(vpri(3.0, 3, list(refs.items())))
    queries = {
        "q-1": unit([0.9, 0.1, 0.1]),
        "q-2": unit([0.1, 0.7, 0.7]),
        "q-3": unit([0.0, 0.0, 1.0]),
    }
    expected = []
    for qid, q in queries.items():
        scored = sorted(
            ((sum(a * b for a, b in zip(q, v)), rid) for rid, v in refs.items()),
            key=lambda t: (-t[0], t[1]),
        )
        expected.append(
            {"query_id": qid, "vec": q, "ids": [r for _, r in scored], "scores": [s for s, _ in scored]}
        )
    (HERE / "golden_retrieval.json").write_text(json.dumps(expected, indent=1) + "\n")

    cases = [(5, 2, 42), (5, 5, 0), (10, 3, 7), (2293, 400, 2024), (1, 1, 99)]
    (HERE / "golden_subsample.json").write_text(
        json.dumps([{"len": l, "n": n, "seed": s, "indices": sample(l, n, s)} for l, n, s in cases]) + "\n"
    )


if __name__ == "__main__":
    main()
