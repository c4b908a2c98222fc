#!/usr/bin/env python3
"""Extended-precision reference values for the stage-2 losses and the
log-sum-exp primitives.

Writes crates/core/tests/data/loss_oracles.tsv. Inputs are stored as
shortest round-trip decimal floats so the Rust side parses identical bits.

    python3 scripts/oracles/loss_oracles.py [output]
"""

import random
import sys
from pathlib import Path

import mpmath

mpmath.mp.dps = 60

SEED = 20240917
COUNT = 100


def lse(xs):
    m = max(xs)
    return m + mpmath.log(mpmath.fsum(mpmath.exp(x - m) for x in xs))


def scores(r, z):
    return [mpmath.fsum(mpmath.mpf(a) * mpmath.mpf(b) for a, b in zip(r, row)) for row in z]


def contrastive(r, z, gold, tau):
    s = [x / mpmath.mpf(tau) for x in scores(r, z)]
    return lse(s) - s[gold]


def confusion_kl(r, z, target):
    s = scores(r, z)
    log_q = [x - lse(s) for x in s]
    total = mpmath.mpf(0)
    for p, lq in zip(target, log_q):
        if p > 0:
            p = mpmath.mpf(p)
            total += p * (mpmath.log(p) - lq)
    return total


def random_target(rng, k):
    raw = [rng.random() if rng.random() > 0.3 else 0.0 for _ in range(k)]
    if sum(raw) == 0.0:
        raw[rng.randrange(k)] = 1.0
    s = sum(raw)
    return [x / s for x in raw]


def fmt(values):
    return ",".join(repr(float(v)) for v in values)


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[2] / "crates/core/tests/data/loss_oracles.tsv"
    rng = random.Random(SEED)
    lines = ["# kind\tk\td\tgold\ttau\tr\tz\ttarget\texpected"]
    for kind in ("contrastive", "confusion_kl"):
        for _ in range(COUNT):
            k = rng.randint(2, 12)
            d = rng.randint(1, 8)
            r = [rng.uniform(-2, 2) for _ in range(d)]
            z = [[rng.uniform(-2, 2) for _ in range(d)] for _ in range(k)]
            flat = [v for row in z for v in row]
            if kind == "contrastive":
                gold = rng.randrange(k)
                tau = rng.uniform(0.1, 2.0)
                value = contrastive(r, z, gold, tau)
                lines.append(f"{kind}\t{k}\t{d}\t{gold}\t{tau!r}\t{fmt(r)}\t{fmt(flat)}\t-\t{mpmath.nstr(value, 25)}")
            else:
                target = random_target(rng, k)
                value = confusion_kl(r, z, target)
                lines.append(f"{kind}\t{k}\t{d}\t-\t-\t{fmt(r)}\t{fmt(flat)}\t{fmt(target)}\t{mpmath.nstr(value, 25)}")
    for n in range(20):
        x = [rng.uniform(-5, 5) for _ in range(5)] if n else [0.6, 0.2, 0.2]
        lines.append(f"log_sum_exp\t{len(x)}\t-\t-\t-\t{fmt(x)}\t-\t-\t{mpmath.nstr(lse(x), 25)}")
        ref = [mpmath.mpf(v) - lse(x) for v in x]
        lines.append(f"log_softmax\t{len(x)}\t-\t-\t-\t{fmt(x)}\t-\t-\t{','.join(mpmath.nstr(v, 25) for v in ref)}")
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines) - 1} instances to {out}")


if __name__ == "__main__":
    main()
