"""Independent transcript of the n-gram hash used by the featurizer.

Prints the hash and bucket of every n-gram of a sentence so the Rust golden
tests can be checked against a second implementation.

    python3 python/hash_transcript.py ab --orders 2 --buckets 16 --seed 7
"""

import argparse

MASK = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def splitmix64(z):
    z = (z + 0x9E3779B97F4A7C15) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def ngram_hash(gram, seed):
    h = FNV_OFFSET ^ splitmix64(seed)
    for b in gram.encode("utf-8"):
        h ^= b
        h = (h * FNV_PRIME) & MASK
    return splitmix64(h)


def main():
    p = argparse.ArgumentParser()
    p.add_argument("sentence")
    p.add_argument("--orders", default="2,3")
    p.add_argument("--buckets", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    chars = "^" + args.sentence + "$" if args.sentence else ""
    counts = {}
    for n in (int(o) for o in args.orders.split(",")):
        for i in range(len(chars) - n + 1):
            gram = chars[i : i + n]
            h = ngram_hash(gram, args.seed)
            b = h % args.buckets
            counts[b] = counts.get(b, 0) + 1
            print(f"{gram!r}\t{h:#018x}\t{b}")
    print("counts", dict(sorted(counts.items())))


if __name__ == "__main__":
    main()
