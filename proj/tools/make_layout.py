#!/usr/bin/env python3
# Copyright 2026 The MFA Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates data/metawild_layout.json, a counts-only description of the
MetaWild split (identities, cameras, per-split image counts).

Per-identity image counts are drawn with a fixed seed so identity sizes are
uneven, as in camera-trap data; the per-split totals come from the published
split sizes below.
"""
import json
import random

SPLITS = {
    # species: (train imgs, train ids, gallery imgs, gallery ids, query imgs, query ids)
    "deer": (1631, 21, 586, 17, 216, 17),
    "hare": (1820, 31, 926, 29, 306, 29),
    "penguin": (1431, 34, 725, 43, 296, 43),
    "pukeko": (1854, 11, 800, 19, 411, 19),
    "stoat": (4067, 151, 1649, 102, 1017, 102),
    "wallaby": (1888, 25, 964, 22, 303, 22),
}


def partition(rng, total, parts, minimum):
    """Random composition of `total` into `parts` values, each >= minimum."""
    weights = [rng.uniform(0.4, 1.6) for _ in range(parts)]
    spare = total - minimum * parts
    assert spare >= 0
    raw = [spare * w / sum(weights) for w in weights]
    sizes = [minimum + int(r) for r in raw]
    for i in range(total - sum(sizes)):
        sizes[i % parts] += 1
    return sizes


def main():
    rng = random.Random(20890)
    out = {"species": {}}
    for species, (ti, tn, gi, gn, qi, qn) in SPLITS.items():
        assert gn == qn
        cams = [f"CT-{species[:3].upper()}-{k:02d}" for k in range(1, 6)]
        train = partition(rng, ti, tn, 2)
        gallery = partition(rng, gi, gn, 1)
        query = partition(rng, qi, qn, 1)
        ids = list(range(tn + gn))
        rng.shuffle(ids)
        rows = []
        for k, n in enumerate(train):
            rows.append({"id": ids[k], "camera": rng.choice(cams), "train": n})
        for k, (g, q) in enumerate(zip(gallery, query)):
            rows.append({"id": ids[tn + k], "camera": rng.choice(cams), "gallery": g, "query": q})
        rows.sort(key=lambda r: r["id"])
        out["species"][species] = rows
    with open("data/metawild_layout.json", "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
