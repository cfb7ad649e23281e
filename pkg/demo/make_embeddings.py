"""Regenerate demo/entities.emb, the toy entity embedding store.

Q189 and Q192 sit on the axes so the canned mention vector [1, 0] resolves
to Q189; everything else is pushed far away.
"""

import os

import numpy as np

from ultrag.linker import build_exact

ENTITIES = ["Q1009", "Q119", "Q189", "Q192", "Q244", "Q5446", "Q7611",
            "Q854", "Q998"]


def main():
    ids, vecs = [], []
    for i, ext in enumerate(ENTITIES):
        if ext == "Q189":
            vecs.append([1.0, 0.0])
        elif ext == "Q192":
            vecs.append([0.0, 1.0])
        else:
            vecs.append([4.0 + i, 5.0 + i])
        ids.append(ext)
    store = build_exact(np.array(vecs, dtype=np.float32), ids=ids)
    out = os.path.join(os.path.dirname(__file__), "entities.emb")
    store.save(out)
    print(f"wrote {out} ({store.vectors.shape[0]} vectors, dim {store.dim})")


if __name__ == "__main__":
    main()
