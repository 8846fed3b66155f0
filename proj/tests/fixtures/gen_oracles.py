"""Independent oracle values for the C++ tests.

Run from the repository root:  python3 tests/fixtures/gen_oracles.py
Writes tests/fixtures/ot_oracle.json and tests/fixtures/word_count.json.
Transport costs and barycenters come from scipy's HiGHS LP solver; the word
count comes from a regex tokenizer written independently of the C++ code.
"""
import json
import re

import numpy as np
from scipy.optimize import linprog


def transport_cost(x, a, y, b):
    n, m = len(a), len(b)
    c = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1).ravel()
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        a_eq[n + j, j::m] = 1
    res = linprog(c, A_eq=a_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def barycenter(measures, lambdas, support):
    # Variables: one plan per measure (n_k x s) then the weights w (s).
    s = len(support)
    sizes = [len(w) for _, w in measures]
    nvar = sum(n * s for n in sizes) + s
    c = np.zeros(nvar)
    rows, rhs = [], []
    off = 0
    for (pts, w), lam, n in zip(measures, lambdas, sizes):
        cost = ((pts[:, None, :] - support[None, :, :]) ** 2).sum(-1)
        c[off:off + n * s] = lam * cost.ravel()
        for i in range(n):
            r = np.zeros(nvar)
            r[off + i * s:off + (i + 1) * s] = 1
            rows.append(r)
            rhs.append(w[i])
        for j in range(s):
            r = np.zeros(nvar)
            r[off + j:off + n * s:s] = 1
            r[nvar - s + j] = -1
            rows.append(r)
            rhs.append(0.0)
        off += n * s
    res = linprog(c, A_eq=np.array(rows), b_eq=np.array(rhs), bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def random_measure(rng, dim):
    n = int(rng.integers(1, 6))
    pts = rng.integers(0, 6, size=(n * 3, dim)).astype(float)
    pts = np.unique(pts, axis=0)[:n]
    w = rng.random(len(pts)) + 0.05
    return pts, w / w.sum()


def main():
    rng = np.random.default_rng(20240531)
    instances = []
    for _ in range(100):
        dim = int(rng.integers(1, 4))
        x, a = random_measure(rng, dim)
        y, b = random_measure(rng, dim)
        instances.append({"x": x.tolist(), "a": a.tolist(), "y": y.tolist(), "b": b.tolist(),
                          "w2_squared": transport_cost(x, a, y, b)})
    bary = []
    for _ in range(10):
        dim = int(rng.integers(1, 3))
        k = int(rng.integers(2, 4))
        ms = [random_measure(rng, dim) for _ in range(k)]
        lam = rng.random(k) + 0.1
        lam = lam / lam.sum()
        support = np.unique(rng.integers(0, 6, size=(6, dim)).astype(float), axis=0)
        bary.append({"measures": [{"points": p.tolist(), "weights": w.tolist()} for p, w in ms],
                     "lambdas": lam.tolist(), "support": support.tolist(),
                     "objective": barycenter(ms, lam, support)})
    with open("tests/fixtures/ot_oracle.json", "w") as f:
        json.dump({"transport": instances, "barycenter": bary}, f, indent=1)

    concepts = json.load(open("data/concepts.json"))
    words = set()
    for t in concepts["templates"]:
        text = re.sub(r"<[A-Za-z0-9_]+>", " ", t["text"]).lower()
        words.update(re.findall(r"[a-z0-9]+", text))
    with open("tests/fixtures/word_count.json", "w") as f:
        json.dump({"file": "data/concepts.json", "unique_words": len(words)}, f, indent=1)


if __name__ == "__main__":
    main()
