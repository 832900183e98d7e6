"""Regenerate ``src/polyroute/data/lang_distances.json`` from lang2vec feature sets.

Requires the ``lang2vec`` package (dev-time only). Distances are cosine distances
between the URIEL ``syntax_knn``, ``fam`` and ``geo`` vectors, rounded to 4 places.

    python scripts/build_lang_distances.py > src/polyroute/data/lang_distances.json
"""

import itertools
import json
import sys

import numpy as np
import lang2vec.lang2vec as l2v

# (iso-639-1, iso-639-3, resource class from Joshi et al. 2020, script)
LANGUAGES = [
    ("en", "eng", 5, "latin"),
    ("fr", "fra", 5, "latin"),
    ("de", "deu", 5, "latin"),
    ("es", "spa", 5, "latin"),
    ("ja", "jpn", 5, "non_latin"),
    ("zh", "cmn", 5, "non_latin"),
    ("ar", "arb", 5, "non_latin"),
    ("hi", "hin", 4, "non_latin"),
    ("ru", "rus", 4, "non_latin"),
    ("it", "ita", 4, "latin"),
    ("pt", "por", 4, "latin"),
    ("ko", "kor", 4, "non_latin"),
    ("fi", "fin", 4, "latin"),
    ("fa", "pes", 4, "non_latin"),
    ("tr", "tur", 4, "latin"),
    ("vi", "vie", 4, "latin"),
    ("id", "ind", 3, "latin"),
    ("bn", "ben", 3, "non_latin"),
    ("ta", "tam", 3, "non_latin"),
    ("ur", "urd", 3, "non_latin"),
    ("ms", "zsm", 3, "latin"),
    ("mr", "mar", 2, "non_latin"),
    ("sw", "swh", 2, "latin"),
    ("pa", "pan", 2, "non_latin"),
    ("te", "tel", 1, "non_latin"),
    ("kn", "kan", 1, "non_latin"),
    ("ml", "mal", 1, "non_latin"),
    ("gu", "guj", 1, "non_latin"),
    ("or", "ory", 1, "non_latin"),
    ("as", "asm", 1, "non_latin"),
]

FEATURE_SETS = {"syntactic": "syntax_knn", "genetic": "fam", "geographic": "geo"}


def cosine_distance(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return None
    return float(np.clip(1.0 - np.dot(u, v) / (nu * nv), 0.0, 1.0))


def main():
    codes3 = [c3 for _, c3, _, _ in LANGUAGES]
    to1 = {c3: c1 for c1, c3, _, _ in LANGUAGES}
    distances = {}
    for feature, fset in FEATURE_SETS.items():
        vecs = l2v.get_features(codes3, fset)
        table = {}
        for a, b in itertools.combinations(codes3, 2):
            va = np.array([0.0 if x == "--" else x for x in vecs[a]], dtype=float)
            vb = np.array([0.0 if x == "--" else x for x in vecs[b]], dtype=float)
            d = cosine_distance(va, vb)
            if d is not None:
                la, lb = sorted((to1[a], to1[b]))
                table[f"{la}|{lb}"] = round(d, 4)
        distances[feature] = table
    out = {
        "features": list(FEATURE_SETS),
        "languages": [
            {"code": c1, "class": cls, "script": script} for c1, _, cls, script in LANGUAGES
        ],
        "distances": distances,
    }
    json.dump(out, sys.stdout, indent=1, sort_keys=False)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
