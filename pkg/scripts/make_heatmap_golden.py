"""Regenerate shared/heatmap_golden.json.

The browser editor re-implements the Gaussian bump renderer for zero-latency
previews; these vectors pin both sides to the same formula.  Run from the
repository root:  python scripts/make_heatmap_golden.py
"""

import json
from pathlib import Path

from sawgan import heatmap as hmp

CASES = [
    {"res": 4, "center": [0.0, 0.0], "variance": 0.5},
    {"res": 4, "center": [0.2, -0.6], "variance": 0.5},
    {"res": 8, "center": [-0.33, 0.41], "variance": 0.35355339059327373},
    {"res": 8, "center": [1.25, -1.25], "variance": 0.5},
    {"res": 16, "center": [0.9, 0.05], "variance": 0.24999999999999997},
    {"res": 16, "center": [-0.8125, 0.4375], "variance": 0.1},
]


def main():
    out = []
    for case in CASES:
        m = hmp.gaussian_bump(case["res"], tuple(case["center"]), case["variance"])
        out.append({**case, "map": m.tolist()})
    path = Path(__file__).resolve().parent.parent / "shared" / "heatmap_golden.json"
    path.write_text(json.dumps({"cases": out}, indent=1))
    print(path)


if __name__ == "__main__":
    main()
