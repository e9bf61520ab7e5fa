"""Rebuild ``src/stochsqp/data/australian`` in LIBSVM format.

Source: ``keel_ds/data/balanced/raw/australian.dat`` inside the ``keel-ds``
wheel (Statlog Australian credit, 690 rows, 14 features, 0/1 labels, same
row order as the LIBSVM copy). That file lost the decimal points of the
continuous columns, so every column is min-max scaled to [-1, 1] the way
``svm-scale`` does. Zeros after scaling are dropped (sparse format).

Usage::

    pip download --no-deps keel-ds -d /tmp/keel
    python scripts/make_australian.py /tmp/keel/keel_ds-*.whl
"""

import sys
import zipfile
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "stochsqp" / "data" / "australian"


def main(wheel):
    with zipfile.ZipFile(wheel) as zf:
        text = zf.read("keel_ds/data/balanced/raw/australian.dat").decode()
    rows = np.array([[float(t) for t in line.split(",")] for line in text.splitlines() if line.strip()])
    X, y = rows[:, :-1], rows[:, -1]
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    Xs = np.where(hi > lo, 2.0 * (X - lo) / span - 1.0, 0.0)
    lines = []
    for xi, yi in zip(Xs, y):
        label = "+1" if yi > 0 else "-1"
        feats = " ".join(f"{j + 1}:{v:.8g}" for j, v in enumerate(xi) if v != 0.0)
        lines.append(f"{label} {feats}".rstrip())
    OUT.write_text("\n".join(lines) + "\n")
    print(f"wrote {OUT} ({len(lines)} rows, {X.shape[1]} features)")


if __name__ == "__main__":
    main(sys.argv[1])
