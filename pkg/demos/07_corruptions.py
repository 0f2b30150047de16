"""The synthetic corruption suite: 7 kinds x 5 severities, deterministic per
(kind, severity, seed, image). Writes a severity sweep mosaic for one digit.
"""

import numpy as np

from aenib.datasets import load_digit_dataset
from aenib.evaluation import (SEVERITY_TABLES, CorruptionKind, CorruptionSpec,
                              corrupt, save_mosaic)

ds = load_digit_dataset("data/mnist", "test")
digit = ds.images[3].astype(np.float64)

tiles = []
for kind in CorruptionKind:
    tiles.append(digit)  # leftmost column: clean
    for severity in range(1, 6):
        tiles.append(corrupt(digit, CorruptionSpec(kind, severity, seed=7)))
save_mosaic(np.stack(tiles), "demos/output/corruption_grid.png",
            grid=(len(CorruptionKind), 6))
print("wrote demos/output/corruption_grid.png (rows: kinds; cols: clean, sev 1-5)")
for kind, params in SEVERITY_TABLES.items():
    print(f"{kind.value:>14s}: {params}")
