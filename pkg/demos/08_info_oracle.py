"""Exact discrete information theory, and the representation-preservation
check: if the observation keeps all label information, the representation
reconstructs it, the nuisance channel is label-free, and the channels are
independent, then the semantic channel alone retains everything.
"""

from pathlib import Path

import numpy as np

from aenib.infotheory import (DiscreteJoint, entropy, load_lemma1_fixture,
                              mutual_information, verify_lemma1)

# Entropy and MI by dense enumeration.
xy = np.zeros((2, 2))
xy[0, 0] = xy[1, 1] = 0.45
xy[0, 1] = xy[1, 0] = 0.05
joint = DiscreteJoint([2, 2], xy)
print("H(x) =", entropy(joint, (0,)), " I(x;y) =", mutual_information(joint, (0,), (1,)))

fixtures = Path(__file__).resolve().parents[1] / "src/aenib/fixtures/lemma1"
for path in sorted(fixtures.glob("*.txt")):
    j, channel, fmap, expect = load_lemma1_fixture(path)
    rep = verify_lemma1(j, channel, fmap)
    status = "all conditions hold; I(z;y) == I(x;y)" if rep.all_conditions_hold \
        else f"violated: {rep.violated()}"
    print(f"{path.name:32s} expect [{expect:12s}] -> {status}")
