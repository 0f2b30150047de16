"""Score functions for novelty detection, on synthetic score distributions.

Higher is more in-distribution. The Dirichlet score rewards peaked softmax
outputs; the nuisance log-likelihood penalizes latents far from the prior;
the combined score adds the two.
"""

import numpy as np

from aenib.ood import (ScoreKind, detection_metrics, dirichlet_score,
                       msp_score, score_samples)

rng = np.random.default_rng(0)

peaked = rng.dirichlet(np.full(10, 0.1), size=500)     # confident predictions
diffuse = rng.dirichlet(np.full(10, 5.0), size=500)    # uncertain predictions
print("msp  peaked vs diffuse:", msp_score(peaked).mean(), msp_score(diffuse).mean())
print("dir  peaked vs diffuse:", dirichlet_score(peaked).mean(),
      dirichlet_score(diffuse).mean())

# In-distribution latents near the prior, OOD latents far away:
zn_in = rng.standard_normal((500, 32))
zn_out = rng.standard_normal((500, 32)) * 2.5
s_in = score_samples(ScoreKind.COMBINED, peaked, zn_in)
s_out = score_samples(ScoreKind.COMBINED, diffuse, zn_out)
res = detection_metrics(s_in, s_out)
print(f"combined-score detection: AUROC={res.auroc:.3f} AUPR={res.aupr:.3f} "
      f"FPR@95TPR={res.fpr_at_95tpr:.3f}")
