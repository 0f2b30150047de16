"""Train the full objective for a few hundred steps on the bundled digit
subset and plot the loss terms. This is the composite game: bottleneck
classification + reconstruction + nuisance-ness + independence + adversarial
similarity, with discriminators updated before the encoder each step.

Takes a couple of minutes on a laptop CPU.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from aenib.config import ExperimentConfig
from aenib.datasets import load_digit_dataset
from aenib.training import fit

train_ds = load_digit_dataset("data/mnist", "train")
test_ds = load_digit_dataset("data/mnist", "test")

cfg = ExperimentConfig()
cfg.encoder.norm_mean, cfg.encoder.norm_std = train_ds.channel_stats()
cfg.train.total_steps = 400
cfg.train.eval_every = 200
cfg.train.checkpoint_every = 0
cfg.seed = 1

model, history = fit(train_ds, test_ds, cfg, out_dir=None,
                     log_fn=lambda r: print(r) if r.get("kind") == "eval" else None)

out = Path("demos/output")
out.mkdir(parents=True, exist_ok=True)
fig, ax = plt.subplots(figsize=(7, 4))
steps = [r["step"] for r in history.reports]
for key in ("total", "vib", "recon", "nuis", "sim"):
    ax.plot(steps, [r[key] for r in history.reports], label=key, linewidth=0.9)
ax.set_xlabel("step"); ax.set_ylabel("loss"); ax.legend()
fig.tight_layout(); fig.savefig(out / "smoke_losses.png", dpi=110)
print("wrote demos/output/smoke_losses.png")
