"""
Train the pipeline on a small synthetic set
===========================================

Synthesizes a dataset, trains the full model for a few epochs with the
desk preset and runs inference on a held-out night capture. A few epochs
take a couple of minutes on one core; raise EPOCHS for usable output.

    python demos/train_and_infer.py
"""

# %%
import logging
from pathlib import Path

import numpy as np

from vnmix import ablation, dataset, networks, training
from vnmix.fileio import write_png
from vnmix.losses import LossWeights

logging.basicConfig(level=logging.INFO, format="%(message)s")
EPOCHS = 5
root = Path("demo_out/train")

manifest = dataset.synthesize_dataset(12, (64, 64), seed=0, out_dir=root / "data")
train = dataset.load_batch(manifest, manifest.ids("train"))
test = dataset.load_batch(manifest, manifest.ids("test"))
print(len(train), "training samples,", len(test), "test samples")

# %%
cfg = training.TrainConfig.preset("desk", epochs=EPOCHS)
pipe = networks.Pipeline(networks.Topology())
result = training.train(train, pipe, LossWeights(), cfg, out=root / "ckpt")
for row in result.curve:
    print(f"epoch {row['epoch']:3d}  total {row['total']:8.2f}")

# %%
# Held-out scores, plus the separation and night restoration comparisons.
ev = ablation.evaluate(pipe, test)
for key, val in ev.summary().items():
    print(key, {k: round(v, 3) for k, v in val.items()})

# %%
night = next(s for s in test if s.night)
out = networks.run_pipeline(pipe, night.mixed)
for name in ("rgb", "nir_est", "vis_est", "y_restored"):
    write_png(root / f"{night.id}_{name}.png", np.clip(out[name], 0, 1))
write_png(root / f"{night.id}_target.png", night.target)
print("wrote previews to", root)
