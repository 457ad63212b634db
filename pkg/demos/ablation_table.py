"""
Ablation table
==============

Trains each ablation condition with the same seed and prints held-out
PSNR and SSIM. Every condition is a full training run, so the default
epoch count here is tiny; the same harness is available as
``vnmix ablate``.

    python demos/ablation_table.py
"""

# %%
from pathlib import Path

from vnmix import ablation, dataset
from vnmix.cli import run_ablation

root = Path("demo_out/ablation")
dataset.synthesize_dataset(8, (64, 64), seed=1, out_dir=root / "data")

for cid, cond in ablation.CONDITIONS.items():
    topo = cond.topology()
    print(f"{cid:2d} {cond.label:34s} variant={topo.variant:15s} colorspace={topo.colorspace}"
          f" half_chroma={topo.colorization_half}")

# %%
rows = run_ablation(root / "data", [1, 5, 6, 7], epochs=2, out_dir=root / "runs")
print(ablation.format_table(rows))
