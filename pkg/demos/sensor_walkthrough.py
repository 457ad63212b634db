"""
Simulating a VIS/NIR mixed capture
==================================

Render one random scene through the RGB-NIR sensor model, once under
daylight xenon and once under the night NIR LED, and look at how the
mixed signal splits into its parts.

Run from the repository root::

    python demos/sensor_walkthrough.py
"""

# %%
from pathlib import Path

import numpy as np

from vnmix import sensor as S
from vnmix.fileio import write_png

out = Path("demo_out/sensor")
out.mkdir(parents=True, exist_ok=True)

scene = S.random_scene(64, 64, seed=3)
print("reflectance cube", scene.reflectance.shape)

# %%
# The three captures share one scene and one noise generator seed.
cfg = S.SensorConfig()
day = S.synthesize_triple(scene, S.day_schedule(), 0, cfg.with_exposure(S.DAY_EXPOSURE),
                          np.random.default_rng(0))
night = S.synthesize_triple(scene, S.night_schedule(), 0, cfg.with_exposure(S.NIGHT_EXPOSURE),
                            np.random.default_rng(0))

for name, t in (("day", day), ("night", night)):
    share = t.nir.mean() / t.mixed.mean()
    print(f"{name:5s} mixed {t.mixed.mean():.3f}  vis {t.vis.mean():.3f}  nir {t.nir.mean():.3f}"
          f"  deviation {t.deviation.mean():.4f}  nir share {share:.2f}")
    for role in ("mixed", "vis", "nir", "deviation"):
        write_png(out / f"{name}_{role}.png", getattr(t, role))

# %%
# At night the NIR LED dominates, so the RGB channels of the mixed capture
# move together. The long exposure is the restoration target.
print("night channel correlation\n", np.corrcoef(night.mixed.reshape(-1, 3).T).round(3))
write_png(out / "night_vis_long.png", night.vis_long)

# %%
# Without noise the parts add up to the mixed capture within one code.
clean = S.synthesize_triple(scene, S.day_schedule(), 0, cfg.with_exposure(S.DAY_EXPOSURE),
                            np.random.default_rng(0), noise=False)
resid = clean.mixed - np.clip(clean.vis + clean.nir + clean.deviation, 0, 1)
print("max additivity residual in codes:", np.abs(resid * cfg.quant_levels).max().round(3))
