"""End to end on the two-rooms scene: render ground truth, train a 2x1 grid
out of core, evaluate, and save one held-out render next to its target.

A short run (300 steps, a few minutes on one core) so the numbers are modest;
pass a larger step count as the first argument for a proper fit.

    python demos/train_two_rooms.py [steps] [out_dir]
"""

import logging
import sys
import time
from pathlib import Path

import numpy as np

from internerf.dataset import Dataset, save_image
from internerf.scenes import make_synthetic_scene, oracle_render
from internerf.trainer import TrainConfig, desk_model, evaluate, load_checkpoint, render_view, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")

scene, cams = make_synthetic_scene("two-rooms", seed=0)
t = time.time()
images = np.stack([oracle_render(scene, c) for c in cams]).astype(np.float32)
print(f"ground truth: {len(cams)} views in {time.time() - t:.1f}s")
data = Dataset(cams, images)

config = TrainConfig(total_steps=steps, warmup_steps=min(100, steps // 4), seed=0)
t = time.time()
result = train(config, desk_model(), data, out / "ckpt", grid_shape=(2, 1), progress_every=50)
print(f"trained {steps} steps in {time.time() - t:.0f}s, active cells {result.grid.active_cells}")

ckpt = load_checkpoint(out / "ckpt")
report = evaluate(ckpt, data, "test")
print(f"test PSNR {report.mean_psnr:.2f} dB (mean-color baseline {report.baseline_psnr:.2f}), SSIM {report.mean_ssim:.3f}")

k = data.test_indices[0]
save_image(out / "render.png", render_view(ckpt, cams[k]))
save_image(out / "target.png", images[k])
print(f"wrote {out / 'render.png'} and {out / 'target.png'}")
