"""Where do the cameras land, and what does a ray's parameter mix look like?

Builds the four-rooms camera layout, lays a 2x2 parameter grid over it and
prints the per-cell camera counts, the training schedule and the mixing
weights along a walk across a cell edge. No training, runs in a second.

    python demos/param_grid_tour.py
"""

import numpy as np

from internerf.interp import build_param_grid, mix_weights
from internerf.scenes import make_synthetic_scene
from internerf.trainer import build_schedule

_, cams = make_synthetic_scene("four-rooms", seed=0)
origins = np.array([c.origin[:2] for c in cams])
grid = build_param_grid(origins, 2, 2)

print(f"{len(cams)} cameras, bbox {grid.aabb_min.round(3)} .. {grid.aabb_max.round(3)}")
for cell, n in sorted(grid.camera_counts().items()):
    print(f"  cell {cell} {grid.cell_coords(cell)}: {n:3d} cameras, corners {grid.cell_vertices(cell)}")
inactive = [c for c in range(grid.n_cells) if not grid.is_active(c)]
print("inactive cells:", inactive or "none")

sched = build_schedule(grid, total_steps=2000)
print("schedule (cell, steps):", sched.visits[: len(grid.active_cells)], "...", f"total {sched.total}")

# walk horizontally through the middle row; weights stay continuous when the
# home cell changes because shared corners get identical coefficients
cell0 = grid.active_cells[0]
lo, hi = grid.cell_bounds(cell0)
y = 0.5 * (lo[1] + hi[1])
print("\nwalk along y = %.3f" % y)
for x in np.linspace(grid.aabb_min[0], grid.aabb_max[0], 9):
    cell, _ = grid.query_cell([x, y])
    mw = mix_weights(grid, cell, [x, y])
    nz = {v: round(float(w), 3) for v, w in zip(mw.vertices, mw.w) if w > 0}
    print(f"  x={x:+.3f}  cell {cell}  weights {nz}")
