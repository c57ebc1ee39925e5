# %% [markdown]
# # Building a measurement grid from radar detections
#
# Detections arrive in polar sensor coordinates. After ego-motion compensation
# a static post has zero velocity, and each detection marks the cells along its
# ray as free and a small disk around the hit as static.

# %%
import numpy as np

from dualgrid.grid import GridMap, GridSpec
from dualgrid.measurement import (FreeModelParams, StaticModelParams, build_measurement_grid,
                                  cartesian_batch)
from dualgrid.simulator import builtin_scenario, step

sc = builtin_scenario("simple_road", seed=0)
truth, dets = step(sc, 0.0)
print(len(dets), "detections from", sorted({d.sensor_id for d in dets}))

# %% Polar -> Cartesian, compensated velocity
batch = cartesian_batch(dets, sc.mounts, truth.ego, truth.timestamp)
speed = np.hypot(*batch.velocity.T)
print("fastest projected velocity %.1f m/s (the lead car)" % speed.max())
print("detections with |v| < 0.5 m/s (guardrail posts):", int((speed < 0.5).sum()))

# %% Free and static evidence
grid = GridMap.create(GridSpec(), truth.ego.pose)
meas = build_measurement_grid(batch, grid, FreeModelParams(), StaticModelParams())
print("grid shape", meas.p_free.shape)
print("cells touched by a ray or disk:", int(meas.touched.sum()))
print("cells with static evidence > 0.5:", int((meas.p_static > 0.5).sum()))

# %% Coarse ASCII view around the ego (x forward, rows are lateral offsets)
ix0 = grid.shape[0] // 2
view = meas.p_free[ix0:ix0 + 120:2].T[::-1]
stat = meas.p_static[ix0:ix0 + 120:2].T[::-1]
for f_row, s_row in zip(view[::2], stat[::2]):
    print("".join("#" if s > 0.5 else ("." if f > 0.5 else " ") for f, s in zip(f_row, s_row)))
