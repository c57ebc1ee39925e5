# %% [markdown]
# # Position, velocity and dual particle weights
#
# A particle's position weight only asks how close it is to a measurement.
# The velocity weight also asks whether its velocity agrees with the measured
# (radial) velocity. The dual weight keeps both and resamples on the larger.

# %%
import numpy as np

from dualgrid.measurement import FreeModelParams
from dualgrid.particles import (FilterParams, resample_weight, update_weight_position,
                                update_weight_velocity)

free = FreeModelParams()
sv = FilterParams().sigma_v_inv
prior = np.full(4, 1e-4)   # typical per-particle mass
dist = np.array([0.0, 0.3, 1.0, np.nan])   # NaN: no measurement in range
v_particle = np.array([[20.0, 0.0], [20.0, 0.0], [5.0, 0.0], [0.0, 0.0]])
v_meas = np.array([[20.0, 0.0], [18.0, 0.0], [20.0, 0.0], [0.0, 0.0]])

wp = update_weight_position(prior, dist, 0.1, free)
wv = update_weight_velocity(prior, dist, v_particle, v_meas, 0.1, free, sv)
for k in range(4):
    print(f"d={dist[k]:>4}  position {wp[k]:.2e}  velocity {wv[k]:.2e}  dual {max(wp[k], wv[k]):.2e}")

# %% The dual weight never falls below either single weight
rw = resample_weight(wp, wv, "dual")
print(np.all(rw >= wp) and np.all(rw >= wv))
