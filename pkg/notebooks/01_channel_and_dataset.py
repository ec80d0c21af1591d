# %% [markdown]
# # Channels from path parameters
#
# A multipath channel is fully described by a handful of numbers per path:
# gain, delay, angle of arrival and a carrier phase. Uplink and downlink
# share the first three; the phases differ because the carriers differ.
# This script builds one channel by hand, looks at what the dataset
# generator produces, and shows how the features are scaled for the GAN.

# %%
import numpy as np

from fddmimo import channel as ch
from fddmimo import dataset as ds
from fddmimo.linalg import make_rng

rng = make_rng(0)
cfg = ch.SystemConfig()          # 64 antennas, 16 subcarriers, 2.4/2.5 GHz
print(cfg.M, cfg.K, f"{cfg.sigma_n2:.3e} W noise")

# %% [markdown]
# Three paths, delays sorted. `uplink_channels` returns one row per
# subcarrier.

# %%
x = ch.PathParams.sorted_by_delay(
    alpha=[8e-4, 3e-4, 1e-4], tau=[20e-9, 35e-9, 60e-9], theta=[2.0, 3.0, 4.2],
    phi_up=[0.3, 1.2, 5.0], phi_dl=[2.2, 0.1, 4.0])
cfg3 = cfg.with_(L=3)
H_up = ch.uplink_channels(x, cfg3)
H_dl = ch.downlink_channels(x, cfg3, range(1, 17), range(1, 65))
print(H_up.shape, "uplink vs downlink correlation:",
      abs(np.vdot(H_up[0], H_dl[0])) / (np.linalg.norm(H_up[0]) * np.linalg.norm(H_dl[0])))

# %% [markdown]
# The correlation is well below one: copying the uplink channel to the
# downlink does not work in FDD, even though the geometry is identical.
#
# ## The scenario generator

# %%
data = ds.generate(ds.ScenarioSpec(user_count=2000, seed=1))
arr = data.arrays("train")
for name in ("alpha", "tau", "theta"):
    v = arr[name]
    print(f"{name:6s} min {v.min():.3e}  max {v.max():.3e}")

# %% [markdown]
# Features for the GAN are `log10(alpha)`, `tau / Ts` and `theta`, each
# mapped affinely onto [-1, 1] with ranges fitted on the training split.

# %%
F = data.features("train")
print(F.shape, F.min().round(3), F.max().round(3))
a, t, th = data.scaler.inverse(F[:1])
print(np.allclose(a, arr["alpha"][:1]), np.allclose(t, arr["tau"][:1]))
