# %% [markdown]
# # Estimating the downlink from uplink pilots
#
# Uplink pilots are cheap: the base station fits gains, delays and angles
# by searching the generator's latent space. Only the downlink phases are
# left, and a few downlink pilots pin them down. Here we run one user
# through every estimator and then a small Monte-Carlo sweep.

# %%
import numpy as np

from fddmimo import channel as ch
from fddmimo import dataset as ds
from fddmimo import estimators as es
from fddmimo import experiments as ex
from fddmimo import reggan
from fddmimo.linalg import make_rng
from fddmimo.metrics import nmse_db

data = ds.generate(ds.ScenarioSpec(user_count=5000, seed=4))
model = reggan.train(data, reggan.GanConfig(epochs=1000))

# %% [markdown]
# One user at 15 dB SNR.

# %%
cfg = ch.SystemConfig(p=8)
cfg = cfg.with_(P_T=ex.snr_to_power(15.0, cfg.sigma_n2, data.mean_path_power()))
rng = make_rng(5)
user = data.records[data.test[0]]
up = ch.synth_uplink(user, cfg, rng)
dl = ch.synth_downlink(user, cfg, rng)
H_dl = ch.downlink_channels(user, cfg, range(1, 17), range(1, 65))

gan = es.up_gan_estimate(up, model, cfg, rng=rng)
p = gan.params
results = {
    "phase LS on GAN fit": es.dl_phase_estimate(dl, p.alpha, p.tau, p.theta, cfg).h_dl,
    "copy uplink phases": es.full_reciprocity(gan, "copy_phase", cfg).h_dl,
    "linear LS for rho": es.dl_ls(dl, p.tau, p.theta, cfg).h_dl,
}
print(f"uplink fit: {nmse_db(ch.uplink_channels(user, cfg), gan.h_up):.1f} dB "
      f"after {gan.iterations} iterations")
for name, h in results.items():
    print(f"{name:22s} {nmse_db(H_dl, h):6.1f} dB")

# %% [markdown]
# ## A small sweep
#
# Every trial draws its user and noise from streams keyed by the trial
# index, so both scenarios see the same realizations.

# %%
spec = ex.SweepSpec(axis="snr_db", values=(0, 10, 20), trials=5,
                    scenarios=("DL-GAN", "DL-FullRecip-copy"))
print(ex.format_csv(ex.run_sweep(spec, model, data)))
