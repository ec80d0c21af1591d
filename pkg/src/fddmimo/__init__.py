"""Channel estimation for FDD massive MIMO with a learned path-parameter prior.

Modules
-------
linalg       least squares, rank and seeded random streams
channel      multipath OFDM channel model, pilots, LS objectives and gradients
dataset      synthetic indoor scenario, feature scaling, persistence
nn           small MLPs with explicit backprop and Adam
reggan       GAN with encoder regularization (the prior)
estimators   latent-space uplink LS, downlink phase LS and baselines
metrics      NMSE, MRT rate, QPSK SER, feedback-error injection
experiments  Monte-Carlo sweeps and CSV output
config, cli  flat config files and the ``fddmimo`` command
"""
from .channel import (DownlinkObservation, PathParams, SystemConfig, UplinkObservation,
                      downlink_channels, synth_downlink, synth_uplink, uplink_channels)
from .dataset import Dataset, FeatureScaler, ScenarioSpec
from .estimators import DescentConfig, EstimateReport
from .experiments import SweepSpec, run_sweep
from .reggan import GanConfig, GanModel

__version__ = "0.1.0"
