"""Trust-region proposal updates for sampling-based model predictive control."""

from .baselines import CemConfig, MppiConfig, cem_update, mppi_update, mppi_weights
from .core import (GaussianProposal, OcpConfig, SampleBatch, gaussian_entropy, gaussian_kl,
                   rollout_batch)
from .envs import make_env
from .lcd import LcdSampleSet, load_sample_set, load_shipped, optimize_lcd_set, save_sample_set
from .mpc import MpcConfig, MpcController, run_episode
from .sampling import UnitSampleSource, random_rotation, transform_samples
from .trust_region import TrustRegionConfig, solve_dual, tr_update, tr_weights

__version__ = "0.1.0"
