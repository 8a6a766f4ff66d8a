"""Periodic sinusoidal neural representations for seamless, tileable textures."""

from .diffcore import AdamState, Tape, Tensor, adam_step, backward
from .modelio import load_model, save_model
from .mrnet import MrNet, StageConfig, blend_weights, init_mrnet, mrnet_eval, partition_frequencies
from .pinr import (
    FrequencySet,
    PeriodicInr,
    enumerate_band,
    forward,
    init_periodic,
    init_siren,
    param_count,
    spatial_jacobian,
)
from .texio import ImageGrid, load_png, psnr, sample_grid, save_png

__version__ = "0.1.0"
