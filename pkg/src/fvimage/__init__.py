"""End-to-end toolkit: synthetic soil-over-bedrock models, elastic wavefield
simulation, dispersion imaging, and CNN prediction of 2D shear-velocity images.

Submodules:
    geomodel      stochastic two-layer velocity models
    elastodyn     staggered-grid P-SV finite-difference simulation
    beamform      frequency-domain beamforming and dispersion images
    neuralvision  CNN presets, training, and gradient verification
    metrics       MAPE and MSSIM image comparison
    orchestry     configuration, persistence (FVBIN), CLI, experiments
"""

__version__ = "0.1.0"

from . import beamform, elastodyn, geomodel, metrics, neuralvision  # noqa: F401
from .errors import (DataError, FvimageError, NumericalError,  # noqa: F401
                     ValidationError)
