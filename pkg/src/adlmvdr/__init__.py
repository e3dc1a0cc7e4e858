"""MVDR and all-deep-learning MVDR beamforming on numpy.

Submodules: ``signal_core`` (STFT, WAV), ``room`` (image-method scenes),
``features`` (LPS/IPD/DF), ``estimators`` (cRM/cRF, covariances), ``mvdr``
(closed-form solutions), ``beamform`` (conventional pipelines), ``gru`` and
``adl`` (GRU-Net covariance operators, ADL-MVDR), ``training``, ``metrics``
and ``cli``.
"""

from .errors import (
    AdlMvdrError,
    ConfigurationError,
    DimensionError,
    DivergenceError,
    FormatError,
    NumericError,
    ParameterError,
    UnsupportedLayoutError,
    ValidationError,
)

__all__ = [
    "AdlMvdrError",
    "ConfigurationError",
    "DimensionError",
    "DivergenceError",
    "FormatError",
    "NumericError",
    "ParameterError",
    "UnsupportedLayoutError",
    "ValidationError",
]
