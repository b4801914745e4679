"""Random Fourier decayed signature features with a variational sparse-spectrum
Gaussian-process readout for probabilistic time-series forecasting."""

__version__ = "0.1.0"

from . import arrayops, autodiff, dataio, forecast, randfourier, sigfeatures, sigoracle, vargp

__all__ = [
    "arrayops",
    "autodiff",
    "dataio",
    "forecast",
    "randfourier",
    "sigfeatures",
    "sigoracle",
    "vargp",
    "__version__",
]
