"""Cone-embedded stochastic networks for spatio-temporal ensemble forecasting.

Stages: :mod:`raster` (I/O), :mod:`stou` (simulation), :mod:`estimation`,
:mod:`embedding`, :mod:`network`, :mod:`training`, :mod:`forecast`,
:mod:`metrics` and :mod:`pipeline`.
"""

__version__ = "0.1.0"
