"""Viscous collective atomic recoil lasing: stochastic atom-cavity dynamics,
density evolution, threshold analysis and the phase-oscillator reduction."""

import os

import numba

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is too old for numba; OpenMP is thread-safe for nested callers
    numba.config.THREADING_LAYER = "omp"

__version__ = "0.1.0"
