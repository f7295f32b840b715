"""Counter-based Gaussian streams keyed by (seed, atom, step).

Every normal deviate is a pure function of its key, so a kick does not depend
on how the atom loop is split across workers. The mixer is the SplitMix64
finalizer chained over the key words; two 53-bit uniforms feed a Box-Muller
transform. ``counter_normals`` (numpy) and ``normal_at`` (numba) share the
integer hash exactly; their deviates agree to within an ulp or so, since the
two math libraries may round log/sin differently.
"""

from __future__ import annotations

import math

import numba
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@numba.njit(inline="always")
def _mix(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(inline="always")
def _key(seed, atom, step):
    h = _mix(np.uint64(seed))
    h = _mix(h ^ np.uint64(atom))
    return _mix(h ^ np.uint64(step))


@numba.njit(inline="always")
def normal_at(seed, atom, step):
    """Standard normal deviate for key (seed, atom, step)."""
    h = _key(seed, atom, step)
    a = _mix(h ^ np.uint64(1))
    b = _mix(h ^ np.uint64(2))
    u1 = (float(a >> np.uint64(11)) + 1.0) * _INV53
    u2 = float(b >> np.uint64(11)) * _INV53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def _mix_np(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def counter_normals(seed: int, atoms: np.ndarray, step: int) -> np.ndarray:
    """Vectorized twin of ``normal_at`` for a batch of atom indices."""
    atoms = np.asarray(atoms, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix_np(np.full(atoms.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64))
        h = _mix_np(h ^ atoms)
        h = _mix_np(h ^ np.uint64(step))
        a = _mix_np(h ^ np.uint64(1))
        b = _mix_np(h ^ np.uint64(2))
    u1 = ((a >> _S11).astype(np.float64) + 1.0) * _INV53
    u2 = (b >> _S11).astype(np.float64) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def derive_seed(seed: int, *words: int) -> int:
    """Fold extra integers (realization index, scan point) into a seed."""
    with np.errstate(over="ignore"):
        h = _mix_np(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
        for w in words:
            h = _mix_np(h ^ np.uint64(w & 0xFFFFFFFFFFFFFFFF))
    return int(h[0] >> np.uint64(1))
