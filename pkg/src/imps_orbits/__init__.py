"""Periodic orbits of TDVP dynamics for translation-invariant matrix product states.

The package locates exactly periodic trajectories of time-dependent
variational dynamics on the manifold of uniform MPS for a kicked Ising
chain, classifies their stability, and compares them with exact
finite-ring dynamics.
"""

from .model import KickedIsingParams, HamiltonianSchedule, ScheduleSegment, kicked_ising
from .imps import MpsTensor, MixedCanonicalState, fidelity_density, mixed_canonical, random_tensor
from .tangent import TangentBasis, tangent_basis
from .tdvp import TdvpConfig, propagate, propagate_tensor
from .search import OrbitRecord, SearchConfig, find_orbit, continue_orbit, postprocess
from .stability import FloquetSpectrum, floquet_spectrum, jacobian

__all__ = [
    "KickedIsingParams", "HamiltonianSchedule", "ScheduleSegment", "kicked_ising",
    "MpsTensor", "MixedCanonicalState", "fidelity_density", "mixed_canonical", "random_tensor",
    "TangentBasis", "tangent_basis",
    "TdvpConfig", "propagate", "propagate_tensor",
    "OrbitRecord", "SearchConfig", "find_orbit", "continue_orbit", "postprocess",
    "FloquetSpectrum", "floquet_spectrum", "jacobian",
]

__version__ = "0.1.0"
