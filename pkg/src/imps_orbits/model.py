"""Piecewise-constant nearest-neighbour Hamiltonians and the kicked Ising drive.

A drive is a :class:`HamiltonianSchedule`: an ordered list of segments, each a
translation-invariant bond term ``h_{i,i+1}`` (a ``d**2 x d**2`` Hermitian
matrix) applied for a fixed duration.  Single-site fields are split
symmetrically over the bond, ``(h/2)(Z x 1 + 1 x Z)``, so every bond term is
inversion symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.linalg import expm

X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)

PAULI = {"x": X, "y": Y, "z": Z, "i": I2}

HERMITIAN_TOL = 1e-14
CONNECTED_TOL = 1e-12


@dataclass(frozen=True)
class KickedIsingParams:
    """Couplings of the kicked Ising chain.

    ``g`` defaults to ``J`` so that ``KickedIsingParams(J)`` is the
    single-parameter family ``J = g, h = 1, T = 1``.
    """

    J: float
    g: float | None = None
    h: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if self.g is None:
            object.__setattr__(self, "g", self.J)
        if not self.T > 0:
            raise ValueError(f"period must be positive, got T={self.T}")

    def with_J(self, J: float) -> "KickedIsingParams":
        """Move along the ``J = g`` line keeping ``h`` and ``T``."""
        return KickedIsingParams(J=J, g=J, h=self.h, T=self.T)

    def to_dict(self) -> dict:
        return {"J": self.J, "g": self.g, "h": self.h, "T": self.T}

    @classmethod
    def from_dict(cls, d: dict) -> "KickedIsingParams":
        return cls(J=d["J"], g=d.get("g"), h=d.get("h", 1.0), T=d.get("T", 1.0))


@dataclass(frozen=True)
class ScheduleSegment:
    duration: float
    two_site: np.ndarray
    single_site_only: bool = False

    def __post_init__(self):
        h = np.array(self.two_site, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("bond term must be a square matrix")
        d = math.isqrt(h.shape[0])
        if d * d != h.shape[0]:
            raise ValueError(f"bond term of size {h.shape[0]} is not d**2 x d**2")
        if not self.duration > 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")
        if np.max(np.abs(h - h.conj().T), initial=0.0) > HERMITIAN_TOL:
            raise ValueError("bond term is not Hermitian")
        h.setflags(write=False)
        object.__setattr__(self, "two_site", h)

    @property
    def d(self) -> int:
        return math.isqrt(self.two_site.shape[0])

    @property
    def is_zero(self) -> bool:
        return not np.any(self.two_site)

    def to_dict(self) -> dict:
        return {
            "duration": self.duration,
            "two_site_real": self.two_site.real.tolist(),
            "two_site_imag": self.two_site.imag.tolist(),
            "single_site_only": self.single_site_only,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScheduleSegment":
        h = np.array(d["two_site_real"], dtype=float) + 1j * np.array(d["two_site_imag"], dtype=float)
        return cls(float(d["duration"]), h, bool(d.get("single_site_only", False)))


@dataclass(frozen=True)
class HamiltonianSchedule:
    segments: tuple[ScheduleSegment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        ds = {s.d for s in self.segments}
        if len(ds) != 1:
            raise ValueError("all segments must share the physical dimension")

    @property
    def total_period(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def d(self) -> int:
        return self.segments[0].d

    def to_dict(self) -> dict:
        return {"segments": [s.to_dict() for s in self.segments]}

    @classmethod
    def from_dict(cls, d: dict) -> "HamiltonianSchedule":
        return cls(tuple(ScheduleSegment.from_dict(s) for s in d["segments"]))


def symmetric_field(op: np.ndarray) -> np.ndarray:
    """Bond term ``(op x 1 + 1 x op) / 2`` for an on-site operator."""
    op = np.asarray(op, dtype=complex)
    one = np.eye(op.shape[0], dtype=complex)
    return 0.5 * (np.kron(op, one) + np.kron(one, op))


def kicked_ising(params: KickedIsingParams) -> HamiltonianSchedule:
    """Two half-period segments: ``J ZZ + h Z`` then ``g X``."""
    half = params.T / 2
    h1 = params.J * np.kron(Z, Z) + symmetric_field(params.h * Z)
    h2 = symmetric_field(params.g * X)
    return HamiltonianSchedule((
        ScheduleSegment(half, h1, single_site_only=False),
        ScheduleSegment(half, h2, single_site_only=True),
    ))


def split_single_site(h2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a bond term into its on-site operator and connected remainder.

    Returns ``(op, rest)`` with ``h2 = (op x 1 + 1 x op)/2 + rest``, where
    ``op`` is fixed from the partial traces of ``h2``.
    """
    h2 = np.asarray(h2, dtype=complex)
    d = math.isqrt(h2.shape[0])
    h4 = h2.reshape(d, d, d, d)
    left = np.einsum("abcb->ac", h4) / d
    right = np.einsum("abad->bd", h4) / d
    avg = 0.5 * (left + right)
    op = 2 * avg - np.trace(avg) / d * np.eye(d)
    return op, h2 - symmetric_field(op)


def segment_unitary_single_site(seg: ScheduleSegment) -> np.ndarray:
    """Exact one-site propagator ``exp(-i * duration * op)`` of an on-site segment."""
    op, rest = split_single_site(seg.two_site)
    if np.max(np.abs(rest), initial=0.0) > CONNECTED_TOL:
        raise ValueError("segment has genuine two-site content; no on-site propagator")
    return expm(-1j * seg.duration * op)


def bond_operator_on_ring(h2: np.ndarray, L: int) -> np.ndarray:
    """Dense ``sum_i h_{i,i+1}`` on a periodic ring of ``L`` sites (site 0 = leftmost factor)."""
    d = math.isqrt(h2.shape[0])
    if L < 2:
        raise ValueError("need at least two sites for a bond term")
    h4 = np.asarray(h2, dtype=complex).reshape(d, d, d, d)
    dim = d**L
    H = np.zeros((dim, dim), dtype=complex)
    eye = np.eye(dim, dtype=complex).reshape((d,) * L + (dim,))
    for i in range(L):
        j = (i + 1) % L
        # apply h on sites (i, j) to every basis column
        out = np.tensordot(h4, eye, axes=([2, 3], [i, j]))
        out = np.moveaxis(out, [0, 1], [i, j])
        H += out.reshape(dim, dim)
    return H
