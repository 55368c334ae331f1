"""Half-space geometry: rotations, rational/irrational classification of normals."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce

import numpy as np

from ..errors import GeometryError


def rotation_matrix(n) -> tuple[np.ndarray, np.ndarray]:
    """Proper rotation M with M e_d = n, and N = its first d-1 columns.

    M = H diag(-1, 1, ..., 1) where H is the Householder reflection exchanging
    e_d and n; the diagonal factor restores det M = +1.
    """
    n = np.asarray(n, dtype=float)
    d = n.size
    if abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise GeometryError(f"normal must be a unit vector, |n| = {np.linalg.norm(n)!r}")
    e = np.zeros(d)
    e[-1] = 1.0
    u = e - n
    nu = float(u @ u)
    if nu < 1e-28:
        M = np.eye(d)
    else:
        H = np.eye(d) - 2.0 * np.outer(u, u) / nu
        S = np.eye(d)
        S[0, 0] = -1.0
        M = H @ S
    return M, M[:, : d - 1].copy()


def _primitive(v: np.ndarray) -> np.ndarray:
    g = reduce(math.gcd, (abs(int(x)) for x in v))
    return v // g if g else v


def tangential_lattice_basis(v) -> np.ndarray:
    """Columns form a basis of {h in Z^d : h . v = 0}, oriented so that det[basis | v] > 0.

    The cell spanned by the columns has (d-1)-volume |v|.
    """
    v = _primitive(np.asarray(v, dtype=np.int64))
    d = v.size
    if d == 2:
        return np.array([[v[1]], [-v[0]]], dtype=np.int64)
    R = int(np.abs(v).max())
    cands = []
    for h in itertools.product(range(-R, R + 1), repeat=3):
        h = np.array(h, dtype=np.int64)
        if h.any() and int(h @ v) == 0:
            cands.append(h)
    cands.sort(key=lambda h: (int(h @ h), tuple(-h)))
    b1 = cands[0]
    for b2 in cands[1:]:
        c = np.cross(b1, b2)
        if np.array_equal(c, v):
            return np.stack([b1, b2], axis=1)
        if np.array_equal(c, -v):
            return np.stack([b1, -b2], axis=1)
    raise GeometryError(f"no tangential lattice basis found for {v.tolist()}")


@dataclass(frozen=True)
class RationalNormal:
    """n = v/|v| with v primitive; the tangential period lattice has basis ``basis`` (columns)."""

    v: tuple[int, ...]
    basis: np.ndarray = field(compare=False)

    @property
    def kind(self) -> str:
        return "rational"

    @property
    def cell_volume(self) -> float:
        return float(np.linalg.norm(self.v))


@dataclass(frozen=True)
class DiophantineEstimate:
    """Scan of |P_{n-perp} h| * |h|^(d + tau) over 0 < |h| <= H.

    ``A_n`` is the scanned minimum (non-increasing in H); ``decay_exponent`` is a
    least-squares fit of the running minimum of |P_{n-perp} h| against |h| and is
    diagnostic only; ``approximant`` is the primitive lattice direction closest in
    angle to n among the scanned vectors.
    """

    tau: float
    A_n: float
    H: int
    decay_exponent: float
    approximant: tuple[int, ...]
    approximant_angle: float

    @property
    def kind(self) -> str:
        return "irrational"


def _rational_reconstruction(n: np.ndarray, H: int) -> np.ndarray | None:
    k = int(np.argmax(np.abs(n)))
    fracs = [Fraction(float(x / n[k])).limit_denominator(H) for x in n]
    den = reduce(lambda a, b: a * b // math.gcd(a, b), (f.denominator for f in fracs))
    v = np.array([int(f * den) for f in fracs], dtype=np.int64)
    if n[k] < 0:
        v = -v
    v = _primitive(v)
    if float(np.linalg.norm(v)) > H:
        return None
    w = v / np.linalg.norm(v)
    if np.linalg.norm(w - n) > 1e-10:
        return None
    return v


def _lattice_scan(d: int, H: int) -> np.ndarray:
    r = np.arange(-H, H + 1)
    pts = np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1).reshape(-1, d)
    norm2 = (pts ** 2).sum(axis=1)
    keep = (norm2 > 0) & (norm2 <= H * H)
    return pts[keep]


def diophantine_estimate(n, H: int, tau: float = 0.0) -> DiophantineEstimate:
    n = np.asarray(n, dtype=float)
    d = n.size
    h = _lattice_scan(d, H).astype(float)
    hn = np.linalg.norm(h, axis=1)
    perp = np.linalg.norm(h - np.outer(h @ n, n), axis=1)
    A_n = float((perp * hn ** (d + tau)).min())
    order = np.argsort(hn, kind="stable")
    running = np.minimum.accumulate(perp[order])
    radii = hn[order]
    sel = radii >= 2.0
    decay = float("nan")
    if sel.sum() >= 3 and np.all(running[sel] > 0):
        decay = float(-np.polyfit(np.log(radii[sel]), np.log(running[sel]), 1)[0])
    angle = perp / hn
    pos = h @ n > 0
    idx = int(np.flatnonzero(pos)[np.argmin(angle[pos])])
    v = _primitive(h[idx].astype(np.int64))
    w = v / np.linalg.norm(v)
    return DiophantineEstimate(float(tau), A_n, int(H), decay, tuple(int(x) for x in v),
                               float(np.arccos(min(1.0, float(w @ n)))))


def classify_normal(n, H: int = 10, tau: float = 0.0) -> RationalNormal | DiophantineEstimate:
    """Rational when n is within 1e-10 of v/|v| for a primitive integer v with |v| <= H."""
    if H < 10:
        raise GeometryError("scan radius H must be at least 10")
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    v = _rational_reconstruction(n, H)
    if v is not None:
        return RationalNormal(tuple(int(x) for x in v), tangential_lattice_basis(v))
    return diophantine_estimate(n, H, tau)


@dataclass(frozen=True)
class HalfSpaceGeometry:
    """The half-space {y . n > s} with rotation data and normal classification."""

    n: np.ndarray = field(compare=False)
    s: float
    M: np.ndarray = field(compare=False)
    N: np.ndarray = field(compare=False)
    classification: RationalNormal | DiophantineEstimate

    @classmethod
    def from_normal(cls, n, s: float = 0.0, H: int = 10, tau: float = 0.0) -> "HalfSpaceGeometry":
        n = np.asarray(n, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0 or not np.all(np.isfinite(n)):
            raise GeometryError("normal must be a finite nonzero vector")
        if n.size not in (2, 3):
            raise GeometryError("normal must have 2 or 3 components")
        n = n / norm
        M, N = rotation_matrix(n)
        return cls(n, float(s), M, N, classify_normal(n, H, tau))

    @property
    def dim(self) -> int:
        return self.n.size

    @property
    def is_rational(self) -> bool:
        return isinstance(self.classification, RationalNormal)

    def lattice_direction(self) -> tuple[int, ...]:
        """The primitive v for rational n, the recorded approximant otherwise."""
        c = self.classification
        return c.v if isinstance(c, RationalNormal) else c.approximant

    def with_offset(self, s: float) -> "HalfSpaceGeometry":
        return HalfSpaceGeometry(self.n, float(s), self.M, self.N, self.classification)

    def lattice_offsets(self, count: int) -> list[float]:
        """Offsets k * min{h . n > 0 : h in Z^d}, for which the half-spaces are lattice translates."""
        v = np.array(self.lattice_direction(), dtype=float)
        step = 1.0 / np.linalg.norm(v)
        return [k * step for k in range(count)]
