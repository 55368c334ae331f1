"""Periodic grids and fields on the unit torus."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from ..errors import DataError
from .expressions import Expression, parse_expression, parse_vector_expression

RANK_NAMES = {0: "scalar", 1: "vector", 2: "tensor2", 4: "tensor4"}


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the unit torus (0,1]^d; points_per_axis are even and >= 8."""

    dim: int
    points_per_axis: tuple[int, ...]

    def __init__(self, dim: int, points_per_axis: int | Sequence[int]):
        if dim not in (2, 3):
            raise DataError(f"dim must be 2 or 3, got {dim}")
        if np.isscalar(points_per_axis):
            pts = (int(points_per_axis),) * dim
        else:
            pts = tuple(int(p) for p in points_per_axis)
        if len(pts) != dim:
            raise DataError("points_per_axis length does not match dim")
        for p in pts:
            if p < 8 or p % 2:
                raise DataError(f"points per axis must be even and >= 8, got {p}")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "points_per_axis", pts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points_per_axis

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coordinates(self) -> np.ndarray:
        axes = [np.arange(n) / n for n in self.shape]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def wavenumbers(self) -> list[np.ndarray]:
        """Integer wavenumbers per axis, broadcastable against the grid shape."""
        out = []
        for a, n in enumerate(self.shape):
            k = np.fft.fftfreq(n, 1.0 / n)
            shape = [1] * self.dim
            shape[a] = n
            out.append(k.reshape(shape))
        return out

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.dim, tuple(factor * p for p in self.shape))


def _nyquist_split(spec: np.ndarray, shape: Sequence[int]) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return a spectrum and per-axis wavenumbers with each Nyquist plane split evenly
    between +N/2 and -N/2, so that trigonometric interpolation is real and symmetric."""
    d = len(shape)
    lead = spec.ndim - d
    freqs = []
    for a, n in enumerate(shape):
        axis = lead + a
        k = np.fft.fftfreq(n, 1.0 / n)
        half = np.take(spec, [n // 2], axis=axis) * 0.5
        spec = np.concatenate([np.take(spec, range(n // 2), axis=axis), half,
                               np.take(spec, range(n // 2 + 1, n), axis=axis), half], axis=axis)
        freqs.append(np.concatenate([k[: n // 2], [-n // 2], k[n // 2 + 1:], [n // 2]]))
    return spec, freqs


class PeriodicField:
    """Real samples on a GridSpec with a cached discrete Fourier spectrum.

    ``samples`` has shape ``lead + grid.shape``; the lead shape is () for a
    scalar, (d,) for a vector, (d, d, d, d) for a fourth-order tensor, and any
    other shape for an indexed family of fields.
    """

    def __init__(self, grid: GridSpec, samples: np.ndarray):
        samples = np.array(samples, dtype=float)
        if samples.shape[samples.ndim - grid.dim:] != grid.shape:
            raise DataError(f"samples shape {samples.shape} does not end with grid shape {grid.shape}")
        samples.setflags(write=False)
        self.grid = grid
        self.samples = samples

    @classmethod
    def from_spectrum(cls, grid: GridSpec, spectrum: np.ndarray) -> "PeriodicField":
        axes = tuple(range(spectrum.ndim - grid.dim, spectrum.ndim))
        return cls(grid, np.fft.ifftn(spectrum, axes=axes).real)

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[[np.ndarray], np.ndarray]) -> "PeriodicField":
        return cls(grid, fn(grid.coordinates()))

    @property
    def lead_shape(self) -> tuple[int, ...]:
        return self.samples.shape[: self.samples.ndim - self.grid.dim]

    @property
    def rank(self) -> str:
        lead = self.lead_shape
        if all(n == self.grid.dim for n in lead) and len(lead) in RANK_NAMES:
            return RANK_NAMES[len(lead)]
        return "family"

    @property
    def _axes(self) -> tuple[int, ...]:
        nd = self.samples.ndim
        return tuple(range(nd - self.grid.dim, nd))

    @cached_property
    def spectrum(self) -> np.ndarray:
        spec = np.fft.fftn(self.samples, axes=self._axes)
        spec.setflags(write=False)
        return spec

    def roundtrip_error(self) -> float:
        back = np.fft.ifftn(self.spectrum, axes=self._axes).real
        scale = max(np.abs(self.samples).max(), 1e-300)
        return float(np.abs(back - self.samples).max() / scale)

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=self._axes)

    def max_norm(self) -> float:
        return float(np.abs(self.samples).max()) if self.samples.size else 0.0

    def gradient(self) -> "PeriodicField":
        """Spectral gradient; the derivative index is appended to the lead shape."""
        return PeriodicField(self.grid, spectral_gradient(self.samples, self.grid))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Trigonometric interpolation at arbitrary points of shape (d, ...)."""
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(self.grid.dim, -1)
        spec, freqs = _nyquist_split(self.spectrum / self.grid.size, self.grid.shape)
        lead = self.lead_shape
        out = np.empty(lead + (flat.shape[1],))
        chunk = max(1, 2_000_000 // max(1, int(np.prod([len(f) for f in freqs]))))
        for start in range(0, flat.shape[1], chunk):
            sl = slice(start, start + chunk)
            acc = spec
            for a in range(self.grid.dim - 1, -1, -1):
                e = np.exp(2j * np.pi * np.outer(flat[a, sl], freqs[a]))
                if a == self.grid.dim - 1:
                    acc = np.einsum("...k,pk->...p", acc, e)
                else:
                    acc = np.einsum("...kp,pk->...p", acc, e)
            out[..., sl] = acc.real
        return out.reshape(lead + pts.shape[1:])

    def evaluate_tensor_grid(self, axes: Sequence[np.ndarray]) -> np.ndarray:
        """Trigonometric interpolation on the tensor grid axes[0] x ... x axes[d-1]."""
        spec, freqs = _nyquist_split(self.spectrum / self.grid.size, self.grid.shape)
        acc = spec
        nlead = len(self.lead_shape)
        for a in range(self.grid.dim):
            e = np.exp(2j * np.pi * np.outer(np.asarray(axes[a], dtype=float), freqs[a]))
            acc = np.tensordot(acc, e, axes=([nlead], [1]))
        return acc.real

    @cached_property
    def key(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.grid.dim, self.grid.shape, self.samples.shape)).encode())
        h.update(np.ascontiguousarray(self.samples).tobytes())
        return h.hexdigest()[:20]


def spectral_gradient(samples: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Derivative index appended after the lead axes; Nyquist modes are dropped."""
    d = grid.dim
    axes = tuple(range(samples.ndim - d, samples.ndim))
    spec = np.fft.fftn(samples, axes=axes)
    lead = samples.shape[: samples.ndim - d]
    out = np.empty(lead + (d,) + grid.shape)
    for a, k in enumerate(grid.wavenumbers()):
        n = grid.shape[a]
        kk = np.where(np.abs(k) == n // 2, 0.0, k)
        out[(Ellipsis, a) + (slice(None),) * d] = np.fft.ifftn(2j * np.pi * kk * spec, axes=axes).real
    return out


TensorEvaluator = Callable[[np.ndarray], np.ndarray]


class EllipticTensorField:
    """Periodic fourth-order coefficient A[alpha, beta, i, j](y).

    The operator convention is (L u)_i = -d_alpha(A[alpha, beta, i, j] d_beta u_j).
    ``evaluator`` maps points (d, ...) to values (d, d, d, d, ...) exactly when the
    field came from closed-form expressions; otherwise trigonometric interpolation
    of the samples is used.
    """

    def __init__(self, A: PeriodicField, mu: float | None = None, evaluator: TensorEvaluator | None = None,
                 label: str = ""):
        d = A.grid.dim
        if A.lead_shape != (d, d, d, d):
            raise DataError(f"coefficient must be a tensor4 field, got lead shape {A.lead_shape}")
        if not np.all(np.isfinite(A.samples)):
            raise DataError("coefficient has non-finite samples")
        self.A = A
        self.grid = A.grid
        self.dim = d
        self._evaluator = evaluator
        self.label = label
        self.claimed_mu = mu

    # constructors -----------------------------------------------------------------
    @classmethod
    def from_callable(cls, grid: GridSpec, fn: TensorEvaluator, mu: float | None = None,
                      label: str = "") -> "EllipticTensorField":
        return cls(PeriodicField(grid, fn(grid.coordinates())), mu, fn, label)

    @classmethod
    def from_scalar(cls, grid: GridSpec, scalar: str | Expression | Callable, mu: float | None = None
                    ) -> "EllipticTensorField":
        """A = a(y) * delta_{alpha beta} delta_{ij}."""
        d = grid.dim
        a = parse_expression(scalar, d) if isinstance(scalar, str) else scalar
        eye = np.einsum("ab,ij->abij", np.eye(d), np.eye(d))

        def fn(y):
            vals = np.asarray(a(y), dtype=float)
            vals = np.broadcast_to(vals, np.shape(y)[1:])
            return eye.reshape(eye.shape + (1,) * vals.ndim) * vals

        label = scalar if isinstance(scalar, str) else getattr(scalar, "text", "scalar")
        return cls.from_callable(grid, fn, mu, label=f"({label})*identity")

    @classmethod
    def from_constant(cls, grid: GridSpec, C: np.ndarray, mu: float | None = None) -> "EllipticTensorField":
        C = np.array(C, dtype=float)
        d = grid.dim
        if C.shape != (d, d, d, d):
            raise DataError(f"constant tensor must have shape {(d,) * 4}")

        def fn(y):
            extra = np.shape(y)[1:]
            return np.broadcast_to(C.reshape(C.shape + (1,) * len(extra)), C.shape + extra).copy()

        return cls.from_callable(grid, fn, mu, label="constant")

    @classmethod
    def identity(cls, grid: GridSpec) -> "EllipticTensorField":
        d = grid.dim
        return cls.from_constant(grid, np.einsum("ab,ij->abij", np.eye(d), np.eye(d)))

    @classmethod
    def from_entries(cls, grid: GridSpec, entries: dict, base: np.ndarray | None = None,
                     mu: float | None = None) -> "EllipticTensorField":
        """Constant ``base`` (default zero) plus expression-valued entries keyed by (alpha, beta, i, j)."""
        d = grid.dim
        base = np.zeros((d,) * 4) if base is None else np.array(base, dtype=float)
        compiled = {tuple(k): (parse_expression(v, d) if isinstance(v, str) else v) for k, v in entries.items()}

        def fn(y):
            extra = np.shape(y)[1:]
            out = np.broadcast_to(base.reshape(base.shape + (1,) * len(extra)), base.shape + extra).copy()
            for idx, expr in compiled.items():
                out[idx] = out[idx] + expr(y)
            return out

        return cls.from_callable(grid, fn, mu, label="entries")

    # evaluation -------------------------------------------------------------------
    @property
    def samples(self) -> np.ndarray:
        return self.A.samples

    @property
    def key(self) -> str:
        return self.A.key

    @property
    def is_exact(self) -> bool:
        return self._evaluator is not None

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        if self._evaluator is not None:
            pts = np.asarray(points, dtype=float)
            return np.asarray(self._evaluator(pts), dtype=float)
        return self.A.evaluate(points)

    def adjoint(self) -> "EllipticTensorField":
        """A*[alpha, beta, i, j] = A[beta, alpha, j, i]."""
        base = self._evaluator
        ev = None if base is None else (lambda y: np.swapaxes(np.swapaxes(base(y), 0, 1), 2, 3))

        samples = np.swapaxes(np.swapaxes(self.samples, 0, 1), 2, 3)
        return EllipticTensorField(PeriodicField(self.grid, samples), self.claimed_mu, ev,
                                   label=f"adjoint[{self.label}]")

    def on_grid(self, grid: GridSpec) -> "EllipticTensorField":
        """Resample on another grid (exact for expression-defined coefficients)."""
        if grid == self.grid:
            return self
        if self._evaluator is not None:
            return EllipticTensorField.from_callable(grid, self._evaluator, self.claimed_mu, self.label)
        return EllipticTensorField(PeriodicField(grid, self.A.evaluate(grid.coordinates())), self.claimed_mu,
                                   None, self.label)

    def mean(self) -> np.ndarray:
        return self.A.mean()

    def is_constant(self, tol: float = 1e-14) -> bool:
        s = self.samples
        ref = s.reshape(s.shape[:4] + (-1,))
        return bool(np.abs(ref - ref[..., :1]).max() <= tol * max(1.0, np.abs(ref).max()))

    @cached_property
    def ellipticity(self) -> "EllipticityReport":
        return check_ellipticity(self, trials=100)

    @property
    def mu(self) -> float:
        if self.claimed_mu is not None:
            return float(self.claimed_mu)
        rep = self.ellipticity
        return float(min(rep.mu_lower, 1.0 / rep.mu_upper)) if rep.mu_upper > 0 else 0.0

    @cached_property
    def holder(self) -> tuple[float, float]:
        """(eta, seminorm proxy): eta = 1 with the max spectral gradient norm of A."""
        g = spectral_gradient(self.samples, self.grid)
        norm = np.sqrt((g ** 2).sum(axis=tuple(range(5))))
        return 1.0, float(norm.max())


@dataclass(frozen=True)
class EllipticityReport:
    mu_lower: float
    mu_upper: float
    passed: bool
    trial_min: float
    trial_max: float


def check_ellipticity(A: EllipticTensorField, trials: int = 100, seed: int = 42) -> EllipticityReport:
    """Bounds of the quadratic form w:A(y):w over unit matrices w and grid points y.

    The exact extremes at each grid point come from the symmetric part of the
    d^2 x d^2 matrix; random unit test matrices are evaluated as a cross-check.
    """
    if trials < 100:
        raise DataError("ellipticity check needs at least 100 trials")
    s = A.samples
    if not np.all(np.isfinite(s)):
        raise DataError("coefficient has non-finite samples")
    d = A.dim
    mats = np.moveaxis(s.reshape(d, d, d, d, -1), -1, 0)            # (P, a, b, i, j)
    mats = np.transpose(mats, (0, 1, 3, 2, 4)).reshape(-1, d * d, d * d)  # rows (a,i), cols (b,j)
    sym = 0.5 * (mats + np.transpose(mats, (0, 2, 1)))
    eig = np.linalg.eigvalsh(sym)
    mu_lower = float(eig[:, 0].min())
    mu_upper = float(eig[:, -1].max())
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((trials, d * d))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    forms = np.einsum("tm,pmn,tn->pt", w, mats, w)
    trial_min, trial_max = float(forms.min()), float(forms.max())
    scale = max(1.0, abs(mu_upper))
    passed = mu_lower > 1e-12 * scale
    if A.claimed_mu is not None:
        mu = A.claimed_mu
        passed = passed and mu <= mu_lower * (1 + 1e-12) and mu_upper <= (1.0 / mu) * (1 + 1e-12)
    return EllipticityReport(mu_lower, mu_upper, bool(passed), trial_min, trial_max)


class BoundaryData:
    """Periodic vector data g on R^d; restricted to hyperplanes on demand."""

    def __init__(self, g: PeriodicField, evaluator: Callable[[np.ndarray], np.ndarray] | None = None,
                 label: str = ""):
        if g.rank != "vector":
            raise DataError("boundary data must be a vector field")
        if not np.all(np.isfinite(g.samples)):
            raise DataError("boundary data has non-finite samples")
        self.g = g
        self.grid = g.grid
        self._evaluator = evaluator
        self.label = label

    @classmethod
    def from_callable(cls, grid: GridSpec, fn, label: str = "") -> "BoundaryData":
        return cls(PeriodicField(grid, fn(grid.coordinates())), fn, label)

    @classmethod
    def from_expressions(cls, grid: GridSpec, exprs: str | Sequence) -> "BoundaryData":
        d = grid.dim
        if isinstance(exprs, str):
            comps = parse_vector_expression(exprs, d)
            label = exprs
        else:
            comps = [parse_expression(e, d) if isinstance(e, str) else e for e in exprs]
            label = ", ".join(getattr(c, "text", "f") for c in comps)
        if len(comps) != d:
            raise DataError(f"boundary data needs {d} components")

        def fn(y):
            return np.stack([np.broadcast_to(c(y), np.shape(y)[1:]) for c in comps])

        return cls.from_callable(grid, fn, label)

    @classmethod
    def constant(cls, grid: GridSpec, c: Sequence[float]) -> "BoundaryData":
        c = np.asarray(c, dtype=float)

        def fn(y):
            extra = np.shape(y)[1:]
            return np.broadcast_to(c.reshape((-1,) + (1,) * len(extra)), (len(c),) + extra).copy()

        return cls.from_callable(grid, fn, label=f"constant{tuple(c)}")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        if self._evaluator is not None:
            return np.asarray(self._evaluator(np.asarray(points, dtype=float)), dtype=float)
        return self.g.evaluate(points)

    def shifted(self, shift: np.ndarray) -> "BoundaryData":
        """Data y -> g(y + shift)."""
        shift = np.asarray(shift, dtype=float)
        ev = self.evaluate

        def fn(y):
            return ev(y + shift.reshape((-1,) + (1,) * (np.ndim(y) - 1)))

        return BoundaryData.from_callable(self.grid, fn, label=f"{self.label} shifted")

    def __add__(self, other: "BoundaryData") -> "BoundaryData":
        a, b = self.evaluate, other.evaluate
        return BoundaryData.from_callable(self.grid, lambda y: a(y) + b(y), label=f"{self.label} + {other.label}")

    def max_norm(self) -> float:
        return self.g.max_norm()
