"""Matrix-free linear operators for composite-frame inverse problems.

Every forward model and dictionary in this package is assembled from the
small algebra defined here: a :class:`LinearMap` knows its dimensions and
how to apply itself and its adjoint to vectors (or to blocks of vectors,
which is what makes Kronecker-structured 2-D operators cheap).  Maps are
immutable after construction and safe to share between threads.

Concrete kinds:

- ``identity``, ``dense`` -- the obvious ones.
- ``cumsum`` -- the lower-triangular all-ones matrix, i.e. the inverse of
  the first-order difference matrix with a homogeneous Dirichlet condition
  on the first sample.  Applied in O(n), never by inverting anything.
- ``dct`` -- the synthesis side of the orthonormal type-II cosine
  transform (coefficients in, signal out).
- ``gaussian-blur`` -- midpoint-rule discretization of convolution with a
  normalized Gaussian kernel between two point grids in [0, 1].
- ``kronecker`` -- I (x) M or M (x) I acting on columnwise-stacked n-by-n
  images.
- ``column-scaled``, ``row-scaled``, ``horizontal-concat``, ``composed`` --
  combinators.
"""

from __future__ import annotations

import os
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

THREADS_ENV_VAR = "SPARSE_IAS_THREADS"


def _as_float_vector(v, size: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != size:
        raise ValueError(
            f"{what}: expected a vector of length {size}, got shape {v.shape}"
        )
    return v


class LinearMap(ABC):
    """A linear operator defined by its action, not its entries.

    Subclasses implement ``_apply_block`` / ``_apply_adjoint_block`` on
    2-D arrays of column vectors; the public single-vector entry points
    add shape and finiteness validation.
    """

    def __init__(self, rows: int, cols: int, kind: str):
        if rows <= 0 or cols <= 0:
            raise ValueError(f"map dimensions must be positive, got {rows}x{cols}")
        self.rows = int(rows)
        self.cols = int(cols)
        self.kind = kind

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @abstractmethod
    def _apply_block(self, V: np.ndarray) -> np.ndarray:
        """Apply to each column of V (shape (cols, k)) -> (rows, k)."""

    @abstractmethod
    def _apply_adjoint_block(self, U: np.ndarray) -> np.ndarray:
        """Apply the adjoint to each column of U (shape (rows, k)) -> (cols, k)."""

    def apply(self, v) -> np.ndarray:
        v = _as_float_vector(v, self.cols, f"{self.kind} apply")
        if not np.isfinite(v).all():
            raise ValueError(f"{self.kind} apply: input contains non-finite entries")
        return self._apply_block(v[:, None])[:, 0]

    def apply_adjoint(self, u) -> np.ndarray:
        u = _as_float_vector(u, self.rows, f"{self.kind} apply_adjoint")
        return self._apply_adjoint_block(u[:, None])[:, 0]

    def apply_block(self, V: np.ndarray) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        if V.ndim != 2 or V.shape[0] != self.cols:
            raise ValueError(
                f"{self.kind} apply_block: expected ({self.cols}, k), got {V.shape}"
            )
        return self._apply_block(V)

    def apply_adjoint_block(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        if U.ndim != 2 or U.shape[0] != self.rows:
            raise ValueError(
                f"{self.kind} apply_adjoint_block: expected ({self.rows}, k), got {U.shape}"
            )
        return self._apply_adjoint_block(U)

    def __repr__(self) -> str:
        return f"<{self.kind} map {self.rows}x{self.cols}>"


class _Dense(LinearMap):
    def __init__(self, a: np.ndarray):
        a = np.array(a, dtype=float, copy=True)
        if a.ndim != 2:
            raise ValueError("dense map needs a 2-D array")
        super().__init__(a.shape[0], a.shape[1], "dense")
        self._a = a

    def _apply_block(self, V):
        return self._a @ V

    def _apply_adjoint_block(self, U):
        return self._a.T @ U


class _Identity(LinearMap):
    def __init__(self, n: int):
        super().__init__(n, n, "identity")

    def _apply_block(self, V):
        return V.copy()

    def _apply_adjoint_block(self, U):
        return U.copy()


class _Cumsum(LinearMap):
    """Lower-triangular ones: y_i = sum of x_1..x_i (running sums)."""

    def __init__(self, n: int):
        super().__init__(n, n, "cumsum")

    def _apply_block(self, V):
        return np.cumsum(V, axis=0)

    def _apply_adjoint_block(self, U):
        return np.cumsum(U[::-1], axis=0)[::-1]


class _DctSynthesis(LinearMap):
    """Orthonormal type-II DCT synthesis: coefficients -> signal.

    The adjoint is the analysis transform, so adjoint-then-apply is the
    identity (orthonormal columns).
    """

    def __init__(self, n: int):
        super().__init__(n, n, "dct")

    def _apply_block(self, V):
        return scipy.fft.idct(V, type=2, norm="ortho", axis=0)

    def _apply_adjoint_block(self, U):
        return scipy.fft.dct(U, type=2, norm="ortho", axis=0)


class _GaussianBlur(LinearMap):
    def __init__(self, width: float, source_grid: np.ndarray, obs_points: np.ndarray):
        if width <= 0:
            raise ValueError(f"blur width must be positive, got {width}")
        t = _as_float_vector(source_grid, len(source_grid), "gaussian_blur source_grid")
        s = _as_float_vector(obs_points, len(obs_points), "gaussian_blur obs_points")
        for name, g in (("source_grid", t), ("obs_points", s)):
            if np.any(np.diff(g) < 0):
                raise ValueError(f"gaussian_blur {name} must be sorted ascending")
            if g.min() < 0.0 or g.max() > 1.0:
                raise ValueError(f"gaussian_blur {name} must lie in [0, 1]")
        super().__init__(len(s), len(t), "gaussian-blur")
        # Midpoint-rule quadrature: kernel values times the cell width 1/n.
        n = len(t)
        diff = s[:, None] - t[None, :]
        self._kernel = np.exp(-(diff**2) / (2.0 * width**2)) / (
            np.sqrt(2.0 * np.pi * width**2) * n
        )
        self.width = float(width)

    def _apply_block(self, V):
        return self._kernel @ V

    def _apply_adjoint_block(self, U):
        return self._kernel.T @ U


class _Kron2d(LinearMap):
    """I (x) M (side='left') or M (x) I (side='right') on stacked images.

    Vectors of length n^2 are interpreted as n-by-n images stacked
    columnwise; 'left' applies M down each image column, 'right' along
    each image row.
    """

    def __init__(self, base: LinearMap, side: str):
        if base.rows != base.cols:
            raise ValueError("kron2d needs a square base map")
        if side not in ("left", "right"):
            raise ValueError(f"kron2d side must be 'left' or 'right', got {side!r}")
        n = base.rows
        super().__init__(n * n, n * n, "kronecker")
        self.base = base
        self.side = side
        self._n = n

    def _act(self, V: np.ndarray, block_op) -> np.ndarray:
        n, k = self._n, V.shape[1]
        X = V.reshape(n, n, k, order="F")
        if self.side == "right":
            X = X.transpose(1, 0, 2)
        Y = block_op(X.reshape(n, n * k, order="F"))
        Y = Y.reshape(n, n, k, order="F")
        if self.side == "right":
            Y = Y.transpose(1, 0, 2)
        return Y.reshape(n * n, k, order="F")

    def _apply_block(self, V):
        return self._act(V, self.base._apply_block)

    def _apply_adjoint_block(self, U):
        return self._act(U, self.base._apply_adjoint_block)


class _ColumnScaled(LinearMap):
    def __init__(self, base: LinearMap, d: np.ndarray):
        d = _as_float_vector(d, base.cols, "scale_columns weights")
        if not np.isfinite(d).all() or np.any(d <= 0):
            raise ValueError("scale_columns weights must be positive and finite")
        super().__init__(base.rows, base.cols, "column-scaled")
        self.base = base
        self._d = d.copy()

    def _apply_block(self, V):
        return self.base._apply_block(V * self._d[:, None])

    def _apply_adjoint_block(self, U):
        return self.base._apply_adjoint_block(U) * self._d[:, None]


class _RowScaled(LinearMap):
    def __init__(self, base: LinearMap, d: np.ndarray):
        d = _as_float_vector(d, base.rows, "scale_rows weights")
        if not np.isfinite(d).all() or np.any(d <= 0):
            raise ValueError("scale_rows weights must be positive and finite")
        super().__init__(base.rows, base.cols, "row-scaled")
        self.base = base
        self._d = d.copy()

    def _apply_block(self, V):
        return self.base._apply_block(V) * self._d[:, None]

    def _apply_adjoint_block(self, U):
        return self.base._apply_adjoint_block(U * self._d[:, None])


class _HConcat(LinearMap):
    def __init__(self, maps: list[LinearMap]):
        if not maps:
            raise ValueError("horizontal concatenation needs at least one map")
        rows = maps[0].rows
        if any(m.rows != rows for m in maps):
            raise ValueError("horizontal concatenation: mismatched row counts")
        super().__init__(rows, sum(m.cols for m in maps), "horizontal-concat")
        self.maps = list(maps)
        self._offsets = np.cumsum([0] + [m.cols for m in maps])

    def _apply_block(self, V):
        out = np.zeros((self.rows, V.shape[1]))
        for m, lo, hi in zip(self.maps, self._offsets[:-1], self._offsets[1:]):
            out += m._apply_block(V[lo:hi])
        return out

    def _apply_adjoint_block(self, U):
        return np.vstack([m._apply_adjoint_block(U) for m in self.maps])


class _Composed(LinearMap):
    def __init__(self, outer: LinearMap, inner: LinearMap):
        if outer.cols != inner.rows:
            raise ValueError(
                f"compose: inner rows ({inner.rows}) must match outer cols ({outer.cols})"
            )
        super().__init__(outer.rows, inner.cols, "composed")
        self.outer = outer
        self.inner = inner

    def _apply_block(self, V):
        return self.outer._apply_block(self.inner._apply_block(V))

    def _apply_adjoint_block(self, U):
        return self.inner._apply_adjoint_block(self.outer._apply_adjoint_block(U))


# ---------------------------------------------------------------------------
# constructors


def identity(n: int) -> LinearMap:
    return _Identity(n)


def dense(a) -> LinearMap:
    return _Dense(np.asarray(a))


def cumsum(n: int) -> LinearMap:
    """The running-sum map (inverse first-difference, zero left boundary)."""
    return _Cumsum(n)


def dct_synthesis(n: int) -> LinearMap:
    """Orthonormal cosine synthesis map (transpose of the analysis DCT)."""
    return _DctSynthesis(n)


def gaussian_blur(width: float, source_grid, obs_points) -> LinearMap:
    """Gaussian convolution from a source grid to observation points.

    Entry (j, i) is exp(-(s_j - t_i)^2 / 2 width^2) / sqrt(2 pi width^2)
    times the midpoint quadrature weight 1/n, n the source grid size.
    """
    return _GaussianBlur(width, np.asarray(source_grid), np.asarray(obs_points))


def kron2d(base: LinearMap, side: str) -> LinearMap:
    """Lift a square map to n^2 pixels: 'left' acts down image columns
    (I (x) M on columnwise-stacked images), 'right' along image rows."""
    return _Kron2d(base, side)


def scale_columns(base: LinearMap, d) -> LinearMap:
    return _ColumnScaled(base, np.asarray(d, dtype=float))


def scale_rows(base: LinearMap, d) -> LinearMap:
    return _RowScaled(base, np.asarray(d, dtype=float))


def compose(outer: LinearMap, inner: LinearMap) -> LinearMap:
    """The map v -> outer(inner(v))."""
    return _Composed(outer, inner)


def dct2_synthesis(n: int) -> LinearMap:
    """2-D orthonormal cosine synthesis on columnwise-stacked n-by-n images."""
    c = dct_synthesis(n)
    return compose(kron2d(c, "right"), kron2d(c, "left"))


# ---------------------------------------------------------------------------
# composite dictionaries


@dataclass(frozen=True)
class CompositeDictionary:
    """An ordered collection of named sub-frames sharing a common row space.

    The horizontal concatenation [W_1, ..., W_K] maps stacked coefficient
    blocks to the signal space; the column count must reach or exceed the
    row count (complete or overcomplete).
    """

    subframes: tuple[tuple[str, LinearMap], ...]
    rows: int = field(init=False)
    cols: int = field(init=False)

    def __init__(self, subframes):
        frames = tuple((str(name), m) for name, m in subframes)
        if not frames:
            raise ValueError("composite dictionary needs at least one sub-frame")
        rows = frames[0][1].rows
        if any(m.rows != rows for _, m in frames):
            raise ValueError("all sub-frames must share the same row count")
        cols = sum(m.cols for _, m in frames)
        # A union of frames must reach or exceed the signal dimension; a
        # single annotated atom collection may be narrower.
        if len(frames) > 1 and cols < rows:
            raise ValueError(
                f"dictionary is undercomplete: {cols} columns for {rows} rows"
            )
        object.__setattr__(self, "subframes", frames)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.subframes)

    @property
    def offsets(self) -> np.ndarray:
        """Column offsets; slice i is [offsets[i], offsets[i+1])."""
        return np.cumsum([0] + [m.cols for _, m in self.subframes])

    def slices(self) -> list[slice]:
        off = self.offsets
        return [slice(int(lo), int(hi)) for lo, hi in zip(off[:-1], off[1:])]

    def frame_of(self, j: int) -> int:
        off = self.offsets
        if not 0 <= j < self.cols:
            raise ValueError(f"coefficient index {j} out of range [0, {self.cols})")
        return int(np.searchsorted(off, j, side="right") - 1)


def concat_horizontal(dictionary: CompositeDictionary) -> LinearMap:
    """The dictionary as a single map on stacked coefficients."""
    return _HConcat([m for _, m in dictionary.subframes])


# ---------------------------------------------------------------------------
# derived quantities


def column_norms_squared(m: LinearMap, chunk: int = 128) -> np.ndarray:
    """Exact squared Euclidean norm of every column of the map.

    Applies the map to blocks of canonical unit vectors.  Blocks are
    independent, so optional threading (capped by SPARSE_IAS_THREADS)
    cannot change the result.
    """
    out = np.empty(m.cols)
    starts = range(0, m.cols, chunk)

    def run(lo: int) -> None:
        hi = min(lo + chunk, m.cols)
        eye = np.zeros((m.cols, hi - lo))
        eye[np.arange(lo, hi), np.arange(hi - lo)] = 1.0
        out[lo:hi] = (m.apply_block(eye) ** 2).sum(axis=0)

    workers = int(os.environ.get(THREADS_ENV_VAR, "1") or "1")
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for lo in starts:
            run(lo)
    return out


def materialize(m: LinearMap) -> np.ndarray:
    """Dense matrix of the map; intended for small problems and testing."""
    return m.apply_block(np.eye(m.cols))
