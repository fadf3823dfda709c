"""Pointwise exterior calculus on a single coordinate chart.

Fields are immutable wrappers around jax-traceable functions of the chart
coordinates.  A p-form stores its coefficients on strictly increasing
multi-indices in lexicographic order, so ``dx^0 ^ dx^2`` in dimension 4 is
slot ``multi_indices(4, 2).index((0, 2))``.  Operations build new fields
lazily by composing these functions; nothing is evaluated until a field is
called at a point or swept over a batch of points.

Derivatives come from forward-mode differentiation when a field is flagged
``analytic`` and from central differences otherwise.
"""

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property, lru_cache

import jax
import jax.numpy as jnp
import numpy as np

from .errors import (
    ChartIncompatibilityError,
    DegenerateMetricError,
    EvaluationError,
    SpanViolationError,
)

EPS = float(np.finfo(float).eps)
FD_STEP = EPS ** (1.0 / 3.0)
FD_STEP_HESSIAN = EPS ** 0.25
SWEEP_CHUNK = 256


# ---------------------------------------------------------------------------
# combinatorics


@lru_cache(maxsize=None)
def multi_indices(dim, degree):
    return tuple(itertools.combinations(range(dim), degree))


def n_coeffs(dim, degree):
    if degree < 0 or degree > dim:
        return 0
    return math.comb(dim, degree)


def permutation_sign(seq):
    """Return (sign, sorted tuple); sign is 0 when an index repeats."""
    seq = tuple(seq)
    if len(set(seq)) < len(seq):
        return 0, None
    inversions = sum(
        1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j]
    )
    return (-1) ** inversions, tuple(sorted(seq))


@lru_cache(maxsize=None)
def _slot(dim, degree):
    return {idx: k for k, idx in enumerate(multi_indices(dim, degree))}


@lru_cache(maxsize=None)
def _wedge_table(dim, p, q):
    slot = _slot(dim, p + q)
    table = np.zeros((n_coeffs(dim, p + q), n_coeffs(dim, p), n_coeffs(dim, q)))
    for a, I in enumerate(multi_indices(dim, p)):
        for b, J in enumerate(multi_indices(dim, q)):
            sign, K = permutation_sign(I + J)
            if sign:
                table[slot[K], a, b] = sign
    return table


@lru_cache(maxsize=None)
def _interior_table(dim, p):
    slot = _slot(dim, p - 1)
    table = np.zeros((n_coeffs(dim, p - 1), n_coeffs(dim, p), dim))
    for a, I in enumerate(multi_indices(dim, p)):
        for m, i in enumerate(I):
            rest = I[:m] + I[m + 1 :]
            table[slot[rest], a, i] = (-1) ** m
    return table


@lru_cache(maxsize=None)
def _permutations(p):
    perms = list(itertools.permutations(range(p)))
    signs = np.array([permutation_sign(s)[0] for s in perms], dtype=float)
    return np.array(perms, dtype=int).reshape(len(perms), p), signs


def _minors(mat, rows, cols):
    """Determinants of mat[rows[a]][:, cols[b]] for all (a, b)."""
    p = rows.shape[1]
    if p == 0:
        return jnp.ones((rows.shape[0], cols.shape[0]))
    sub = mat[rows[:, None, :, None], cols[None, :, None, :]]
    if p > 5:
        return jnp.linalg.det(sub)
    perms, signs = _permutations(p)
    picked = sub[..., np.arange(p)[None, :], perms]
    return jnp.prod(picked, axis=-1) @ signs


def _index_array(dim, degree):
    idx = multi_indices(dim, degree)
    return np.array(idx, dtype=int).reshape(len(idx), degree)


def dense(coeffs, dim, degree):
    """Full antisymmetric coefficient tensor from the increasing-index table."""
    coeffs = np.asarray(coeffs, dtype=float)
    out = np.zeros((dim,) * degree)
    if degree == 0:
        return np.asarray(coeffs[0])
    for value, I in zip(coeffs, multi_indices(dim, degree)):
        for perm in itertools.permutations(range(degree)):
            J = tuple(I[k] for k in perm)
            out[J] = permutation_sign(perm)[0] * value
    return out


def two_form_matrix(coeffs, dim):
    """Antisymmetric matrix of a 2-form, traceable."""
    rows = _index_array(dim, 2)
    mat = jnp.zeros((dim, dim))
    mat = mat.at[rows[:, 0], rows[:, 1]].set(coeffs)
    return mat - mat.T


def matrix_two_form(mat):
    """Coefficient table of the 2-form with antisymmetric matrix ``mat``."""
    dim = mat.shape[0]
    rows = _index_array(dim, 2)
    return mat[rows[:, 0], rows[:, 1]]


# ---------------------------------------------------------------------------
# points and sweeps


class ChartPoint:
    """Coordinates on a named chart of dimension divisible by 4."""

    __slots__ = ("coords", "chart_id")

    def __init__(self, coords, chart_id="chart"):
        coords = np.asarray(coords, dtype=float).reshape(-1)
        if not np.all(np.isfinite(coords)):
            raise EvaluationError("non-finite chart coordinates", point=coords)
        if coords.size % 4:
            raise ChartIncompatibilityError(
                f"chart dimension {coords.size} is not divisible by 4", point=coords
            )
        self.coords = coords
        self.chart_id = chart_id

    @property
    def dim(self):
        return self.coords.size

    def __array__(self, dtype=None, copy=None):
        return self.coords.astype(dtype) if dtype is not None else self.coords

    def __repr__(self):
        return f"ChartPoint({self.coords.tolist()}, chart_id={self.chart_id!r})"


def _coords(p):
    if isinstance(p, ChartPoint):
        return p.coords
    return np.asarray(p, dtype=float)


def n_threads():
    value = os.environ.get("HKTL_THREADS")
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def sweep(batched_fn, points, chunk=SWEEP_CHUNK):
    """Apply a jitted, vmapped function to points in fixed-size chunks.

    Chunk size does not depend on the thread count, so results are
    bit-identical however many workers run.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n == 0:
        raise EvaluationError("empty point batch")
    size = min(chunk, n)
    blocks = []
    for start in range(0, n, size):
        block = points[start : start + size]
        if block.shape[0] < size:
            pad = np.repeat(block[-1:], size - block.shape[0], axis=0)
            block = np.concatenate([block, pad])
        blocks.append(block)

    def run(block):
        return jax.tree_util.tree_map(np.asarray, batched_fn(jnp.asarray(block)))

    workers = min(n_threads(), len(blocks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]
    out = jax.tree_util.tree_map(lambda *xs: np.concatenate(xs)[:n], *results)
    return out


def batch(fn):
    return jax.jit(jax.vmap(fn))


class Check:
    """A pointwise precondition evaluated whenever a field is evaluated.

    ``measure`` maps coordinates to a scalar; ``kind`` is "max" when the
    measure must stay at or below ``limit`` and "min" when it must stay
    strictly above it.
    """

    def __init__(self, name, measure, limit, kind, error):
        self.name = name
        self.measure = measure
        self.limit = limit
        self.kind = kind
        self.error = error

    @cached_property
    def batched(self):
        return batch(self.measure)

    def violated(self, values):
        if self.kind == "max":
            return ~(values <= self.limit)
        return ~(values > self.limit)

    def enforce(self, points):
        values = sweep(self.batched, points)
        bad = np.flatnonzero(self.violated(values))
        if bad.size:
            k = int(bad[0])
            raise self.error(
                f"{self.name}: measure {values[k]:.6e} violates limit {self.limit:.3e}",
                point=points[k],
                measure=float(values[k]),
            )


def _merge_checks(*groups):
    seen, out = set(), []
    for group in groups:
        for check in group:
            if id(check) not in seen:
                seen.add(id(check))
                out.append(check)
    return tuple(out)


class Field:
    """Shared evaluation machinery for pointwise fields."""

    def __init__(self, dim, fn, analytic=True, checks=(), chart=None):
        self.dim = int(dim)
        self.fn = fn
        self.analytic = bool(analytic)
        self.checks = tuple(checks)
        self.chart = chart

    @cached_property
    def batched(self):
        return batch(self.fn)

    def _prepare(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ChartIncompatibilityError(
                f"points have dimension {pts.shape[1]}, field lives on dimension {self.dim}"
            )
        return pts

    def evaluate(self, points, check=True):
        pts = self._prepare(points)
        if check:
            for c in self.checks:
                c.enforce(pts)
        values = sweep(self.batched, pts)
        finite = np.all(np.isfinite(values.reshape(len(pts), -1)), axis=1)
        if not finite.all():
            k = int(np.flatnonzero(~finite)[0])
            raise EvaluationError(f"non-finite {type(self).__name__} value", point=pts[k])
        return values

    def __call__(self, p):
        x = _coords(p)
        if x.shape != (self.dim,):
            raise ChartIncompatibilityError(
                f"point has shape {x.shape}, field lives on dimension {self.dim}"
            )
        for c in self.checks:
            value = float(c.measure(jnp.asarray(x)))
            if c.violated(np.asarray(value)):
                raise c.error(
                    f"{c.name}: measure {value:.6e} violates limit {c.limit:.3e}",
                    point=x,
                    measure=value,
                )
        out = np.asarray(self.fn(jnp.asarray(x)))
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"non-finite {type(self).__name__} value", point=x)
        return out

    def _compatible(self, other):
        if self.dim != other.dim or (
            self.chart is not None and other.chart is not None and self.chart != other.chart
        ):
            raise ChartIncompatibilityError(
                f"incompatible charts: {self.chart!r}/{self.dim} vs {other.chart!r}/{other.dim}"
            )
        return self.chart if self.chart is not None else other.chart


# ---------------------------------------------------------------------------
# finite differences


def _fd_steps(x, base):
    h = base * jnp.maximum(1.0, jnp.abs(x))
    xp = x + h
    xm = x - h
    return xp - x, x - xm


def fd_jacobian(fn, x, richardson=False):
    """Central-difference Jacobian, columns indexed by coordinate."""
    dim = x.shape[0]
    eye = jnp.eye(dim)

    def central(scale):
        hp, hm = _fd_steps(x, FD_STEP * scale)

        def column(i):
            e = eye[i]
            return (fn(x + hp[i] * e) - fn(x - hm[i] * e)) / (hp[i] + hm[i])

        cols = jax.vmap(column)(jnp.arange(dim))
        return jnp.moveaxis(cols, 0, -1)

    d1 = central(1.0)
    if not richardson:
        return d1
    d2 = central(0.5)
    return (4.0 * d2 - d1) / 3.0


def fd_hessian(fn, x):
    dim = x.shape[0]
    h = FD_STEP_HESSIAN * jnp.maximum(1.0, jnp.abs(x))
    eye = jnp.eye(dim)

    def entry(i, j):
        ei = h[i] * eye[i]
        ej = h[j] * eye[j]
        return (fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)) / (
            4.0 * h[i] * h[j]
        )

    idx = jnp.arange(dim)
    hess = jax.vmap(lambda i: jax.vmap(lambda j: entry(i, j))(idx))(idx)
    return 0.5 * (hess + hess.T)


# ---------------------------------------------------------------------------
# fields


def _lift_scalar(value):
    if isinstance(value, ScalarField):
        return value
    return None


class ScalarField(Field):
    """Real function on a chart with gradient and Hessian."""

    def __init__(self, dim, fn, analytic=True, checks=(), chart=None):
        super().__init__(dim, fn, analytic, checks, chart)

    @staticmethod
    def constant(dim, value, chart=None):
        value = float(value)
        return ScalarField(dim, lambda x: jnp.asarray(value) + 0.0 * x[0], chart=chart)

    @staticmethod
    def coordinate(dim, i, chart=None):
        return ScalarField(dim, lambda x: x[i], chart=chart)

    def gradient_fn(self):
        if self.analytic:
            return jax.grad(self.fn)
        return lambda x: fd_jacobian(self.fn, x)

    def hessian_fn(self):
        if self.analytic:
            return jax.hessian(self.fn)
        return lambda x: fd_hessian(self.fn, x)

    def value(self, p):
        return float(self(p))

    def gradient(self, p):
        x = jnp.asarray(_coords(p))
        return np.asarray(self.gradient_fn()(x))

    def hessian(self, p):
        x = jnp.asarray(_coords(p))
        return np.asarray(self.hessian_fn()(x))

    def fd_gradient(self, p, richardson=False):
        """Central-difference gradient with an a posteriori error bound.

        The bound is 4/3 of the gap between steps h and h/2 (the leading
        O(h^2) term) plus a rounding term eps*|f|/h.
        """
        x = jnp.asarray(_coords(p))
        coarse = np.asarray(fd_jacobian(self.fn, x))
        fine = np.asarray(
            fd_jacobian(lambda y: self.fn(x + 0.5 * (y - x)), x) * 2.0
        )
        h = FD_STEP * np.maximum(1.0, np.abs(np.asarray(x)))
        bound = 4.0 / 3.0 * np.abs(fine - coarse) + EPS * abs(float(self.fn(x))) / h
        if richardson:
            return (4.0 * fine - coarse) / 3.0, bound
        return coarse, bound

    def as_form(self):
        return DifferentialForm(
            0, self.dim, lambda x: jnp.reshape(self.fn(x), (1,)), self.analytic, self.checks, self.chart
        )

    def _binary(self, other, op):
        if isinstance(other, ScalarField):
            chart = self._compatible(other)
            f, g = self.fn, other.fn
            return ScalarField(
                self.dim,
                lambda x: op(f(x), g(x)),
                self.analytic and other.analytic,
                _merge_checks(self.checks, other.checks),
                chart,
            )
        if isinstance(other, (int, float, np.floating, np.integer)):
            c = float(other)
            f = self.fn
            return ScalarField(self.dim, lambda x: op(f(x), c), self.analytic, self.checks, self.chart)
        return NotImplemented

    def __add__(self, other):
        return self._binary(other, lambda u, v: u + v)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda u, v: u - v)

    def __rsub__(self, other):
        return self._binary(other, lambda u, v: v - u)

    def __mul__(self, other):
        if isinstance(other, (DifferentialForm, VectorField)):
            return other.__mul__(self)
        return self._binary(other, lambda u, v: u * v)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, lambda u, v: u / v)

    def __rtruediv__(self, other):
        return self._binary(other, lambda u, v: v / u)

    def __neg__(self):
        return self * -1.0

    def map(self, fn):
        f = self.fn
        return ScalarField(self.dim, lambda x: fn(f(x)), self.analytic, self.checks, self.chart)


class VectorField(Field):
    def __init__(self, dim, fn, analytic=True, checks=(), chart=None):
        super().__init__(dim, fn, analytic, checks, chart)

    @staticmethod
    def coordinate(dim, i, chart=None):
        e = np.eye(dim)[i]
        return VectorField(dim, lambda x: jnp.asarray(e) + 0.0 * x, chart=chart)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            chart = self._compatible(other)
            f, g = self.fn, other.fn
            return VectorField(
                self.dim, lambda x: g(x) * f(x), self.analytic and other.analytic,
                _merge_checks(self.checks, other.checks), chart,
            )
        if isinstance(other, (int, float, np.floating, np.integer)):
            c = float(other)
            f = self.fn
            return VectorField(self.dim, lambda x: c * f(x), self.analytic, self.checks, self.chart)
        return NotImplemented

    __rmul__ = __mul__

    def __add__(self, other):
        chart = self._compatible(other)
        f, g = self.fn, other.fn
        return VectorField(
            self.dim, lambda x: f(x) + g(x), self.analytic and other.analytic,
            _merge_checks(self.checks, other.checks), chart,
        )

    def __neg__(self):
        return self * -1.0


class MatrixField(Field):
    """dim x dim matrix-valued field."""

    def __init__(self, dim, fn, analytic=True, checks=(), chart=None):
        super().__init__(dim, fn, analytic, checks, chart)

    def __matmul__(self, other):
        chart = self._compatible(other)
        f, g = self.fn, other.fn
        return type(self)(self.dim, lambda x: f(x) @ g(x), self.analytic and other.analytic,
                          _merge_checks(self.checks, other.checks), chart)

    def apply(self, v):
        chart = self._compatible(v)
        f, g = self.fn, v.fn
        return VectorField(self.dim, lambda x: f(x) @ g(x), self.analytic and v.analytic,
                           _merge_checks(self.checks, v.checks), chart)


class EndomorphismField(MatrixField):
    """Pointwise linear map on tangent vectors, matrix acting on columns."""


class MetricField(MatrixField):
    """Symmetric 2-tensor field g_ij."""

    def __add__(self, other):
        chart = self._compatible(other)
        f, g = self.fn, other.fn
        return MetricField(self.dim, lambda x: f(x) + g(x), self.analytic and other.analytic,
                           _merge_checks(self.checks, other.checks), chart)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            chart = self._compatible(other)
            f, g = self.fn, other.fn
            return MetricField(self.dim, lambda x: g(x) * f(x), self.analytic and other.analytic,
                               _merge_checks(self.checks, other.checks), chart)
        c = float(other)
        f = self.fn
        return MetricField(self.dim, lambda x: c * f(x), self.analytic, self.checks, self.chart)

    __rmul__ = __mul__

    def contract(self, u, v):
        """g(u, v) as a scalar field."""
        chart = self._compatible(u)
        f, a, b = self.fn, u.fn, v.fn
        return ScalarField(self.dim, lambda x: a(x) @ f(x) @ b(x),
                           self.analytic and u.analytic and v.analytic,
                           _merge_checks(self.checks, u.checks, v.checks), chart)

    @cached_property
    def positivity_check(self):
        f = self.fn
        return Check(
            "metric smallest eigenvalue",
            lambda x: jnp.linalg.eigvalsh(0.5 * (f(x) + f(x).T))[0],
            1e-12,
            "min",
            DegenerateMetricError,
        )


def symmetric_product(a, b):
    """Symmetrized tensor product a*b of two 1-forms, as a metric field."""
    chart = a._compatible(b)
    f, g = a.fn, b.fn

    def fn(x):
        u, v = f(x), g(x)
        return 0.5 * (jnp.outer(u, v) + jnp.outer(v, u))

    return MetricField(a.dim, fn, a.analytic and b.analytic, _merge_checks(a.checks, b.checks), chart)


class DifferentialForm(Field):
    """A p-form stored on increasing multi-indices."""

    def __init__(self, degree, dim, fn, analytic=True, checks=(), chart=None):
        if degree < 0:
            raise ValueError("form degree must be non-negative")
        super().__init__(dim, fn, analytic, checks, chart)
        self.degree = int(degree)

    def __repr__(self):
        return f"DifferentialForm(degree={self.degree}, dim={self.dim}, chart={self.chart!r})"

    @property
    def n_coeffs(self):
        return n_coeffs(self.dim, self.degree)

    @property
    def indices(self):
        return multi_indices(self.dim, self.degree)

    @staticmethod
    def zero(degree, dim, chart=None):
        size = n_coeffs(dim, degree)
        return DifferentialForm(degree, dim, lambda x: jnp.zeros(size) + 0.0 * x[0], chart=chart)

    @staticmethod
    def constant(degree, dim, coeffs, chart=None):
        coeffs = np.asarray(coeffs, dtype=float).reshape(n_coeffs(dim, degree))
        return DifferentialForm(degree, dim, lambda x: jnp.asarray(coeffs) + 0.0 * x[0], chart=chart)

    @staticmethod
    def basis(dim, index, chart=None):
        """dx^{i1} ^ ... ^ dx^{ip} for a multi-index in any order."""
        sign, I = permutation_sign(index)
        if not sign:
            return DifferentialForm.zero(len(index), dim, chart)
        coeffs = np.zeros(n_coeffs(dim, len(index)))
        coeffs[_slot(dim, len(index))[I]] = sign
        return DifferentialForm.constant(len(index), dim, coeffs, chart)

    @staticmethod
    def from_components(degree, dim, components, chart=None, analytic=True):
        """Build from ``{multi_index: callable(x) -> scalar}``; any index order."""
        slot = _slot(dim, degree)
        entries = []
        for index, comp in components.items():
            sign, I = permutation_sign(index)
            if sign:
                entries.append((slot[I], sign, comp))
        size = n_coeffs(dim, degree)

        def fn(x):
            out = jnp.zeros(size)
            for k, sign, comp in entries:
                out = out.at[k].add(sign * comp(x))
            return out

        return DifferentialForm(degree, dim, fn, analytic, chart=chart)

    def with_fn(self, fn, degree=None, analytic=None, checks=None):
        return DifferentialForm(
            self.degree if degree is None else degree,
            self.dim,
            fn,
            self.analytic if analytic is None else analytic,
            self.checks if checks is None else checks,
            self.chart,
        )

    def dense_at(self, p):
        return dense(self(p), self.dim, self.degree)

    def apply(self, p, *vectors):
        """Evaluate the form at p on tangent vectors (determinant convention)."""
        if len(vectors) != self.degree:
            raise ValueError("need one vector per form slot")
        coeffs = self(p)
        if self.degree == 0:
            return float(coeffs[0])
        V = np.column_stack([np.asarray(v, dtype=float) for v in vectors])
        rows = _index_array(self.dim, self.degree)
        minors = np.asarray(_minors(jnp.asarray(V), rows, np.arange(self.degree)[None, :]))[:, 0]
        return float(coeffs @ minors)

    def __add__(self, other):
        if not isinstance(other, DifferentialForm):
            return NotImplemented
        chart = self._compatible(other)
        if self.degree != other.degree:
            raise ValueError(f"cannot add forms of degree {self.degree} and {other.degree}")
        f, g = self.fn, other.fn
        return DifferentialForm(
            self.degree, self.dim, lambda x: f(x) + g(x), self.analytic and other.analytic,
            _merge_checks(self.checks, other.checks), chart,
        )

    def __sub__(self, other):
        return self + (-1.0) * other

    def __neg__(self):
        return (-1.0) * self

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            chart = self._compatible(other)
            f, g = self.fn, other.fn
            return DifferentialForm(
                self.degree, self.dim, lambda x: g(x) * f(x), self.analytic and other.analytic,
                _merge_checks(self.checks, other.checks), chart,
            )
        if isinstance(other, (int, float, np.floating, np.integer)):
            c = float(other)
            f = self.fn
            return DifferentialForm(self.degree, self.dim, lambda x: c * f(x), self.analytic,
                                    self.checks, self.chart)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, ScalarField):
            return self * (1.0 / other)
        return self * (1.0 / float(other))

    def __xor__(self, other):
        return wedge(self, other)


def as_form(a):
    if isinstance(a, ScalarField):
        return a.as_form()
    if isinstance(a, DifferentialForm):
        return a
    raise TypeError(f"expected a form or scalar field, got {type(a).__name__}")


# ---------------------------------------------------------------------------
# operations


def wedge(a, b):
    a, b = as_form(a), as_form(b)
    chart = a._compatible(b)
    n, p, q = a.dim, a.degree, b.degree
    table = _wedge_table(n, p, q)
    f, g = a.fn, b.fn
    return DifferentialForm(
        p + q, n, lambda x: jnp.einsum("kab,a,b->k", table, f(x), g(x)),
        a.analytic and b.analytic, _merge_checks(a.checks, b.checks), chart,
    )


def wedge_all(*forms):
    out = forms[0]
    for f in forms[1:]:
        out = wedge(out, f)
    return out


def ext_d(a, analytic=None, richardson=False):
    """Exterior derivative.

    ``analytic`` overrides the field's own flag: True differentiates the
    coefficient functions exactly, False uses central differences with step
    cbrt(eps)*max(1, |x|), optionally with one Richardson level.
    """
    a = as_form(a)
    n, p = a.dim, a.degree
    if p >= n:
        return DifferentialForm.zero(p + 1, n, a.chart)
    use_ad = a.analytic if analytic is None else analytic
    table = _wedge_table(n, 1, p)
    f = a.fn
    if use_ad:
        jac = jax.jacfwd(f)
    else:
        def jac(x):
            return fd_jacobian(f, x, richardson)
    return DifferentialForm(
        p + 1, n, lambda x: jnp.einsum("kiI,Ii->k", table, jac(x)),
        a.analytic if analytic is None else analytic, a.checks, a.chart,
    )


def interior_product(X, a):
    a = as_form(a)
    chart = a._compatible(X)
    if a.degree == 0:
        raise ValueError("interior product of a 0-form is undefined")
    table = _interior_table(a.dim, a.degree)
    f, v = a.fn, X.fn
    return DifferentialForm(
        a.degree - 1, a.dim, lambda x: jnp.einsum("JIi,I,i->J", table, f(x), v(x)),
        a.analytic and X.analytic, _merge_checks(a.checks, X.checks), chart,
    )


def contract_all(X, a):
    """a(X, ..., X) is zero for p > 1; for a 1-form this is the scalar a(X)."""
    out = interior_product(X, a)
    f = out.fn
    return ScalarField(out.dim, lambda x: f(x)[0], out.analytic, out.checks, out.chart)


def pullback_coeffs(coeffs, degree, jac):
    """Coefficients of phi^* a given a's coefficients at phi(x) and D phi(x).

    ``jac`` has shape (target_dim, source_dim).
    """
    m, n = jac.shape
    rows = _index_array(m, degree)
    cols = _index_array(n, degree)
    return coeffs @ _minors(jac, rows, cols)


def pullback(a, phi, source_dim, chart=None):
    """Pull a form on R^m back along a traceable map phi: R^n -> R^m."""
    a = as_form(a)
    f = a.fn
    dphi = jax.jacfwd(phi)
    p = a.degree

    def fn(x):
        return pullback_coeffs(f(phi(x)), p, dphi(x))

    return DifferentialForm(p, source_dim, fn, a.analytic, (), chart)


def endo_action(A, a):
    """Complex-structure action (A.a)(v1..vp) = (-1)^p a(Av1, ..., Avp)."""
    a = as_form(a)
    chart = a._compatible(A)
    p = a.degree
    sign = (-1.0) ** p
    f, mat = a.fn, A.fn
    return DifferentialForm(
        p, a.dim, lambda x: sign * pullback_coeffs(f(x), p, mat(x)),
        a.analytic and A.analytic, _merge_checks(a.checks, A.checks), chart,
    )


def hodge3(a, frame, tol=1e-9):
    """Three-dimensional Hodge star on the span of a 1-form frame.

    The star is fixed by the cyclic rule *a_I = a_J ^ a_K on
    ``frame = (a_I, a_J, a_K)`` and extended linearly pointwise, so it is
    involutive on the span.  Inputs with a component outside the span
    larger than ``tol * max(1, |a|)`` raise SpanViolationError on evaluation.
    """
    a = as_form(a)
    aI, aJ, aK = frame
    for b in frame:
        a._compatible(b)
    p = a.degree
    one = ScalarField.constant(a.dim, 1.0, a.chart).as_form()
    if p == 0:
        basis_in, basis_out = [one], [wedge_all(aI, aJ, aK)]
    elif p == 1:
        basis_in = [aI, aJ, aK]
        basis_out = [wedge(aJ, aK), wedge(aK, aI), wedge(aI, aJ)]
    elif p == 2:
        basis_in = [wedge(aJ, aK), wedge(aK, aI), wedge(aI, aJ)]
        basis_out = [aI, aJ, aK]
    elif p == 3:
        basis_in, basis_out = [wedge_all(aI, aJ, aK)], [one]
    else:
        raise SpanViolationError(f"no three-dimensional star on {p}-forms")
    fin = [b.fn for b in basis_in]
    fout = [b.fn for b in basis_out]
    f = a.fn

    def solve(x):
        B = jnp.stack([g(x) for g in fin])
        rhs = B @ f(x)
        coef = jnp.linalg.solve(B @ B.T, rhs)
        return coef, B

    def fn(x):
        coef, _ = solve(x)
        return coef @ jnp.stack([g(x) for g in fout])

    def outside(x):
        coef, B = solve(x)
        ax = f(x)
        return jnp.max(jnp.abs(ax - coef @ B)) / jnp.maximum(1.0, jnp.max(jnp.abs(ax)))

    check = Check("component outside the Hodge frame span", outside, tol, "max", SpanViolationError)
    analytic = a.analytic and all(b.analytic for b in frame)
    checks = _merge_checks(a.checks, *(b.checks for b in frame), (check,))
    return DifferentialForm(3 - p, a.dim, fn, analytic, checks, a.chart)


def flat(g, v):
    chart = g._compatible(v)
    m, f = g.fn, v.fn
    return DifferentialForm(
        1, g.dim, lambda x: m(x) @ f(x), g.analytic and v.analytic,
        _merge_checks(g.checks, v.checks, (g.positivity_check,)), chart,
    )


def sharp(g, a):
    chart = g._compatible(a)
    if a.degree != 1:
        raise ValueError("sharp needs a 1-form")
    m, f = g.fn, a.fn
    return VectorField(
        g.dim, lambda x: jnp.linalg.solve(m(x), f(x)), g.analytic and a.analytic,
        _merge_checks(g.checks, a.checks, (g.positivity_check,)), chart,
    )


def flat_sharp(g, obj):
    """Musical isomorphism: vector fields go down, 1-forms go up."""
    if isinstance(obj, VectorField):
        return flat(g, obj)
    return sharp(g, obj)


def sup_norm(values):
    values = np.asarray(values)
    if values.size == 0:
        return 0.0
    return float(np.max(np.abs(values)))
