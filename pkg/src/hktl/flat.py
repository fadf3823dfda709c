"""Flat hyperKähler models H^n with a weighted diagonal circle action.

Coordinates are blocks (w, x, y, z) per quaternion q_k = w + x i + y j + z k.
Complex structures act by right multiplication, I q = -q i, J q = -q j,
K q = -q k, and the circle acts on the left, q_k -> exp(i w_k theta) q_k, so
X = (i w_k q_k)_k and mu = sum_k w_k (1/2) conj(q_k) i q_k.
"""

import numpy as np
import jax.numpy as jnp

from .errors import FixedPointError
from .exterior import (
    Check,
    DifferentialForm,
    EndomorphismField,
    MetricField,
    ScalarField,
    VectorField,
    batch,
    interior_product,
    matrix_two_form,
    sweep,
)
from .report import CheckResult, ResidualReport
from .structure import HyperKahlerStructure

ALG_TOL = 1e-12


def qmul(a, b):
    """Hamilton product on the last axis (w, x, y, z), i j = k."""
    a0, a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    b0, b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return jnp.stack(
        [
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
            a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
            a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
        ],
        axis=-1,
    )


def qconj(a):
    return a * jnp.array([1.0, -1.0, -1.0, -1.0])


_UNITS = np.eye(4)


class Quaternion:
    __slots__ = ("q",)

    def __init__(self, w=0.0, x=0.0, y=0.0, z=0.0):
        self.q = np.array([w, x, y, z], dtype=float)

    @classmethod
    def from_array(cls, arr):
        out = cls()
        out.q = np.asarray(arr, dtype=float).reshape(4).copy()
        return out

    def __array__(self, dtype=None, copy=None):
        return self.q if dtype is None else self.q.astype(dtype)

    def __mul__(self, other):
        if isinstance(other, Quaternion):
            return Quaternion.from_array(np.asarray(qmul(self.q, other.q)))
        return Quaternion.from_array(self.q * other)

    def __rmul__(self, other):
        return Quaternion.from_array(self.q * other)

    def __add__(self, other):
        return Quaternion.from_array(self.q + other.q)

    def __sub__(self, other):
        return Quaternion.from_array(self.q - other.q)

    def conj(self):
        return Quaternion.from_array(self.q * [1.0, -1.0, -1.0, -1.0])

    def norm(self):
        return float(np.linalg.norm(self.q))

    @property
    def imag(self):
        return self.q[1:].copy()

    def __repr__(self):
        w, x, y, z = self.q
        return f"Quaternion({w:g}, {x:g}, {y:g}, {z:g})"


Quaternion.i = Quaternion(0, 1, 0, 0)
Quaternion.j = Quaternion(0, 0, 1, 0)
Quaternion.k = Quaternion(0, 0, 0, 1)


def _mu_blocks(q):
    # q has shape (..., 4); returns Im(1/2 conj(q) i q)
    i = jnp.array([0.0, 1.0, 0.0, 0.0])
    return 0.5 * qmul(qmul(qconj(q), jnp.broadcast_to(i, q.shape)), q)[..., 1:]


def mu_H(q):
    """Moment map (1/2) conj(q) i q, as its (I, J, K) components."""
    return np.asarray(_mu_blocks(jnp.asarray(np.asarray(q, dtype=float))))


def _right_mult_matrix(u):
    # matrix of q -> q u
    return np.stack([np.asarray(qmul(_UNITS[c], u)) for c in range(4)], axis=1)


# I, J, K on one block: q -> -q i, -q j, -q k
BLOCK_STRUCTURES = tuple(-_right_mult_matrix(_UNITS[c]) for c in (1, 2, 3))


class FlatHKn(HyperKahlerStructure):
    """Flat H^n, weights w_k for the action q_k -> exp(i w_k theta) q_k."""

    kind = "flat"

    def __init__(self, n=1, weights=None, box=(-1.5, 1.5), r_fixed=1e-2):
        dim = 4 * n
        super().__init__(dim, f"H^{n}")
        weights = [1] * n if weights is None else [int(w) for w in weights]
        if len(weights) != n:
            raise ValueError("need one weight per quaternionic coordinate")
        if not any(weights):
            raise ValueError("at least one weight must be nonzero")
        self.n = n
        self.weights = tuple(weights)
        self.sample_dim = dim
        self.r_fixed = r_fixed
        self.default_box = tuple(tuple(box) for _ in range(dim))
        self.default_r_excl = r_fixed
        w = jnp.asarray(self.weights, dtype=float)

        mats = [np.kron(np.eye(n), B) for B in BLOCK_STRUCTURES]
        self.structure_matrices = tuple(mats)
        chart = self.chart
        self.complex_structures = tuple(
            EndomorphismField(dim, (lambda M: lambda x: jnp.asarray(M) + 0.0 * x[0])(M), chart=chart)
            for M in mats
        )
        self.metric = MetricField(dim, lambda x: jnp.eye(dim) + 0.0 * x[0], chart=chart)
        # omega_A(u, v) = g(A u, v) = u^T A^T v
        self.omegas = tuple(
            DifferentialForm.constant(2, dim, np.asarray(matrix_two_form(jnp.asarray(M.T))), chart=chart)
            for M in mats
        )

        def X_fn(x):
            q = x.reshape(n, 4)
            i = jnp.broadcast_to(jnp.array([0.0, 1.0, 0.0, 0.0]), q.shape)
            return (w[:, None] * qmul(i, q)).reshape(dim)

        def mu_fn(x):
            return jnp.sum(w[:, None] * _mu_blocks(x.reshape(n, 4)), axis=0)

        def normX2_fn(x):
            q = x.reshape(n, 4)
            return jnp.sum(w**2 * jnp.sum(q * q, axis=1))

        self._X_fn = X_fn
        self.mu_fn = mu_fn
        self.X = VectorField(dim, X_fn, chart=chart)
        self.alpha0 = DifferentialForm(1, dim, X_fn, chart=chart)
        self.alphas = tuple(interior_product(self.X, om) for om in self.omegas)
        fixed = Check(
            "fixed_point", lambda x: normX2_fn(x), 1e-24, "min", FixedPointError
        )
        self.normX2 = ScalarField(dim, normX2_fn, checks=(fixed,), chart=chart)

    def _draw(self, rng, n, box):
        return rng.uniform(box[:, 0], box[:, 1], size=(n, self.dim))

    def _mask(self, pts, spec):
        r = spec.r_excl if spec.r_excl is not None else self.r_fixed
        q = pts.reshape(len(pts), self.n, 4)
        w = np.asarray(self.weights, dtype=float)
        nx = np.sqrt(np.sum(w**2 * np.sum(q * q, axis=2), axis=1))
        return nx > r

    def flat_structure_at(self, p):
        return flat_structure_at(self, p)


def flat_structure_at(m, p):
    """(metric, Kähler triple, KillingData evaluated at p, mu(p)).

    Killing data is returned as a dict of values at p; 1/|X|^2 at a fixed
    point raises FixedPointError.
    """
    x = np.asarray(p, dtype=float).reshape(m.dim)
    nx2 = float(m.normX2.fn(jnp.asarray(x)))
    if nx2 <= 1e-24:
        raise FixedPointError("X vanishes at the evaluation point", point=x)
    killing = {
        "X": np.asarray(m._X_fn(jnp.asarray(x))),
        "alpha0": m.alpha0(x),
        "alphaI": m.alphas[0](x),
        "alphaJ": m.alphas[1](x),
        "alphaK": m.alphas[2](x),
        "normX2": nx2,
        "inv_normX2": 1.0 / nx2,
    }
    triple = tuple(om(x) for om in m.omegas)
    return np.eye(m.dim), triple, killing, m.mu(x)


def norm_moment_gap(m, shift=None):
    """Scalar field 2|mu + shift| - |X|^2."""
    c = jnp.zeros(3) if shift is None else jnp.asarray(shift, dtype=float)
    mu = m.mu_fn
    nx2 = m.normX2.fn
    return lambda x: 2.0 * jnp.linalg.norm(mu(x) + c) - nx2(x)


def check_norm_moment(m, samples, shift=None, tol=ALG_TOL):
    """Distribution of 2|mu| - |X|^2; for n = 1 with unit weight it vanishes identically."""
    pts = m.sample(samples)
    values = sweep(batch(norm_moment_gap(m, shift)), pts)
    report = ResidualReport()
    report.add(
        CheckResult(
            "norm_moment_identity",
            "flat quaternions: |X|^2 = 1/V = 2|mu|",
            tol,
            np.abs(values),
            pts,
            extras={"signed_min": float(values.min()), "signed_max": float(values.max())},
        )
    )
    return report


__all__ = [
    "Quaternion",
    "qmul",
    "qconj",
    "mu_H",
    "FlatHKn",
    "flat_structure_at",
    "norm_moment_gap",
    "check_norm_moment",
    "BLOCK_STRUCTURES",
]
