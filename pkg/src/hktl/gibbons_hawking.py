"""Gibbons-Hawking charts.

On coordinates (t, x, y, z) the metric is

    g = V^-1 (dt + omega)^2 + V (dx^2 + dy^2 + dz^2),   d omega = -*3 dV,

with Killing field X = d/dt, moment map mu = (x, y, z), alpha_0 = V^-1 (dt +
omega), alpha_I = dx, alpha_J = dy, alpha_K = dz and Kähler forms
omega_I = (dt + omega) ^ dx + V dy ^ dz and cyclic.  The orientation is
(dt + omega) ^ dx ^ dy ^ dz, for which a sigma = +1 source has flux +1.
"""

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from .errors import ExclusionError, GaugeError, PositivityError, SamplingError
from .exterior import (
    Check,
    DifferentialForm,
    EndomorphismField,
    MetricField,
    ScalarField,
    VectorField,
    batch,
    ext_d,
    sup_norm,
    sweep,
    wedge,
)
from .potentials import monopole_residual_form, potential_one_form
from .report import CheckResult, ResidualReport
from .structure import HyperKahlerStructure, SampleSpec

CHART = "GH(t,x,y,z)"
PDE_TOL = 1e-6

# Action of I, J, K on the orthonormal frame (e0, e1, e2, e3), columns.
_Q = np.zeros((3, 4, 4))
for _A, _pairs in enumerate([((0, 1), (2, 3)), ((0, 2), (3, 1)), ((0, 3), (1, 2))]):
    for _src, _dst in _pairs:
        _Q[_A, _dst, _src] = 1.0
        _Q[_A, _src, _dst] = -1.0


@dataclass(frozen=True)
class Domain:
    """Sampling box for (x, y, z) plus exclusion radii around sources and strings."""

    box: tuple = ((-2.0, 2.0), (-2.0, 2.0), (-2.0, 2.0))
    r_excl: float = 1e-2
    r_axis: float = 1e-2

    def to_dict(self):
        return {"box": [list(b) for b in self.box], "r_excl": self.r_excl, "r_axis": self.r_axis}


def _lift(check):
    m = check.measure
    return Check(check.name, lambda x: m(x[1:]), check.limit, check.kind, check.error)


class GHStructure(HyperKahlerStructure):
    """Gibbons-Hawking structure for a potential V and a gauge patch.

    ``omega`` replaces the gauge one-form (used to plant defects); use
    :func:`build_structure` for a validated structure.
    """

    kind = "gh"

    def __init__(self, V, patch="north", domain=None, omega=None):
        super().__init__(4, CHART)
        self.V = V
        self.patch = patch
        self.domain = domain or Domain()
        self.omega3 = potential_one_form(V, patch) if omega is None else omega
        self.sample_dim = 4

        vfn = V.value_fn
        ofn = self.omega3.fn
        checks = tuple(_lift(c) for c in self.omega3.checks)

        def theta(x):
            return jnp.concatenate([jnp.ones(1), ofn(x[1:])])

        self.Vfield = ScalarField(4, lambda x: vfn(x[1:]), chart=CHART)
        self.omega = DifferentialForm(
            1, 4, lambda x: jnp.concatenate([jnp.zeros(1), ofn(x[1:])]), checks=checks, chart=CHART
        )
        self.theta = DifferentialForm(1, 4, theta, checks=checks, chart=CHART)
        self.alpha0 = self.theta / self.Vfield
        self.alphas = tuple(DifferentialForm.basis(4, (k,), chart=CHART) for k in (1, 2, 3))
        dx, dy, dz = self.alphas
        self.omegas = (
            wedge(self.theta, dx) + self.Vfield * wedge(dy, dz),
            wedge(self.theta, dy) + self.Vfield * wedge(dz, dx),
            wedge(self.theta, dz) + self.Vfield * wedge(dx, dy),
        )
        self.X = VectorField.coordinate(4, 0, chart=CHART)
        self.normX2 = 1.0 / self.Vfield
        # mu is the (x, y, z) part of the chart
        self.mu_fn = lambda x: x[1:]

        def metric(x):
            th = theta(x)
            v = vfn(x[1:])
            return jnp.outer(th, th) / v + v * jnp.diag(jnp.array([0.0, 1.0, 1.0, 1.0]))

        self.metric = MetricField(4, metric, checks=checks, chart=CHART)
        self._metric_fn = metric
        self.complex_structures = tuple(
            EndomorphismField(4, self._endo_fn(A), checks=checks, chart=CHART) for A in range(3)
        )
        self.default_box = tuple(((0.0, 2.0 * np.pi),) + tuple(tuple(b) for b in self.domain.box))
        self.default_r_excl = self.domain.r_excl

    # -- frames -----------------------------------------------------------

    def frame_fn(self, x):
        """Orthonormal frame as matrix columns: e0 = sqrt(V) X, e_A ~ sharp(alpha_A)."""
        g = self._metric_fn(x)
        ginv = jnp.linalg.inv(g)
        v = self.V.value_fn(x[1:])
        e0 = jnp.sqrt(v) * jnp.array([1.0, 0.0, 0.0, 0.0])
        cols = [e0]
        for k in (1, 2, 3):
            s = ginv[:, k]
            cols.append(s / jnp.sqrt(ginv[k, k]))
        return jnp.stack(cols, axis=1)

    def _endo_fn(self, A):
        Q = _Q[A]
        metric = self._metric_fn

        def fn(x):
            E = self.frame_fn(x)
            coframe = E.T @ metric(x)
            return E @ Q @ coframe

        return fn

    def frame_at(self, p):
        x = self._admissible_point(p)
        E = np.asarray(self.frame_fn(jnp.asarray(x)))
        return E, tuple(np.asarray(c(x)) for c in self.complex_structures)

    # -- pointwise accessors ------------------------------------------------

    def _admissible_point(self, p):
        x = np.asarray(p, dtype=float).reshape(4)
        if not self._mask(x[None, :], SampleSpec())[0]:
            raise ExclusionError("point lies in an exclusion zone of the structure", point=x)
        return x

    def metric_at(self, p):
        return self.metric(self._admissible_point(p))

    def hk_triple_at(self, p):
        x = self._admissible_point(p)
        return tuple(w(x) for w in self.omegas)

    # -- sampling ---------------------------------------------------------

    def _draw(self, rng, n, box):
        return rng.uniform(box[:, 0], box[:, 1], size=(n, 4))

    def _mask(self, pts, spec):
        r_excl = spec.r_excl if spec.r_excl is not None else self.domain.r_excl
        r_axis = spec.r_axis if spec.r_axis is not None else self.domain.r_axis
        xyz = pts[:, 1:]
        ok = np.ones(len(pts), dtype=bool)
        s = 1.0 if self.patch == "north" else -1.0
        for src in self.V.sources:
            d = xyz - np.asarray(src.center)
            r = np.linalg.norm(d, axis=1)
            rho = np.linalg.norm(d[:, :2], axis=1)
            ok &= r > r_excl
            ok &= ~((s * d[:, 2] <= 0.0) & (rho <= r_axis))
        return ok

    def _shell_box(self, box, shell):
        if shell is None:
            return box
        center, _, r_max = shell
        out = box.copy()
        for k in range(3):
            lo, hi = center[k] - r_max, center[k] + r_max
            out[k + 1] = [max(box[k + 1, 0], lo), min(box[k + 1, 1], hi)]
        if np.any(out[:, 0] >= out[:, 1]):
            raise SamplingError("moment shell does not meet the sampling box")
        return out

    def sample(self, spec, constraints=(), potentials=()):
        pts = super().sample(spec, constraints, potentials)
        v = sweep(batch(self.Vfield.fn), pts)
        if np.any(v <= 0):
            k = int(np.argmin(v))
            raise PositivityError(f"V = {v[k]:.3e} <= 0 at a sample point", point=pts[k])
        return pts


def check_positivity(s, count=10_000, seed=12345):
    pts = HyperKahlerStructure.sample(s, SampleSpec(seed=seed, count=count))
    v = sweep(batch(s.Vfield.fn), pts)
    k = int(np.argmin(v))
    if v[k] <= 0:
        raise PositivityError(
            f"potential is not positive on the domain: V = {v[k]:.6e}", point=pts[k], value=float(v[k])
        )
    return float(v[k]), pts[k]


def monopole_fn(s):
    res = monopole_residual_form(s.V, s.omega3).fn
    return lambda x: jnp.max(jnp.abs(res(x[1:])))


def build_structure(V, patch="north", domain=None, positivity_samples=10_000, gauge_samples=512):
    """Validated Gibbons-Hawking structure.

    Raises PositivityError when V <= 0 at one of ``positivity_samples``
    admissible points and GaugeError when the monopole residual exceeds the
    PDE tolerance.
    """
    s = GHStructure(V, patch, domain)
    check_positivity(s, positivity_samples)
    if V.sources or V.poly:
        pts = s.sample(SampleSpec(seed=54321, count=gauge_samples))
        res = sweep(batch(monopole_fn(s)), pts)
        k = int(np.argmax(res))
        if res[k] > PDE_TOL:
            raise GaugeError(
                f"monopole residual {res[k]:.3e} exceeds {PDE_TOL:g}", point=pts[k], residual=float(res[k])
            )
    return s


def verify_hyperkahler(s, samples, tol=PDE_TOL):
    """Closure of the Kähler triple and the monopole equation on a sample."""
    pts = s.sample(samples)
    d_forms = [ext_d(w).fn for w in s.omegas]
    mono = monopole_fn(s)

    def residuals(x):
        vals = [jnp.max(jnp.abs(f(x))) for f in d_forms]
        return jnp.stack(vals + [mono(x)])

    values = sweep(batch(residuals), pts)
    report = ResidualReport()
    names = ["d_omega_I", "d_omega_J", "d_omega_K"]
    for k, name in enumerate(names):
        report.add(CheckResult(name, "closure of the Kähler form: d omega_A = 0", tol, values[:, k], pts))
    report.add(
        CheckResult("monopole", "monopole equation: d omega = -*3 dV", tol, values[:, 3], pts)
    )
    return report


def determinant_residual(s, points):
    g = sweep(batch(s.metric.fn), points)
    v = sweep(batch(s.Vfield.fn), points)
    return np.abs(np.linalg.det(g) - v**2) / np.maximum(1.0, v**2)


__all__ = [
    "Domain",
    "GHStructure",
    "build_structure",
    "check_positivity",
    "verify_hyperkahler",
    "determinant_residual",
    "sup_norm",
]
