"""Harmonic functions on R^3 and their monopole gauges.

A potential is ``constant + sum_i sigma_i / (2 |p - c_i|) + poly(p)`` with
sigma_i = +-1 and poly a harmonic polynomial of degree at most 3.
"""

import re
from dataclasses import dataclass
from functools import cached_property

import jax.numpy as jnp
import numpy as np

from .errors import (
    CapabilityError,
    ConfigError,
    DivergenceRiskError,
    GaugeStringError,
    HarmonicityError,
    QuadratureHazardError,
    SingularityError,
)
from .exterior import Check, DifferentialForm, ScalarField, batch, ext_d, hodge3, sweep

EXCLUSION_RADIUS = 1e-7
STRING_RADIUS = 1e-6
MAX_POLY_DEGREE = 3

_MONOMIAL = re.compile(r"([xyz])(?:\^?(\d+))?")


def parse_monomial(text):
    """'x^2*y' / 'x2y' / 'xy' / '1' -> exponent triple."""
    s = text.replace("*", "").replace(" ", "")
    if s in ("", "1"):
        return (0, 0, 0)
    exps = [0, 0, 0]
    pos = 0
    for m in _MONOMIAL.finditer(s):
        if m.start() != pos:
            break
        exps["xyz".index(m.group(1))] += int(m.group(2) or 1)
        pos = m.end()
    if pos != len(s):
        raise ConfigError(f"cannot parse monomial {text!r}")
    return tuple(exps)


def format_monomial(exps):
    parts = []
    for var, e in zip("xyz", exps):
        if e == 1:
            parts.append(var)
        elif e > 1:
            parts.append(f"{var}^{e}")
    return "*".join(parts) or "1"


def _monomial(p, exps):
    out = 1.0
    for k, e in enumerate(exps):
        if e:
            out = out * p[k] ** int(e)
    return out


def poly_laplacian(poly):
    out = {}
    for (a, b, c), coeff in poly.items():
        for k, e in enumerate((a, b, c)):
            if e >= 2:
                exps = [a, b, c]
                exps[k] -= 2
                key = tuple(exps)
                out[key] = out.get(key, 0.0) + coeff * e * (e - 1)
    return {k: v for k, v in out.items() if v != 0.0}


@dataclass(frozen=True)
class PointSource:
    center: tuple
    sigma: int = 1

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        if len(center) != 3 or not all(np.isfinite(center)):
            raise ValueError(f"source center must be a finite point of R^3, got {self.center}")
        if self.sigma not in (-1, 1):
            raise ValueError(f"source weight must be +1 or -1, got {self.sigma}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "sigma", int(self.sigma))


class HarmonicPotential:
    """Constant plus signed point sources plus a harmonic polynomial.

    ``harmonic=False`` skips the Laplacian check on the polynomial so that
    deliberately non-harmonic test fields such as |p|^2 can be built; such a
    potential reports ``is_harmonic == False``.
    """

    def __init__(self, constant=0.0, sources=(), poly=None, harmonic=True):
        self.constant = float(constant)
        self.sources = tuple(
            s if isinstance(s, PointSource) else PointSource(*s) for s in sources
        )
        poly = dict(poly or {})
        clean = {}
        for key, coeff in poly.items():
            exps = parse_monomial(key) if isinstance(key, str) else tuple(int(e) for e in key)
            if len(exps) != 3 or min(exps) < 0:
                raise ValueError(f"bad monomial {key!r}")
            if sum(exps) > MAX_POLY_DEGREE:
                raise CapabilityError(f"polynomial degree above {MAX_POLY_DEGREE}: {key!r}")
            if float(coeff) != 0.0:
                clean[exps] = clean.get(exps, 0.0) + float(coeff)
        self.poly = clean
        centers = np.array([s.center for s in self.sources]).reshape(-1, 3)
        for i in range(len(centers)):
            for j in range(i + 1, len(centers)):
                if np.linalg.norm(centers[i] - centers[j]) <= 1e-9:
                    raise ValueError(f"coincident source centers {centers[i]} and {centers[j]}")
        lap = poly_laplacian(self.poly)
        scale = max([1.0] + [abs(c) for c in self.poly.values()])
        self.is_harmonic = all(abs(v) <= 1e-12 * scale for v in lap.values())
        if harmonic and not self.is_harmonic:
            raise HarmonicityError(
                "polynomial part is not harmonic",
                laplacian={format_monomial(k): v for k, v in sorted(lap.items())},
            )
        self._centers = centers
        self._sigmas = np.array([s.sigma for s in self.sources], dtype=float)
        self._exps = np.array(list(self.poly.keys()), dtype=int).reshape(-1, 3)
        self._coeffs = np.array(list(self.poly.values()), dtype=float)

    # -- construction helpers -------------------------------------------

    @staticmethod
    def point(center=(0.0, 0.0, 0.0), sigma=1, constant=0.0):
        return HarmonicPotential(constant, [PointSource(center, sigma)])

    @staticmethod
    def raw(poly, constant=0.0):
        """Polynomial potential without the harmonicity check."""
        return HarmonicPotential(constant, (), poly, harmonic=False)

    @property
    def poly_degree(self):
        if not self.poly:
            return 0
        return max(sum(k) for k in self.poly)

    def __add__(self, other):
        poly = dict(self.poly)
        for k, v in other.poly.items():
            poly[k] = poly.get(k, 0.0) + v
        return HarmonicPotential(
            self.constant + other.constant,
            self.sources + other.sources,
            poly,
            harmonic=self.is_harmonic and other.is_harmonic,
        )

    def __neg__(self):
        return HarmonicPotential(
            -self.constant,
            [PointSource(s.center, -s.sigma) for s in self.sources],
            {k: -v for k, v in self.poly.items()},
            harmonic=self.is_harmonic,
        )

    def __repr__(self):
        return (
            f"HarmonicPotential(constant={self.constant}, sources={list(self.sources)}, "
            f"poly={ {format_monomial(k): v for k, v in self.poly.items()} })"
        )

    def to_dict(self):
        return {
            "constant": self.constant,
            "sources": [{"center": list(s.center), "sigma": s.sigma} for s in self.sources],
            "poly": {format_monomial(k): v for k, v in sorted(self.poly.items())},
        }

    @staticmethod
    def from_dict(spec, harmonic=True):
        if not isinstance(spec, dict):
            raise ConfigError("potential spec must be an object")
        unknown = set(spec) - {"constant", "sources", "poly", "harmonic"}
        if unknown:
            raise ConfigError(f"unknown potential keys: {sorted(unknown)}")
        try:
            sources = [
                PointSource(tuple(s["center"]), int(s.get("sigma", 1)))
                for s in spec.get("sources", [])
            ]
            return HarmonicPotential(
                float(spec.get("constant", 0.0)),
                sources,
                dict(spec.get("poly", {})),
                harmonic=bool(spec.get("harmonic", harmonic)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad potential spec: {exc}") from exc

    # -- traceable evaluation -------------------------------------------

    def value_fn(self, p):
        out = jnp.asarray(self.constant) + 0.0 * p[0]
        for c, s in zip(self._centers, self._sigmas):
            out = out + s / (2.0 * jnp.sqrt(jnp.sum((p - c) ** 2)))
        for exps, coeff in self.poly.items():
            out = out + coeff * _monomial(p, exps)
        return out

    def grad_fn(self, p):
        out = jnp.zeros(3) + 0.0 * p
        for c, s in zip(self._centers, self._sigmas):
            d = p - c
            r = jnp.sqrt(jnp.sum(d**2))
            out = out - s * d / (2.0 * r**3)
        for exps, coeff in zip(self._exps, self._coeffs):
            for k in range(3):
                if exps[k]:
                    lowered = exps.copy()
                    lowered[k] -= 1
                    out = out.at[k].add(coeff * exps[k] * _monomial(p, lowered))
        return out

    def hess_fn(self, p):
        out = jnp.zeros((3, 3)) + 0.0 * p[0]
        eye = jnp.eye(3)
        for c, s in zip(self._centers, self._sigmas):
            d = p - c
            r = jnp.sqrt(jnp.sum(d**2))
            out = out + 0.5 * s * (3.0 * jnp.outer(d, d) / r**5 - eye / r**3)
        for exps, coeff in zip(self._exps, self._coeffs):
            for k in range(3):
                for m in range(3):
                    lowered = exps.copy()
                    fk = lowered[k]
                    lowered[k] -= 1
                    fm = lowered[m]
                    lowered[m] -= 1
                    if fk > 0 and fm > 0:
                        out = out.at[k, m].add(coeff * fk * fm * _monomial(p, lowered))
        return out

    def laplacian_fn(self, p):
        return jnp.trace(self.hess_fn(p))

    # -- checked evaluation ---------------------------------------------

    def _guard(self, p):
        p = np.asarray(p, dtype=float).reshape(3)
        if self._centers.size:
            dist = np.linalg.norm(self._centers - p, axis=1)
            k = int(np.argmin(dist))
            if dist[k] <= EXCLUSION_RADIUS:
                raise SingularityError(
                    f"point within {EXCLUSION_RADIUS:g} of source {self.sources[k]}",
                    point=p,
                    source=list(self.sources[k].center),
                )
        return jnp.asarray(p)

    def eval(self, p):
        """Analytic (value, gradient, Hessian) at p."""
        x = self._guard(p)
        return (
            float(self.value_fn(x)),
            np.asarray(self.grad_fn(x)),
            np.asarray(self.hess_fn(x)),
        )

    def __call__(self, p):
        return float(self.value_fn(self._guard(p)))

    def laplacian_residual(self, p):
        return float(self.laplacian_fn(self._guard(p)))

    def singular_distance_fn(self, p):
        """Distance to the nearest source (inf without sources)."""
        if not self._centers.size:
            return jnp.asarray(jnp.inf) + 0.0 * p[0]
        return jnp.min(jnp.sqrt(jnp.sum((p[None, :] - self._centers) ** 2, axis=1)))

    @cached_property
    def batched_grad(self):
        return batch(self.grad_fn)

    @cached_property
    def batched_value(self):
        return batch(self.value_fn)

    def field(self):
        """The potential as a scalar field on the (x, y, z) chart."""
        return ScalarField(3, self.value_fn, chart="R3")

    def composed(self, mu, dim, chart=None):
        """Scalar field p -> V(mu(p)) on a chart of dimension ``dim``."""
        f = self.value_fn
        return ScalarField(dim, lambda x: f(mu(x)), chart=chart)


COORD_FRAME = tuple(DifferentialForm.basis(3, (i,), chart="R3") for i in range(3))


def star3(a):
    """Euclidean Hodge star on R^3."""
    return hodge3(a, COORD_FRAME)


class GaugeOneForm(DifferentialForm):
    """Dirac monopole connection form for one point source on one patch.

    North: (sigma/2) (x dy - y dx) / (r (r + z)), singular on the half-axis
    below the source.  South: -(sigma/2) (x dy - y dx) / (r (r - z)), singular
    above.  Both satisfy d(omega) = -*3 d(sigma / 2r) off their string.
    """

    def __init__(self, source, patch="north"):
        if patch not in ("north", "south"):
            raise ValueError(f"patch must be 'north' or 'south', got {patch!r}")
        s = 1.0 if patch == "north" else -1.0
        c = np.asarray(source.center)
        sigma = float(source.sigma)

        def fn(p):
            d = p - c
            r = jnp.sqrt(jnp.sum(d**2))
            k = s * 0.5 * sigma / (r * (r + s * d[2]))
            return jnp.stack([-k * d[1], k * d[0], 0.0 * r])

        def string_distance(p):
            d = p - c
            rho = jnp.sqrt(d[0] ** 2 + d[1] ** 2)
            r = jnp.sqrt(jnp.sum(d**2))
            return jnp.where(s * d[2] <= 0.0, rho, r)

        check = Check(f"distance to Dirac string of {source}", string_distance,
                      STRING_RADIUS, "min", GaugeStringError)
        super().__init__(1, 3, fn, True, (check,), "R3")
        self.source = source
        self.patch = patch
        self.string_distance_fn = string_distance


def gauge_one_form(source, patch="north"):
    return GaugeOneForm(source, patch)


def linear_gauge(V):
    """Gauge -1/2 (v x p).dp for the linear part with gradient v."""
    v = np.zeros(3)
    for exps, coeff in V.poly.items():
        if sum(exps) == 1:
            v[list(exps).index(1)] += coeff

    def fn(p):
        return -0.5 * jnp.cross(jnp.asarray(v), p)

    return DifferentialForm(1, 3, fn, chart="R3"), v


def potential_one_form(V, patch="north"):
    """Connection form omega with d(omega) = -*3 dV, summed over sources."""
    if V.poly_degree > 1:
        raise CapabilityError(
            f"no closed-form gauge for harmonic polynomial parts of degree {V.poly_degree}"
        )
    out = DifferentialForm.zero(1, 3, chart="R3")
    for s in V.sources:
        out = out + gauge_one_form(s, patch)
    lin, v = linear_gauge(V)
    if np.any(v):
        out = out + lin
    return out


def monopole_residual_form(V, omega):
    """d(omega) + *3 dV as a 2-form on R^3."""
    return ext_d(omega) + star3(ext_d(V.field()))


# ---------------------------------------------------------------------------
# flux


def chern_flux(h, center, radius, n_theta=64, n_phi=128):
    """-(1/2pi) times the flux of *3 dh through the sphere S(center, radius).

    Gauss-Legendre in cos(theta) times the trapezoid rule in phi.
    """
    center = np.asarray(center, dtype=float).reshape(3)
    radius = float(radius)
    if radius <= 0:
        raise QuadratureHazardError("sphere radius must be positive")
    margin = 1e-3 * radius
    for s in h.sources:
        gap = abs(np.linalg.norm(np.asarray(s.center) - center) - radius)
        if gap <= margin:
            raise QuadratureHazardError(
                f"source {s} lies within {margin:g} of the sphere", point=s.center
            )
    u, w = np.polynomial.legendre.leggauss(int(n_theta))
    phi = 2.0 * np.pi * np.arange(int(n_phi)) / int(n_phi)
    U, PHI = np.meshgrid(u, phi, indexing="ij")
    S = np.sqrt(1.0 - U**2)
    normal = np.stack([S * np.cos(PHI), S * np.sin(PHI), U], axis=-1).reshape(-1, 3)
    pts = center + radius * normal
    grads = sweep(h.batched_grad, pts, chunk=pts.shape[0])
    dn = np.sum(grads * normal, axis=1).reshape(U.shape)
    integral = radius**2 * (2.0 * np.pi / int(n_phi)) * np.sum(w[:, None] * dn)
    return float(-integral / (2.0 * np.pi))


def enclosed_charge(h, center, radius):
    center = np.asarray(center, dtype=float)
    return sum(
        s.sigma for s in h.sources if np.linalg.norm(np.asarray(s.center) - center) < radius
    )


# ---------------------------------------------------------------------------
# infinite families


@dataclass(frozen=True)
class GeometricFamily:
    """Centers p_i = scale * ratio**i * axis for i = 0, 1, ...; all sigma = +1.

    ``length`` makes the family finite.
    """

    axis: tuple = (1.0, 0.0, 0.0)
    scale: float = 1.0
    ratio: float = 2.0
    length: int = None
    constant: float = 0.0

    def center(self, i):
        axis = np.asarray(self.axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return tuple(self.scale * self.ratio**i * axis)

    def norm(self, i):
        return abs(self.scale) * self.ratio**i


@dataclass(frozen=True)
class Truncation:
    potential: HarmonicPotential
    n_terms: int
    tail_bound: float


def tail_estimate(family, eval_point, n):
    """Certified bound on sum_{i >= n} 1 / (2 (|p_i| - |q|))."""
    if family.length is not None and n >= family.length:
        return 0.0
    q = float(np.linalg.norm(eval_point))
    first = family.norm(n)
    if first <= q:
        return np.inf
    kappa = 1.0 - q / first
    return 1.0 / (2.0 * first * kappa) * family.ratio / (family.ratio - 1.0)


def truncate_a_infinity(family, eval_point, tail_bound, n_max=2000):
    """Finite truncation of an infinite family with a certified tail."""
    if tail_bound <= 0:
        raise ValueError("tail_bound must be positive")
    if family.length is None and not family.ratio > 1.0:
        raise DivergenceRiskError("family growth ratio must exceed 1 for a certified tail")
    eval_point = np.asarray(eval_point, dtype=float).reshape(3)
    limit = n_max if family.length is None else family.length
    for n in range(0, limit + 1):
        bound = tail_estimate(family, eval_point, n)
        if bound < tail_bound:
            sources = [PointSource(family.center(i), 1) for i in range(n)]
            return Truncation(HarmonicPotential(family.constant, sources), n, bound)
    raise DivergenceRiskError(
        f"tail not certified below {tail_bound:g} within {n_max} terms", point=eval_point
    )

