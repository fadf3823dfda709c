"""Common surface of hyperKähler charts with a tri-Hamiltonian circle action.

Concrete charts (Gibbons-Hawking, flat H^n) provide the metric, the Killing
field X, the Kähler triple, the complex structures and the moment map; the
quantities built from them (alpha_0, alpha_A, g_HX, pulled-back potentials)
live here.
"""

from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np

from .errors import SamplingError
from .exterior import (
    DifferentialForm,
    MetricField,
    ScalarField,
    VectorField,
    batch,
    flat,
    sweep,
    symmetric_product,
    wedge,
)

DEFAULT_EPS_A = 1e-4


@dataclass(frozen=True)
class SampleSpec:
    """Seeded sampling request.

    Points are drawn with numpy's PCG64 generator seeded by ``seed``, in
    rounds of max(256, 2 * count) candidates, keeping admissible candidates
    in draw order.  ``box`` overrides the structure's own box; ``None``
    radii fall back to the structure defaults.  ``shell`` restricts the
    moment map to r_min <= |mu - center| <= r_max.
    """

    seed: int = 0
    count: int = 1000
    box: tuple = None
    r_excl: float = None
    r_axis: float = None
    eps_a: float = DEFAULT_EPS_A
    shell: tuple = None
    max_rounds: int = 200

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("sample count must be at least 1")
        for name in ("r_excl", "r_axis", "eps_a"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive")

    def replace(self, **changes):
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return SampleSpec(**values)


@dataclass
class Constraint:
    """Extra admissibility condition on sample points: measure(x) > limit."""

    name: str
    measure: object
    limit: float

    def __post_init__(self):
        self.batched = batch(self.measure)


@dataclass
class KillingData:
    X: VectorField
    alpha0: DifferentialForm
    alphaI: DifferentialForm
    alphaJ: DifferentialForm
    alphaK: DifferentialForm
    normX2: ScalarField
    gHX: MetricField
    mu: object = field(repr=False, default=None)

    @property
    def alphas(self):
        return (self.alphaI, self.alphaJ, self.alphaK)


class HyperKahlerStructure:
    """Base class; subclasses set the attributes listed in ``__init__``."""

    kind = "structure"

    def __init__(self, dim, chart):
        self.dim = dim
        self.chart = chart

    # subclasses provide: metric, X, omegas, alphas, alpha0, normX2, mu_fn,
    # complex_structures, default_box, default_r_excl, _draw, _mask

    @property
    def omega_I(self):
        return self.omegas[0]

    @property
    def omega_J(self):
        return self.omegas[1]

    @property
    def omega_K(self):
        return self.omegas[2]

    @property
    def I(self):
        return self.complex_structures[0]

    @property
    def J(self):
        return self.complex_structures[1]

    @property
    def K(self):
        return self.complex_structures[2]

    def mu(self, p):
        return np.asarray(self.mu_fn(jnp.asarray(np.asarray(p, dtype=float))))

    def flat_X(self):
        return flat(self.metric, self.X)

    def g_HX(self):
        out = symmetric_product(self.alpha0, self.alpha0)
        for a in self.alphas:
            out = out + symmetric_product(a, a)
        return out

    def killing_data(self):
        aI, aJ, aK = self.alphas
        return KillingData(self.X, self.alpha0, aI, aJ, aK, self.normX2, self.g_HX(), self.mu_fn)

    def alpha_pair(self, A):
        """alpha_0A + alpha_BC for A in {0, 1, 2} = {I, J, K}."""
        B, C = (A + 1) % 3, (A + 2) % 3
        a = self.alphas
        return wedge(self.alpha0, a[A]) + wedge(a[B], a[C])

    def vol_alpha(self):
        aI, aJ, aK = self.alphas
        return wedge(wedge(wedge(self.alpha0, aI), aJ), aK)

    def pulled_back(self, potential):
        """Scalar field h(mu(p)) for a potential h on R^3."""
        return potential.composed(self.mu_fn, self.dim, self.chart)

    def star3_dh(self, potential):
        """*3 d(h(mu)) = sum_A (d_A h)(mu) alpha_BC, using dh = sum_A (d_A h)(mu) alpha_A."""
        pairs = []
        for A in range(3):
            B, C = (A + 1) % 3, (A + 2) % 3
            pairs.append(wedge(self.alphas[B], self.alphas[C]).fn)
        grad, mu = potential.grad_fn, self.mu_fn

        def fn(x):
            g = grad(mu(x))
            return sum(g[A] * pairs[A](x) for A in range(3))

        return DifferentialForm(2, self.dim, fn, chart=self.chart)

    def moment_component(self, A):
        mu = self.mu_fn
        return ScalarField(self.dim, lambda x: mu(x)[A], chart=self.chart)

    # -- sampling ---------------------------------------------------------

    def _box(self, spec):
        box = spec.box if spec.box is not None else self.default_box
        box = np.asarray(box, dtype=float)
        if box.ndim == 1:
            box = np.tile(box, (self.sample_dim, 1))
        if box.shape != (self.sample_dim, 2):
            raise SamplingError(f"sample box must have shape ({self.sample_dim}, 2)")
        return box

    def sample(self, spec, constraints=(), potentials=()):
        """Admissible sample points for ``spec``.

        ``potentials`` are functions of mu whose source balls are excluded;
        ``constraints`` add conditions measure(x) > limit.
        """
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        box = self._shell_box(self._box(spec), spec.shell)
        r_excl = spec.r_excl if spec.r_excl is not None else self.default_r_excl
        kept = []
        total = 0
        size = max(256, 2 * spec.count)
        for _ in range(spec.max_rounds):
            cand = self._draw(rng, size, box)
            mask = self._mask(cand, spec)
            mu = None
            if potentials or spec.shell is not None:
                mu = sweep(self._batched_mu, cand)
            for pot in potentials:
                if pot.sources:
                    centers = np.array([s.center for s in pot.sources])
                    dist = np.linalg.norm(mu[:, None, :] - centers[None], axis=2).min(axis=1)
                    mask &= dist > r_excl
            if spec.shell is not None:
                center, r_min, r_max = spec.shell
                r = np.linalg.norm(mu - np.asarray(center, dtype=float), axis=1)
                mask &= (r >= r_min) & (r <= r_max)
            if mask.any():
                for c in constraints:
                    idx = np.flatnonzero(mask)
                    values = sweep(c.batched, cand[idx])
                    ok = np.asarray(values) > c.limit
                    mask[idx[~ok]] = False
            kept.append(cand[mask])
            total += int(mask.sum())
            if total >= spec.count:
                break
        if total == 0:
            raise SamplingError("no admissible sample points in the requested domain")
        points = np.concatenate(kept)
        if len(points) < spec.count:
            raise SamplingError(
                f"only {len(points)} admissible points after {spec.max_rounds} rounds"
            )
        return points[: spec.count]

    def _shell_box(self, box, shell):
        # charts whose moment map is a coordinate projection may clip the box
        return box

    @property
    def _batched_mu(self):
        cached = getattr(self, "_mu_batch", None)
        if cached is None:
            cached = batch(self.mu_fn)
            self._mu_batch = cached
        return cached
