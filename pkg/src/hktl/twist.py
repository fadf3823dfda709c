"""Elementary deformations, hyperKähler twist data and its inversion.

A twist of (M, X) by (a, F) with da = -X _| F transfers forms through
horizontal lifts; on M this is seen through

    d_W alpha = d alpha - (1/a) F ^ (X _| alpha).

The elementary deformation g~ = g + h g_HX with h = h(mu) twists to a
hyperKähler metric for a = lambda (1 + h |X|^2) and
F = lambda (d(h alpha_0) + *3 dh) exactly when h is harmonic.  The only place
harmonicity enters is dF = 0: with these a and F the forms d_W omega~_A vanish
for any h whose differential lies in the span of the alpha_A.
"""

from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np

from .errors import DegeneracyError, HarmonicityError, ZeroLocusError
from .exterior import (
    Check,
    DifferentialForm,
    MetricField,
    ScalarField,
    _merge_checks,
    batch,
    ext_d,
    hodge3,
    interior_product,
    sweep,
    wedge,
)
from .report import CheckResult, ResidualReport
from .structure import DEFAULT_EPS_A, Constraint, SampleSpec

PDE_TOL = 1e-6
COMPAT_TOL = 1e-8
ALG_TOL = 1e-10


def _sup(fn):
    return lambda x: jnp.max(jnp.abs(fn(x)))


def checked_sweep(fn, points, checks):
    """Enforce field preconditions on ``points`` then sweep ``fn``."""
    for c in checks:
        c.enforce(points)
    return sweep(batch(fn), points)


@dataclass
class ElementaryDeformation:
    """g~ = g + h(mu) g_HX (f = 1)."""

    structure: object
    h: object

    def __post_init__(self):
        self.h_field = self.structure.pulled_back(self.h)

    def metric(self):
        s = self.structure
        return s.metric + self.h_field * s.g_HX()

    def omega(self, A):
        """omega~_A = omega_A + h (alpha_0A + alpha_BC)."""
        s = self.structure
        return s.omegas[A] + self.h_field * s.alpha_pair(A)

    def one_plus_h_normX2(self):
        return 1.0 + self.h_field * self.structure.normX2


@dataclass
class TwistData:
    """Twist data (lambda, a, F) for the vector field X of ``structure``."""

    lam: float
    a: ScalarField
    F: DifferentialForm
    X: object
    h: object = None
    tag: str = "twist"
    structure: object = field(default=None, repr=False)
    eps_a: float = DEFAULT_EPS_A

    def __post_init__(self):
        if self.lam == 0:
            raise ValueError("lambda must be nonzero")
        if self.F.degree != 2:
            raise ValueError("curvature must be a 2-form")
        afn = self.a.fn
        self.zero_locus = Check("|a| > eps_a", lambda x: jnp.abs(afn(x)), self.eps_a, "min", ZeroLocusError)

    @property
    def F_over_a(self):
        return self.F / self.a

    # compatibility residuals as traceable sup-norm maps
    def compatibility_fn(self):
        """|da + X _| F|."""
        res = ext_d(self.a) + interior_product(self.X, self.F)
        return _sup(res.fn)

    def closure_fn(self):
        """|dF|."""
        return _sup(ext_d(self.F).fn)

    def invariance_fn(self):
        """|d(X _| F)|, i.e. L_X F once F is closed."""
        return _sup(ext_d(interior_product(self.X, self.F)).fn)

    @property
    def checks(self):
        return _merge_checks(self.a.checks, self.F.checks, (self.zero_locus,))

    def constraint(self):
        """Sampling constraint |a| > eps_a."""
        afn = self.a.fn
        return Constraint("a_nonzero", lambda x: jnp.abs(afn(x)), self.eps_a)


def d_W(form, td, p=None):
    """d_W form = d form - (1/a) F ^ (X _| form); evaluated at p if given."""
    form = form if isinstance(form, DifferentialForm) else form.as_form()
    if form.degree == 0:
        out = ext_d(form)
    else:
        out = ext_d(form) - wedge(td.F_over_a, interior_product(td.X, form))
    out = out.with_fn(out.fn, checks=_merge_checks(out.checks, (td.zero_locus,)))
    if p is None:
        return out
    return out(p)


def harmonicity_error(h, structure=None):
    lap = {}
    from .potentials import format_monomial, poly_laplacian

    for k, v in sorted(poly_laplacian(h.poly).items()):
        lap[format_monomial(k)] = v
    return HarmonicityError("twist potential h is not harmonic", laplacian=lap)


def build_hk_twist_data(s, h, lam=-1.0, require_harmonic=True, eps_a=DEFAULT_EPS_A, tag="hk"):
    """a = lambda (1 + h |X|^2), F = lambda (d(h alpha_0) + *3 dh)."""
    lam = float(lam)
    if lam == 0:
        raise ValueError("lambda must be nonzero")
    if require_harmonic and not h.is_harmonic:
        raise harmonicity_error(h, s)
    hf = s.pulled_back(h)
    a = lam * (1.0 + hf * s.normX2)
    F = lam * (ext_d(hf * s.alpha0) + s.star3_dh(h))
    return TwistData(lam, a, F, s.X, h, tag, s, eps_a)


def modification_data(s, V_N, samples=None, eps_a=DEFAULT_EPS_A):
    """Twist data of the modification by a hyperKähler 4-manifold with potential V_N."""
    td = build_hk_twist_data(s, V_N, -1.0, eps_a=eps_a, tag="modification")
    if samples is not None:
        pts = s.sample(samples, potentials=(V_N,))
        vals = sweep(batch(td.a.fn), pts)
        k = int(np.argmin(np.abs(vals)))
        if abs(vals[k]) <= eps_a:
            raise DegeneracyError(
                f"1 + V_N |X|^2 = {-vals[k]:.3e} is not bounded away from zero", point=pts[k]
            )
        # a sign change means a zero crossing somewhere between samples
        if vals.min() < 0 < vals.max():
            raise DegeneracyError(
                "1 + V_N |X|^2 changes sign on the domain",
                point=pts[k],
                range=[float(vals.min()), float(vals.max())],
            )
    return td


def deformed_metric_field(s, h):
    return ElementaryDeformation(s, h).metric()


def deform_metric(s, h, p, eps_a=DEFAULT_EPS_A):
    """g~(p) = g(p) + h(mu(p)) g_HX(p)."""
    x = np.asarray(p, dtype=float)
    dfm = ElementaryDeformation(s, h)
    factor = float(dfm.one_plus_h_normX2().fn(jnp.asarray(x)))
    if abs(factor) <= eps_a:
        raise DegeneracyError(f"1 + h |X|^2 = {factor:.3e} is within eps_a of zero", point=x)
    return np.asarray(dfm.metric().fn(jnp.asarray(x)))


def signature(mat):
    """(positive, negative) eigenvalue counts."""
    ev = np.linalg.eigvalsh(mat)
    return int(np.sum(ev > 0)), int(np.sum(ev < 0))


def twisted_killing_norm(s, h, lam, p, eps_a=DEFAULT_EPS_A, tol=ALG_TOL):
    """|X_check|^2 = g~(X, X) / a^2, cross-checked against |X|^2 / (lambda^2 (1 + h |X|^2))."""
    x = jnp.asarray(np.asarray(p, dtype=float))
    hf = s.pulled_back(h)
    nx2 = float(s.normX2.fn(x))
    a = lam * (1.0 + float(hf.fn(x)) * nx2)
    if abs(a) <= eps_a:
        raise ZeroLocusError(f"|a| = {abs(a):.3e} <= eps_a", point=np.asarray(x))
    g = np.asarray(deformed_metric_field(s, h).fn(x))
    X = np.asarray(s.X.fn(x))
    direct = float(X @ g @ X) / a**2
    closed = nx2 / (lam**2 * (1.0 + float(hf.fn(x)) * nx2))
    if abs(direct - closed) > tol * max(1.0, abs(closed)):
        from .errors import ConsistencyError

        raise ConsistencyError(
            "twisted Killing norm disagrees with its closed form",
            point=np.asarray(x),
            direct=direct,
            closed=closed,
        )
    return direct


def twisted_killing_norm_fn(s, h, lam):
    """Traceable g~(X, X) / a^2."""
    g = deformed_metric_field(s, h).fn
    Xf = s.X.fn
    hf = s.pulled_back(h).fn
    nx2 = s.normX2.fn

    def fn(x):
        X = Xf(x)
        a = lam * (1.0 + hf(x) * nx2(x))
        return X @ g(x) @ X / a**2

    return fn


@dataclass
class TwistInversion:
    """Data of a twist expressed as fields on M: (h, lambda, a, F, |X|^2).

    ``invert`` returns the data of the inverse twist, related through
    h -> -lambda^2 h, lambda -> 1/lambda, a -> 1/a, F -> F/a and
    |X|^2 -> |X|^2 / (lambda a).
    """

    h: ScalarField
    lam: float
    a: ScalarField
    F: DifferentialForm
    normX2: ScalarField

    @staticmethod
    def from_twist(td):
        s = td.structure
        return TwistInversion(s.pulled_back(td.h), td.lam, td.a, td.F, s.normX2)

    def invert(self):
        return TwistInversion(
            (-(self.lam**2)) * self.h,
            1.0 / self.lam,
            1.0 / self.a,
            self.F / self.a,
            self.normX2 / (self.lam * self.a),
        )

    def rederived_h(self):
        """h recovered from (a, lambda, |X|^2): (a / lambda - 1) / |X|^2."""
        return (self.a * (1.0 / self.lam) - 1.0) / self.normX2

    def a_from_h(self):
        return self.lam * (1.0 + self.h * self.normX2)


def invert_twist_data(s, h, lam, eps_a=DEFAULT_EPS_A):
    """Inverse twist data (h_check, lambda_check, a_check, F_check) on M."""
    td = build_hk_twist_data(s, h, lam, eps_a=eps_a)
    return TwistInversion.from_twist(td).invert()


def _sample_for(td, samples, extra=()):
    s = td.structure
    pots = (td.h,) if td.h is not None else ()
    return s.sample(samples, constraints=(td.constraint(),) + tuple(extra), potentials=pots)


def verify_twist_hyperkahler(s, h, lam, samples, tol=PDE_TOL, compat_tol=COMPAT_TOL):
    """Residuals of the hyperKähler twist conditions.

    Reports |d_W omega~_A| for A = I, J, K, the closure |dF| and the
    compatibility |da + X _| F|; ``twist_residual`` is their pointwise
    maximum.  Non-harmonic h is accepted here so that it can be probed.
    """
    td = build_hk_twist_data(s, h, lam, require_harmonic=False, eps_a=samples.eps_a)
    pts = _sample_for(td, samples)
    dfm = ElementaryDeformation(s, h)
    forms = [d_W(dfm.omega(A), td) for A in range(3)]
    fns = [_sup(f.fn) for f in forms] + [td.closure_fn(), td.compatibility_fn()]
    gt = dfm.metric().fn

    def residuals(x):
        return jnp.stack([f(x) for f in fns])

    checks = _merge_checks(*(f.checks for f in forms))
    values = checked_sweep(residuals, pts, checks)
    sig = sweep(batch(lambda x: jnp.sum(jnp.linalg.eigvalsh(gt(x)) < 0)), pts)
    neg = {str(int(k)): int(np.sum(sig == k)) for k in np.unique(sig)}
    report = ResidualReport()
    anchor = "hyperKähler twist: d_W omega~_A = 0"
    for A, name in enumerate("IJK"):
        report.add(CheckResult(f"d_W_omega_{name}", anchor, tol, values[:, A], pts))
    report.add(CheckResult("curvature_closure", "twist curvature is closed: dF = 0", tol, values[:, 3], pts))
    report.add(
        CheckResult("compatibility", "twist compatibility: da = -X _| F", compat_tol, values[:, 4], pts)
    )
    report.add(
        CheckResult(
            "twist_residual",
            "twist of g + h g_HX is hyperKähler iff h is harmonic",
            tol,
            np.max(values[:, [0, 1, 2, 3]], axis=1),
            pts,
            extras={"negative_eigenvalue_counts": neg, "harmonic": bool(h.is_harmonic)},
        )
    )
    return report


def verify_inversion(s, h, lam, samples, tol=ALG_TOL, compat_tol=COMPAT_TOL):
    """Inverse twist data: re-derived h_check, a a_check = 1, double inversion and F_check a = F."""
    td = build_hk_twist_data(s, h, lam, eps_a=samples.eps_a)
    pts = _sample_for(td, samples)
    base = TwistInversion.from_twist(td)
    inv = base.invert()
    back = inv.invert()
    fh, fa, fF = base.h.fn, base.a.fn, base.F.fn
    ih, ia, iF, ire = inv.h.fn, inv.a.fn, inv.F.fn, inv.rederived_h().fn
    iafh = inv.a_from_h().fn
    bh, ba, bF, bn = back.h.fn, back.a.fn, back.F.fn, back.normX2.fn
    nx2 = base.normX2.fn
    lam_back = back.lam

    def residuals(x):
        h0, a0 = fh(x), fa(x)
        return jnp.stack([
            jnp.abs(ire(x) + lam**2 * h0) / jnp.maximum(1.0, jnp.abs(h0)),
            jnp.abs(ih(x) + lam**2 * h0) / jnp.maximum(1.0, jnp.abs(h0)),
            jnp.abs(a0 * ia(x) - 1.0),
            jnp.abs(iafh(x) - ia(x)) / jnp.maximum(1.0, jnp.abs(ia(x))),
            jnp.max(jnp.abs(iF(x) * a0 - fF(x))),
            jnp.max(jnp.stack([
                jnp.abs(bh(x) - h0) / jnp.maximum(1.0, jnp.abs(h0)),
                jnp.abs(ba(x) - a0) / jnp.maximum(1.0, jnp.abs(a0)),
                jnp.abs(bn(x) - nx2(x)) / jnp.maximum(1.0, nx2(x)),
                jnp.max(jnp.abs(bF(x) - fF(x))),
                jnp.abs(lam_back - lam) + 0.0 * h0,
            ])),
        ])

    values = sweep(batch(residuals), pts)
    report = ResidualReport()
    anchor = "inverse twist: h_check = -lambda^2 h, lambda_check = 1/lambda, a_check = 1/a, F_check = F/a"
    names = ["h_check_rederived", "h_check", "a_times_a_check", "a_check_from_h_check",
             "F_check_times_a", "double_inversion"]
    tols = [tol, tol, tol, tol, compat_tol, tol]
    for k, (name, t) in enumerate(zip(names, tols)):
        report.add(CheckResult(name, anchor, t, values[:, k], pts))
    return report


def verify_modification(s, V_N, p0, samples, tol=PDE_TOL, alg_tol=ALG_TOL):
    """Modification by V_N: twist residuals, Killing norm additivity (Gibbons-Hawking) and
    feasibility of the inverse modification at p0."""
    report = ResidualReport()
    if V_N is not None:
        modification_data(s, V_N, samples.replace(count=min(samples.count, 256)), samples.eps_a)
        report.extend(verify_twist_hyperkahler(s, V_N, -1.0, samples, tol))
        if getattr(s, "kind", None) == "gh":
            td = build_hk_twist_data(s, V_N, -1.0, eps_a=samples.eps_a)
            pts = _sample_for(td, samples)
            knorm = twisted_killing_norm_fn(s, V_N, -1.0)
            vs = s.V.value_fn
            vn = V_N.value_fn

            def gap(x):
                target = 1.0 / (vs(x[1:]) + vn(x[1:]))
                return jnp.abs(knorm(x) - target) / jnp.maximum(1.0, jnp.abs(target))

            values = sweep(batch(gap), pts)
            report.add(
                CheckResult(
                    "killing_norm_additivity",
                    "modification by a Gibbons-Hawking space with potential V_N has potential V + V_N",
                    alg_tol,
                    values,
                    pts,
                )
            )
    if p0 is not None:
        report.extend(inverse_modification_feasible(s, p0, samples))
    return report


def inverse_modification_feasible(s, p0, samples, margin=1e-12, r_excl=1e-2):
    """2|mu - p0| - |X|^2 over a sample; feasible iff strictly positive everywhere."""
    c = jnp.asarray(np.asarray(p0, dtype=float))
    mu, nx2 = s.mu_fn, s.normX2.fn

    def gap(x):
        return 2.0 * jnp.linalg.norm(mu(x) - c) - nx2(x)

    away = Constraint("mu_away_from_p0", lambda x: jnp.linalg.norm(mu(x) - c), r_excl)
    pts = s.sample(samples, constraints=(away,))
    values = sweep(batch(gap), pts)
    report = ResidualReport()
    k = int(np.argmin(values))
    report.add(
        CheckResult(
            "unmodification_feasibility",
            "inverse modification needs |X|^2 < 2|mu - p0|",
            margin,
            values,
            pts,
            criterion="min>tol",
            extras={"min": float(values[k]), "argmin": [float(v) for v in pts[k]]},
        )
    )
    return report


__all__ = [
    "ElementaryDeformation",
    "TwistData",
    "TwistInversion",
    "build_hk_twist_data",
    "modification_data",
    "deform_metric",
    "deformed_metric_field",
    "d_W",
    "signature",
    "twisted_killing_norm",
    "twisted_killing_norm_fn",
    "invert_twist_data",
    "verify_twist_hyperkahler",
    "inverse_modification_feasible",
    "verify_inversion",
    "verify_modification",
    "checked_sweep",
    "SampleSpec",
]
