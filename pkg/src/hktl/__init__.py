"""Numerical hyperKähler twists: Gibbons-Hawking charts, flat quaternionic models,
twist data and strong HKT residual checks."""

import jax

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"

from .errors import HKTLError  # noqa: E402
from .exterior import (  # noqa: E402
    ChartPoint,
    DifferentialForm,
    EndomorphismField,
    MetricField,
    ScalarField,
    VectorField,
    endo_action,
    ext_d,
    flat_sharp,
    hodge3,
    interior_product,
    wedge,
)
from .potentials import (  # noqa: E402
    GeometricFamily,
    HarmonicPotential,
    PointSource,
    chern_flux,
    gauge_one_form,
    potential_one_form,
    truncate_a_infinity,
)
from .structure import SampleSpec  # noqa: E402
from .gibbons_hawking import Domain, GHStructure, build_structure, verify_hyperkahler  # noqa: E402
from .flat import FlatHKn, Quaternion, check_norm_moment, flat_structure_at, mu_H  # noqa: E402
from .report import CheckResult, ResidualReport, emit_report  # noqa: E402
from .twist import (  # noqa: E402
    TwistData,
    build_hk_twist_data,
    d_W,
    deform_metric,
    inverse_modification_feasible,
    invert_twist_data,
    modification_data,
    twisted_killing_norm,
    verify_twist_hyperkahler,
)
from .hkt import bismut_torsion, build_hkt_twist_data, strong_hkt_residuals, zeta_eta_rank  # noqa: E402
