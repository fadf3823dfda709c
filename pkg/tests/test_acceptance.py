"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line."""

import time

import jax.numpy as jnp
import numpy as np
import pytest

from hktl import (
    FlatHKn,
    HarmonicPotential,
    PointSource,
    build_structure,
    chern_flux,
    mu_H,
    strong_hkt_residuals,
    verify_hyperkahler,
    verify_twist_hyperkahler,
)
from hktl.cli import JobConfig, run_verify
from hktl.exterior import batch, ext_d, sweep
from hktl.flat import norm_moment_gap
from hktl.hkt import calibrate_identity_sign
from hktl.report import report_json
from hktl.structure import SampleSpec
from hktl.twist import inverse_modification_feasible, verify_inversion, verify_modification

from test_exterior import random_poly_form

N = 1000
SPEC = SampleSpec(seed=20240607, count=N)
CENTRES = [(0.0, 0.0, 0.0), (0.8, 0.0, 0.3), (-0.5, 0.6, -0.4)]
P0 = (0.3, 0.4, 1.2)
BOWL = HarmonicPotential.raw({"x^2": 1.0, "y^2": 1.0, "z^2": 1.0})


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def gh2():
    V = HarmonicPotential(0.0, [PointSource(CENTRES[0], 1), PointSource(CENTRES[1], 1)])
    return build_structure(V)


@pytest.fixture(scope="module")
def h2():
    return FlatHKn(2)


def test_criterion_01_monopole_closedness(capsys):
    lines, ok = [], True
    for k in (1, 2, 3):
        for c in (0.0, 1.0):
            t0 = time.perf_counter()
            V = HarmonicPotential(c, [PointSource(p, 1) for p in CENTRES[:k]])
            s = build_structure(V)
            rep = verify_hyperkahler(s, SPEC)
            dt = time.perf_counter() - t0
            worst = max(chk.max for chk in rep.checks)
            good = rep.passed and dt <= 10.0 and all(chk.count == N for chk in rep.checks)
            ok &= good
            lines.append(f"k={k} c={c:g} max={worst:.1e} t={dt:.1f}s")
    verdict(capsys, 1, ok, "; ".join(lines))


def test_criterion_02_flat_identities(capsys):
    rng = np.random.default_rng(2)
    q = rng.normal(size=(N, 4))
    m = FlatHKn(1)
    mu = mu_H(q)
    e1 = np.max(np.abs(np.linalg.norm(mu, axis=1) - 0.5 * np.sum(q * q, axis=1)))
    e2 = np.max(np.abs(sweep(batch(norm_moment_gap(m)), q)))
    ok = e1 <= 1e-12 and e2 <= 1e-12
    verdict(capsys, 2, ok, f"| |mu| - |q|^2/2 | <= {e1:.1e}; | |X|^2 - 2|mu| | <= {e2:.1e}")


def test_criterion_03_hk_twist(capsys, gh2, h2):
    battery = {
        "constant": HarmonicPotential(0.5),
        "+source": HarmonicPotential.point(P0, 1),
        "-source": HarmonicPotential.point(P0, -1),
        "xy": HarmonicPotential(poly={"x*y": 1.0}),
    }
    lines, ok = [], True
    for sname, s in (("GH k=2", gh2), ("flat H^2", h2)):
        for hname, h in battery.items():
            rep = verify_twist_hyperkahler(s, h, -1.0, SPEC)
            worst = max(rep[f"d_W_omega_{A}"].max for A in "IJK")
            good = worst <= 1e-6 and rep.passed
            ok &= good
            lines.append(f"{sname} {hname}: {worst:.1e}")
        probe = verify_twist_hyperkahler(s, BOWL, -1.0, SPEC)["twist_residual"]
        frac = float(np.mean(probe.values > 1e-2))
        ok &= frac >= 0.9
        lines.append(f"{sname} |mu|^2 probe: {100 * frac:.0f}% > 1e-2")
    verdict(capsys, 3, ok, "; ".join(lines))


def test_criterion_04_modification_additivity(capsys, gh2):
    rep = verify_modification(gh2, HarmonicPotential.point(P0), None, SPEC)
    chk = rep["killing_norm_additivity"]
    ok = chk.max <= 1e-10 and chk.count == N
    verdict(capsys, 4, ok, f"max |twisted |X|^2 - 1/(V+V_N)| = {chk.max:.1e} over {chk.count} points")


def test_criterion_05_inversion(capsys, gh2):
    h = HarmonicPotential(0.3, [PointSource(P0, 1)], {"x*y": 1.0})
    rep = verify_inversion(gh2, h, -2.0, SPEC)
    vals = {k: rep[k].max for k in ("h_check_rederived", "double_inversion", "a_times_a_check")}
    ok = all(v <= 1e-10 for v in vals.values())
    verdict(capsys, 5, ok, ", ".join(f"{k} {v:.1e}" for k, v in vals.items()))


def test_criterion_06_unmodification(capsys):
    flat = FlatHKn(1)
    rep = inverse_modification_feasible(flat, (0.0, 0.0, 0.0), SPEC.replace(count=10_000))
    chk = rep["unmodification_feasibility"]
    gaps = chk.values
    zero_min = abs(chk.min) <= 1e-12
    fails_everywhere = bool(np.all(gaps <= chk.tolerance))
    tn = build_structure(HarmonicPotential.point(constant=1.0))
    shell = SPEC.replace(shell=((0.0, 0.0, 0.0), 0.5, 1.5))
    tn_rep = inverse_modification_feasible(tn, (0.0, 0.0, 0.0), shell)
    ok = zero_min and fails_everywhere and not rep.passed and tn_rep.passed
    verdict(
        capsys, 6, ok,
        f"flat min {chk.min:.1e}, strict criterion holds at {int(np.sum(gaps > chk.tolerance))}/{gaps.size} "
        f"points; Taub-NUT shell min {tn_rep['unmodification_feasibility'].min:.3f}",
    )


def test_criterion_07_flux(capsys):
    configs = {
        "{+1}": [((0.1, 0.0, 0.0), 1)],
        "{-1}": [((0.0, 0.2, 0.0), -1)],
        "{+1,+1}": [((0.3, 0.0, 0.0), 1), ((-0.3, 0.1, 0.0), 1)],
        "{}": [],
    }
    lines, ok = [], True
    for name, srcs in configs.items():
        h = HarmonicPotential(0.0, [PointSource(c, s) for c, s in srcs])
        t0 = time.perf_counter()
        flux = chern_flux(h, (0.0, 0.0, 0.0), 1.0)
        dt = time.perf_counter() - t0
        target = sum(s for _, s in srcs)
        ok &= abs(flux - target) <= 1e-3 and dt <= 1.0
        lines.append(f"{name} {flux:+.6f} ({dt:.2f}s)")
    verdict(capsys, 7, ok, "; ".join(lines))


def test_criterion_08_strong_hkt(capsys, gh2, h2):
    lines, ok = [], True
    for sname, s in (("GH k=2", gh2), ("flat H^2", h2)):
        sign = calibrate_identity_sign(s, SPEC)
        for hname, h in (("0", HarmonicPotential(0.0)), ("1", HarmonicPotential(1.0)),
                         ("xy", HarmonicPotential(poly={"x*y": 1.0}))):
            r = strong_hkt_residuals(s, h, 1.0, SPEC, identity_sign=sign)
            good = r.hkt_residual <= 1e-6 and r.strong_residual <= 1e-6 and r.dual_path_residual <= 1e-7
            ok &= good
            lines.append(f"{sname} h={hname}: hkt {r.hkt_residual:.1e} strong {r.strong_residual:.1e} "
                         f"dual {r.dual_path_residual:.1e}")
    verdict(capsys, 8, ok, "; ".join(lines))


def test_criterion_09_identity_calibration(capsys, gh2, h2):
    lines, ok = [], True
    for sname, s in (("GH k=2", gh2), ("flat H^2", h2)):
        sign = calibrate_identity_sign(s, SPEC)
        r = strong_hkt_residuals(s, BOWL, 1.0, SPEC, require_harmonic=False, identity_sign=sign)
        harm = strong_hkt_residuals(s, HarmonicPotential(poly={"x*y": 1.0}), 1.0, SPEC, identity_sign=sign)
        ze = harm.report["zeta_wedge_eta"].max
        ok &= r.identity_residual <= 1e-6 and ze <= 1e-8
        lines.append(f"{sname}: sign {sign:+.0f}, identity {r.identity_residual:.1e}, zeta^eta {ze:.1e}")
    verdict(capsys, 9, ok, "; ".join(lines))


def test_criterion_10_infrastructure(capsys, gh2):
    rng = np.random.default_rng(10)
    worst = 0.0
    for k in range(20):
        dim = 4 if k % 2 == 0 else 8
        degree = k % 4
        a = random_poly_form(rng, degree, dim)
        ad, fd = ext_d(a, analytic=True).fn, ext_d(a, analytic=False).fn
        pts = rng.uniform(-1, 1, size=(50, dim))
        gap = sweep(batch(lambda x: jnp.max(jnp.abs(ad(x) - fd(x)))), pts)
        worst = max(worst, float(gap.max()))
    # the library's own Kähler forms
    lib = 0.0
    pts = gh2.sample(SampleSpec(seed=3, count=200, r_excl=0.3, r_axis=0.3))
    for w in gh2.omegas:
        ad, fd = ext_d(w).fn, ext_d(w, analytic=False).fn
        lib = max(lib, float(sweep(batch(lambda x: jnp.max(jnp.abs(ad(x) - fd(x)))), pts).max()))
    raw = {
        "structure": {"potential": {"sources": [{"center": list(c), "sigma": 1} for c in CENTRES[:2]]}},
        "twist": {"mode": "hk", "lambda": -1, "h": {"sources": [{"center": list(P0), "sigma": 1}]}},
        "sample": {"seed": 77, "count": 200},
    }
    first = report_json(run_verify(JobConfig.from_dict(raw)))
    second = report_json(run_verify(JobConfig.from_dict(raw)))
    same = first == second
    ok = worst <= 1e-5 and lib <= 1e-5 and same
    verdict(capsys, 10, ok, f"FD vs AD on 20 random forms {worst:.1e}, on GH Kähler forms {lib:.1e}; "
                            f"repeated report byte-identical: {same}")
