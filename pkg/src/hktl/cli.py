"""Command line front-end.

    hktl verify job.json [--seed N] [--samples N] [--out report.json] [--csv table.csv]
                         [--tolerance-pde X]
    hktl flux job.json [...]

Exit status: 0 all checks pass, 1 some check fails, 2 configuration error,
3 numerical runtime error, 4 I/O error.  HKTL_THREADS caps the number of
worker threads used for point sweeps.
"""

import argparse
import copy
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigError, HKTLError
from .flat import FlatHKn, check_norm_moment
from .gibbons_hawking import Domain, build_structure, verify_hyperkahler
from .hkt import strong_hkt_residuals
from .potentials import HarmonicPotential, chern_flux
from .report import CheckResult, ResidualReport, dumps, emit_report, report_json
from .structure import SampleSpec
from .twist import verify_inversion, verify_modification, verify_twist_hyperkahler

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3, 4

DEFAULT_TOLERANCES = {"algebraic": 1e-10, "pde": 1e-6, "fd": 1e-5}
DEFAULT_SAMPLE = {
    "seed": 0,
    "count": 1000,
    "box": None,
    "r_excl": None,
    "r_axis": None,
    "eps_a": 1e-4,
    "shell": None,
}
TWIST_MODES = ("hk", "modification", "invert")
FLUX_TOL = 1e-3


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def _float(value, name):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number") from None


def normalize_potential(spec):
    """Canonical JSON form of a potential spec (validates it)."""
    _require(isinstance(spec, dict), "potential spec must be an object")
    try:
        pot = HarmonicPotential.from_dict(spec)
    except ConfigError:
        raise
    except HKTLError as exc:
        raise ConfigError(f"bad potential spec: {exc}", **exc.details) from None
    out = pot.to_dict()
    out["sources"] = [
        {"center": [float(c) for c in s["center"]], "sigma": int(s["sigma"])} for s in out["sources"]
    ]
    if not pot.is_harmonic:
        out["harmonic"] = False
    return out


def _normalize_structure(spec):
    _require(isinstance(spec, dict), "structure must be an object")
    if "flat" in spec:
        _require(set(spec) <= {"flat"}, "flat structure takes only the 'flat' key")
        flat = spec["flat"]
        _require(isinstance(flat, dict), "flat must be an object")
        _require(set(flat) <= {"n", "weights"}, f"unknown flat keys: {sorted(set(flat) - {'n', 'weights'})}")
        n = flat.get("n", 1)
        _require(isinstance(n, int) and n >= 1, "flat.n must be a positive integer")
        weights = flat.get("weights", [1] * n)
        _require(
            isinstance(weights, list) and len(weights) == n and all(isinstance(w, int) for w in weights),
            "flat.weights must be a list of n integers",
        )
        _require(any(weights), "flat.weights needs a nonzero entry")
        return {"flat": {"n": n, "weights": list(weights)}}
    allowed = {"potential", "patch", "domain"}
    _require(set(spec) <= allowed, f"unknown structure keys: {sorted(set(spec) - allowed)}")
    _require("potential" in spec, "structure needs 'potential' or 'flat'")
    patch = spec.get("patch", "north")
    _require(patch in ("north", "south"), "patch must be 'north' or 'south'")
    dom = dict(spec.get("domain", {}))
    _require(set(dom) <= {"box", "r_excl", "r_axis"}, "unknown domain keys")
    base = Domain()
    box = dom.get("box", [list(b) for b in base.box])
    try:
        box = [[float(lo), float(hi)] for lo, hi in box]
    except (TypeError, ValueError):
        raise ConfigError("domain.box must be three [lo, hi] pairs") from None
    _require(len(box) == 3 and all(lo < hi for lo, hi in box), "domain.box must be three [lo, hi] pairs")
    r_excl = _float(dom.get("r_excl", base.r_excl), "domain.r_excl")
    r_axis = _float(dom.get("r_axis", base.r_axis), "domain.r_axis")
    _require(r_excl > 0 and r_axis > 0, "exclusion radii must be positive")
    return {
        "potential": normalize_potential(spec["potential"]),
        "patch": patch,
        "domain": {"box": box, "r_excl": r_excl, "r_axis": r_axis},
    }


def _normalize_twist(spec):
    _require(isinstance(spec, dict), "twist must be an object")
    allowed = {"h", "lambda", "mode", "p0"}
    _require(set(spec) <= allowed, f"unknown twist keys: {sorted(set(spec) - allowed)}")
    mode = spec.get("mode", "hk")
    _require(mode in TWIST_MODES, f"twist.mode must be one of {TWIST_MODES}")
    lam = _float(spec.get("lambda", -1.0), "twist.lambda")
    _require(lam != 0, "twist.lambda must be nonzero")
    out = {"mode": mode, "lambda": lam}
    if "h" in spec and spec["h"] is not None:
        out["h"] = normalize_potential(spec["h"])
    else:
        _require(mode == "modification", "twist.h is required unless mode is 'modification'")
        out["h"] = None
    if mode == "modification":
        # feasibility of the inverse modification is checked when p0 is given;
        # without h it defaults to the origin
        p0 = spec.get("p0", [0.0, 0.0, 0.0] if out["h"] is None else None)
        if p0 is not None:
            _require(isinstance(p0, list) and len(p0) == 3, "twist.p0 must be a point in R^3")
            p0 = [_float(v, "twist.p0") for v in p0]
        out["p0"] = p0
    return out


def _normalize_hkt(spec):
    _require(isinstance(spec, dict), "hkt must be an object")
    _require(set(spec) <= {"h", "lambda"}, f"unknown hkt keys: {sorted(set(spec) - {'h', 'lambda'})}")
    lam = _float(spec.get("lambda", 1.0), "hkt.lambda")
    _require(lam != 0, "hkt.lambda must be nonzero")
    return {"h": normalize_potential(spec.get("h", {})), "lambda": lam}


def _normalize_sample(spec):
    _require(isinstance(spec, dict), "sample must be an object")
    _require(set(spec) <= set(DEFAULT_SAMPLE), f"unknown sample keys: {sorted(set(spec) - set(DEFAULT_SAMPLE))}")
    out = dict(DEFAULT_SAMPLE)
    out.update(spec)
    _require(isinstance(out["seed"], int) and out["seed"] >= 0, "sample.seed must be a non-negative integer")
    _require(isinstance(out["count"], int) and out["count"] >= 1, "sample.count must be a positive integer")
    for key in ("r_excl", "r_axis", "eps_a"):
        if out[key] is not None:
            out[key] = _float(out[key], f"sample.{key}")
            _require(out[key] > 0, f"sample.{key} must be positive")
    if out["box"] is not None:
        try:
            out["box"] = [[float(lo), float(hi)] for lo, hi in out["box"]]
        except (TypeError, ValueError):
            raise ConfigError("sample.box must be a list of [lo, hi] pairs") from None
    if out["shell"] is not None:
        sh = out["shell"]
        _require(isinstance(sh, dict) and set(sh) == {"center", "r_min", "r_max"},
                 "sample.shell needs center, r_min, r_max")
        out["shell"] = {
            "center": [_float(v, "shell.center") for v in sh["center"]],
            "r_min": _float(sh["r_min"], "shell.r_min"),
            "r_max": _float(sh["r_max"], "shell.r_max"),
        }
    return out


def _normalize_sphere(spec):
    _require(isinstance(spec, dict), "sphere must be an object")
    allowed = {"center", "radius", "n_theta", "n_phi", "h"}
    _require(set(spec) <= allowed, f"unknown sphere keys: {sorted(set(spec) - allowed)}")
    center = spec.get("center", [0.0, 0.0, 0.0])
    _require(isinstance(center, list) and len(center) == 3, "sphere.center must be a point in R^3")
    radius = _float(spec.get("radius", 1.0), "sphere.radius")
    _require(radius > 0, "sphere.radius must be positive")
    out = {
        "center": [_float(v, "sphere.center") for v in center],
        "radius": radius,
        "n_theta": int(spec.get("n_theta", 64)),
        "n_phi": int(spec.get("n_phi", 128)),
    }
    _require(out["n_theta"] > 0 and out["n_phi"] > 0, "quadrature sizes must be positive")
    if spec.get("h") is not None:
        out["h"] = normalize_potential(spec["h"])
    return out


@dataclass
class JobConfig:
    structure: dict = None
    twist: dict = None
    hkt: dict = None
    sample: dict = field(default_factory=lambda: dict(DEFAULT_SAMPLE))
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    outputs: dict = field(default_factory=lambda: {"report": None, "csv": None})
    sphere: dict = None

    @staticmethod
    def from_dict(raw):
        _require(isinstance(raw, dict), "config must be a JSON object")
        keys = {"structure", "twist", "hkt", "sample", "tolerances", "outputs", "sphere"}
        _require(set(raw) <= keys, f"unknown config keys: {sorted(set(raw) - keys)}")
        _require(not ("twist" in raw and "hkt" in raw), "give at most one of 'twist' and 'hkt'")
        cfg = JobConfig()
        if raw.get("structure") is not None:
            cfg.structure = _normalize_structure(raw["structure"])
        if raw.get("twist") is not None:
            cfg.twist = _normalize_twist(raw["twist"])
        if raw.get("hkt") is not None:
            cfg.hkt = _normalize_hkt(raw["hkt"])
        cfg.sample = _normalize_sample(raw.get("sample", {}))
        tol = raw.get("tolerances", {})
        _require(isinstance(tol, dict) and set(tol) <= set(DEFAULT_TOLERANCES), "unknown tolerance keys")
        cfg.tolerances = dict(DEFAULT_TOLERANCES)
        for key, value in tol.items():
            cfg.tolerances[key] = _float(value, f"tolerances.{key}")
            _require(cfg.tolerances[key] > 0, f"tolerances.{key} must be positive")
        outs = raw.get("outputs", {})
        _require(isinstance(outs, dict) and set(outs) <= {"report", "csv"}, "unknown output keys")
        cfg.outputs = {"report": outs.get("report"), "csv": outs.get("csv")}
        if raw.get("sphere") is not None:
            cfg.sphere = _normalize_sphere(raw["sphere"])
        return cfg

    @staticmethod
    def from_json(text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"malformed JSON: {exc.msg} at line {exc.lineno} column {exc.colno}",
                line=exc.lineno,
                column=exc.colno,
            ) from None
        return JobConfig.from_dict(raw)

    def to_dict(self):
        out = {
            "sample": copy.deepcopy(self.sample),
            "tolerances": dict(self.tolerances),
            "outputs": dict(self.outputs),
        }
        for key in ("structure", "twist", "hkt", "sphere"):
            value = getattr(self, key)
            if value is not None:
                out[key] = copy.deepcopy(value)
        return out

    def sample_spec(self):
        s = self.sample
        shell = None
        if s["shell"] is not None:
            shell = (tuple(s["shell"]["center"]), s["shell"]["r_min"], s["shell"]["r_max"])
        return SampleSpec(
            seed=s["seed"],
            count=s["count"],
            box=None if s["box"] is None else tuple(tuple(b) for b in s["box"]),
            r_excl=s["r_excl"],
            r_axis=s["r_axis"],
            eps_a=s["eps_a"],
            shell=shell,
        )


def build_from_config(spec):
    """Structure object from a normalized structure spec."""
    if "flat" in spec:
        return FlatHKn(spec["flat"]["n"], spec["flat"]["weights"])
    V = HarmonicPotential.from_dict(spec["potential"])
    dom = spec["domain"]
    domain = Domain(tuple(tuple(b) for b in dom["box"]), dom["r_excl"], dom["r_axis"])
    return build_structure(V, spec["patch"], domain)


def _potential(spec):
    return HarmonicPotential.from_dict(spec, harmonic=spec.get("harmonic", True))


def _flat_closure(s, samples, tol):
    from .exterior import batch, ext_d, sweep
    import jax.numpy as jnp

    pts = s.sample(samples)
    fns = [ext_d(w).fn for w in s.omegas]
    values = sweep(batch(lambda x: jnp.stack([jnp.max(jnp.abs(f(x))) for f in fns])), pts)
    report = ResidualReport()
    for k, name in enumerate("IJK"):
        report.add(CheckResult(f"d_omega_{name}", "closure of the Kähler form: d omega_A = 0", tol, values[:, k], pts))
    return report


def run_verify(cfg):
    """Dispatch a verification job; returns a ResidualReport."""
    if cfg.structure is None:
        raise ConfigError("verify needs a 'structure'")
    s = build_from_config(cfg.structure)
    samples = cfg.sample_spec()
    tol = cfg.tolerances
    if cfg.hkt is not None:
        h = _potential(cfg.hkt["h"])
        report = strong_hkt_residuals(s, h, cfg.hkt["lambda"], samples, tol["pde"]).report
        job = "hkt"
    elif cfg.twist is not None:
        t = cfg.twist
        h = None if t["h"] is None else _potential(t["h"])
        job = t["mode"]
        if job == "hk":
            report = verify_twist_hyperkahler(s, h, t["lambda"], samples, tol["pde"])
        elif job == "invert":
            report = verify_inversion(s, h, t["lambda"], samples, tol["algebraic"])
        else:
            report = verify_modification(s, h, t["p0"], samples, tol["pde"], tol["algebraic"])
    else:
        job = "structure"
        if isinstance(s, FlatHKn):
            report = _flat_closure(s, samples, tol["pde"])
            if s.n == 1 and s.weights == (1,):
                report.extend(check_norm_moment(s, samples))
        else:
            report = verify_hyperkahler(s, samples, tol["pde"])
    report.environment = _environment(cfg, job)
    return report


def run_flux(cfg):
    """Chern flux through the configured sphere; returns (report, flux, nearest, deviation)."""
    sp = cfg.sphere
    if sp is None:
        raise ConfigError("flux needs a 'sphere'")
    if "h" in sp:
        h = _potential(sp["h"])
    elif cfg.structure is not None and "potential" in cfg.structure:
        h = _potential(cfg.structure["potential"])
    else:
        raise ConfigError("flux needs sphere.h or a Gibbons-Hawking structure potential")
    flux = chern_flux(h, sp["center"], sp["radius"], sp["n_theta"], sp["n_phi"])
    nearest = int(np.rint(flux))
    deviation = abs(flux - nearest)
    report = ResidualReport()
    report.add(
        CheckResult(
            "chern_flux",
            "Chern class change -(1/2 pi) integral of *3 dh over a sphere",
            FLUX_TOL,
            [deviation],
            np.asarray([sp["center"] + [sp["radius"]]]),
            extras={"flux": flux, "nearest_integer": nearest},
        )
    )
    report.environment = _environment(cfg, "flux")
    return report, flux, nearest, deviation


def _environment(cfg, job):
    return {
        "job": job,
        "seed": cfg.sample["seed"],
        "samples": cfg.sample["count"],
        "prng": "numpy PCG64",
        "tolerances": dict(cfg.tolerances),
        "version": __version__,
        "config": {k: v for k, v in cfg.to_dict().items() if k != "outputs"},
    }


def _parser():
    parser = argparse.ArgumentParser(prog="hktl", description="HyperKähler twist residual checks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("verify", "run a verification job"), ("flux", "compute a Chern flux")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON job configuration")
        p.add_argument("--seed", type=int, help="override sample.seed")
        p.add_argument("--samples", type=int, help="override sample.count")
        p.add_argument("--out", help="JSON report path (default: stdout)")
        p.add_argument("--csv", help="per-point residual CSV path")
        p.add_argument("--tolerance-pde", type=float, dest="tolerance_pde", help="override tolerances.pde")
    return parser


def load_config(path, args=None):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    cfg = JobConfig.from_json(text)
    if args is not None:
        if args.seed is not None:
            _require(args.seed >= 0, "--seed must be non-negative")
            cfg.sample["seed"] = args.seed
        if args.samples is not None:
            _require(args.samples >= 1, "--samples must be positive")
            cfg.sample["count"] = args.samples
        if args.tolerance_pde is not None:
            _require(args.tolerance_pde > 0, "--tolerance-pde must be positive")
            cfg.tolerances["pde"] = args.tolerance_pde
        if args.out is not None:
            cfg.outputs["report"] = args.out
        if args.csv is not None:
            cfg.outputs["csv"] = args.csv
    return cfg


def _fail(code, payload):
    sys.stderr.write(dumps(payload) + "\n")
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc.to_dict())
    except OSError as exc:
        return _fail(EXIT_IO, {"error": type(exc).__name__, "message": str(exc)})
    try:
        if args.command == "verify":
            report = run_verify(cfg)
        else:
            report, flux, nearest, deviation = run_flux(cfg)
            print(f"flux {flux:.12e} nearest {nearest} deviation {deviation:.3e}", file=sys.stderr)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc.to_dict())
    except (HKTLError, FloatingPointError, np.linalg.LinAlgError) as exc:
        payload = exc.to_dict() if isinstance(exc, HKTLError) else {"error": type(exc).__name__, "message": str(exc)}
        return _fail(EXIT_RUNTIME, payload)
    print(str(report), file=sys.stderr)
    try:
        if cfg.outputs["report"] is None:
            sys.stdout.write(report_json(report))
        emit_report(report, cfg.outputs["report"], cfg.outputs["csv"])
    except OSError as exc:
        return _fail(EXIT_IO, {"error": type(exc).__name__, "message": str(exc)})
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
