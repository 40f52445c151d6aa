"""Command-line interface: ``simulate``, ``constants``, ``verify`` and ``sample-eq``.

Configuration is a JSON object. Every key is optional apart from what a
subcommand needs; command-line flags override the file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
import zipfile
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.special import gammaln, hyperu

from . import analysis, dsmc, verify
from .core import GasParams
from .errors import ConfigError, DomainError, PolykinError
from .models import MODELS, ModelSpec, angular_from_config, partition_constants

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_CONFIG = 3

COMMANDS = ("simulate", "constants", "verify", "sample-eq")


def _number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _positive(x) -> str | None:
    return None if _number(x) and x > 0 else "must be a number > 0"


def _nonneg_int(x) -> str | None:
    return None if isinstance(x, int) and not isinstance(x, bool) and x >= 0 else "must be an integer >= 0"


def _gamma(x) -> str | None:
    return None if _number(x) and 0 < x <= 2 else "must lie in (0, 2] (required range for gamma)"


def _alpha(x) -> str | None:
    return None if _number(x) and x > -1 else "must satisfy alpha > -1"


def _one_of(*opts) -> Callable:
    def check(x):
        return None if x in opts else f"must be one of {list(opts)}"
    return check


def _bool(x) -> str | None:
    return None if isinstance(x, bool) else "must be true or false"


def _str_or_null(x) -> str | None:
    return None if x is None or isinstance(x, str) else "must be a string or null"


def _number_list(x) -> str | None:
    ok = isinstance(x, list) and all(_number(v) and v >= 0 for v in x)
    return None if ok else "must be a list of numbers >= 0"


def _exp_list(x) -> str | None:
    ok = isinstance(x, list) and all(
        isinstance(p, list) and len(p) == 2 and _number(p[0]) and 0 < p[0] <= 1 and _number(p[1]) and p[1] > 0
        for p in x)
    return None if ok else "must be a list of [s, beta] pairs with 0 < s <= 1 and beta > 0"


def _p_norm(x) -> str | None:
    return None if x == "inf" or (_number(x) and x >= 1) else "must be a number >= 1 or \"inf\""


def _angular(x) -> str | None:
    try:
        angular_from_config(x)
    except (DomainError, KeyError, TypeError, ValueError) as exc:
        return f"invalid angular function ({exc})"
    return None


# key -> (validator, default, help)
TOP_KEYS: dict[str, tuple] = {
    "command": (_one_of(*COMMANDS), None, "subcommand to run when not given on the command line"),
    "model": (_one_of(*MODELS), "Model1", "transition model"),
    "gamma": (_gamma, 2.0, "kernel exponent in (0, 2]"),
    "alpha": (_alpha, 0.0, "internal-energy exponent, > -1"),
    "m": (_positive, 1.0, "molecular mass"),
    "kB": (_positive, 1.0, "Boltzmann constant"),
    "angular": (_angular, "Isotropic", "\"Isotropic\" or {\"kind\": \"TablePdf\", \"mu\": [...], \"values\": [...]}"),
    "variant": (_one_of("minmax", "product"), "minmax", "bound factors for Models 2 and 3"),
    "delta": (_positive, 1.0, "order of the extra moment in the coercivity data"),
    "seed": (_nonneg_int, 0, "root seed for every random stream"),
    "n_particles": (None, 10_000, "number of simulation particles (>= 2)"),
    "t_end": (_positive, 1.0, "final time"),
    "dt_report": (_positive, 0.1, "interval between reports"),
    "time_unit": (_one_of("time", "mft"), "time", "\"mft\" measures t_end and dt_report in mean free times"),
    "init": (None, None, "initial state object, see INIT KEYS"),
    "diagnostics": (None, None, "diagnostics object, see DIAGNOSTICS KEYS"),
    "initial_moments": (None, None, "constants input, see INITIAL MOMENT KEYS"),
    "orders": (_number_list, [], "moment orders k >= k* for which constants reports B_k"),
    "exp_rates": (_bool, False, "constants: also compute exponential-moment rates"),
    "beta0": (_positive, 0.1, "constants: beta0 for the propagation rate"),
    "p": (_p_norm, "inf", "angular norm route for C_k"),
    "out": (_str_or_null, None, "output path"),
    "csv": (_str_or_null, None, "simulate: CSV mirror of the reports"),
    "replicas": (None, 1, "simulate: number of independent replicas"),
    "quick": (_bool, False, "verify: deterministic checks only"),
    "scale": (_positive, 1.0, "verify: sample-size multiplier"),
    "verbosity": (_nonneg_int, 0, "0 quiet, 1 summary on stderr"),
}

INIT_KEYS: dict[str, tuple] = {
    "kind": (_one_of(*dsmc.INIT_KINDS), "Equilibrium", "initial state"),
    "T": (_positive, 1.0, "Equilibrium temperature"),
    "T_kin": (_positive, 1.0, "TwoTemperature translational temperature"),
    "T_int": (_positive, 1.0, "TwoTemperature / BimodalBeams internal temperature"),
    "speed": (lambda x: None if _number(x) and x >= 0 else "must be a number >= 0", 1.0, "BimodalBeams speed"),
    "file": (_str_or_null, None, "Custom particle file (.npz or .json with v and I)"),
}

DIAG_KEYS: dict[str, tuple] = {
    "moments": (_number_list, [1.0, 2.0, 3.0], "polynomial moment orders k"),
    "exp_moments": (_exp_list, [], "exponential moments as [s, beta] pairs"),
    "entropy": (_bool, False, "record the entropy estimate"),
    "entropy_bins": (lambda x: None if isinstance(x, int) and x >= 10 else "must be an integer >= 10", 30,
                     "histogram bins per axis"),
    "coercivity_spotcheck": (_nonneg_int, 0, "number of coercivity probes per report"),
}

MOMENT_KEYS: dict[str, tuple] = {
    "M_l": (_positive, None, "lower mass bound"),
    "M_u": (_positive, None, "upper mass bound"),
    "E_l": (_positive, None, "lower energy bound"),
    "E_u": (_positive, None, "upper energy bound"),
    "Delta": (_positive, None, "(2+delta)/2 moment bound"),
    "m0": (_positive, None, "zeroth polynomial moment"),
    "m1": (_positive, None, "first polynomial moment"),
}


@dataclass
class RunConfig:
    command: str | None
    model: ModelSpec
    sim: dsmc.SimConfig
    delta: float
    seed: int
    initial_moments: dict
    orders: list
    exp_rates: bool
    beta0: float
    p: float
    out: str | None
    csv: str | None
    replicas: int
    quick: bool
    scale: float
    verbosity: int
    raw: dict = field(default_factory=dict)


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(text: str, path: str, msg: str):
    line = _line_of(text, path.split(".")[-1]) if text else None
    where = f"{path} (line {line})" if line else path
    raise ConfigError(msg, where)


def _validate(obj: dict, schema: dict, prefix: str, text: str) -> dict:
    if not isinstance(obj, dict):
        _fail(text, prefix or "<root>", "must be a JSON object")
    for key in obj:
        if key not in schema:
            _fail(text, f"{prefix}{key}", "unknown key")
    out = {}
    for key, (check, default, _) in schema.items():
        if key in obj:
            val = obj[key]
            if check is not None:
                err = check(val)
                if err:
                    _fail(text, f"{prefix}{key}", err)
            out[key] = val
        else:
            out[key] = default
    return out


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Validate JSON config text, apply defaults and build the typed config.

    Raises :class:`ConfigError` naming the offending field (and its line
    when it can be located).
    """
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", f"line {exc.lineno} col {exc.colno}") from None
    if not isinstance(raw, dict):
        raise ConfigError("must be a JSON object", "<root>")
    if overrides:
        raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    top = _validate(raw, TOP_KEYS, "", text)
    init = _validate(raw.get("init") or {}, INIT_KEYS, "init.", text)
    diag = _validate(raw.get("diagnostics") or {}, DIAG_KEYS, "diagnostics.", text)
    moments = _validate(raw.get("initial_moments") or {}, MOMENT_KEYS, "initial_moments.", text)

    n = top["n_particles"]
    if not (isinstance(n, int) and not isinstance(n, bool) and n >= 2):
        _fail(text, "n_particles", "must be an integer >= 2")
    reps = top["replicas"]
    if not (isinstance(reps, int) and not isinstance(reps, bool) and reps >= 1):
        _fail(text, "replicas", "must be an integer >= 1")
    if init["kind"] == "Custom" and not init["file"]:
        _fail(text, "init.file", "required when init.kind is Custom")

    try:
        params = GasParams(top["m"], top["alpha"], top["kB"])
        spec = ModelSpec(top["model"], float(top["gamma"]), params, angular_from_config(top["angular"]),
                         top["variant"])
        init_spec = dsmc.InitSpec(init["kind"], init["T"], init["T_kin"], init["T_int"], init["speed"], init["file"])
        diagnostics = dsmc.Diagnostics(tuple(float(k) for k in diag["moments"]),
                                       tuple((float(s), float(b)) for s, b in diag["exp_moments"]),
                                       diag["entropy"], diag["entropy_bins"], diag["coercivity_spotcheck"])
        sim = dsmc.SimConfig(n, float(top["t_end"]), float(top["dt_report"]), top["seed"], spec, init_spec,
                             diagnostics, top["time_unit"], float(top["delta"]))
    except DomainError as exc:
        raise ConfigError(str(exc), "<config>") from None
    return RunConfig(
        command=top["command"], model=spec, sim=sim, delta=float(top["delta"]), seed=top["seed"],
        initial_moments=moments, orders=[float(k) for k in top["orders"]], exp_rates=top["exp_rates"],
        beta0=float(top["beta0"]), p=math.inf if top["p"] == "inf" else float(top["p"]), out=top["out"],
        csv=top["csv"], replicas=reps, quick=top["quick"], scale=float(top["scale"]), verbosity=top["verbosity"],
        raw=raw,
    )


# Output helpers ----------------------------------------------------------------


def dumps(obj) -> str:
    """Deterministic JSON used for every output file."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class _Output:
    def __init__(self, path: str | None):
        self.path = path

    def __enter__(self):
        self.fh = open(self.path, "w", encoding="utf-8", newline="") if self.path and self.path != "-" else sys.stdout
        return self.fh

    def __exit__(self, *exc):
        if self.fh is not sys.stdout:
            self.fh.close()
        return False


def save_particles(path: str, v: np.ndarray, I: np.ndarray) -> None:
    """Write particles as .npz (fixed zip timestamps) or JSON."""
    if path.endswith(".npz"):
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            for name, arr in (("v", v), ("I", I)):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps({"v": v.tolist(), "I": I.tolist()}))
            fh.write("\n")


# Constants ---------------------------------------------------------------------


def equilibrium_moments(T: float, params: GasParams, delta: float) -> dict:
    """Mass, energy and Delta moments of the unit-density Maxwellian at T.

    |v|^2/2 + I/m is Gamma(alpha + 5/2, kT/m) distributed, which gives Delta
    in closed form.
    """
    theta = params.kB * T / params.m
    shape = params.alpha + 2.5
    E = shape * theta
    q = 0.5 * (2.0 + delta)
    Delta = math.exp(gammaln(shape + q) - gammaln(shape) + q * math.log(theta))
    return {"M_l": 1.0, "M_u": 1.0, "E_l": E, "E_u": E, "Delta": Delta, "m0": 1.0, "m1": 1.0 + E}


def _key(k: float) -> str:
    return repr(float(k))


def constants_report(cfg: RunConfig) -> dict:
    """Every constant for the configured model and initial moments."""
    spec = cfg.model
    consts = partition_constants(spec)
    T = cfg.sim.init.T if cfg.sim.init.kind == "Equilibrium" else dsmc.equilibrium_temperature(cfg.sim.init, spec.params)
    mom = equilibrium_moments(T, spec.params, cfg.delta)
    mom.update({k: float(v) for k, v in cfg.initial_moments.items() if v is not None})
    out: dict[str, Any] = {
        "model": spec.model, "gamma": spec.gamma, "alpha": spec.params.alpha, "m": spec.params.m,
        "delta": cfg.delta, "variant": spec.variant, "p": "inf" if math.isinf(cfg.p) else cfg.p,
        "partition": {**consts.to_dict(), "l1_norm": consts.l1_norm},
        "initial_moments": mom,
    }
    if spec.params.alpha < 0 and math.isinf(cfg.p):
        out["threshold"] = None
        return out
    cstar = analysis.threshold_cstar(spec, consts)
    kbar = analysis.find_kbar_star(spec, consts)
    data = analysis.CoercivityData(mom["M_l"], mom["M_u"], mom["E_l"], mom["E_u"], mom["Delta"], cfg.delta)
    c_lb = analysis.coercivity_clb(data, spec.gamma)
    out["threshold"] = {"C_star": cstar, "kbar_star": kbar, "Cinf_kbar_star": analysis.povzner_cinf(kbar)}
    out["coercivity"] = {"rho_star": data.rho_star, "S_of_rho": data.S_of_rho, "c_lb": c_lb}
    try:
        coeffs = analysis.moment_bound_coeffs(spec, consts, data, mom["m0"], mom["m1"], cfg.orders, cfg.p)
    except DomainError as exc:
        out["moment_bounds"] = {"error": str(exc)}
        return out
    out["moment_bounds"] = {
        "k_star": coeffs.k_star, "C_kstar": coeffs.C_kstar, "A_kstar": coeffs.A_kstar, "eps": coeffs.eps,
        "B_k": {_key(k): v for k, v in coeffs.B_k.items()},
        "log_B_k": {_key(k): float(coeffs.log_B(k)) for k in coeffs.B_k},
        "eta_k": {_key(k): v for k, v in coeffs.eta_k.items()},
        "theta_k": {_key(k): v for k, v in coeffs.theta_k.items()},
    }
    if cfg.exp_rates:
        MP = math.exp(eq_log_exp_moment(T, spec.params, cfg.beta0))
        prop = analysis.exp_rate_propagation(coeffs, 1.0, cfg.beta0, MP)
        gen = analysis.exp_rate_generation(coeffs, MG=math.exp(eq_log_poly_moment(T, spec.params, coeffs.k_star)))
        out["exp_rates"] = {
            "propagation": {"s": 1.0, "beta0": cfg.beta0, "MP": MP, "beta": prop.beta, "log_beta": prop.log_beta,
                            "k0": prop.k0},
            "generation": {"beta": gen.beta, "log_beta": gen.log_beta, "k0": gen.k0},
        }
    return out


def eq_log_poly_moment(T: float, params: GasParams, k: float) -> float:
    """log of the k-th polynomial moment of the unit Maxwellian.

    With y = |v|^2/2 + I/m ~ Gamma(a, theta), a = alpha + 5/2, the moment
    E(1 + y)^k equals theta^(-a) U(a, a + k + 1, 1/theta).
    """
    theta = params.kB * T / params.m
    a = params.alpha + 2.5
    return float(math.log(hyperu(a, a + k + 1.0, 1.0 / theta)) - a * math.log(theta))


def eq_log_exp_moment(T: float, params: GasParams, beta: float) -> float:
    """log int exp(beta <v,I>^2) M for the unit Maxwellian (requires beta * theta < 1)."""
    theta = params.kB * T / params.m
    if beta * theta >= 1.0:
        raise DomainError("exponential moment of the Maxwellian is infinite for beta >= m/(kB T)")
    return beta - (params.alpha + 2.5) * math.log1p(-beta * theta)


def scan_rows(spec_base: ModelSpec, kmin: int, kmax: int, alphas, gammas, p: float = math.inf) -> list[list]:
    """Rows (model, alpha, gamma, k, Cinf_k, C_k, C_star, below_threshold)."""
    rows = []
    ks = np.arange(kmin, kmax + 1, dtype=float)
    cinf = analysis.povzner_cinf(ks)
    for a in alphas:
        for g in gammas:
            spec = ModelSpec(spec_base.model, g, GasParams(spec_base.params.m, a, spec_base.params.kB),
                             spec_base.angular, spec_base.variant)
            consts = partition_constants(spec)
            ck = np.atleast_1d(analysis.povzner_ck(ks, spec, consts, p))
            cstar = analysis.threshold_cstar(spec, consts)
            for k, ci, c in zip(ks, np.atleast_1d(cinf), ck):
                rows.append([spec.model, a, g, int(k), float(ci), float(c), cstar, int(c < consts.kappa_lb)])
    return rows


def _parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError("expected kmin:kmax with integers", "--scan-k") from None
    if not 2 <= lo <= hi:
        raise ConfigError("need 2 <= kmin <= kmax", "--scan-k")
    return lo, hi


def _parse_floats(text: str, name: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("expected a comma-separated list of numbers", name) from None


DEFAULT_GAMMAS = tuple(round(0.1 * i, 10) for i in range(1, 21))


def cmd_constants(cfg: RunConfig, args) -> int:
    if args.scan_k:
        lo, hi = _parse_range(args.scan_k)
        alphas = _parse_floats(args.alphas, "--alphas") if args.alphas else [0.0, 0.5]
        gammas = _parse_floats(args.gammas, "--gammas") if args.gammas else list(DEFAULT_GAMMAS)
        for a in alphas:
            if a < 0:
                raise ConfigError("the scan uses the L^inf route, which needs alpha >= 0", "--alphas")
        for g in gammas:
            if not 0 < g <= 2:
                raise ConfigError("each gamma must lie in (0, 2]", "--gammas")
        with _Output(cfg.out) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "alpha", "gamma", "k", "Cinf_k", "C_k", "C_star", "below_threshold"])
            w.writerows(scan_rows(cfg.model, lo, hi, alphas, gammas, cfg.p))
        return EXIT_OK
    report = constants_report(cfg)
    with _Output(cfg.out) as fh:
        fh.write(json.dumps(report, sort_keys=True, indent=2))
        fh.write("\n")
    return EXIT_OK


def load_constants(text: str) -> dict:
    """Inverse of the ``constants`` JSON output."""
    return json.loads(text)


# Simulate ----------------------------------------------------------------------


def invariant_problems(reports) -> list[str]:
    """Conservation drift and coercivity violations in one replica's reports."""
    first, last = reports[0], reports[-1]
    problems = []
    p_scale = math.sqrt(2.0 * first.mass_density * first.total_energy)
    dp = float(np.linalg.norm(np.asarray(last.momentum) - np.asarray(first.momentum))) / p_scale
    dE = abs(last.total_energy - first.total_energy) / first.total_energy
    if dp > 1e-9:
        problems.append(f"momentum drift {dp:.3e}")
    if dE > 1e-9:
        problems.append(f"energy drift {dE:.3e}")
    bad = sum(r.extra.get("coercivity_violations", 0) for r in reports)
    if bad:
        problems.append(f"{bad} coercivity violations")
    return problems


def cmd_simulate(cfg: RunConfig, args) -> int:
    sim = cfg.sim
    reps = dsmc.run_replicas(sim, cfg.replicas) if cfg.replicas > 1 else [list(dsmc.run(sim, 0))]
    with _Output(cfg.out) as fh:
        for r_idx, rep in enumerate(reps):
            for rec in rep:
                fh.write(dumps({"replica": r_idx, **rec.to_dict()}))
                fh.write("\n")
    if cfg.csv:
        orders = list(sim.diagnostics.moments)
        with open(cfg.csv, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replica"] + dsmc.MomentReport.csv_header(orders))
            for r_idx, rep in enumerate(reps):
                for rec in rep:
                    w.writerow([r_idx] + [repr(x) if isinstance(x, float) else x for x in rec.csv_row(orders)])
    problems = [f"replica {i}: {p}" for i, rep in enumerate(reps) for p in invariant_problems(rep)]
    if cfg.verbosity:
        for i, rep in enumerate(reps):
            ex = rep[-1].extra
            print(f"replica {i}: {ex.get('collisions', 0)} collisions, "
                  f"{ex.get('majorant_violations', 0)} majorant violations", file=sys.stderr)
    for p in problems:
        print(f"invariant violation: {p}", file=sys.stderr)
    return EXIT_INVARIANT if problems else EXIT_OK


# Verify and sample-eq ----------------------------------------------------------


def cmd_verify(cfg: RunConfig, args) -> int:
    lines = []

    def show(res: verify.CheckResult):
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name} value={res.value:.6g} tol={res.tol:.3g} ({res.seconds:.1f}s)", flush=True)
        lines.append(res)

    results = verify.run_suite(quick=cfg.quick, seed=cfg.seed, scale=cfg.scale, progress=show)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            for res in results:
                fh.write(json.dumps(res.to_dict(), sort_keys=True, default=float))
                fh.write("\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


def cmd_sample_eq(cfg: RunConfig, args) -> int:
    if not cfg.out or cfg.out == "-":
        raise ConfigError("sample-eq needs an output file", "out")
    ens = dsmc.initial_ensemble(cfg.sim)
    save_particles(cfg.out, ens.v, ens.I)
    return EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "constants": cmd_constants, "verify": cmd_verify, "sample-eq": cmd_sample_eq}


def _schema_help() -> str:
    parts = []
    for title, schema in (("CONFIG KEYS", TOP_KEYS), ("INIT KEYS (init.*)", INIT_KEYS),
                          ("DIAGNOSTICS KEYS (diagnostics.*)", DIAG_KEYS),
                          ("INITIAL MOMENT KEYS (initial_moments.*)", MOMENT_KEYS)):
        parts.append(title)
        for key, (_, default, doc) in schema.items():
            d = "" if default is None else f" [default: {json.dumps(default)}]"
            parts.append(f"  {key}: {doc}{d}")
        parts.append("")
    parts.append("Exit codes: 0 success, 2 invariant violation, 3 configuration error.")
    parts.append("POLYKIN_THREADS caps the number of replica worker processes.")
    return "\n".join(parts)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="polykin", description=__doc__, epilog=_schema_help(), formatter_class=fmt)
    sub = parser.add_subparsers(dest="command")
    for name, helptext in (("simulate", "run the particle solver"), ("constants", "emit constants as JSON or a k scan"),
                           ("verify", "run the invariant suite"), ("sample-eq", "write an equilibrium particle sample")):
        p = sub.add_parser(name, help=helptext, epilog=_schema_help(), formatter_class=fmt)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output path (stdout when omitted, where allowed)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("-v", "--verbose", action="count", default=None, help="summary on stderr")
        if name == "simulate":
            p.add_argument("--csv", help="CSV mirror of the reports")
            p.add_argument("--replicas", type=int, help="number of independent replicas")
        if name == "constants":
            p.add_argument("--model", choices=MODELS)
            p.add_argument("--gamma", type=float)
            p.add_argument("--alpha", type=float)
            p.add_argument("--scan-k", dest="scan_k", metavar="KMIN:KMAX", help="emit a CSV scan over k")
            p.add_argument("--alphas", help="comma-separated alpha grid for --scan-k [0,0.5]")
            p.add_argument("--gammas", help="comma-separated gamma grid for --scan-k [0.1,...,2]")
        if name == "verify":
            p.add_argument("--quick", action="store_true", default=None, help="deterministic checks only")
            p.add_argument("--scale", type=float, help="sample-size multiplier")
        if name == "sample-eq":
            p.add_argument("-n", "--n-particles", dest="n_particles", type=int)
            p.add_argument("--T", dest="T", type=float, help="equilibrium temperature")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        text = ""
        if getattr(args, "config", None):
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(str(exc), "--config") from None
        over = {k: getattr(args, k, None) for k in
                ("out", "seed", "csv", "replicas", "model", "gamma", "alpha", "quick", "scale", "n_particles")}
        if getattr(args, "verbose", None):
            over["verbosity"] = args.verbose
        cfg_text_obj = json.loads(text) if text.strip() else {}
        if getattr(args, "T", None) is not None:
            init = dict(cfg_text_obj.get("init") or {})
            init.update({"kind": "Equilibrium", "T": args.T})
            over["init"] = init
        command = args.command or (cfg_text_obj.get("command") if isinstance(cfg_text_obj, dict) else None)
        if command is None:
            parser.print_help()
            return EXIT_CONFIG
        over["command"] = command
        cfg = parse_config(text, over)
        return HANDLERS[command](cfg, args)
    except json.JSONDecodeError as exc:
        print(f"config error: line {exc.lineno} col {exc.colno}: invalid JSON: {exc.msg}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PolykinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
