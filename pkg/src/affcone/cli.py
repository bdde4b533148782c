"""Command-line interface.

Exit codes: 0 success or Certified, 2 NotCertified, inadmissible, or a
diagnostic that is not established, 1 usage or runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, parse_config
from .diagnostics import (LyapunovFn, auto_scheme, drift_contraction_check, empirical_laplace_check,
                          exponential_lyapunov, irreducibility_checklist, tv_decay)
from .errors import DomainError, NumericError, UsageError
from .moments import build_generator, stationary_moments, transient_moment
from .params import validate_admissibility
from .riccati import Convention, check_conservative, integrate, stationary_laplace
from .simulation import output_grid, simulate
from .stability import drift_certificate, lyapunov_psd

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_ESTABLISHED = 2
SUITES = ("laplace", "tv", "drift", "irreducibility")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="affcone", description="Ergodicity checks for affine processes on cones.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--model", metavar="PRESET", help="model preset, e.g. cir:a=1,theta=1,sigma2=2 or zoo:wishart")
    common.add_argument("--out", metavar="PATH", help="write output here instead of stdout")
    common.add_argument("--json", action="store_true", help="emit JSON for trajectory commands too")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="simulation worker threads")
    common.add_argument("--seed", type=int, help="override controls.seed")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("validate", parents=[common], help="admissibility checks")
    sub.add_parser("check-drift", parents=[common], help="drift-condition certificate")
    sub.add_parser("riccati", parents=[common], help="Riccati trajectory as CSV t,phi,psi_i")
    sub.add_parser("stationary", parents=[common], help="stationary exponential moment at controls.v")
    sub.add_parser("moments", parents=[common], help="transient and stationary polynomial moments")
    sub.add_parser("simulate", parents=[common], help="path ensemble as long CSV")
    diag = sub.add_parser("diagnose", parents=[common], help="empirical diagnostics")
    diag.add_argument("--suite", choices=SUITES, required=True)
    return parser


def load_config(args):
    if args.config is None and args.model is None:
        raise UsageError("give --config PATH or --model PRESET")
    text = ""
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    return parse_config(text, model_override=args.model, seed_override=args.seed)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def payload(cfg, command, result):
    """Config echo first, then the result."""
    return {"version": __version__, "config_hash": cfg.hash, "config": cfg.effective(),
            "command": command, "result": _jsonable(result)}


def csv_header(cfg, command):
    return f"# affcone {__version__} command={command} config_hash={cfg.hash}\n"


# ---------------------------------------------------------------- commands


def cmd_validate(cfg, args, out):
    report = validate_admissibility(cfg.params)
    _emit_json(out, payload(cfg, "validate", report.to_dict()))
    return EXIT_OK if report.passed else EXIT_NOT_ESTABLISHED


def cmd_check_drift(cfg, args, out):
    params = cfg.params
    cert = drift_certificate(params)
    result = {"certificate": cert.to_dict(), "conservative": check_conservative(params).to_dict()}
    if params.wishart is not None and not params.has_jumps:
        lyap = lyapunov_psd(params.wishart.beta)
        result["lyapunov_psd"] = {"verdict": lyap.verdict, "tau_beta": lyap.tau_beta,
                                  "min_eigenvalue": lyap.min_eig}
    _emit_json(out, payload(cfg, "check-drift", result))
    return EXIT_OK if cert.certified else EXIT_NOT_ESTABLISHED


def cmd_riccati(cfg, args, out):
    c = cfg.controls
    horizon = c["horizon"]
    grid = output_grid(horizon, c["delta"], c["times"]) if (c["delta"] or c["times"]) else None
    sol = integrate(cfg.params, c["u"], Convention.coerce(c["convention"]), horizon, grid=grid,
                    rtol=c["rtol"], atol=c["atol"])
    blow = None if sol.blow_up is None else {"time": sol.blow_up[0], "reason": sol.blow_up[1]}
    if _wants_json(cfg, args):
        _emit_json(out, payload(cfg, "riccati", {
            "convention": sol.convention.value, "t": sol.grid, "phi": sol.phi_values,
            "psi": sol.psi_values, "blow_up": blow}))
        return EXIT_OK
    out.write(csv_header(cfg, "riccati"))
    if blow is not None:
        out.write(f"# blow_up time={blow['time']!r} reason={blow['reason']}\n")
    n = sol.psi_values.shape[1]
    out.write("t,phi," + ",".join(f"psi_{i + 1}" for i in range(n)) + "\n")
    for t, phi, psi in zip(sol.grid, sol.phi_values, sol.psi_values):
        out.write(",".join(repr(float(v)) for v in (t, phi, *psi)) + "\n")
    return EXIT_OK


def cmd_stationary(cfg, args, out):
    params, c = cfg.params, cfg.controls
    cert = drift_certificate(params)
    result = {"certificate": cert.to_dict()}
    if not cert.certified:
        _emit_json(out, payload(cfg, "stationary", result))
        return EXIT_NOT_ESTABLISHED
    value, bound = stationary_laplace(params, c["v"], cert, rtol=c["rtol"], atol=c["atol"])
    result.update({"v": c["v"], "value": value, "truncation_bound": bound})
    _emit_json(out, payload(cfg, "stationary", result))
    return EXIT_OK


def cmd_moments(cfg, args, out):
    params, c = cfg.params, cfg.controls
    gen = build_generator(params, c["degree"])
    basis = gen.basis
    transient = [transient_moment(gen, basis.unit(a), c["x0"], c["horizon"]) for a in basis.monomials]
    cert = drift_certificate(params)
    result = {"monomials": [list(a) for a in basis.monomials], "x0": c["x0"], "t": c["horizon"],
              "transient": transient, "certificate": cert.to_dict(), "stationary": None, "warnings": []}
    if cert.certified:
        stat = stationary_moments(gen, cert)
        result["stationary"] = stat.weights
        result["warnings"] = stat.warnings
    _emit_json(out, payload(cfg, "moments", result))
    return EXIT_OK


def _scheme(cfg):
    s = cfg.controls["scheme"]
    return auto_scheme(cfg.params) if s == "auto" else s


def cmd_simulate(cfg, args, out):
    c = cfg.controls
    scheme = _scheme(cfg)
    ens = simulate(cfg.params, scheme, c["x0"], c["horizon"], c["paths"], c["seed"],
                   dt=None if scheme == "purejump" else c["dt"], delta=c["delta"], workers=args.workers,
                   times=c["times"])
    for w in ens.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if _wants_json(cfg, args):
        _emit_json(out, payload(cfg, "simulate", {
            "scheme": ens.scheme, "times": ens.times, "states": ens.states,
            "jumps": ens.jumps, "warnings": ens.warnings}))
        return EXIT_OK
    out.write(csv_header(cfg, "simulate"))
    out.write(f"# scheme={ens.scheme} seed={ens.seed}\n")
    ens.to_csv(out)
    return EXIT_OK


def cmd_diagnose(cfg, args, out):
    suite = args.suite
    params, c = cfg.params, cfg.controls
    scheme = _scheme(cfg)
    code = EXIT_OK
    if suite == "laplace":
        times = c["times"] or [c["horizon"]]
        ens = simulate(params, scheme, c["x0"], max(times), c["paths"], c["seed"],
                       dt=None if scheme == "purejump" else c["dt"], workers=args.workers, times=times)
        checks = [empirical_laplace_check(ens, params, c["u"], t, c["rtol"], c["atol"]) for t in times]
        if not all(ch.passed() for ch in checks):
            code = EXIT_NOT_ESTABLISHED
        result = {"suite": suite, "checks": [ch.to_dict() for ch in checks]}
    elif suite == "tv":
        horizon = c["horizon"]
        times = c["times"] or list(np.linspace(horizon / 10, horizon, 10))
        fit = tv_decay(params, c["x0"], c["x_b"], times, c["paths"], c["bins"], c["seed"],
                       dt=c["dt"], workers=args.workers, scheme=scheme)
        if not _wants_json(cfg, args) and cfg.output["format"] == "csv":
            out.write(csv_header(cfg, "diagnose-tv"))
            fit.to_csv(out)
            return code
        result = {"suite": suite, "fit": fit.to_dict()}
    elif suite == "drift":
        if c["lyapunov"] == "exponential":
            lyap, h0 = exponential_lyapunov(params)
        else:
            if c["degree"] < 2:
                raise UsageError("polynomial Lyapunov functions need degree >= 2")
            lyap, h0 = LyapunovFn.polynomial(params.space.canonical_interior(dual=True), c["degree"]), None
        delta = c["delta"] or 1.0
        report = drift_contraction_check(params, lyap, delta, paths=c["paths"], seed=c["seed"],
                                         dt=c["dt"], workers=args.workers, scheme=scheme)
        if not report.contracting:
            code = EXIT_NOT_ESTABLISHED
        result = {"suite": suite, "h0": h0, "report": report.to_dict()}
    else:
        report = irreducibility_checklist(params)
        if not report.supported:
            code = EXIT_NOT_ESTABLISHED
        result = {"suite": suite, **report.to_dict()}
    _emit_json(out, payload(cfg, f"diagnose-{suite}", result))
    return code


COMMANDS = {
    "validate": cmd_validate,
    "check-drift": cmd_check_drift,
    "riccati": cmd_riccati,
    "stationary": cmd_stationary,
    "moments": cmd_moments,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
}


def _wants_json(cfg, args):
    return args.json or cfg.output["format"] == "json"


def _emit_json(out, obj):
    json.dump(obj, out, indent=2)
    out.write("\n")


def dispatch(argv=None):
    """Run one command; returns the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    buffer = io.StringIO()
    try:
        cfg = load_config(args)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        code = COMMANDS[args.command](cfg, args, buffer)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (UsageError, DomainError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    dest = args.out or cfg.output["path"]
    try:
        with (open(dest, "w", encoding="utf-8") if dest else contextlib.nullcontext(sys.stdout)) as fh:
            fh.write(buffer.getvalue())
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return code


def main(argv=None):
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
