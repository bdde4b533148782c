"""Run configuration: strict YAML parsing with line-numbered errors.

A configuration has three blocks::

    model:
      preset: "cir:a=1,theta=1,sigma2=2"     # or an explicit model:
      # cone: "orthant:2"
      # b: [0.5, 0.4]
      # B: [[-1.0, 0.3], [0.2, -0.8]]
      # sigma2: [0.5, 0.8]
      # m: {components: [{ray: {intensity: 0.5, direction: [1, 1], rate: 2}}]}
      # mu: [{loading: [0.2, 0.1], components: [{atom: {weight: 1, point: [0.5, 0.5]}}]}]
    controls:
      paths: 10000
      seed: 42
    output:
      format: auto        # csv for trajectories, json for reports

For ``cone: "psd:d"`` the diffusion is given as ``wishart: {delta, beta, q0}``
and b, B, sigma2 are not allowed.  Unknown keys are rejected and every
default is written into the effective configuration.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from .cones import ConeSpace, sym_to_coords
from .errors import UsageError
from .models import WishartParams, make_orthant, make_wishart, parse_preset
from .params import Atom, ExponentialRay, JumpMeasure, StateDependentJumps

CONTROL_DEFAULTS = {
    "rtol": 1e-10,
    "atol": 1e-12,
    "seed": 42,
    "paths": 10_000,
    "dt": 0.002,
    "horizon": 1.0,
    "delta": None,
    "scheme": "auto",
    "convention": "laplace",
    "x0": None,
    "u": None,
    "v": None,
    "times": None,
    "degree": 2,
    "bins": 20,
    "x_b": None,
    "lyapunov": "polynomial",
}
OUTPUT_DEFAULTS = {"format": "auto", "path": None}
MODEL_KEYS = {"preset", "cone", "b", "B", "sigma2", "wishart", "m", "mu", "density_positive"}
WISHART_KEYS = {"delta", "beta", "q0"}
SCHEMES = ("auto", "euler", "jumpdiffusion", "purejump")


class ConfigError(UsageError):
    """Configuration error carrying the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _line_map(node, path=(), out=None):
    """Map key paths to 1-based line numbers; reject duplicate keys."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        seen = set()
        for knode, vnode in node.value:
            key = knode.value
            if key in seen:
                raise ConfigError(f"duplicate key {key!r}", knode.start_mark.line + 1)
            seen.add(key)
            out[path + (key,)] = knode.start_mark.line + 1
            _line_map(vnode, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_map(item, path + (i,), out)
    return out


class _Ctx:
    def __init__(self, lines):
        self.lines = lines

    def line(self, path):
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)

    def fail(self, path, message):
        raise ConfigError(message, self.line(path))

    def mapping(self, value, path, allowed):
        if value is None:
            value = {}
        if not isinstance(value, dict):
            self.fail(path, f"{'.'.join(map(str, path)) or 'document'} must be a mapping")
        for key in value:
            if key not in allowed:
                self.fail(tuple(path) + (key,), f"unknown key {key!r}; allowed: {sorted(allowed)}")
        return value

    def number(self, value, path, integer=False, positive=False, nonneg=False):
        if isinstance(value, bool):
            self.fail(path, f"{path[-1]} must be a number")
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                self.fail(path, f"{path[-1]} must be a number, got {value!r}")
        if not isinstance(value, (int, float)) or not np.isfinite(value):
            self.fail(path, f"{path[-1]} must be a finite number")
        if integer:
            if float(value) != int(value):
                self.fail(path, f"{path[-1]} must be an integer")
            value = int(value)
        else:
            value = float(value)
        if positive and not value > 0:
            self.fail(path, f"{path[-1]} must be positive")
        if nonneg and value < 0:
            self.fail(path, f"{path[-1]} must be nonnegative")
        return value

    def array(self, value, path, shape=None):
        try:
            arr = np.array(self._numbers(value, path), dtype=float)
        except ValueError:
            self.fail(path, f"{path[-1]} must be a rectangular numeric array")
        if shape is not None and arr.shape != tuple(shape):
            self.fail(path, f"{path[-1]} has shape {arr.shape}, expected {tuple(shape)}")
        return arr

    def _numbers(self, value, path):
        if isinstance(value, list):
            return [self._numbers(v, tuple(path) + (i,)) for i, v in enumerate(value)]
        return self.number(value, path)


def _vector(ctx, space, value, path):
    """A cone-coordinate vector; symmetric matrices are accepted on psd cones."""
    arr = ctx.array(value, path)
    if space.kind == "psd" and arr.shape == (space.size, space.size):
        if not np.allclose(arr, arr.T):
            ctx.fail(path, f"{path[-1]} must be symmetric")
        return sym_to_coords(arr)
    if arr.shape != (space.dim,):
        ctx.fail(path, f"{path[-1]} must have {space.dim} coordinates, got shape {arr.shape}")
    return arr


def _components(ctx, space, value, path):
    if not isinstance(value, list):
        ctx.fail(path, "components must be a list")
    comps = []
    for i, item in enumerate(value):
        p = tuple(path) + (i,)
        item = ctx.mapping(item, p, {"atom", "ray"})
        if len(item) != 1:
            ctx.fail(p, "each component is exactly one of 'atom' or 'ray'")
        kind, body = next(iter(item.items()))
        p = p + (kind,)
        try:
            if kind == "atom":
                body = ctx.mapping(body, p, {"weight", "point"})
                comps.append(Atom(ctx.number(body.get("weight"), p + ("weight",), positive=True),
                                  _vector(ctx, space, body.get("point"), p + ("point",))))
            else:
                body = ctx.mapping(body, p, {"intensity", "direction", "rate"})
                comps.append(ExponentialRay(ctx.number(body.get("intensity"), p + ("intensity",), positive=True),
                                            _vector(ctx, space, body.get("direction"), p + ("direction",)),
                                            ctx.number(body.get("rate"), p + ("rate",), positive=True)))
        except ConfigError:
            raise
        except UsageError as exc:
            ctx.fail(p, str(exc))
    return tuple(comps)


def _measure(ctx, space, value, path):
    value = ctx.mapping(value, path, {"components", "positive_density"})
    comps = _components(ctx, space, value.get("components", []), tuple(path) + ("components",))
    return JumpMeasure(comps, bool(value.get("positive_density", False)))


def _normalize_model(ctx, model):
    """Validate the model block, returning (effective dict, AffineParams)."""
    model = ctx.mapping(model, ("model",), MODEL_KEYS)
    if "preset" in model:
        extra = set(model) - {"preset"}
        if extra:
            ctx.fail(("model", sorted(extra)[0]), "preset excludes explicit model fields")
        try:
            params = parse_preset(str(model["preset"]))
        except UsageError as exc:
            ctx.fail(("model", "preset"), str(exc))
        return {"preset": str(model["preset"])}, params
    if "cone" not in model:
        ctx.fail(("model",), "model needs 'preset' or 'cone'")
    try:
        space = ConeSpace.parse(str(model["cone"]))
    except UsageError as exc:
        ctx.fail(("model", "cone"), str(exc))
    if not space.proper:
        ctx.fail(("model", "cone"), "only orthant and psd cones are supported in configs")
    eff = {"cone": str(space)}
    m = _measure(ctx, space, model.get("m"), ("model", "m"))
    mu_terms = []
    mu_raw = model.get("mu") or []
    if not isinstance(mu_raw, list):
        ctx.fail(("model", "mu"), "mu must be a list of {loading, components}")
    for i, term in enumerate(mu_raw):
        p = ("model", "mu", i)
        term = ctx.mapping(term, p, {"loading", "components", "positive_density"})
        load = _vector(ctx, space, term.get("loading"), p + ("loading",))
        comps = _components(ctx, space, term.get("components", []), p + ("components",))
        mu_terms.append((load, JumpMeasure(comps, bool(term.get("positive_density", False)))))
    mu = StateDependentJumps(tuple(mu_terms))
    density = model.get("density_positive", False)
    if not isinstance(density, bool):
        ctx.fail(("model", "density_positive"), "density_positive must be true or false")
    try:
        if space.kind == "psd":
            for key in ("b", "B", "sigma2"):
                if key in model:
                    ctx.fail(("model", key), f"{key} is not used on psd cones; give 'wishart'")
            if "wishart" not in model:
                ctx.fail(("model",), "psd cones need a 'wishart' block")
            w = ctx.mapping(model["wishart"], ("model", "wishart"), WISHART_KEYS)
            d = space.size
            delta = ctx.number(w.get("delta"), ("model", "wishart", "delta"))
            beta = ctx.array(w.get("beta"), ("model", "wishart", "beta"), (d, d))
            q0 = ctx.array(w.get("q0"), ("model", "wishart", "q0"), (d, d))
            params = make_wishart(WishartParams(d, delta, beta, q0, m=m, mu=mu))
            params = params.replace(density_positive=density)
            eff["wishart"] = {"delta": delta, "beta": beta.tolist(), "q0": q0.tolist()}
        else:
            if "wishart" in model:
                ctx.fail(("model", "wishart"), "wishart block needs a psd cone")
            n = space.dim
            for key in ("b", "B"):
                if key not in model:
                    ctx.fail(("model",), f"orthant models need {key!r}")
            b = ctx.array(model["b"], ("model", "b"), (n,))
            B = ctx.array(model["B"], ("model", "B"), (n, n))
            sig = ctx.array(model.get("sigma2", 0.0), ("model", "sigma2"))
            if sig.shape not in ((), (n,)):
                ctx.fail(("model", "sigma2"), f"sigma2 must be a number or {n} numbers")
            sig = np.broadcast_to(sig, (n,)).copy()
            params = make_orthant(B, b, sig, m, mu, density)
            eff.update({"b": b.tolist(), "B": B.tolist(), "sigma2": sig.tolist()})
    except ConfigError:
        raise
    except UsageError as exc:
        ctx.fail(("model",), str(exc))
    eff["m"] = _render_measure(space, m)
    eff["mu"] = [{"loading": load.tolist(), **_render_measure(space, meas)} for load, meas in mu.terms]
    eff["density_positive"] = density
    return eff, params


def _render_measure(space, meas):
    comps = []
    for c in meas.components:
        if isinstance(c, Atom):
            comps.append({"atom": {"weight": c.weight, "point": c.point.tolist()}})
        else:
            comps.append({"ray": {"intensity": c.intensity, "direction": c.direction.tolist(), "rate": c.rate}})
    return {"components": comps, "positive_density": bool(meas.positive_density)}


def _normalize_controls(ctx, controls, params):
    controls = ctx.mapping(controls, ("controls",), set(CONTROL_DEFAULTS))
    eff = dict(CONTROL_DEFAULTS)
    space = params.space

    def p(key):
        return ("controls", key)

    for key in ("rtol", "atol", "horizon"):
        if key in controls:
            eff[key] = ctx.number(controls[key], p(key), positive=True)
    for key in ("dt", "delta"):
        if controls.get(key) is not None:
            eff[key] = ctx.number(controls[key], p(key), positive=True)
    if "seed" in controls:
        eff["seed"] = ctx.number(controls["seed"], p("seed"), integer=True, nonneg=True)
    if "paths" in controls:
        eff["paths"] = ctx.number(controls["paths"], p("paths"), integer=True, positive=True)
    if "degree" in controls:
        eff["degree"] = ctx.number(controls["degree"], p("degree"), integer=True, positive=True)
    if "bins" in controls:
        eff["bins"] = ctx.number(controls["bins"], p("bins"), integer=True)
        if eff["bins"] < 2:
            ctx.fail(p("bins"), "bins must be >= 2")
    for key, choices in (("scheme", SCHEMES), ("convention", ("laplace", "exponential")),
                         ("lyapunov", ("polynomial", "exponential"))):
        if key in controls:
            if controls[key] not in choices:
                ctx.fail(p(key), f"{key} must be one of {list(choices)}")
            eff[key] = controls[key]
    proper = space.proper
    defaults = {
        "x0": space.canonical_interior() if proper else np.zeros(space.dim),
        "u": space.canonical_interior(dual=True) if proper else np.zeros(space.dim),
    }
    defaults["v"] = -0.5 * defaults["u"]
    for key in ("x0", "u", "v"):
        vec = controls.get(key)
        eff[key] = (defaults[key] if vec is None else _vector(ctx, space, vec, p(key))).tolist()
    xb = controls.get("x_b")
    eff["x_b"] = (5.0 * np.asarray(eff["x0"]) if xb is None else _vector(ctx, space, xb, p("x_b"))).tolist()
    if controls.get("times") is not None:
        times = ctx.array(controls["times"], p("times"))
        if times.ndim != 1 or np.any(times < 0) or np.any(np.diff(times) <= 0):
            ctx.fail(p("times"), "times must be a strictly increasing list of nonnegative numbers")
        eff["times"] = times.tolist()
    return eff


def _normalize_output(ctx, output):
    output = ctx.mapping(output, ("output",), set(OUTPUT_DEFAULTS))
    eff = dict(OUTPUT_DEFAULTS)
    if "format" in output:
        if output["format"] not in ("auto", "json", "csv"):
            ctx.fail(("output", "format"), "format must be 'auto', 'json' or 'csv'")
        eff["format"] = output["format"]
    if output.get("path") is not None:
        eff["path"] = str(output["path"])
    return eff


@dataclass
class RunConfig:
    """Effective configuration with every default filled in."""

    model: dict
    controls: dict
    output: dict
    params: object

    def effective(self):
        return {"model": copy.deepcopy(self.model), "controls": copy.deepcopy(self.controls),
                "output": copy.deepcopy(self.output)}

    def render(self):
        return render(self)

    @property
    def hash(self):
        return config_hash(self)


def parse_config(text, model_override=None, seed_override=None):
    """Parse YAML text into a RunConfig.

    Parameters
    ----------
    text : str
        May be empty when ``model_override`` supplies the model.
    model_override : str, optional
        Preset string replacing the model block.
    seed_override : int, optional

    Raises
    ------
    ConfigError
        Malformed YAML, unknown keys, bad values or dimension mismatches.
    """
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          None if mark is None else mark.line + 1) from exc
    lines = _line_map(node) if node is not None else {(): 1}
    ctx = _Ctx(lines)
    data = ctx.mapping(data, (), {"model", "controls", "output"})
    model = {"preset": model_override} if model_override is not None else data.get("model")
    if model is None:
        ctx.fail((), "a model block or --model preset is required")
    if model_override is not None:
        ctx = _Ctx({})
    model_eff, params = _normalize_model(ctx, model)
    ctx = _Ctx(lines)
    controls = dict(data.get("controls") or {})
    if seed_override is not None:
        controls["seed"] = seed_override
    controls_eff = _normalize_controls(ctx, controls, params)
    output_eff = _normalize_output(ctx, data.get("output"))
    return RunConfig(model_eff, controls_eff, output_eff, params)


def render(config):
    """YAML text of the effective configuration; parse_config(render(c)) reproduces c."""
    return yaml.safe_dump(config.effective(), sort_keys=False, default_flow_style=None)


def config_hash(config):
    """sha256 of the canonical JSON form of the effective configuration."""
    blob = json.dumps(config.effective(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
