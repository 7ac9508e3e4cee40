"""Experiment configuration: a YAML key tree, validated into
:class:`ExperimentConfig`.

Unknown keys and malformed values raise :class:`ParseError` carrying the line
and dotted field name; cross-field constraints raise :class:`ValidationError`
naming the violated constraint.  ``to_dict`` gives the normalized tree with
all defaults filled in, and ``dump_config(cfg)`` re-parses to an equal config.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ParseError, RandcltError, ValidationError
from .estimators import MODES as SUM_MODES
from .estimators import KnSchedule
from .fields import (AR1, DerivedTuple, FiniteMarkov, GaussianMA, IidMarginal, ModelSpec,
                     RotationCoboundary, marginal_truth)
from .regions import RegionFamily, SamplingDensity

DEFAULT_ALPHA = 0.5
DEFAULT_N_REP = 2000

COMMANDS = ("simulate", "clt", "fclt", "edf", "rate")

STATISTICS = {
    "simulate": ("field",),
    "clt": ("normalized_sum", "separation", "independence", "lindeberg", "tuple_sum",
            "indicator_sum", "vector_sum", "cond17"),
    "fclt": ("broken_line",),
    "edf": ("glivenko_cantelli", "kolmogorov"),
    "rate": ("delta_n",),
}

# check name -> default threshold, per statistic
CHECKS = {
    "field": {},
    "normalized_sum": {"ks_max": 0.04, "p_min": 0.01},
    "separation": {"p_min": 0.01, "classical_p_max": 1e-6},
    "independence": {"corr_max": 0.05},
    "lindeberg": {"final_max": 0.05},
    "tuple_sum": {"p_min": 0.01},
    "indicator_sum": {"p_min": 0.01},
    "vector_sum": {},
    "cond17": {"expect_shrinking": 1.0},
    "broken_line": {"ks_max": 0.05},
    "glivenko_cantelli": {"sup_max": 0.05, "fraction_min": 0.95},
    "kolmogorov": {"ks_max": 0.06},
    "delta_n": {"slope_max": -0.3, "variance_p_max": 0.0},
}

VARIANTS = ("iid", "gaussian_ma", "ar1", "coboundary", "markov", "tuple")
_VARIANT_KEYS = {
    "iid": {"distribution", "params"},
    "gaussian_ma": {"kernel", "mean"},
    "ar1": {"rho", "innovation_var", "mean"},
    "coboundary": {"alpha", "g"},
    "markov": {"P", "f"},
    "tuple": {"base", "offsets", "f", "thresholds"},
}
_MODEL_COMMON = {"variant", "components", "mixing"}

_SECTION_KEYS = {
    "region": {"kind", "dim", "scale", "start", "radial", "radial_params", "indices",
               "spacing", "mode"},
    "schedule": {"rule", "alpha", "values", "factor"},
    "density": {"kind", "base", "scale"},
    "statistic": {"name", "mode", "replicates", "offsets", "thresholds", "functional", "f",
                  "theta", "eps", "delta", "tol", "F", "centering", "epsilon"},
    "output": {"dir"},
}
_TOP_KEYS = {"experiment", "command", "model", "region", "schedule", "density", "statistic",
             "n_rep", "seed", "jobs", "output", "checks"}

_STAT_DEFAULTS = {"mode": "studentized_Mn", "replicates": 1, "functional": "sup", "eps": 0.1,
                  "delta": 1.0, "tol": 0.005, "centering": "Mn"}


# ----------------------------------------------------------------------------
# Line tracking
# ----------------------------------------------------------------------------


def _key_lines(node, prefix: str = "", out: Optional[dict] = None) -> dict:
    """Map dotted key paths to 1-based source lines of a composed YAML tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _key_lines(v, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = v.start_mark.line + 1
            _key_lines(v, path, out)
    return out


class _Ctx:
    def __init__(self, lines: dict):
        self.lines = lines

    def fail(self, path: str, message: str):
        raise ParseError(f"{path}: {message}", line=self.lines.get(path), field=path)

    def section(self, tree: dict, path: str, allowed: set) -> dict:
        if tree is None:
            return {}
        if not isinstance(tree, dict):
            self.fail(path, "expected a mapping")
        for key in tree:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else str(key),
                          f"unknown key; valid keys: {sorted(allowed)}")
        return tree

    def typed(self, tree: dict, path: str, key: str, kind, default=None, required=False):
        full = f"{path}.{key}" if path else key
        if key not in tree or tree[key] is None:
            if required:
                self.fail(full, "required key missing")
            return default
        val = tree[key]
        if kind is float and isinstance(val, (int, float)) and not isinstance(val, bool):
            return float(val)
        if kind is int and isinstance(val, int) and not isinstance(val, bool):
            return val
        if kind is str and isinstance(val, str):
            return val
        if kind is list and isinstance(val, list):
            return val
        if kind is dict and isinstance(val, dict):
            return val
        self.fail(full, f"expected {kind.__name__}, got {type(val).__name__}")


# ----------------------------------------------------------------------------
# Config object
# ----------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    experiment: str
    command: str
    model: dict
    region: dict
    schedule: dict
    density: dict
    statistic: dict
    n_rep: int = DEFAULT_N_REP
    seed: int = 0
    jobs: int = 1
    output: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    # -- builders -------------------------------------------------------------

    def model_spec(self) -> ModelSpec:
        return build_model(self.model)

    def family(self) -> RegionFamily:
        r = self.region
        return RegionFamily(r["kind"], r["dim"], r["scale"], r["start"], r["radial"],
                            dict(r["radial_params"]))

    @property
    def indices(self) -> list:
        return list(self.region["indices"])

    def regions(self) -> list:
        fam = self.family()
        return [fam.region(n, self.region["spacing"], self.region["mode"]) for n in self.indices]

    def kn_schedule(self) -> KnSchedule:
        s = self.schedule
        return KnSchedule(s["rule"], s["alpha"], tuple(s["values"]), s["factor"])

    def sampling_density(self) -> SamplingDensity:
        d = self.density
        return SamplingDensity(d["kind"], d["base"], d["scale"])

    def ks(self) -> list:
        return self.kn_schedule().evaluate([r.measure for r in self.regions()])

    @property
    def k_curve(self) -> bool:
        """A rate curve over an explicit k_n list at one fixed region index."""
        return (self.command == "rate" and len(self.indices) == 1
                and self.schedule["rule"] == "explicit")

    def points(self) -> list:
        """``(position, n, k_n)`` triples the experiment visits."""
        if self.k_curve:
            return [(0, self.indices[0], int(k)) for k in self.schedule["values"]]
        return [(j, n, k) for j, (n, k) in enumerate(zip(self.indices, self.ks()))]

    def check(self, name: str) -> float:
        return float(self.checks.get(name, CHECKS[self.statistic["name"]][name]))

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment, "command": self.command,
            "model": copy.deepcopy(self.model), "region": copy.deepcopy(self.region),
            "schedule": copy.deepcopy(self.schedule), "density": copy.deepcopy(self.density),
            "statistic": copy.deepcopy(self.statistic), "n_rep": self.n_rep, "seed": self.seed,
            "jobs": self.jobs, "output": copy.deepcopy(self.output),
            "checks": copy.deepcopy(self.checks),
        }

    def with_overrides(self, seed=None, n_rep=None, jobs=None) -> "ExperimentConfig":
        tree = self.to_dict()
        if seed is not None:
            tree["seed"] = int(seed)
        if n_rep is not None:
            tree["n_rep"] = int(n_rep)
        if jobs is not None:
            tree["jobs"] = int(jobs)
        return config_from_tree(tree)


# ----------------------------------------------------------------------------
# Model trees
# ----------------------------------------------------------------------------


def _offset_key(o):
    if isinstance(o, (list, tuple)):
        return tuple(int(v) for v in o) if len(o) > 1 else int(o[0])
    return int(o)


def build_model(tree: dict) -> ModelSpec:
    """Construct a :class:`ModelSpec` from a normalized model tree."""
    v = tree["variant"]
    if v == "iid":
        variant = IidMarginal(tree["distribution"], dict(tree.get("params") or {}))
    elif v == "gaussian_ma":
        kernel = {_offset_key(o): float(w) for o, w in tree["kernel"]}
        variant = GaussianMA(kernel, float(tree.get("mean", 0.0)))
    elif v == "ar1":
        variant = AR1(float(tree["rho"]), float(tree.get("innovation_var", 1.0)),
                      float(tree.get("mean", 0.0)))
    elif v == "coboundary":
        kw = {k: tree[k] for k in ("alpha", "g") if tree.get(k) is not None}
        variant = RotationCoboundary(**kw)
    elif v == "markov":
        variant = FiniteMarkov(tuple(map(tuple, tree["P"])), tuple(tree["f"]))
    elif v == "tuple":
        th = tree.get("thresholds")
        variant = DerivedTuple(build_model(tree["base"]), tuple(map(tuple, _offsets(tree["offsets"]))),
                               tree.get("f", "identity"), None if th is None else tuple(th))
    else:
        raise ValueError(f"unknown variant {v!r}")
    mixing = tree.get("mixing")
    return ModelSpec(variant, int(tree.get("components", 1)),
                     None if mixing is None else tuple(map(tuple, mixing)))


def _offsets(raw) -> list:
    return [list(np.atleast_1d(np.asarray(o, dtype=int)).tolist()) for o in raw]


def _parse_model(ctx: _Ctx, tree, path: str) -> dict:
    if not isinstance(tree, dict):
        ctx.fail(path, "expected a mapping")
    variant = ctx.typed(tree, path, "variant", str, required=True)
    if variant not in VARIANTS:
        raise ValidationError(f"unknown model variant {variant!r}; valid variants: {list(VARIANTS)}",
                              constraint="model_variant")
    ctx.section(tree, path, _MODEL_COMMON | _VARIANT_KEYS[variant])
    out = {"variant": variant, "components": ctx.typed(tree, path, "components", int, 1)}
    mixing = ctx.typed(tree, path, "mixing", list)
    out["mixing"] = None if mixing is None else [[float(x) for x in row] for row in mixing]
    if variant == "iid":
        out["distribution"] = ctx.typed(tree, path, "distribution", str, "normal")
        out["params"] = {k: float(v) for k, v in (ctx.typed(tree, path, "params", dict, {})).items()}
    elif variant == "gaussian_ma":
        kern = ctx.typed(tree, path, "kernel", list, required=True)
        pairs = []
        for i, item in enumerate(kern):
            if not (isinstance(item, list) and len(item) == 2):
                ctx.fail(f"{path}.kernel[{i}]", "kernel entries are [offset, weight] pairs")
            off = item[0] if isinstance(item[0], list) else [item[0]]
            pairs.append([[int(x) for x in off], float(item[1])])
        out["kernel"] = pairs
        out["mean"] = ctx.typed(tree, path, "mean", float, 0.0)
    elif variant == "ar1":
        out["rho"] = ctx.typed(tree, path, "rho", float, required=True)
        out["innovation_var"] = ctx.typed(tree, path, "innovation_var", float, 1.0)
        out["mean"] = ctx.typed(tree, path, "mean", float, 0.0)
    elif variant == "coboundary":
        out["alpha"] = ctx.typed(tree, path, "alpha", float, float(np.sqrt(2.0) - 1.0))
        out["g"] = ctx.typed(tree, path, "g", str, "sin2pi")
    elif variant == "markov":
        out["P"] = [[float(x) for x in row] for row in ctx.typed(tree, path, "P", list, required=True)]
        out["f"] = [float(x) for x in ctx.typed(tree, path, "f", list, required=True)]
    elif variant == "tuple":
        out["base"] = _parse_model(ctx, tree.get("base"), f"{path}.base")
        out["offsets"] = _offsets(ctx.typed(tree, path, "offsets", list, required=True))
        out["f"] = ctx.typed(tree, path, "f", str, "identity")
        th = ctx.typed(tree, path, "thresholds", list)
        out["thresholds"] = None if th is None else [float(x) for x in th]
    return out


# ----------------------------------------------------------------------------
# Parsing
# ----------------------------------------------------------------------------


def parse_text(text: str) -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"malformed config: {exc}", line=None if mark is None else mark.line + 1,
                         field=None) from None
    if not isinstance(tree, dict):
        raise ParseError("config must be a key tree (mapping) at top level", line=1, field=None)
    return config_from_tree(tree, _Ctx(_key_lines(node)))


def parse_config(path) -> ExperimentConfig:
    """Read and validate a configuration file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {p}: {exc}", line=None, field=None) from None
    return parse_text(text)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def config_from_tree(tree: dict, ctx: Optional[_Ctx] = None) -> ExperimentConfig:
    ctx = ctx or _Ctx({})
    ctx.section(tree, "", _TOP_KEYS)
    experiment = ctx.typed(tree, "", "experiment", str, required=True)
    command = ctx.typed(tree, "", "command", str, required=True)
    if command not in COMMANDS:
        raise ValidationError(f"unknown command {command!r}; valid commands: {list(COMMANDS)}",
                              constraint="command")
    model = _parse_model(ctx, tree.get("model"), "model")

    rt = ctx.section(tree.get("region"), "region", _SECTION_KEYS["region"])
    region = {
        "kind": ctx.typed(rt, "region", "kind", str, "interval"),
        "dim": ctx.typed(rt, "region", "dim", int, 1),
        "scale": ctx.typed(rt, "region", "scale", float, 1.0),
        "start": ctx.typed(rt, "region", "start", int, 1),
        "radial": ctx.typed(rt, "region", "radial", str, "constant"),
        "radial_params": ctx.typed(rt, "region", "radial_params", dict, {}),
        "indices": ctx.typed(rt, "region", "indices", list, required=True),
        "spacing": ctx.typed(rt, "region", "spacing", float, 1.0),
        "mode": ctx.typed(rt, "region", "mode", str, "lattice"),
    }
    region["indices"] = [int(v) if float(v).is_integer() else float(v) for v in region["indices"]]

    st = ctx.section(tree.get("schedule"), "schedule", _SECTION_KEYS["schedule"])
    schedule = {
        "rule": ctx.typed(st, "schedule", "rule", str, "power_of_measure"),
        "alpha": ctx.typed(st, "schedule", "alpha", float, DEFAULT_ALPHA),
        "values": [int(v) for v in ctx.typed(st, "schedule", "values", list, [])],
        "factor": ctx.typed(st, "schedule", "factor", float, 1.0),
    }

    dt = ctx.section(tree.get("density"), "density", _SECTION_KEYS["density"])
    density = {
        "kind": ctx.typed(dt, "density", "kind", str, "uniform"),
        "base": ctx.typed(dt, "density", "base", str, "triangular"),
        "scale": ctx.typed(dt, "density", "scale", float),
    }

    sx = ctx.section(tree.get("statistic"), "statistic", _SECTION_KEYS["statistic"])
    name = ctx.typed(sx, "statistic", "name", str, required=True)
    if name not in STATISTICS[command]:
        raise ValidationError(f"unknown statistic {name!r} for {command}; valid statistics: "
                              f"{list(STATISTICS[command])}", constraint="statistic_name")
    statistic = {"name": name}
    for key in sorted(_SECTION_KEYS["statistic"] - {"name"}):
        kind = {"mode": str, "functional": str, "f": str, "centering": str, "replicates": int,
                "offsets": list, "thresholds": list, "theta": float, "eps": float,
                "delta": float, "tol": float, "F": float, "epsilon": float}[key]
        statistic[key] = ctx.typed(sx, "statistic", key, kind, _STAT_DEFAULTS.get(key))
    if statistic["offsets"] is not None:
        statistic["offsets"] = _offsets(statistic["offsets"])
    if statistic["thresholds"] is not None:
        statistic["thresholds"] = [float(v) for v in statistic["thresholds"]]

    ot = ctx.section(tree.get("output"), "output", _SECTION_KEYS["output"])
    output = {"dir": ctx.typed(ot, "output", "dir", str)}
    ct = ctx.section(tree.get("checks"), "checks", set(CHECKS[name]))
    checks = {k: ctx.typed(ct, "checks", k, float) for k in ct}

    cfg = ExperimentConfig(
        experiment=experiment, command=command, model=model, region=region, schedule=schedule,
        density=density, statistic=statistic,
        n_rep=ctx.typed(tree, "", "n_rep", int, DEFAULT_N_REP),
        seed=ctx.typed(tree, "", "seed", int, 0),
        jobs=ctx.typed(tree, "", "jobs", int, 1),
        output=output, checks=checks,
    )
    validate(cfg)
    return cfg


def _constraint(ok: bool, name: str, message: str):
    if not ok:
        raise ValidationError(message, constraint=name)


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field constraints; each failure names its constraint."""
    _constraint(bool(cfg.experiment.strip()) and "/" not in cfg.experiment, "experiment_id",
                "experiment id must be a non-empty name without '/'")
    _constraint(cfg.n_rep >= 1, "n_rep_positive", "n_rep must be positive")
    _constraint(cfg.seed >= 0, "seed_nonnegative", "seed must be non-negative")
    _constraint(cfg.jobs >= 1, "jobs_positive", "jobs must be at least 1")
    try:
        model = cfg.model_spec()
    except (RandcltError, ValueError, TypeError, KeyError) as exc:
        raise ValidationError(f"invalid model: {exc}", constraint="model") from None
    try:
        fam = cfg.family()
        fam.check_indices(cfg.indices)
        regions = cfg.regions()
    except (RandcltError, ValueError) as exc:
        raise ValidationError(f"invalid region: {exc}", constraint="region_indices") from None
    if model.dim is not None:
        _constraint(model.dim == fam.dim, "dimension_match",
                    f"model lives on Z^{model.dim} but regions are {fam.dim}-D")
    try:
        sched = cfg.kn_schedule()
    except ValueError as exc:
        raise ValidationError(str(exc), constraint="schedule_nondecreasing") from None
    if sched.rule == "explicit" and not cfg.k_curve:
        _constraint(len(sched.values) == len(cfg.indices), "schedule_length",
                    "explicit k_n list must match the region index list")
    try:
        cfg.sampling_density()
    except ValueError as exc:
        raise ValidationError(str(exc), constraint="density") from None
    if fam.kind != "star" and regions[0].mode == "lattice":
        # k_n must be evaluable and nondecreasing; measures are cheap here
        try:
            cfg.points()
        except ValueError as exc:
            raise ValidationError(str(exc), constraint="schedule_nondecreasing") from None
    st = cfg.statistic
    _constraint(st["mode"] in SUM_MODES, "statistic_mode",
                f"unknown mode {st['mode']!r}; valid modes: {list(SUM_MODES)}")
    _constraint(st["functional"] in ("sup", "sup_abs", "integral"), "functional",
                "functional must be sup, sup_abs or integral")
    _constraint(st["centering"] in ("Mn", "mu"), "centering", "centering must be Mn or mu")
    _constraint(st["replicates"] >= 1, "replicates", "replicates must be positive")
    _constraint(0.0 < st["delta"] <= 1.0, "delta_range", "delta must lie in (0, 1]")
    needs_truth = (st["mode"] != "studentized_Mn" or st["centering"] == "mu"
                   or st["name"] in ("separation", "cond17", "glivenko_cantelli", "kolmogorov",
                                     "delta_n", "vector_sum"))
    if needs_truth:
        try:
            truth = marginal_truth(model, allow_estimate=False)
        except RandcltError:
            truth = None
        _constraint(truth is not None, "mu_mode_requires_oracle",
                    "this statistic/mode needs a model with a closed-form truth oracle")
    if st["name"] in ("glivenko_cantelli", "tuple_sum", "indicator_sum"):
        _constraint(st["offsets"] is not None, "offsets_required", f"{st['name']} needs offsets")
    if st["name"] == "indicator_sum":
        _constraint(st["thresholds"] is not None and len(st["thresholds"]) == len(st["offsets"]),
                    "thresholds_required", "indicator_sum needs one threshold per offset")
    if st["name"] == "independence":
        _constraint(model.components * st["replicates"] >= 2, "independence_blocks",
                    "independence needs at least two (component, replicate) blocks")
    if cfg.command == "rate":
        _constraint(len(cfg.points()) >= 4, "rate_points",
                    "rate curves need at least four (n, k_n) points")
    if cfg.command != "simulate" and st["name"] not in ("lindeberg", "cond17"):
        _constraint(cfg.n_rep >= 100, "n_rep_minimum", "replicated statistics need n_rep >= 100")


def bundled_configs() -> dict:
    """Names and paths of the configuration files shipped with the package."""
    from importlib import resources

    root = resources.files("randclt") / "configs"
    return {p.name[:-5]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".yaml")}


def resolve_config(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = bundled_configs()
    if str(name_or_path) in bundled:
        return bundled[str(name_or_path)]
    raise ParseError(f"no config file or bundled config named {name_or_path!r}", line=None,
                     field=None)
