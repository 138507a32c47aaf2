"""Conditional hyperparameter space: schema, parsing, cardinality, validation.

The config document is YAML whose field names mirror the accepted study
schema (``methods``, ``normalizations``, ``Optuna_parameters``,
``method_param``, ``model_param``, ...).  Ranges canonicalize to
``{low, high, step}`` triples and grid values are computed by index
arithmetic, never by accumulation, so step grids stay exact.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field, replace

import yaml

from .attribution import METHODS, NORMALIZATIONS

__all__ = [
    "UNBOUNDED",
    "ConfigError",
    "ParamDef",
    "MethodSpace",
    "TrialConfig",
    "ModelBinding",
    "SamplerConfig",
    "StudySpec",
    "parse_config",
    "serialize_config",
    "cardinality",
    "validate",
    "default_method_space",
]

ACCEPTED_SAMPLERS = ("RandomSampler", "BruteForceSampler", "TPESampler", "NSGAIISampler")
OUT_OF_SCOPE_SAMPLERS = {
    "GPSampler": "Gaussian-process sampling is deliberately deferred",
    "NSGAIIISampler": "NSGA-III adds no benefit over NSGA-II here and is out of scope",
}
GRANULARITIES = ("token", "word", "sentence")
GRID_EPS = 1e-9


class ConfigError(ValueError):
    """Configuration document violates the schema; message carries location."""


class _Unbounded:
    def __repr__(self):
        return "UNBOUNDED"


UNBOUNDED = _Unbounded()


def _canon_value(value):
    if isinstance(value, list):
        return tuple(_canon_value(v) for v in value)
    return value


@dataclass(frozen=True)
class ParamDef:
    """One tunable parameter: categorical choices or a stepped range."""

    name: str
    kind: str  # categorical | int-range | float-range
    choices: tuple = ()
    low: float | int | None = None
    high: float | int | None = None
    step: float | int | None = None

    def __post_init__(self):
        if self.kind == "categorical":
            if not self.choices:
                raise ConfigError(f"{self.name}: categorical parameter needs at least one choice")
        elif self.kind in ("int-range", "float-range"):
            if self.low is None or self.high is None or self.low > self.high:
                raise ConfigError(f"{self.name}: range needs low <= high")
            if self.step is not None and self.step <= 0:
                raise ConfigError(f"{self.name}: step must be positive")
        else:
            raise ConfigError(f"{self.name}: unknown parameter kind {self.kind!r}")

    def grid_size(self):
        if self.kind == "categorical":
            return len(self.choices)
        if self.step is None:
            return UNBOUNDED
        return int((self.high - self.low) / self.step + GRID_EPS) + 1

    def value_at(self, index: int):
        """Grid value by index; floats are rounded to keep grids exact."""
        if self.kind == "categorical":
            return self.choices[index]
        value = self.low + index * self.step
        if self.kind == "int-range":
            return int(value)
        return round(value, 10)

    def grid_values(self) -> list:
        size = self.grid_size()
        if size is UNBOUNDED:
            raise ConfigError(f"{self.name}: float range without step has no finite grid")
        return [self.value_at(i) for i in range(size)]

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return _canon_value(value) in self.choices
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            return False
        if value < self.low - GRID_EPS or value > self.high + GRID_EPS:
            return False
        if self.step is None:
            return True
        index = round((value - self.low) / self.step)
        return abs(self.low + index * self.step - value) <= GRID_EPS * max(1.0, abs(self.step))


@dataclass(frozen=True)
class MethodSpace:
    """Sub-space owned by one method, plus its pass-through flags."""

    method: str
    params: tuple[ParamDef, ...] = ()
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(names) != len(set(names)):
            raise ConfigError(f"{self.method}: duplicate parameter names {names}")

    def param(self, name: str) -> ParamDef:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)


@dataclass(frozen=True)
class TrialConfig:
    """One concrete sampled point in the conditional space."""

    method: str
    params: dict
    normalization: str = "without_normalize"
    granularity: str = "token"

    def canonical_key(self) -> str:
        def default(o):
            if isinstance(o, tuple):
                return list(o)
            raise TypeError(type(o))

        payload = {
            "method": self.method,
            "params": {k: _canon_value(v) for k, v in sorted(self.params.items())},
            "normalization": self.normalization,
            "granularity": self.granularity,
        }
        return json.dumps(payload, sort_keys=True, default=default)


@dataclass(frozen=True)
class ModelBinding:
    """Where similarity scores come from: built-in encoder or a remote URL."""

    raw: str
    embeddings_module_name: str | None = None
    reference_overrides: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        if self.raw == "reference" or self.raw.startswith("reference:"):
            return "reference"
        if self.raw.startswith(("http://", "https://")):
            return "remote"
        return "opaque"


@dataclass(frozen=True)
class SamplerConfig:
    name: str = "TPESampler"
    n_trials: int = 14
    n_startup_trials: int = 4
    seed: int = 1000


@dataclass(frozen=True)
class PruningConfig:
    enabled: bool = False
    min_peers: int = 4


@dataclass(frozen=True)
class StudySpec:
    """Fully validated study description."""

    model: ModelBinding
    methods: tuple[MethodSpace, ...]
    normalizations: tuple[str, ...] = ("without_normalize",)
    search_normalizations: bool = False
    granularity: str = "token"
    w_f: float = 0.5
    w_p: float = 0.5
    multi_objective: bool = False
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    dataset_path: str | None = None
    aopc_bins: tuple[float, ...] = (0.01, 0.05, 0.10, 0.20, 0.50)
    pruning: PruningConfig = field(default_factory=PruningConfig)
    model_param: dict = field(default_factory=dict)
    workers: int | None = None

    def method_space(self, name: str) -> MethodSpace:
        for ms in self.methods:
            if ms.method == name:
                return ms
        raise KeyError(name)

    @property
    def fixed_normalization(self) -> str:
        return self.normalizations[0]


# --------------------------------------------------------------- defaults

def default_method_space(method: str) -> MethodSpace:
    """Built-in searchable sub-space per method (used when the config gives none)."""
    cat = lambda name, *choices: ParamDef(name, "categorical", choices=tuple(_canon_value(c) for c in choices))
    table = {
        "Occlusion": MethodSpace(
            "Occlusion",
            (cat("sliding_window_shapes", [3, 1024], [5, 1024]), cat("strides", [1, 1024], [1, 512])),
        ),
        "Occlusion_word_level": MethodSpace(
            "Occlusion_word_level", (cat("regex_condition", "", ".,!?;:"),)
        ),
        "Feature Ablation": MethodSpace("Feature Ablation"),
        "Lime": MethodSpace(
            "Lime",
            (
                cat("n_samples", 80, 90),
                cat("distance_mode", "cosine", "euclidean"),
                cat("kernel_width", 450, 750),
                cat("alpha", 1e-19, 1e-25),
            ),
        ),
        "Kernel Shap": MethodSpace("Kernel Shap", (cat("n_samples", 80, 90),)),
        "Saliency": MethodSpace("Saliency", (cat("abs", True, False),)),
        "Input X Gradient": MethodSpace("Input X Gradient"),
        "Guided Backprop": MethodSpace("Guided Backprop"),
        "Integrated Gradients": MethodSpace("Integrated Gradients", (cat("n_steps", 60, 40),)),
        "Gradient Shap": MethodSpace("Gradient Shap", (cat("stdevs", 0.1, 0.9), cat("n_samples", 10, 15))),
        "GAE_Explain": MethodSpace("GAE_Explain"),
        "Random": MethodSpace("Random"),
    }
    try:
        return table[method]
    except KeyError:
        raise ConfigError(f"unknown attribution method {method!r}; known: {sorted(table)}") from None


# ----------------------------------------------------------------- parsing

def _parse_param(method: str, name: str, raw, where: str) -> ParamDef:
    if isinstance(raw, str) and raw.lstrip().startswith("("):
        try:
            raw = ast.literal_eval(raw)
        except (ValueError, SyntaxError) as exc:
            raise ConfigError(f"{where}: cannot parse range literal {raw!r}: {exc}") from exc
    if isinstance(raw, tuple):
        opts = {}
        parts = list(raw)
        if parts and isinstance(parts[-1], dict):
            opts = parts.pop()
        if len(parts) != 2:
            raise ConfigError(f"{where}: range tuple needs (low, high, ...), got {raw!r}")
        low, high = parts
        step = opts.get("step")
        unknown = set(opts) - {"step"}
        if unknown:
            raise ConfigError(f"{where}: unknown range options {sorted(unknown)}")
        return _make_range(name, low, high, step, where)
    if isinstance(raw, dict):
        unknown = set(raw) - {"low", "high", "step"}
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
        if "low" not in raw or "high" not in raw:
            raise ConfigError(f"{where}: range needs low and high")
        return _make_range(name, raw["low"], raw["high"], raw.get("step"), where)
    if isinstance(raw, list):
        if not raw:
            raise ConfigError(f"{where}: empty choice list")
        return ParamDef(name, "categorical", choices=tuple(_canon_value(v) for v in raw))
    return ParamDef(name, "categorical", choices=(_canon_value(raw),))


def _make_range(name, low, high, step, where) -> ParamDef:
    for v in (low, high, step):
        if v is not None and (not isinstance(v, (int, float)) or isinstance(v, bool)):
            raise ConfigError(f"{where}: range bounds must be numbers")
    if low > high:
        raise ConfigError(f"{where}: low {low} > high {high}")
    is_int = all(isinstance(v, int) for v in (low, high) if v is not None) and (
        step is None or isinstance(step, int)
    )
    if is_int:
        return ParamDef(name, "int-range", low=int(low), high=int(high), step=int(step) if step else 1)
    return ParamDef(name, "float-range", low=float(low), high=float(high), step=float(step) if step is not None else None)


_LIME_NESTED = ("similarity_func", "interpretable_model")
_METHOD_FLAG_KEYS = ("compute_baseline", "token_groups_for_feature_mask", "implemented_method")


def _parse_method_param(method: str, entry: dict, defaults: MethodSpace, where: str) -> MethodSpace:
    params = {p.name: p for p in defaults.params}
    flags = dict(defaults.flags)
    for key, value in entry.items():
        loc = f"{where}.{key}"
        if key == "parameters":
            if not isinstance(value, dict):
                raise ConfigError(f"{loc}: expected a mapping of parameter names")
            for pname, praw in value.items():
                params[pname] = _parse_param(method, pname, praw, f"{loc}.{pname}")
        elif key in _METHOD_FLAG_KEYS:
            flags[key] = value
        elif key in _LIME_NESTED and method == "Lime":
            # Nested captum-style blocks: function_name is stored, parameter
            # lists become searchable dimensions under their own names.
            if not isinstance(value, dict):
                raise ConfigError(f"{loc}: expected a mapping")
            for sub, subval in value.items():
                if sub == "function_name":
                    flags[f"{key}.function_name"] = subval
                elif sub == "parameters":
                    for pname, praw in subval.items():
                        params[pname] = _parse_param(method, pname, praw, f"{loc}.{sub}.{pname}")
                else:
                    raise ConfigError(f"{loc}.{sub}: unknown key")
        else:
            raise ConfigError(f"{loc}: unknown key for method {method!r}")
    return MethodSpace(method, tuple(params.values()), flags)


_TOP_KEYS = {
    "model_path",
    "embeddings_module_name",
    "dataset_path",
    "methods",
    "normalizations",
    "search_normalizations",
    "explanation_maps_token",
    "explanation_maps_word",
    "explanation_maps_sentence",
    "plausability_weight",
    "plausibility_weight",
    "faithfulness_weight",
    "multiple_object",
    "aopc_bins",
    "pruning",
    "Optuna_parameters",
    "method_param",
    "model_param",
    "workers",
}

GRADIENT_METHODS = tuple(name for name, info in METHODS.items() if info.needs_gradients or info.needs_attention)


def parse_config(document) -> StudySpec:
    """Parse and validate a study config (path, YAML string, or mapping)."""
    if isinstance(document, dict):
        doc = document
    else:
        text = document
        if hasattr(document, "read_text"):
            text = document.read_text(encoding="utf-8")
        elif isinstance(document, str) and "\n" not in document and document.endswith((".yaml", ".yml", ".json")):
            with open(document, encoding="utf-8") as fh:
                text = fh.read()
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")

    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    if "model_path" not in doc:
        raise ConfigError("missing required key model_path")
    if "methods" not in doc or not doc["methods"]:
        raise ConfigError("missing required key methods (nonempty list)")

    # Legacy alias: plausability_weight.
    if "plausibility_weight" in doc and "plausability_weight" in doc:
        if doc["plausibility_weight"] != doc["plausability_weight"]:
            raise ConfigError("plausibility_weight and legacy alias plausability_weight disagree")
    w_p = doc.get("plausibility_weight", doc.get("plausability_weight", 0.5))
    w_f = doc.get("faithfulness_weight", 0.5)
    if not (isinstance(w_p, (int, float)) and isinstance(w_f, (int, float))):
        raise ConfigError("weights must be numbers")
    if w_p < 0 or w_f < 0 or w_p + w_f == 0:
        raise ConfigError("weights must be nonnegative and not both zero")

    granularity = "token"
    flags = [
        ("explanation_maps_token", "token"),
        ("explanation_maps_word", "word"),
        ("explanation_maps_sentence", "sentence"),
    ]
    enabled = [g for key, g in flags if doc.get(key)]
    if len(enabled) > 1:
        raise ConfigError("at most one explanation_maps_* flag may be true")
    if enabled:
        granularity = enabled[0]

    normalizations = tuple(doc.get("normalizations", ["without_normalize"]))
    if not normalizations:
        raise ConfigError("normalizations must be a nonempty list")
    for n in normalizations:
        if n not in NORMALIZATIONS:
            raise ConfigError(f"normalizations: unknown normalization {n!r}; known: {list(NORMALIZATIONS)}")
    search_norm = bool(doc.get("search_normalizations", False))
    if len(normalizations) > 1 and not search_norm:
        raise ConfigError(
            "multiple normalizations listed; set search_normalizations: true or give exactly one"
        )

    optuna = doc.get("Optuna_parameters", {}) or {}
    unknown = set(optuna) - {"sampler", "n_trials", "n_startup_trials", "seed"}
    if unknown:
        raise ConfigError(f"Optuna_parameters: unknown keys {sorted(unknown)}")
    sampler_name = optuna.get("sampler", "TPESampler")
    if sampler_name in OUT_OF_SCOPE_SAMPLERS:
        raise ConfigError(f"Optuna_parameters.sampler: {sampler_name} is out of scope ({OUT_OF_SCOPE_SAMPLERS[sampler_name]})")
    if sampler_name not in ACCEPTED_SAMPLERS:
        raise ConfigError(f"Optuna_parameters.sampler: unknown sampler {sampler_name!r}; accepted: {list(ACCEPTED_SAMPLERS)}")
    sampler = SamplerConfig(
        name=sampler_name,
        n_trials=int(optuna.get("n_trials", 14)),
        n_startup_trials=int(optuna.get("n_startup_trials", 4)),
        seed=int(optuna.get("seed", 1000)),
    )
    if sampler.n_trials < 1:
        raise ConfigError("Optuna_parameters.n_trials must be >= 1")

    multi = bool(doc.get("multiple_object", False))
    if sampler.name == "NSGAIISampler" and not multi:
        raise ConfigError("NSGAIISampler is a multi-objective sampler; set multiple_object: true")

    model_param = doc.get("model_param", {}) or {}
    overrides = model_param.get("reference", {}) if isinstance(model_param, dict) else {}
    binding = ModelBinding(
        raw=str(doc["model_path"]),
        embeddings_module_name=doc.get("embeddings_module_name"),
        reference_overrides=dict(overrides),
    )

    method_param = doc.get("method_param", {}) or {}
    if not isinstance(method_param, dict):
        raise ConfigError("method_param must be a mapping")
    global_flags = {k: v for k, v in method_param.items() if k in _METHOD_FLAG_KEYS}
    unknown = set(method_param) - set(doc["methods"]) - set(_METHOD_FLAG_KEYS) - set(METHODS)
    if unknown:
        raise ConfigError(f"method_param: unknown keys {sorted(unknown)}")

    spaces = []
    seen = set()
    for name in doc["methods"]:
        if name in seen:
            raise ConfigError(f"methods: duplicate method {name!r}")
        seen.add(name)
        base = default_method_space(name)
        if global_flags:
            base = replace(base, flags={**base.flags, **global_flags})
        entry = method_param.get(name)
        if entry is not None:
            if not isinstance(entry, dict):
                raise ConfigError(f"method_param.{name}: expected a mapping")
            base = _parse_method_param(name, entry, base, f"method_param.{name}")
        spaces.append(base)

    # Static admissibility: remote bindings are perturbation-only.
    if binding.kind == "remote":
        bad = [m.method for m in spaces if m.method in GRADIENT_METHODS]
        if bad:
            raise ConfigError(
                f"methods {bad} need gradient/attention access, but remote models are perturbation-only"
            )

    bins = tuple(float(b) for b in doc.get("aopc_bins", (0.01, 0.05, 0.10, 0.20, 0.50)))
    if not bins or any(not (0 < b <= 1) for b in bins):
        raise ConfigError("aopc_bins must be fractions in (0, 1]")

    pruning_doc = doc.get("pruning", {}) or {}
    unknown = set(pruning_doc) - {"enabled", "min_peers"}
    if unknown:
        raise ConfigError(f"pruning: unknown keys {sorted(unknown)}")
    pruning = PruningConfig(
        enabled=bool(pruning_doc.get("enabled", False)),
        min_peers=int(pruning_doc.get("min_peers", 4)),
    )

    workers = doc.get("workers")
    return StudySpec(
        model=binding,
        methods=tuple(spaces),
        normalizations=normalizations,
        search_normalizations=search_norm,
        granularity=granularity,
        w_f=float(w_f),
        w_p=float(w_p),
        multi_objective=multi,
        sampler=sampler,
        dataset_path=doc.get("dataset_path"),
        aopc_bins=bins,
        pruning=pruning,
        model_param=dict(model_param),
        workers=int(workers) if workers is not None else None,
    )


def _param_to_doc(p: ParamDef):
    if p.kind == "categorical":
        if len(p.choices) == 1:
            return _value_to_doc(p.choices[0])
        return [_value_to_doc(c) for c in p.choices]
    out = {"low": p.low, "high": p.high}
    if p.step is not None:
        out["step"] = p.step
    return out


def _value_to_doc(v):
    if isinstance(v, tuple):
        return [_value_to_doc(x) for x in v]
    return v


def serialize_config(spec: StudySpec) -> str:
    """Canonical YAML form; parse(serialize(parse(x))) is a fixed point."""
    doc: dict = {"model_path": spec.model.raw}
    if spec.model.embeddings_module_name:
        doc["embeddings_module_name"] = spec.model.embeddings_module_name
    if spec.dataset_path:
        doc["dataset_path"] = spec.dataset_path
    doc["methods"] = [m.method for m in spec.methods]
    doc["normalizations"] = list(spec.normalizations)
    if spec.search_normalizations:
        doc["search_normalizations"] = True
    doc[f"explanation_maps_{spec.granularity}"] = True
    doc["plausibility_weight"] = spec.w_p
    doc["faithfulness_weight"] = spec.w_f
    doc["multiple_object"] = spec.multi_objective
    doc["aopc_bins"] = list(spec.aopc_bins)
    if spec.pruning.enabled:
        doc["pruning"] = {"enabled": True, "min_peers": spec.pruning.min_peers}
    doc["Optuna_parameters"] = {
        "sampler": spec.sampler.name,
        "n_trials": spec.sampler.n_trials,
        "n_startup_trials": spec.sampler.n_startup_trials,
        "seed": spec.sampler.seed,
    }
    method_param = {}
    for ms in spec.methods:
        entry = {}
        if ms.params:
            entry["parameters"] = {p.name: _param_to_doc(p) for p in ms.params}
        entry.update({k: v for k, v in ms.flags.items() if "." not in k})
        if entry:
            method_param[ms.method] = entry
    if method_param:
        doc["method_param"] = method_param
    if spec.model_param:
        doc["model_param"] = spec.model_param
    if spec.workers is not None:
        doc["workers"] = spec.workers
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


# -------------------------------------------------------------- cardinality

def cardinality(spec: StudySpec):
    """Number of distinct trial configs, or UNBOUNDED for stepless floats."""
    norm_factor = len(spec.normalizations) if spec.search_normalizations else 1
    total = 0
    for ms in spec.methods:
        size = 1
        for p in ms.params:
            s = p.grid_size()
            if s is UNBOUNDED:
                return UNBOUNDED
            size *= s
        total += size
    return total * norm_factor


def validate(config: TrialConfig, spec: StudySpec) -> list[str]:
    """All domain and conditionality violations (empty list means ok)."""
    violations = []
    try:
        ms = spec.method_space(config.method)
    except KeyError:
        return [f"method {config.method!r} is not part of the study space"]
    expected = {p.name for p in ms.params}
    for name in config.params:
        if name not in expected:
            violations.append(f"parameter {name!r} does not belong to method {config.method!r}")
    for p in ms.params:
        if p.name not in config.params:
            violations.append(f"missing parameter {p.name!r} for method {config.method!r}")
            continue
        value = config.params[p.name]
        if not p.contains(value):
            if p.kind == "categorical":
                violations.append(f"{p.name}={value!r} not among choices {list(p.choices)}")
            else:
                violations.append(
                    f"{p.name}={value!r} outside {p.kind} [{p.low}, {p.high}] step {p.step}"
                )
    if config.normalization not in spec.normalizations:
        violations.append(f"normalization {config.normalization!r} not among {list(spec.normalizations)}")
    if config.granularity != spec.granularity:
        violations.append(f"granularity {config.granularity!r} differs from study granularity {spec.granularity!r}")
    return violations
