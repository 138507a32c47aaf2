"""Automatic selection and tuning of attribution methods for text-pair
similarity models, scored on fidelity and plausibility against human
rationales and searched with conditional hyperparameter optimization."""

from .attribution import AttributionMap, BaselineSpec, compute_attribution, normalize_map
from .encoder import ReferenceEncoder
from .metrics import (
    InstanceScores,
    MetricResult,
    aggregate,
    aopc_comprehensiveness,
    aopc_sufficiency,
    auprc,
    average_precision,
    combine_objective,
    score_instance,
    token_f1,
    token_iou,
)
from .models import CapabilityError, ModelCapabilities, RemoteModel, TransportError
from .report import StudyReport, parse_report, render_report
from .samplers import Exhausted, make_sampler
from .searchspace import (
    UNBOUNDED,
    ConfigError,
    MethodSpace,
    ParamDef,
    StudySpec,
    TrialConfig,
    cardinality,
    parse_config,
    serialize_config,
    validate,
)
from .study import StudyAbort, TrialRecord, best_trial, evaluate_trial, read_journal, run_study
from .textdata import (
    DISCARDED,
    PairInstance,
    RationaleMask,
    TokenizedText,
    align_rationale,
    load_dataset,
    merge_annotations,
    regroup,
    tokenize,
)

__version__ = "0.1.0"

__all__ = [
    "AttributionMap",
    "BaselineSpec",
    "CapabilityError",
    "ConfigError",
    "DISCARDED",
    "Exhausted",
    "InstanceScores",
    "MethodSpace",
    "MetricResult",
    "ModelCapabilities",
    "PairInstance",
    "ParamDef",
    "RationaleMask",
    "ReferenceEncoder",
    "RemoteModel",
    "StudyAbort",
    "StudyReport",
    "StudySpec",
    "TokenizedText",
    "TransportError",
    "TrialConfig",
    "TrialRecord",
    "UNBOUNDED",
    "aggregate",
    "align_rationale",
    "aopc_comprehensiveness",
    "aopc_sufficiency",
    "auprc",
    "average_precision",
    "best_trial",
    "cardinality",
    "combine_objective",
    "compute_attribution",
    "evaluate_trial",
    "load_dataset",
    "make_sampler",
    "merge_annotations",
    "normalize_map",
    "parse_config",
    "parse_report",
    "read_journal",
    "regroup",
    "render_report",
    "run_study",
    "score_instance",
    "serialize_config",
    "token_f1",
    "token_iou",
    "tokenize",
    "validate",
]
