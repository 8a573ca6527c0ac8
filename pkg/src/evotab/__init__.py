"""Population-based conditional tabular GAN trained against utility and disclosure risk."""

from .errors import EvotabError, MetricError, MetricWarning, ParseError, SchemaError, ShapeError, TrainingError
from .metrics import EvaluationReport, MetricSpec, Regression, evaluate, improvement_score
from .schema import ColumnSpec, Table, TableSchema, infer_schema, load_csv, parse_csv, write_csv
from .trainer import RunState, TrainConfig, synthesize, train

__all__ = [
    "ColumnSpec",
    "EvaluationReport",
    "EvotabError",
    "MetricError",
    "MetricSpec",
    "MetricWarning",
    "ParseError",
    "Regression",
    "RunState",
    "SchemaError",
    "ShapeError",
    "Table",
    "TableSchema",
    "TrainConfig",
    "TrainingError",
    "evaluate",
    "improvement_score",
    "infer_schema",
    "load_csv",
    "parse_csv",
    "synthesize",
    "train",
    "write_csv",
]
