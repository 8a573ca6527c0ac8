"""Small synthetic census-like table with known dependencies.

* ``region``: 4 levels with shares 0.4 / 0.3 / 0.2 / 0.1
* ``tenure``: own/rent, P(own) rising with region
* ``income``: normal around a region-specific mean (multimodal overall)
* ``spend``: linear in income and tenure plus noise
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .metrics import MetricSpec
from .schema import CATEGORICAL, CONTINUOUS, ColumnSpec, Table, TableSchema, load_csv

TOY_ROWS = 5000
REGIONS = ("north", "south", "east", "west")
REGION_SHARE = (0.4, 0.3, 0.2, 0.1)
OWN_PROB = (0.2, 0.45, 0.7, 0.85)
INCOME_MEAN = (20.0, 35.0, 50.0, 65.0)
INCOME_SD = 5.0

TOY_SCHEMA = TableSchema((
    ColumnSpec("region", CATEGORICAL, REGIONS),
    ColumnSpec("tenure", CATEGORICAL, ("own", "rent")),
    ColumnSpec("income", CONTINUOUS),
    ColumnSpec("spend", CONTINUOUS),
))

TOY_SPEC = MetricSpec.from_dict({
    "cio_regressions": [
        {"target": "spend", "predictors": ["income", "tenure"]},
        {"target": "tenure", "predictors": ["region"]},
    ],
    "roc_columns": ["region", "tenure"],
    "tcap_keys": ["region"],
    "tcap_target": "tenure",
})


def make_toy(n: int = TOY_ROWS, seed: int = 0) -> Table:
    rng = np.random.default_rng(seed)
    region = rng.choice(len(REGIONS), size=n, p=REGION_SHARE)
    own = rng.random(n) < np.asarray(OWN_PROB)[region]
    tenure = np.where(own, 0, 1)
    income = np.round(rng.normal(np.asarray(INCOME_MEAN)[region], INCOME_SD), 3)
    spend = np.round(0.3 * income + 8.0 * own + rng.normal(0.0, 3.0, n), 3)
    values = np.column_stack([region, tenure, income, spend]).astype(np.float64)
    return Table(TOY_SCHEMA, values)


def load_toy() -> Table:
    """The bundled 5,000-row copy of ``make_toy()``."""
    with resources.as_file(resources.files("evotab") / "data" / "toy.csv") as path:
        return load_csv(path, TOY_SCHEMA)


def toy_spec_dict() -> dict:
    return json.loads((resources.files("evotab") / "data" / "toy_metrics.json").read_text())
