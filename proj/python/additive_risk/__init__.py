"""Two-layer additive risk models with rule and case explanations."""

import json

from ._core import ArmError, Engine, evaluate, fico_schema, generate_csv, model_hash, scoring_table
from ._core import train as _train

__all__ = [
    "ArmError",
    "Engine",
    "Explainer",
    "evaluate",
    "fico_schema",
    "generate_csv",
    "model_hash",
    "scoring_table",
    "train",
]


def train(csv_path, config=None, schema=None):
    """Fit a model on a CSV file. Returns (model_json, report_dict)."""
    model_json, report = _train(
        csv_path,
        json.dumps(config or {}),
        json.dumps(schema) if schema else "",
    )
    return model_json, json.loads(report)


class Explainer:
    """Python view of the service handlers.

    Feature maps use None or "missing" for missing values.
    """

    def __init__(self, model_json, data_csv=None, db_path=None):
        self._engine = Engine(model_json, data_csv, db_path)

    @property
    def model_hash(self):
        return self._engine.model_hash

    def _call(self, route, features=None):
        body = json.dumps({"features": features}) if features is not None else ""
        status, payload = self._engine.call(route, body)
        return status, json.loads(payload) if payload else None

    def model(self):
        return self._call("model")[1]

    def predict(self, features):
        return self._call("predict", features)

    def explain(self, features):
        return self._call("explain", features)

    def cases(self, features):
        return self._call("cases", features)
