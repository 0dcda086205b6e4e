"""JSON model serialization shared by every ratio estimator.

A model document is a flat JSON object with a ``method`` tag and the
method's parameter arrays. Python floats are written with their shortest
round-tripping representation, so reading a document back gives bitwise
identical parameters.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import KernelRatioModel, LogisticRatioModel
from .estimator import PPRatioModel


@dataclass(frozen=True, eq=False)
class StandardizedModel:
    """A ratio model fitted on ``(x - shift) / scale``.

    Density ratios are invariant under an invertible affine map applied to
    both samples, so standardizing before fitting does not change the target.
    """

    model: object
    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit_transform(cls, X_p, X_q):
        pooled = np.vstack([X_p, X_q])
        shift = pooled.mean(axis=0)
        scale = pooled.std(axis=0)
        scale[scale == 0] = 1.0
        return shift, scale

    @property
    def d(self) -> int:
        return self.shift.size

    @property
    def method(self) -> str:
        return _method_of(self.model)

    def transform(self, X):
        return (np.asarray(X, float) - self.shift) / self.scale

    def __call__(self, X):
        X = np.asarray(X, float)
        if X.shape[-1] != self.d:
            raise ValueError(f"expected inputs with {self.d} columns, got {X.shape[-1]}")
        return self.model(self.transform(X))

    evaluate = __call__


def _method_of(model) -> str:
    if isinstance(model, PPRatioModel):
        return "ppdre"
    if isinstance(model, StandardizedModel):
        return model.method
    return model.method


def model_to_dict(model) -> dict:
    if isinstance(model, StandardizedModel):
        doc = model_to_dict(model.model)
        doc["shift"] = model.shift.tolist()
        doc["scale"] = model.scale.tolist()
        return doc
    return model.to_dict()


def model_from_dict(doc: dict):
    method = doc.get("method")
    if method == "ppdre":
        model = PPRatioModel.from_dict(doc)
    elif method in ("ulsif", "kliep"):
        model = KernelRatioModel.from_dict(doc)
    elif method == "logistic":
        model = LogisticRatioModel.from_dict(doc)
    else:
        raise ValueError(f"unknown model method {method!r}")
    if "shift" in doc:
        return StandardizedModel(model, np.array(doc["shift"], float), np.array(doc["scale"], float))
    return model


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not a JSON model document ({exc})") from exc
    return model_from_dict(doc)
