"""JSON save/load for fitted PIT models, dispatched on the ``kind`` field."""

from __future__ import annotations

import json

from .nonparametric import MonotonePitModel
from .parametric import ParametricPitModel

FORMAT_VERSION = 1
MODEL_KINDS = {
    ParametricPitModel.kind: ParametricPitModel,
    MonotonePitModel.kind: MonotonePitModel,
}


class ModelFormatError(ValueError):
    pass


def model_to_json(model):
    doc = {"format_version": FORMAT_VERSION, **model.to_dict()}
    return json.dumps(doc, sort_keys=True, indent=1)


def model_from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {version!r}")
    kind = doc.get("kind")
    if kind not in MODEL_KINDS:
        raise ModelFormatError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
    try:
        return MODEL_KINDS[kind].from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed {kind} model document: {exc!r}") from exc


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_to_json(model))
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_json(fh.read())
