"""Corpus records and JSON-lines ingestion."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .features import PART_NAMES, FeatureBundle


@dataclass(frozen=True, eq=False)
class Record:
    id: str
    keywords: tuple[str, ...]
    bundle: FeatureBundle

    def to_json(self) -> str:
        feats = {p: [float(x) for x in self.bundle[p]] for p in PART_NAMES}
        return json.dumps({"id": self.id, "keywords": list(self.keywords), "features": feats}, separators=(",", ":"))


def parse_record(obj: dict, line: int = 0) -> Record:
    where = f"record {line}" if line else "record"
    if not isinstance(obj, dict) or "id" not in obj or "features" not in obj:
        raise ValidationError(f"{where}: needs 'id' and 'features'")
    kws = obj.get("keywords", [])
    if not isinstance(kws, list) or not all(isinstance(k, str) for k in kws):
        raise ValidationError(f"{where}: keywords must be a list of strings")
    feats = obj["features"]
    if not isinstance(feats, dict):
        raise ValidationError(f"{where}: features must be an object")
    try:
        parts = {p: np.asarray(feats[p], dtype=np.float64) for p in PART_NAMES}
    except KeyError as exc:
        raise ValidationError(f"{where}: missing feature part {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from None
    return Record(str(obj["id"]), tuple(kws), FeatureBundle(parts))


def load_jsonl(path) -> list[Record]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {i}: {exc}") from None
            rec = parse_record(obj, i)
            if rec.id in seen:
                raise ValidationError(f"line {i}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    if not records:
        raise ValidationError(f"{path}: empty corpus")
    dims = {p: records[0].bundle[p].shape[0] for p in PART_NAMES}
    for r in records:
        for p in PART_NAMES:
            if r.bundle[p].shape[0] != dims[p]:
                raise ValidationError(f"record {r.id!r}: part {p} has dim {r.bundle[p].shape[0]}, expected {dims[p]}")
    return records


def dump_jsonl(records: list[Record], path) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")


def corpus_dims(records: list[Record]) -> dict:
    return {p: int(records[0].bundle[p].shape[0]) for p in PART_NAMES}
