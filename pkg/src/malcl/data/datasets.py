"""Labeled tabular datasets and their on-disk formats.

Two text formats are accepted:

* CSV with header ``f0,...,f{d-1},label[,month]``.
* JSON-lines, one object per sample with ``features`` (array), ``label``
  (int, or string resolved through a class map) and optional ``month``.

Parsed datasets are written to a binary cache keyed by the SHA-256 of the
source bytes, so repeated loads of large feature files skip parsing.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from malcl.errors import FormatError, SchemaError

CACHE_MAGIC = b"MALCLDS\x00"
CACHE_VERSION = 1

BOOLEAN = "boolean"
REAL = "real"


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    month: np.ndarray | None = None
    class_names: list[str] = field(default_factory=list)
    feature_kind: str = REAL

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise SchemaError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise SchemaError("labels must have one entry per sample")
        if self.month is not None:
            self.month = np.asarray(self.month, dtype=np.int64)
            if self.month.shape != self.labels.shape:
                raise SchemaError("month must be defined for every sample")
            if self.month.size and self.month.min() < 0:
                raise SchemaError("month buckets are 0-based")
        if self.labels.size and self.labels.min() < 0:
            raise SchemaError("labels must be non-negative")
        if not self.class_names:
            k = int(self.labels.max()) + 1 if self.labels.size else 0
            self.class_names = [str(i) for i in range(k)]
        if self.labels.size and self.labels.max() >= len(self.class_names):
            raise SchemaError("label outside [0, n_classes)")
        if self.feature_kind not in (BOOLEAN, REAL):
            raise SchemaError(f"unknown feature_kind {self.feature_kind!r}")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            features=self.features[indices],
            labels=self.labels[indices],
            month=None if self.month is None else self.month[indices],
            class_names=list(self.class_names),
            feature_kind=self.feature_kind,
        )

    def with_features(self, features: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            features=features,
            labels=self.labels,
            month=self.month,
            class_names=list(self.class_names),
            feature_kind=self.feature_kind,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


def infer_feature_kind(features: np.ndarray) -> str:
    if features.size and np.isin(features, (0.0, 1.0)).all():
        return BOOLEAN
    return REAL


def _resolve_label(raw, class_map: Mapping[str, int] | None, where: str) -> int:
    if isinstance(raw, bool):
        raise SchemaError(f"{where}: boolean label {raw!r}")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, float) and raw.is_integer():
        return int(raw)
    if isinstance(raw, str):
        text = raw.strip()
        if class_map is not None and text in class_map:
            return int(class_map[text])
        try:
            return int(text)
        except ValueError:
            pass
    raise SchemaError(f"{where}: unknown label {raw!r}")


def _finish(features, labels, months, class_map, feature_kind, path) -> LabeledDataset:
    if not labels:
        raise FormatError(f"{path}: no samples")
    X = np.asarray(features, dtype=np.float32)
    if not np.isfinite(X).all():
        raise FormatError(f"{path}: non-finite feature values")
    if any(m is None for m in months) and any(m is not None for m in months):
        raise SchemaError(f"{path}: month present on some rows only")
    month = None if months[0] is None else np.asarray(months, dtype=np.int64)
    if class_map:
        names = [None] * (max(class_map.values()) + 1)
        for name, idx in class_map.items():
            names[idx] = name
        names = [n if n is not None else str(i) for i, n in enumerate(names)]
        if max(labels) >= len(names):
            names += [str(i) for i in range(len(names), max(labels) + 1)]
    else:
        names = [str(i) for i in range(max(labels) + 1)]
    kind = feature_kind or infer_feature_kind(X)
    return LabeledDataset(X, np.asarray(labels), month, names, kind)


def read_csv(path, class_map=None, feature_kind=None) -> LabeledDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise FormatError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if "label" not in header:
            raise FormatError(f"{path}: header lacks a 'label' column")
        label_col = header.index("label")
        month_col = header.index("month") if "month" in header else None
        feat_cols = [i for i, h in enumerate(header) if h.startswith("f") and h[1:].isdigit()]
        if [header[i] for i in feat_cols] != [f"f{j}" for j in range(len(feat_cols))]:
            raise FormatError(f"{path}: feature columns must be f0..f{{d-1}} in order")
        features, labels, months = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                features.append([float(row[i]) for i in feat_cols])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            labels.append(_resolve_label(row[label_col], class_map, f"{path}:{lineno}"))
            months.append(int(row[month_col]) if month_col is not None else None)
    return _finish(features, labels, months, class_map, feature_kind, path)


def read_jsonlines(path, class_map=None, feature_kind=None) -> LabeledDataset:
    features, labels, months = [], [], []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc.msg}") from None
            if not isinstance(obj, dict) or "features" not in obj or "label" not in obj:
                raise FormatError(f"{path}:{lineno}: need 'features' and 'label'")
            vec = obj["features"]
            if width is None:
                width = len(vec)
            elif len(vec) != width:
                raise FormatError(f"{path}:{lineno}: ragged feature vector ({len(vec)} != {width})")
            features.append(vec)
            labels.append(_resolve_label(obj["label"], class_map, f"{path}:{lineno}"))
            months.append(obj.get("month"))
    if not labels:
        raise FormatError(f"{path}: empty file")
    return _finish(features, labels, months, class_map, feature_kind, path)


def write_csv(ds: LabeledDataset, path) -> None:
    header = [f"f{j}" for j in range(ds.n_features)] + ["label"]
    if ds.month is not None:
        header.append("month")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(ds.n_samples):
            row = [repr(float(v)) for v in ds.features[i]] + [int(ds.labels[i])]
            if ds.month is not None:
                row.append(int(ds.month[i]))
            w.writerow(row)


def write_jsonlines(ds: LabeledDataset, path) -> None:
    with open(path, "w") as fh:
        for i in range(ds.n_samples):
            obj = {"features": ds.features[i].tolist(), "label": int(ds.labels[i])}
            if ds.month is not None:
                obj["month"] = int(ds.month[i])
            fh.write(json.dumps(obj) + "\n")


def write_cache(ds: LabeledDataset, path) -> None:
    buf = io.BytesIO()
    arrays = {"features": ds.features, "labels": ds.labels}
    if ds.month is not None:
        arrays["month"] = ds.month
    np.savez(buf, **arrays)
    meta = json.dumps({"class_names": ds.class_names, "feature_kind": ds.feature_kind}).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(CACHE_VERSION.to_bytes(4, "little"))
        fh.write(len(meta).to_bytes(8, "little"))
        fh.write(meta)
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def read_cache(path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if not raw.startswith(CACHE_MAGIC):
        raise FormatError(f"{path}: not a dataset cache (bad magic)")
    off = len(CACHE_MAGIC)
    version = int.from_bytes(raw[off:off + 4], "little")
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: unsupported cache version {version}")
    n_meta = int.from_bytes(raw[off + 4:off + 12], "little")
    meta = json.loads(raw[off + 12:off + 12 + n_meta])
    with np.load(io.BytesIO(raw[off + 12 + n_meta:])) as npz:
        month = npz["month"] if "month" in npz.files else None
        return LabeledDataset(npz["features"], npz["labels"], month,
                              meta["class_names"], meta["feature_kind"])


def _sidecar_class_map(path: Path) -> dict[str, int] | None:
    side = path.with_name(path.name + ".classes.json")
    if not side.exists():
        return None
    data = json.loads(side.read_text())
    if isinstance(data, list):
        return {name: i for i, name in enumerate(data)}
    return {str(k): int(v) for k, v in data.items()}


def load_tabular(path, format: str | None = None, *, class_map: Mapping[str, int] | Sequence[str] | None = None,
                 feature_kind: str | None = None, cache_dir=None) -> LabeledDataset:
    """Load a dataset from CSV, JSON-lines or a binary cache file.

    ``format`` is inferred from the suffix when omitted. String labels are
    resolved through ``class_map`` or a ``<file>.classes.json`` sidecar.
    Text formats are cached under ``cache_dir`` (defaults to the file's
    directory) as ``<sha256>.mcds``; pass ``cache_dir=False`` to disable.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format is None:
        format = {".csv": "csv", ".jsonl": "jsonlines", ".json": "jsonlines",
                  ".mcds": "binary_cache"}.get(path.suffix.lower())
        if format is None:
            raise FormatError(f"{path}: cannot infer format from suffix")
    if format == "binary_cache":
        return read_cache(path)
    if format not in ("csv", "jsonlines"):
        raise FormatError(f"unknown format {format!r}")

    if isinstance(class_map, Sequence) and not isinstance(class_map, str):
        class_map = {name: i for i, name in enumerate(class_map)}
    if class_map is None:
        class_map = _sidecar_class_map(path)

    cache_path = None
    if cache_dir is not False:
        digest = hashlib.sha256(path.read_bytes())
        digest.update(json.dumps([class_map, feature_kind], sort_keys=True).encode())
        cache_path = Path(cache_dir or path.parent) / f"{digest.hexdigest()[:32]}.mcds"
        if cache_path.exists():
            try:
                return read_cache(cache_path)
            except FormatError:
                cache_path.unlink()

    if path.stat().st_size == 0:
        raise FormatError(f"{path}: empty file")
    reader = read_csv if format == "csv" else read_jsonlines
    ds = reader(path, class_map=class_map, feature_kind=feature_kind)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        write_cache(ds, cache_path)
    return ds
