"""Numeric design matrices from mixed-type feature frames.

Numeric and binary columns pass through, with missing entries imputed by the
training median. Categorical columns are one-hot encoded against the first
training level; a missing or unseen level maps to the dedicated ``missing``
column when one was seen in training and to the reference level otherwise.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import SchemaError

MISSING_LEVEL = "missing"


@dataclass(frozen=True)
class FeatureEncoder:
    columns: tuple          # (name, kind) in input order
    medians: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, frame, columns):
        medians, levels = {}, {}
        for name, kind in columns:
            if name not in frame.columns:
                raise SchemaError(f"missing feature column {name!r}")
            if kind == "categorical":
                raw = frame[name]
                vals = raw.where(raw.notna(), MISSING_LEVEL).astype(str)
                levels[name] = sorted(set(vals))
            else:
                x = pd.to_numeric(frame[name], errors="coerce").to_numpy(float)
                med = np.nanmedian(x) if np.isfinite(x).any() else 0.0
                medians[name] = float(med)
        return cls(tuple((n, k) for n, k in columns), medians, levels)

    @property
    def output_names(self):
        names = []
        for name, kind in self.columns:
            if kind == "categorical":
                names.extend(f"{name}={lvl}" for lvl in self.levels[name][1:])
            else:
                names.append(name)
        return names

    @property
    def input_names(self):
        return [n for n, _ in self.columns]

    def transform(self, frame):
        missing = [n for n in self.input_names if n not in frame.columns]
        if missing:
            raise SchemaError(f"feature schema mismatch, missing columns {missing}")
        blocks = []
        for name, kind in self.columns:
            if kind == "categorical":
                lv = self.levels[name]
                raw = frame[name]
                vals = raw.where(raw.notna(), MISSING_LEVEL).astype(str).to_numpy()
                known = set(lv)
                fallback = MISSING_LEVEL if MISSING_LEVEL in known else lv[0]
                vals = np.where(np.isin(vals, list(known)), vals, fallback)
                block = np.stack([(vals == l).astype(float) for l in lv[1:]], axis=1) \
                    if len(lv) > 1 else np.empty((len(vals), 0))
                blocks.append(block)
            else:
                x = pd.to_numeric(frame[name], errors="coerce").to_numpy(float)
                x = np.where(np.isfinite(x), x, self.medians[name])
                blocks.append(x[:, None])
        if not blocks:
            return np.empty((len(frame), 0))
        return np.ascontiguousarray(np.hstack(blocks))

    def to_dict(self):
        return {"columns": [list(c) for c in self.columns],
                "medians": dict(self.medians),
                "levels": {k: list(v) for k, v in self.levels.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple((n, k) for n, k in d["columns"]), dict(d["medians"]),
                   {k: list(v) for k, v in d["levels"].items()})
