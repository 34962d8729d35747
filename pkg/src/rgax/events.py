"""Event tables: typed, immutable collections of evaluation units.

A unit is one shot, pass or injury spell. Every table carries an outcome
column, an actor identifier and a set of context features; the feature
columns are described by a :class:`FeatureSpec`.

CSV layout (UTF-8, header row, one row per event)::

    outcome, actor_id, [date, team_for, team_against, on_target,] features...

Injury spells use ``time`` and ``event`` in place of ``outcome``.
"""

import csv
import datetime as dt
import json
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError, UnknownActorError

DISCIPLINES = ("shot", "shot-on-target", "basketball-shot", "pass", "injury-spell")
KINDS = ("numeric", "categorical", "binary", "date")
MISSING_MARKERS = ("", "NA", "NaN", "nan", "null", "None")

CONTEXT_COLUMNS = {
    "date": "date",
    "team_for": "categorical",
    "team_against": "categorical",
    "on_target": "binary",
    "season": "categorical",
}


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = "numeric"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown column kind {self.kind!r} for {self.name!r}")


# Engineered shot features; names follow the event-data conventions.
SHOT_FEATURES = (
    Column("shot.type.name", "categorical"),
    Column("shot.technique.name", "categorical"),
    Column("shot.body_part.name", "categorical"),
    Column("DistToGoal"),
    Column("DistToKeeper"),
    Column("DistSGK"),
    Column("distance.ToD1"),
    Column("distance.ToD2"),
    Column("distance.ToD1.360"),
    Column("distance.ToD2.360"),
    Column("AngleToGoal"),
    Column("AngleToKeeper"),
    Column("AngleDeviation"),
    Column("angle"),
    Column("AttackersBehindBall"),
    Column("DefendersInCone"),
    Column("DefendersBehindBall"),
    Column("density"),
    Column("density.incone"),
)
END_LOCATION_FEATURES = (Column("end_dy"), Column("end_dz"))


@dataclass(frozen=True)
class FeatureSpec:
    """Column layout of an event table.

    ``features`` are the regression inputs Z. ``outcome`` and ``actor`` name
    the response and actor-id columns; ``event`` names the event flag for
    injury spells.
    """

    features: tuple
    outcome: str = "outcome"
    actor: str = "actor_id"
    event: str = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(
            c if isinstance(c, Column) else Column(*c) for c in self.features))

    @classmethod
    def shots(cls, end_location=False, extra=()):
        feats = SHOT_FEATURES + (END_LOCATION_FEATURES if end_location else ())
        return cls(feats + tuple(extra))

    @classmethod
    def injuries(cls, features):
        return cls(tuple(features), outcome="time", event="event")

    @classmethod
    def infer(cls, frame, discipline="shot"):
        """Guess a spec from a frame: every non-reserved column is a feature,
        numeric when all present values parse as floats, else categorical."""
        injury = discipline == "injury-spell"
        outcome = "time" if injury else "outcome"
        reserved = {outcome, "actor_id", "event"} | set(CONTEXT_COLUMNS)
        feats = []
        for name in frame.columns:
            if name in reserved:
                continue
            vals = [v for v in frame[name].astype(str) if v not in MISSING_MARKERS]
            try:
                np.asarray(vals, dtype=float)
                kind = "numeric"
            except ValueError:
                kind = "categorical"
            feats.append(Column(name, kind))
        return cls(tuple(feats), outcome=outcome, event="event" if injury else None)

    @property
    def feature_names(self):
        return [c.name for c in self.features]

    @property
    def model_columns(self):
        """(name, kind) pairs consumed by the design encoder."""
        return [(c.name, c.kind) for c in self.features if c.kind != "date"]

    def with_feature(self, column):
        return replace(self, features=self.features + (column,))

    def to_json(self):
        return json.dumps({"features": [[c.name, c.kind] for c in self.features],
                           "outcome": self.outcome, "actor": self.actor,
                           "event": self.event}, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(tuple(Column(n, k) for n, k in d["features"]),
                   outcome=d.get("outcome", "outcome"), actor=d.get("actor", "actor_id"),
                   event=d.get("event"))


@dataclass(frozen=True)
class EventRow:
    outcome: float
    actor_id: str
    features: dict
    date: dt.date = None
    team_for: str = None
    team_against: str = None
    on_target: bool = None
    event: int = None


@dataclass(frozen=True, eq=False)
class EventTable:
    """Immutable event table. Build with :func:`parse_event_table` or
    :meth:`from_frame`; accessors return read-only arrays or copies."""

    _frame: pd.DataFrame = field(repr=False)
    spec: FeatureSpec
    discipline: str

    @classmethod
    def from_frame(cls, frame, spec, discipline="shot"):
        if discipline not in DISCIPLINES:
            raise DataError(f"unknown discipline tag {discipline!r}; expected one of {DISCIPLINES}")
        frame = frame.reset_index(drop=True).copy()
        _validate(frame, spec, discipline)
        return cls(frame, spec, discipline)

    def __len__(self):
        return len(self._frame)

    @property
    def n_rows(self):
        return len(self._frame)

    @property
    def columns(self):
        return list(self._frame.columns)

    def column(self, name):
        if name not in self._frame.columns:
            raise SchemaError(f"no column {name!r}")
        arr = self._frame[name].to_numpy(copy=True)
        arr.flags.writeable = False
        return arr

    @property
    def outcome(self):
        return self.column(self.spec.outcome).astype(float)

    @property
    def event(self):
        if self.spec.event is None:
            raise SchemaError("table has no event-flag column")
        return self.column(self.spec.event).astype(float)

    @property
    def actor_ids(self):
        return self.column(self.spec.actor).astype(str)

    @property
    def n_positive(self):
        flag = self.event if self.spec.event else self.outcome
        return int(np.sum(flag > 0))

    @property
    def actors(self):
        return sorted(set(self.actor_ids))

    @property
    def categorical_levels(self):
        return {c.name: sorted(self._frame[c.name].dropna().astype(str).unique())
                for c in self.spec.features if c.kind == "categorical"}

    def feature_frame(self):
        return self._frame[self.spec.feature_names].copy()

    def frame(self):
        return self._frame.copy()

    def rows(self):
        fr = self._frame
        names = self.spec.feature_names
        for rec in fr.to_dict("records"):
            yield EventRow(
                outcome=float(rec[self.spec.outcome]),
                actor_id=str(rec[self.spec.actor]),
                features={k: rec[k] for k in names},
                date=rec.get("date"),
                team_for=rec.get("team_for"),
                team_against=rec.get("team_against"),
                on_target=None if "on_target" not in rec or pd.isna(rec["on_target"])
                else bool(rec["on_target"]),
                event=None if self.spec.event is None else int(rec[self.spec.event]),
            )

    def subset(self, mask):
        mask = np.asarray(mask)
        return EventTable(self._frame.loc[mask].reset_index(drop=True).copy(),
                          self.spec, self.discipline)

    def on_target_only(self):
        """Restrict a shot table to shots on target."""
        if "on_target" not in self._frame.columns:
            raise SchemaError("table has no on_target column")
        sub = self.subset(self._frame["on_target"].to_numpy(float) == 1)
        return EventTable(sub._frame, sub.spec, "shot-on-target")

    def with_column(self, column, values):
        """New table with one appended feature column."""
        values = np.asarray(values)
        if len(values) != self.n_rows:
            raise SchemaError("column length does not match table")
        fr = self._frame.copy()
        fr[column.name] = values
        spec = self.spec.with_feature(column) if column.name not in self.spec.feature_names \
            else self.spec
        return EventTable.from_frame(fr, spec, self.discipline)


def _validate(frame, spec, discipline):
    required = [spec.outcome, spec.actor] + spec.feature_names
    if spec.event:
        required.append(spec.event)
    for name in required:
        if name not in frame.columns:
            raise SchemaError(f"missing required column {name!r}")

    y = frame[spec.outcome].to_numpy(float)
    if not np.all(np.isfinite(y)):
        raise DataError(f"outcome column {spec.outcome!r} has missing or non-finite values")
    if discipline in ("shot", "shot-on-target", "pass"):
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise DataError(f"{discipline} outcomes must be binary 0/1")
    elif discipline == "basketball-shot":
        if not (np.all(np.isin(y, (0.0, 1.0))) or np.all(np.isin(y, (0.0, 2.0, 3.0)))):
            raise DataError("basketball outcomes must be 0/1 indicators or 0/2/3 score values")
    elif discipline == "injury-spell":
        if spec.event is None:
            raise SchemaError("injury-spell tables need an event column")
        if np.any(y <= 0):
            raise DataError("spell times must be strictly positive")
        if not np.all(np.isin(frame[spec.event].to_numpy(float), (0.0, 1.0))):
            raise DataError("event flags must be 0/1")

    ids = frame[spec.actor]
    if ids.isna().any() or (ids.astype(str).str.strip() == "").any():
        raise DataError("actor identifier is empty on some rows")

    for c in spec.features:
        if c.kind in ("numeric", "binary"):
            x = frame[c.name].to_numpy(float)
            if np.any(np.isinf(x)):
                raise DataError(f"non-finite value in numeric column {c.name!r}")
            if c.kind == "binary" and not np.all(np.isin(x[~np.isnan(x)], (0.0, 1.0))):
                raise DataError(f"binary column {c.name!r} has values other than 0/1")


def _parse_float(values, name):
    vals = np.asarray([("nan" if v in MISSING_MARKERS else v) for v in values], dtype=object)
    try:
        return np.asarray(vals, dtype=float)
    except ValueError:
        for i, v in enumerate(vals):
            try:
                float(v)
            except ValueError:
                raise SchemaError(
                    f"non-numeric value {v!r} in numeric column {name!r} (data row {i + 1})"
                ) from None
        raise


def parse_event_table(path, spec=None, discipline="shot"):
    """Read an event CSV into an :class:`EventTable`.

    When ``spec`` is None the feature layout is inferred from the header.
    Numeric parsing is exact (correctly rounded), so writing the table back
    with :func:`write_event_table` reproduces every numeric value bit for bit.
    """
    if discipline not in DISCIPLINES:
        raise DataError(f"unknown discipline tag {discipline!r}; expected one of {DISCIPLINES}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if spec is None:
        spec = FeatureSpec.infer(raw, discipline)
    frame = pd.DataFrame(index=raw.index)
    kinds = {c.name: c.kind for c in spec.features}
    kinds.setdefault(spec.outcome, "numeric")
    if spec.event:
        kinds.setdefault(spec.event, "numeric")
    for name, kind in CONTEXT_COLUMNS.items():
        if name in raw.columns:
            kinds.setdefault(name, kind)
    for name in [spec.outcome, spec.actor] + spec.feature_names + ([spec.event] if spec.event else []):
        if name not in raw.columns:
            raise SchemaError(f"missing required column {name!r}")
    for name in raw.columns:
        col = raw[name]
        if name == spec.actor:
            frame[name] = col.str.strip()
            continue
        kind = kinds.get(name, "categorical")
        if kind in ("numeric", "binary"):
            frame[name] = _parse_float(col.tolist(), name)
        elif kind == "date":
            frame[name] = [None if v in MISSING_MARKERS else dt.date.fromisoformat(v) for v in col]
        else:
            frame[name] = [None if v in MISSING_MARKERS else v for v in col]
    return EventTable.from_frame(frame, spec, discipline)


def _fmt(v):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (dt.date,)):
        return v.isoformat()
    return str(v)


def write_event_table(table, path):
    fr = table.frame()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fr.columns)
        for rec in fr.itertuples(index=False):
            w.writerow([_fmt(v) for v in rec])


def filter_cohort(table, min_units, min_positive):
    """Actors with at least ``min_units`` rows and ``min_positive`` positive
    outcomes (events, for injury tables)."""
    if min_units < 1 or min_positive < 0:
        raise DataError("need min_units >= 1 and min_positive >= 0")
    flag = table.event if table.spec.event else table.outcome
    df = pd.DataFrame({"a": table.actor_ids, "pos": flag > 0})
    g = df.groupby("a")["pos"].agg(["size", "sum"])
    keep = g[(g["size"] >= min_units) & (g["sum"] >= min_positive)]
    return set(keep.index)


def actor_indicator(table, actor):
    """Binary column X with X_j = 1 iff row j belongs to ``actor``."""
    ids = table.actor_ids
    x = (ids == str(actor)).astype(float)
    if not x.any():
        raise UnknownActorError(f"unknown actor id {actor!r}")
    return x
