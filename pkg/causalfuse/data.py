"""
Fused main/validation datasets.

A FusedDataset is the main sample S1 with the validation subset S2 flagged
inside it. Estimators never touch the dataset directly; they read a
DatasetView, which is either the validation rows (with U) or all rows
(with U structurally absent).

CSV format: header row, columns ``id,a,y,x1..xp,u1..uq,validation[,pi]``,
UTF-8, decimal point. U cells are left empty on main-only rows. Row order
is significant: matching breaks distance ties by row index.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from enum import StrEnum
from os import PathLike

import numpy as np
import pandas as pd

from .errors import DataError, EstimationWarning

_TRUE_FLAGS = {"1", "true", "t", "yes", "y"}
_FALSE_FLAGS = {"0", "false", "f", "no", "n"}


class Design(StrEnum):
    """How the validation subset was drawn from the main sample."""

    SIMPLE_RANDOM = "simple_random"
    KNOWN_INCLUSION = "known_inclusion"


class CovariateSet(StrEnum):
    XU = "xu"
    X_ONLY = "x_only"
    NONE = "none"


@dataclass(frozen=True, slots=True)
class UnitRecord:
    """One subject of the main sample."""

    id: str
    a: int
    y: float
    x: tuple[float, ...]
    u: tuple[float, ...] | None = None
    in_validation: bool = False
    pi: float | None = None

    def __post_init__(self) -> None:
        if self.a not in (0, 1):
            raise DataError(f"unit {self.id}: treatment must be 0 or 1")
        if self.in_validation and (
            self.u is None or any(np.isnan(v) for v in self.u)
        ):
            raise DataError(
                f"incomplete confounder on validation unit {self.id}"
            )
        if self.pi is not None and not 0.0 < self.pi <= 1.0:
            raise DataError(
                f"unit {self.id}: inclusion probability must be positive "
                f"and at most 1, got {self.pi}"
            )


@dataclass(frozen=True, eq=False)
class FusedDataset:
    """
    The main sample with its embedded validation subset.

    Columns are stored as read-only numpy arrays; ``u`` holds NaN on rows
    outside the validation subset.
    """

    ids: np.ndarray
    a: np.ndarray
    y: np.ndarray
    x: np.ndarray
    u: np.ndarray
    in_validation: np.ndarray
    pi: np.ndarray | None = None
    x_names: tuple[str, ...] = ()
    u_names: tuple[str, ...] = ()
    design: Design = Design.SIMPLE_RANDOM

    def __post_init__(self) -> None:
        n = self.a.shape[0]
        if n == 0:
            raise DataError("dataset has no rows")
        if self.x.ndim != 2 or self.x.shape[0] != n:
            raise DataError("X must be an n-by-p matrix")
        if self.u.ndim != 2 or self.u.shape[0] != n:
            raise DataError("U must be an n-by-q matrix")
        if self.x.shape[1] == 0:
            raise DataError("at least one X covariate is required")
        for name, column in (
            ("ids", self.ids),
            ("y", self.y),
            ("in_validation", self.in_validation),
        ):
            if column.shape[0] != n:
                raise DataError(f"column {name} has the wrong length")
        if not np.isin(self.a, (0, 1)).all():
            raise DataError("non-binary treatment column")
        if not np.isfinite(self.y).all() or not np.isfinite(self.x).all():
            raise DataError("missing or non-finite values in Y or X")

        flagged = self.in_validation
        if not flagged.any():
            raise DataError("no rows flagged as validation units")
        if np.isnan(self.u[flagged]).any():
            bad = self.ids[flagged][np.isnan(self.u[flagged]).any(axis=1)]
            raise DataError(
                f"incomplete confounder on validation unit {bad[0]}"
            )
        arms = self.a[flagged]
        if not (arms == 1).any() or not (arms == 0).any():
            raise DataError(
                "both treatment arms must appear in the validation subset"
            )

        if self.design is Design.KNOWN_INCLUSION:
            if self.pi is None or self.pi.shape[0] != n:
                raise DataError(
                    "known-inclusion design needs a probability on every unit"
                )
            if np.isnan(self.pi).any():
                raise DataError("missing inclusion probability")
            if (self.pi <= 0.0).any() or (self.pi > 1.0).any():
                raise DataError(
                    "inclusion probability must be positive and at most 1"
                )
        elif self.pi is not None:
            raise DataError(
                "inclusion probabilities require known-inclusion regime"
            )

        for column in (self.ids, self.a, self.y, self.x, self.u):
            column.flags.writeable = False
        self.in_validation.flags.writeable = False
        if self.pi is not None:
            self.pi.flags.writeable = False

    @classmethod
    def from_arrays(
        cls,
        a,
        y,
        x,
        u,
        in_validation,
        *,
        ids=None,
        pi=None,
        x_names: tuple[str, ...] | None = None,
        u_names: tuple[str, ...] | None = None,
    ) -> FusedDataset:
        """
        Build a dataset from array-likes.

        U values on rows outside the validation subset are dropped with a
        warning. The design is KnownInclusion exactly when ``pi`` is given.
        """
        a_arr = np.asarray(a)
        if a_arr.dtype.kind == "f":
            if not np.isin(a_arr, (0.0, 1.0)).all():
                raise DataError("non-binary treatment column")
        a_arr = a_arr.astype(np.int8)
        x_arr = np.atleast_2d(np.array(x, dtype=float))
        if x_arr.shape[0] != a_arr.shape[0]:
            x_arr = x_arr.reshape(a_arr.shape[0], -1)
        u_arr = np.asarray(u, dtype=float)
        if u_arr.ndim == 1:
            u_arr = u_arr.reshape(-1, 1)
        flags = np.array(in_validation, dtype=bool)

        outside = ~flags & ~np.isnan(u_arr).all(axis=1)
        if outside.any():
            warnings.warn(
                f"ignoring U values on {int(outside.sum())} main-only rows",
                EstimationWarning,
                stacklevel=2,
            )
        u_arr = np.where(flags[:, None], u_arr, np.nan)

        n = a_arr.shape[0]
        id_arr = (
            np.array([str(i + 1) for i in range(n)], dtype=object)
            if ids is None
            else np.asarray([str(i) for i in ids], dtype=object)
        )
        pi_arr = None if pi is None else np.array(pi, dtype=float)
        return cls(
            ids=id_arr,
            a=a_arr,
            y=np.array(y, dtype=float),
            x=x_arr,
            u=u_arr,
            in_validation=flags,
            pi=pi_arr,
            x_names=x_names
            or tuple(f"x{i + 1}" for i in range(x_arr.shape[1])),
            u_names=u_names
            or tuple(f"u{i + 1}" for i in range(u_arr.shape[1])),
            design=Design.SIMPLE_RANDOM
            if pi_arr is None
            else Design.KNOWN_INCLUSION,
        )

    @classmethod
    def from_units(cls, units) -> FusedDataset:
        """Build a dataset from UnitRecords; all must share p and q."""
        units = list(units)
        if not units:
            raise DataError("dataset has no rows")
        p = len(units[0].x)
        q = next((len(r.u) for r in units if r.u is not None), 0)
        if any(len(r.x) != p for r in units):
            raise DataError("units disagree on the number of X covariates")
        if any(r.u is not None and len(r.u) != q for r in units):
            raise DataError("units disagree on the number of U covariates")
        has_pi = [r.pi is not None for r in units]
        if any(has_pi) and not all(has_pi):
            raise DataError(
                "known-inclusion design needs a probability on every unit"
            )
        nan_u = (np.nan,) * q
        return cls.from_arrays(
            a=[r.a for r in units],
            y=[r.y for r in units],
            x=[r.x for r in units],
            u=[r.u if r.u is not None else nan_u for r in units],
            in_validation=[r.in_validation for r in units],
            ids=[r.id for r in units],
            pi=[r.pi for r in units] if all(has_pi) else None,
        )

    @property
    def units(self) -> tuple[UnitRecord, ...]:
        pi = self.pi
        return tuple(
            UnitRecord(
                id=str(self.ids[i]),
                a=int(self.a[i]),
                y=float(self.y[i]),
                x=tuple(float(v) for v in self.x[i]),
                u=tuple(float(v) for v in self.u[i])
                if self.in_validation[i]
                else None,
                in_validation=bool(self.in_validation[i]),
                pi=None if pi is None else float(pi[i]),
            )
            for i in range(self.n1)
        )

    @property
    def n1(self) -> int:
        return int(self.a.shape[0])

    @property
    def n2(self) -> int:
        return int(self.in_validation.sum())

    @property
    def p(self) -> int:
        return int(self.x.shape[1])

    @property
    def q(self) -> int:
        return int(self.u.shape[1])

    @property
    def validation_rows(self) -> np.ndarray:
        return np.flatnonzero(self.in_validation)

    def equals(self, other: FusedDataset) -> bool:
        """Bit-exact comparison of every column and the design."""
        if self.design != other.design or (self.pi is None) != (
            other.pi is None
        ):
            return False
        same_pi = self.pi is None or np.array_equal(self.pi, other.pi)
        return (
            same_pi
            and self.x_names == other.x_names
            and self.u_names == other.u_names
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.u, other.u, equal_nan=True)
            and np.array_equal(self.in_validation, other.in_validation)
        )


@dataclass(frozen=True, eq=False)
class DatasetView:
    """
    Read-only slice of a FusedDataset seen by one estimator.

    ``weights`` are the survey weights of the estimator (1 for simple
    random designs and for the main view, 1/pi on the validation view of a
    known-inclusion design). ``rows`` index back into the dataset.
    """

    treatment: np.ndarray
    outcome: np.ndarray
    x: np.ndarray
    u: np.ndarray | None
    weights: np.ndarray
    rows: np.ndarray
    ids: np.ndarray
    population_size: int
    design: Design
    pi: np.ndarray | None = None
    x_names: tuple[str, ...] = field(default=())
    u_names: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return int(self.treatment.shape[0])

    @property
    def is_validation(self) -> bool:
        return self.u is not None

    @property
    def unit_weighted(self) -> bool:
        return bool((self.weights == 1.0).all())

    def covariates(self, covariate_set: CovariateSet) -> np.ndarray:
        """Return the (n, p) or (n, p+q) matrix for a covariate set."""
        if covariate_set is CovariateSet.NONE:
            return np.empty((self.n, 0))
        if covariate_set is CovariateSet.X_ONLY:
            return self.x
        if self.u is None:
            raise DataError("U is not available on the main view")
        return np.hstack([self.x, self.u])

    def covariate_names(self, covariate_set: CovariateSet) -> tuple[str, ...]:
        if covariate_set is CovariateSet.NONE:
            return ()
        if covariate_set is CovariateSet.X_ONLY:
            return self.x_names
        return self.x_names + self.u_names

    def with_weights(self, weights: np.ndarray) -> DatasetView:
        """Same rows under different survey weights."""
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.n,) or (weights <= 0).any():
            raise ValueError("weights must be positive, one per unit")
        return DatasetView(
            treatment=self.treatment,
            outcome=self.outcome,
            x=self.x,
            u=self.u,
            weights=weights,
            rows=self.rows,
            ids=self.ids,
            population_size=self.population_size,
            design=self.design,
            pi=self.pi,
            x_names=self.x_names,
            u_names=self.u_names,
        )


def validation_view(d: FusedDataset) -> DatasetView:
    """View of the n2 validation rows with U."""
    rows = d.validation_rows
    pi = None if d.pi is None else d.pi[rows]
    weights = np.ones(rows.shape[0]) if pi is None else 1.0 / pi
    return DatasetView(
        treatment=d.a[rows],
        outcome=d.y[rows],
        x=d.x[rows],
        u=d.u[rows],
        weights=weights,
        rows=rows,
        ids=d.ids[rows],
        population_size=d.n1,
        design=d.design,
        pi=pi,
        x_names=d.x_names,
        u_names=d.u_names,
    )


def main_view(d: FusedDataset) -> DatasetView:
    """View of all n1 rows; U is not reachable through it."""
    return DatasetView(
        treatment=d.a,
        outcome=d.y,
        x=d.x,
        u=None,
        weights=np.ones(d.n1),
        rows=np.arange(d.n1),
        ids=d.ids,
        population_size=d.n1,
        design=d.design,
        pi=d.pi,
        x_names=d.x_names,
    )


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSchema:
    """Maps dataset roles to CSV column names."""

    x: tuple[str, ...]
    u: tuple[str, ...]
    id: str = "id"
    treatment: str = "a"
    outcome: str = "y"
    validation: str = "validation"
    pi: str | None = None

    @classmethod
    def infer(cls, columns) -> DatasetSchema:
        """Default convention: id, a, y, x1..xp, u1..uq, validation, pi."""
        columns = list(columns)

        def numbered(prefix: str) -> tuple[str, ...]:
            pattern = re.compile(rf"{prefix}(\d+)")
            found = [c for c in columns if pattern.fullmatch(c)]
            return tuple(sorted(found, key=lambda c: int(c[len(prefix) :])))

        return cls(
            x=numbered("x"),
            u=numbered("u"),
            pi="pi" if "pi" in columns else None,
        )

    @classmethod
    def from_json(cls, path: str | PathLike) -> DatasetSchema:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        try:
            return cls(
                x=tuple(raw["x"]),
                u=tuple(raw.get("u", ())),
                id=raw.get("id", "id"),
                treatment=raw.get("treatment", "a"),
                outcome=raw.get("outcome", "y"),
                validation=raw.get("validation", "validation"),
                pi=raw.get("pi"),
            )
        except KeyError as err:
            raise DataError(f"schema is missing the {err} role") from err

    def columns(self) -> list[str]:
        cols = [self.id, self.treatment, self.outcome, *self.x, *self.u]
        cols.append(self.validation)
        if self.pi is not None:
            cols.append(self.pi)
        return cols


def _parse_flags(column: pd.Series) -> np.ndarray:
    text = column.astype(str).str.strip().str.lower()
    ok = text.isin(_TRUE_FLAGS | _FALSE_FLAGS)
    if not ok.all():
        raise DataError(
            f"validation flag must be 0/1 or true/false, got "
            f"{column[~ok].iloc[0]!r}"
        )
    return text.isin(_TRUE_FLAGS).to_numpy()


def load_csv(
    path: str | PathLike, schema: DatasetSchema | None = None
) -> FusedDataset:
    """
    Load and validate a fused dataset.

    Args:
        path: CSV file with a header row
        schema: Column roles; inferred from the header when omitted

    Returns:
        A validated FusedDataset with row order preserved

    Raises:
        DataError: Missing column, non-binary treatment, U missing on a
            validation row, inclusion probability outside (0, 1], or fewer
            than two validation rows in either arm
    """
    try:
        header = pd.read_csv(path, nrows=0, encoding="utf-8").columns
        schema = schema or DatasetSchema.infer(header)
        frame = pd.read_csv(
            path,
            dtype={c: str for c in (schema.id, schema.validation)},
            keep_default_na=False,
            na_values=[""],
            float_precision="round_trip",
            skipinitialspace=True,
            encoding="utf-8",
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise DataError(f"cannot parse {path}: {err}") from err

    if not schema.x:
        raise DataError("missing column: no X covariates found")
    missing = [c for c in schema.columns() if c not in frame.columns]
    if missing:
        raise DataError(f"missing column: {', '.join(missing)}")

    def numeric(name: str, allow_empty: bool = False) -> np.ndarray:
        column = frame[name]
        values = pd.to_numeric(column, errors="coerce")
        bad = values.isna() & column.notna()
        if bad.any():
            raise DataError(
                f"non-numeric value {column[bad].iloc[0]!r} in column {name}"
            )
        if column.isna().any() and not allow_empty:
            raise DataError(f"missing value in column {name}")
        return values.to_numpy(dtype=float)

    a = numeric(schema.treatment)
    if not np.isin(a, (0.0, 1.0)).all():
        raise DataError("non-binary treatment column")
    flags = _parse_flags(frame[schema.validation])
    x = np.column_stack([numeric(c) for c in schema.x])
    if schema.u:
        u = np.column_stack([numeric(c, allow_empty=True) for c in schema.u])
    else:
        u = np.empty((len(frame), 0))

    incomplete = flags & np.isnan(u).any(axis=1)
    if incomplete.any():
        unit = frame[schema.id].iloc[int(np.flatnonzero(incomplete)[0])]
        raise DataError(f"incomplete confounder on validation unit {unit}")

    pi = None
    if schema.pi is not None:
        pi = numeric(schema.pi, allow_empty=True)
        if np.isnan(pi).any():
            raise DataError("missing inclusion probability")
        if (pi <= 0.0).any():
            raise DataError("inclusion probability must be positive")
        if (pi > 1.0).any():
            raise DataError("inclusion probability must be at most 1")

    for arm in (1, 0):
        if np.count_nonzero(flags & (a == arm)) < 2:
            raise DataError(f"fewer than 2 validation rows in arm {arm}")

    return FusedDataset.from_arrays(
        a=a,
        y=numeric(schema.outcome),
        x=x,
        u=u,
        in_validation=flags,
        ids=frame[schema.id].fillna("").tolist(),
        pi=pi,
        x_names=schema.x,
        u_names=schema.u,
    )


def write_csv(
    d: FusedDataset,
    path: str | PathLike,
    schema: DatasetSchema | None = None,
) -> None:
    """
    Write a dataset so that ``load_csv`` restores it bit for bit.

    Covariate and confounder columns keep the dataset's own names unless
    a schema maps them elsewhere; reload with the same schema when the
    names are not numbered ``x``/``u`` columns. Floats are written with
    17 significant digits.
    """
    if schema is None:
        schema = DatasetSchema(
            x=d.x_names,
            u=d.u_names,
            pi="pi" if d.pi is not None else None,
        )
    if len(schema.x) != d.p or len(schema.u) != d.q:
        raise DataError(
            f"schema names {len(schema.x)} X and {len(schema.u)} U columns, "
            f"dataset has {d.p} and {d.q}"
        )
    if (schema.pi is None) != (d.pi is None):
        raise DataError("schema and dataset disagree on the pi column")

    columns: dict[str, object] = {
        schema.id: d.ids,
        schema.treatment: d.a.astype(int),
        schema.outcome: d.y,
    }
    for name, values in zip(schema.x, d.x.T):
        columns[name] = values
    for name, values in zip(schema.u, d.u.T):
        columns[name] = values
    columns[schema.validation] = d.in_validation.astype(int)
    if schema.pi is not None:
        columns[schema.pi] = d.pi
    pd.DataFrame(columns).to_csv(
        path, index=False, float_format="%.17g", na_rep="", encoding="utf-8"
    )
