"""Columnar tables and a left-outer-join evaluator for feature specs."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd


class QueryError(ValueError):
    pass


@dataclass
class RelTable:
    """A named table: ordered columns of equal length.

    Numeric columns are int64 (never null) or float64 (NaN = null); text
    columns are object arrays with None as null.
    """

    name: str
    key: tuple[str, ...]
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    check_key: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"{self.name}: columns differ in length")
        missing = [k for k in self.key if k not in self.columns]
        if missing:
            raise ValueError(f"{self.name}: key column(s) {missing} absent")
        if self.check_key and self.key and len(self):
            codes = _composite([self.columns[k] for k in self.key])
            if len(np.unique(codes)) != len(codes):
                raise ValueError(f"{self.name}: duplicate key rows")

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def column_names(self) -> list[str]:
        return list(self.columns)

    def take(self, rows: np.ndarray) -> "RelTable":
        return RelTable(self.name, self.key, {c: v[rows] for c, v in self.columns.items()},
                        check_key=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.columns)

    @classmethod
    def from_frame(cls, name: str, df: pd.DataFrame, key: tuple[str, ...]) -> "RelTable":
        cols = {}
        for c in df.columns:
            s = df[c]
            if pd.api.types.is_integer_dtype(s.dtype):
                cols[c] = s.to_numpy(dtype=np.int64)
            elif pd.api.types.is_numeric_dtype(s.dtype):
                cols[c] = s.to_numpy(dtype=float)
            else:
                cols[c] = s.astype(object).where(s.notna(), None).to_numpy(dtype=object)
        return cls(name, tuple(key), cols)

    def write_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n", float_format="%.17g")

    @classmethod
    def read_csv(cls, path: str | Path, key: tuple[str, ...], name: str | None = None) -> "RelTable":
        df = pd.read_csv(path, keep_default_na=False, na_values=[""],
                         float_precision="round_trip")
        return cls.from_frame(name or Path(path).stem, df, key)


def _is_text(a: np.ndarray) -> bool:
    return a.dtype == object


def _null_mask(a: np.ndarray) -> np.ndarray:
    if _is_text(a):
        return pd.isna(pd.Series(a)).to_numpy()
    if a.dtype.kind == "f":
        return np.isnan(a)
    return np.zeros(len(a), dtype=bool)


def _composite(arrays: list[np.ndarray]) -> np.ndarray:
    """Joint integer codes for rows of several equal-length arrays; -1 if any is null."""
    combined = None
    for a in arrays:
        codes, uniq = pd.factorize(pd.Series(a, dtype=object if _is_text(a) else a.dtype))
        codes = codes.astype(np.int64)
        if combined is None:
            combined = codes
        else:
            null = (combined < 0) | (codes < 0)
            mixed = combined * (len(uniq) + 1) + codes
            combined, _ = pd.factorize(mixed)
            combined = combined.astype(np.int64)
            combined[null] = -1
    return combined


def gather(table: RelTable, column: str, rows: np.ndarray) -> np.ndarray:
    """table[column][rows] with rows == -1 giving null."""
    arr = table.columns[column]
    miss = rows < 0
    if not miss.any():
        return arr[rows]
    safe = np.where(miss, 0, rows)
    if _is_text(arr):
        out = arr[safe] if len(arr) else np.empty(len(rows), dtype=object)
        out = out.copy()
        out[miss] = None
        return out
    out = arr[safe].astype(float) if len(arr) else np.empty(len(rows), dtype=float)
    out[miss] = np.nan
    return out


def match_rows(left: list[np.ndarray], right: list[np.ndarray], table: str) -> np.ndarray:
    """For each left row, the index of the right row with equal keys, else -1.

    Nulls never match. The right-hand keys must identify rows uniquely.
    """
    n_left = len(left[0])
    if not len(right[0]):
        return np.full(n_left, -1, dtype=np.int64)
    parts = []
    for lv, rv in zip(left, right):
        if _is_text(lv) != _is_text(rv):
            raise QueryError(f"join key type mismatch on table {table}")
        if _is_text(lv):
            parts.append(np.concatenate([lv, rv]).astype(object))
        else:
            both = np.concatenate([lv.astype(float), rv.astype(float)])
            parts.append(both)
    codes = _composite(parts)
    lc, rc = codes[:n_left], codes[n_left:]
    valid_r = np.flatnonzero(rc >= 0)
    order = valid_r[np.argsort(rc[valid_r], kind="stable")]
    sorted_rc = rc[order]
    if len(sorted_rc) > 1 and np.any(sorted_rc[1:] == sorted_rc[:-1]):
        raise QueryError(f"join columns do not identify unique rows of {table}")
    pos = np.searchsorted(sorted_rc, lc)
    pos_c = np.minimum(pos, max(len(sorted_rc) - 1, 0))
    hit = (lc >= 0) & (len(sorted_rc) > 0) & (sorted_rc[pos_c] == lc) if len(sorted_rc) else \
        np.zeros(n_left, dtype=bool)
    return np.where(hit, order[pos_c] if len(order) else -1, -1).astype(np.int64)
