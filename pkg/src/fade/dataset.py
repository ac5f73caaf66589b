"""Tabular data ingestion, column roles and the five-way sample split.

A :class:`Dataset` is columnar: one numpy array per role.  Units carry a
binary sensitive feature ``a``, covariates ``x``, prior-predictor scores ``s``,
an optional binary decision ``d`` and a bounded outcome ``y``.  Simulated
data may also carry the oracle potential outcomes ``y0`` and ``y1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataValidationError

FOLD_NAMES = ("learn", "train_nuis", "train_target", "test_nuis", "test_target")

_CONSISTENCY_ATOL = 1e-9


@dataclass(frozen=True)
class Roles:
    """Which CSV column plays which role."""

    a: str
    y: str
    x: tuple = ()
    s: tuple = ()
    d: Optional[str] = None
    y0: Optional[str] = None
    y1: Optional[str] = None

    @classmethod
    def from_mapping(cls, roles: Mapping) -> "Roles":
        unknown = set(roles) - {"a", "y", "x", "s", "d", "y0", "y1"}
        if unknown:
            raise DataValidationError(f"unknown role(s): {sorted(unknown)}")
        for key in ("a", "y"):
            value = roles.get(key)
            if not isinstance(value, str) or not value:
                raise DataValidationError(f"role map must name exactly one {key.upper()} column")
        d = roles.get("d")
        if d is not None and not isinstance(d, str):
            raise DataValidationError("role map may name at most one D column")

        def _names(key):
            value = roles.get(key, ())
            if isinstance(value, str):
                return (value,)
            return tuple(value)

        out = cls(a=roles["a"], y=roles["y"], x=_names("x"), s=_names("s"), d=d,
                  y0=roles.get("y0"), y1=roles.get("y1"))
        names = out.columns()
        dupes = sorted({c for c in names if names.count(c) > 1})
        if dupes:
            raise DataValidationError(f"column(s) assigned to more than one role: {dupes}")
        return out

    def columns(self) -> list:
        cols = [self.a, *self.x, *self.s]
        cols += [c for c in (self.d, self.y, self.y0, self.y1) if c is not None]
        return cols

    def to_dict(self) -> dict:
        out = {"a": self.a, "y": self.y, "x": list(self.x), "s": list(self.s)}
        for key in ("d", "y0", "y1"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out


class Record(NamedTuple):
    """One unit, (A, X, S, D, Y) plus optional oracle outcomes."""

    a: int
    x: np.ndarray
    s: np.ndarray
    d: Optional[int]
    y: float
    y0: Optional[float] = None
    y1: Optional[float] = None


def _frozen(arr, dtype=float, ndim=1):
    out = np.array(arr, dtype=dtype, copy=True)
    if out.ndim != ndim:
        raise DataValidationError(f"expected a {ndim}-d array, got shape {out.shape}")
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable columnar dataset with validated invariants.

    ``index`` holds each row's position in the dataset it was split from, so
    folds can be traced back to the source file.
    """

    a: np.ndarray
    x: np.ndarray
    y: np.ndarray
    bounds: tuple
    roles: Roles
    s: np.ndarray = None
    d: Optional[np.ndarray] = None
    y0: Optional[np.ndarray] = None
    y1: Optional[np.ndarray] = None
    index: np.ndarray = None
    fold: str = field(default="full")

    def __post_init__(self):
        a = _frozen(self.a)
        n = a.shape[0]
        x = _frozen(np.reshape(self.x, (n, len(self.roles.x))) if np.size(self.x) or n == 0
                    else np.zeros((n, 0)), ndim=2)
        s = self.s
        s = _frozen(np.reshape(s, (n, len(self.roles.s))) if s is not None and (np.size(s) or n == 0)
                    else np.zeros((n, 0)), ndim=2)
        y = _frozen(self.y)
        opt = {k: (None if getattr(self, k) is None else _frozen(getattr(self, k)))
               for k in ("d", "y0", "y1")}
        index = np.arange(n) if self.index is None else self.index
        index = _frozen(index, dtype=np.int64)
        lo, hi = (float(v) for v in self.bounds)
        for name, arr in [("x", x), ("s", s), ("y", y), ("index", index),
                          *[(k, v) for k, v in opt.items() if v is not None]]:
            if arr.shape[0] != n:
                raise DataValidationError(f"column block {name!r} has {arr.shape[0]} rows, expected {n}")
        for name, arr in [("a", a), ("x", x), ("s", s), ("y", y),
                          *[(k, v) for k, v in opt.items() if v is not None]]:
            if not np.all(np.isfinite(arr)):
                raise DataValidationError(f"missing or non-finite values in {name!r}")
        if x.shape[1] != len(self.roles.x) or s.shape[1] != len(self.roles.s):
            raise DataValidationError("covariate arity does not match the role map")
        if not lo < hi:
            raise DataValidationError(f"invalid outcome bounds {self.bounds}")
        if not np.isin(a, (0.0, 1.0)).all():
            raise DataValidationError("sensitive feature A must be binary {0, 1}")
        if opt["d"] is not None and not np.isin(opt["d"], (0.0, 1.0)).all():
            raise DataValidationError("decision D must be binary {0, 1}")
        for name in ("y", "y0", "y1"):
            arr = y if name == "y" else opt[name]
            if arr is not None and ((arr < lo).any() or (arr > hi).any()):
                raise DataValidationError(f"{name} outside declared bounds [{lo}, {hi}]")
        if all(opt[k] is not None for k in ("d", "y0", "y1")):
            implied = opt["d"] * opt["y1"] + (1 - opt["d"]) * opt["y0"]
            if not np.allclose(implied, y, rtol=0, atol=_CONSISTENCY_ATOL):
                raise DataValidationError("consistency violated: y != d*y1 + (1-d)*y0")
        set_ = object.__setattr__
        set_(self, "a", a)
        set_(self, "x", x)
        set_(self, "s", s)
        set_(self, "y", y)
        set_(self, "index", index)
        set_(self, "bounds", (lo, hi))
        for k, v in opt.items():
            set_(self, k, v)

    def __len__(self):
        return self.a.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.roles != other.roles or self.bounds != other.bounds:
            return False
        for name in ("a", "x", "s", "y", "d", "y0", "y1"):
            u, v = getattr(self, name), getattr(other, name)
            if (u is None) != (v is None):
                return False
            if u is not None and not np.array_equal(u, v):
                return False
        return True

    @property
    def n(self) -> int:
        return len(self)

    @property
    def has_decision(self) -> bool:
        return self.d is not None

    @property
    def has_oracle(self) -> bool:
        return self.y0 is not None

    @property
    def w(self) -> np.ndarray:
        """Collected covariates W = (A, X, S) as an (n, 1 + p + q) matrix."""
        return np.column_stack([self.a, self.x, self.s])

    @property
    def w_names(self) -> list:
        return [self.roles.a, *self.roles.x, *self.roles.s]

    def column(self, name: str) -> np.ndarray:
        """Look up a column by its CSV name."""
        r = self.roles
        if name == r.a:
            return self.a
        if name in r.x:
            return self.x[:, r.x.index(name)]
        if name in r.s:
            return self.s[:, r.s.index(name)]
        for key in ("d", "y", "y0", "y1"):
            if getattr(r, key) == name:
                arr = getattr(self, key)
                if arr is None:
                    break
                return arr
        raise KeyError(name)

    def record(self, i: int) -> Record:
        def opt(arr, cast):
            return None if arr is None else cast(arr[i])

        return Record(int(self.a[i]), self.x[i].copy(), self.s[i].copy(), opt(self.d, int),
                      float(self.y[i]), opt(self.y0, float), opt(self.y1, float))

    def take(self, rows, fold: Optional[str] = None) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)

        def sub(arr):
            return None if arr is None else arr[rows]

        return Dataset(a=self.a[rows], x=self.x[rows], y=self.y[rows], bounds=self.bounds,
                       roles=self.roles, s=self.s[rows], d=sub(self.d), y0=sub(self.y0),
                       y1=sub(self.y1), index=self.index[rows], fold=fold or self.fold)

    def to_frame(self) -> pd.DataFrame:
        r = self.roles
        cols = {r.a: self.a.astype(int)}
        cols.update({name: self.x[:, j] for j, name in enumerate(r.x)})
        cols.update({name: self.s[:, j] for j, name in enumerate(r.s)})
        if self.d is not None:
            cols[r.d] = self.d.astype(int)
        cols[r.y] = self.y
        for key in ("y0", "y1"):
            arr = getattr(self, key)
            if arr is not None and getattr(r, key) is not None:
                cols[getattr(r, key)] = arr
        return pd.DataFrame(cols)


def from_frame(frame: pd.DataFrame, roles, bounds, fold: str = "full") -> Dataset:
    """Build a :class:`Dataset` from a DataFrame, validating roles and values."""
    if not isinstance(roles, Roles):
        roles = Roles.from_mapping(roles)
    missing = [c for c in roles.columns() if c not in frame.columns]
    if missing:
        raise DataValidationError(f"role column(s) missing from data: {missing}")
    if len(set(frame.columns)) != len(frame.columns):
        raise DataValidationError("duplicate column headers in data")
    sub = frame[roles.columns()]
    if sub.isna().any().any():
        raise DataValidationError("missing values are not supported")
    try:
        sub = sub.astype(float)
    except (TypeError, ValueError) as exc:
        raise DataValidationError(f"non-numeric role column: {exc}") from None

    def col(name):
        return None if name is None else sub[name].to_numpy()

    return Dataset(a=col(roles.a), x=sub[list(roles.x)].to_numpy(), y=col(roles.y), bounds=tuple(bounds),
                   roles=roles, s=sub[list(roles.s)].to_numpy(), d=col(roles.d),
                   y0=col(roles.y0), y1=col(roles.y1), fold=fold)


def load_csv(path, roles, bounds) -> Dataset:
    """Read a headered CSV and assign column roles.

    Row order is preserved.  Raises :class:`DataValidationError` on missing
    or duplicated role columns, values outside ``bounds``, non-binary A or D,
    and missing values.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    return from_frame(frame, roles, bounds)


def save_csv(ds: Dataset, path) -> None:
    ds.to_frame().to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class SplitPlan:
    """Fractions for the five folds, in :data:`FOLD_NAMES` order."""

    fractions: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    seed: int = 0
    cross_fit_folds: int = 1

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != len(FOLD_NAMES):
            raise DataValidationError(f"split plan needs {len(FOLD_NAMES)} fractions, got {len(fr)}")
        if any(f < 0 or not np.isfinite(f) for f in fr):
            raise DataValidationError("split fractions must be finite and nonnegative")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise DataValidationError(f"split fractions sum to {sum(fr)}, not 1")
        if int(self.cross_fit_folds) < 1:
            raise DataValidationError("cross_fit_folds must be >= 1")
        object.__setattr__(self, "fractions", fr)

    @classmethod
    def from_mapping(cls, spec: Mapping) -> "SplitPlan":
        fr = spec.get("fractions", cls.fractions)
        if isinstance(fr, Mapping):
            fr = [fr.get(name, 0.0) for name in FOLD_NAMES]
        return cls(tuple(fr), int(spec.get("seed", 0)), int(spec.get("cross_fit_folds", 1)))


class Split(NamedTuple):
    learn: Dataset
    train_nuis: Dataset
    train_target: Dataset
    test_nuis: Dataset
    test_target: Dataset


def fold_sizes(n: int, fractions: Sequence[float]) -> np.ndarray:
    """Largest-remainder apportionment of ``n`` rows; sums exactly to ``n``."""
    quotas = np.asarray(fractions, dtype=float) * n
    sizes = np.floor(quotas).astype(np.int64)
    short = n - int(sizes.sum())
    # stable sort keeps ties in fold order
    order = np.argsort(-(quotas - sizes), kind="stable")
    sizes[order[:short]] += 1
    return sizes


def split(ds: Dataset, plan: SplitPlan) -> Split:
    """Permute rows with ``plan.seed`` and slice them into the five folds."""
    sizes = fold_sizes(len(ds), plan.fractions)
    for name, frac, size in zip(FOLD_NAMES, plan.fractions, sizes):
        if frac > 0 and size == 0:
            raise DataValidationError(f"fold {name!r} is empty with n={len(ds)}")
    perm = np.random.default_rng(plan.seed).permutation(len(ds))
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    folds = [ds.take(np.sort(perm[lo:hi]), fold=name)
             for name, lo, hi in zip(FOLD_NAMES, bounds[:-1], bounds[1:])]
    return Split(*folds)
