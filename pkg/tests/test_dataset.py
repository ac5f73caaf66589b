import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fade.dataset import FOLD_NAMES, Dataset, Roles, SplitPlan, fold_sizes, from_frame, load_csv, save_csv, split
from fade.exceptions import DataValidationError
from fade.sim import DgpSpec, generate

ROLES = {"a": "a", "y": "y", "x": ["x1"]}


def write(tmp_path, frame):
    path = tmp_path / "d.csv"
    frame.to_csv(path, index=False)
    return path


def test_load_three_rows(tmp_path):
    path = write(tmp_path, pd.DataFrame({"a": [0, 1, 0], "x1": [0.1, 0.2, 0.3], "y": [0.0, 1.0, 0.5]}))
    ds = load_csv(path, ROLES, (0, 1))
    assert len(ds) == 3
    assert ds.y.tolist() == [0.0, 1.0, 0.5]
    assert ds.record(1).a == 1.0


def test_outcome_out_of_bounds(tmp_path):
    path = write(tmp_path, pd.DataFrame({"a": [0, 1], "x1": [0.0, 0.0], "y": [0.2, 1.2]}))
    with pytest.raises(DataValidationError, match="bounds"):
        load_csv(path, ROLES, (0, 1))


@pytest.mark.parametrize("col,vals", [("a", [0, 2]), ("d", [0, 0.5])])
def test_non_binary_rejected(tmp_path, col, vals):
    frame = pd.DataFrame({"a": [0, 1], "x1": [0.0, 0.0], "y": [0.2, 0.3], "d": [0, 1]})
    frame[col] = vals
    with pytest.raises(DataValidationError, match="binary"):
        load_csv(write(tmp_path, frame), {**ROLES, "d": "d"}, (0, 1))


def test_missing_values_rejected(tmp_path):
    path = write(tmp_path, pd.DataFrame({"a": [0, 1], "x1": [np.nan, 0.0], "y": [0.2, 0.3]}))
    with pytest.raises(DataValidationError, match="missing"):
        load_csv(path, ROLES, (0, 1))


def test_missing_role_column(tmp_path):
    path = write(tmp_path, pd.DataFrame({"a": [0, 1], "y": [0.2, 0.3]}))
    with pytest.raises(DataValidationError, match="missing"):
        load_csv(path, ROLES, (0, 1))


def test_role_map_validation():
    with pytest.raises(ValueError):
        Roles.from_mapping({"a": "a", "y": "a", "x": []})
    with pytest.raises(ValueError):
        Roles.from_mapping({"y": "y"})


def test_consistency_checked():
    with pytest.raises(DataValidationError, match="consistency"):
        Dataset(a=np.zeros(2), x=np.zeros((2, 0)), y=np.array([1.0, 0.0]), bounds=(0, 1),
                roles=Roles("a", "y", d="d", y0="y0", y1="y1"), d=np.array([0.0, 1.0]),
                y0=np.array([0.0, 0.0]), y1=np.array([0.0, 0.0]))


def test_dataset_is_read_only():
    ds = generate(DgpSpec(20, 1))
    with pytest.raises(ValueError):
        ds.y[0] = 0.5


def test_roundtrip_simulated(tmp_path):
    ds = generate(DgpSpec(1000, 3))
    save_csv(ds, tmp_path / "sim.csv")
    back = load_csv(tmp_path / "sim.csv", ds.roles, ds.bounds)
    assert back == ds


def test_even_split_sizes():
    ds = generate(DgpSpec(10, 0))
    parts = split(ds, SplitPlan())
    assert [len(p) for p in parts] == [2] * 5
    idx = np.concatenate([p.index for p in parts])
    assert sorted(idx.tolist()) == list(range(10))
    assert [p.fold for p in parts] == list(FOLD_NAMES)


def test_split_deterministic():
    ds = generate(DgpSpec(100, 0))
    a = split(ds, SplitPlan(seed=7))
    b = split(ds, SplitPlan(seed=7))
    assert all(np.array_equal(x.index, y.index) for x, y in zip(a, b))
    c = split(ds, SplitPlan(seed=8))
    assert not np.array_equal(a.learn.index, c.learn.index)


def test_compas_sized_split():
    sizes = fold_sizes(5188, [0.2] * 5)
    assert sizes.sum() == 5188
    assert np.all(np.abs(sizes - 5188 / 5) <= 1)


def test_plan_validation():
    with pytest.raises(DataValidationError):
        SplitPlan((0.5, 0.5, 0.5, 0, 0))
    with pytest.raises(DataValidationError):
        SplitPlan((1.2, -0.2, 0, 0, 0))


def test_empty_required_fold():
    ds = generate(DgpSpec(3, 0))
    with pytest.raises(DataValidationError, match="empty"):
        split(ds, SplitPlan())


def test_observable_plan_may_skip_nuisance_folds():
    ds = generate(DgpSpec(30, 0))
    parts = split(ds, SplitPlan((0.4, 0.0, 0.3, 0.0, 0.3)))
    assert len(parts.train_nuis) == 0 and len(parts.test_nuis) == 0
    assert sum(len(p) for p in parts) == 30


@settings(max_examples=50, deadline=None)
@given(n=st.integers(5, 300), weights=st.lists(st.floats(0.01, 1.0), min_size=5, max_size=5),
       seed=st.integers(0, 2 ** 31))
def test_partition_property(n, weights, seed):
    fractions = np.array(weights) / np.sum(weights)
    sizes = fold_sizes(n, fractions)
    assert sizes.sum() == n
    assert np.all(np.abs(sizes - fractions * n) < 1)
    if np.any(sizes == 0):
        return
    ds = generate(DgpSpec(n, 1))
    parts = split(ds, SplitPlan(tuple(fractions / fractions.sum()), seed))
    idx = np.concatenate([p.index for p in parts])
    assert np.array_equal(np.sort(idx), np.arange(n))


def test_from_frame_keeps_row_order():
    frame = pd.DataFrame({"a": [1, 0, 1], "x1": [3.0, 1.0, 2.0], "y": [0.1, 0.2, 0.3]})
    ds = from_frame(frame, ROLES, (0, 1))
    assert ds.x[:, 0].tolist() == [3.0, 1.0, 2.0]
