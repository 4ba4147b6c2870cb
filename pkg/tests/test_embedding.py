import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmaf.embedding import (EmbeddingError, EmbeddingPlan, Role, build_index_template, extract_features,
                            load_features, load_plan, make_plan, save_features, save_plan, select_a,
                            stride_rule_holds)
from mmaf.raster import RasterSeries


def _brute_force(lam, p, eps, delta, N, n_test):
    feasible = [a for a in range(p + 1, N + 1)
                if N // a - n_test - 1 >= 1
                and math.exp(-lam * (a - p)) <= delta / (2 * (N // a - n_test - 1) * eps)]
    return min(feasible) if feasible else None


def test_olr_stride():
    assert select_a(0.144, 1, 3.0, 0.025, 3520, 18) == (64, 36)
    assert math.exp(-0.144 * 63) <= 0.025 / (2 * 36 * 3)
    assert not stride_rule_holds(0.144, 1, 3.0, 0.025, 63, 3520 // 63 - 19)


def test_floor_binds():
    assert select_a(100.0, 1, 3.0, 0.025, 100, 1)[0] == 2


def test_too_short():
    with pytest.raises(EmbeddingError, match="series too short for dependence decay"):
        select_a(0.01, 1, 3.0, 0.025, 50, 5)


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(0.05, 5.0), p=st.integers(1, 3), eps=st.floats(0.5, 5.0),
       delta=st.floats(0.001, 0.2), N=st.integers(50, 3000), n_test=st.integers(0, 20))
def test_select_a_matches_exhaustive_scan(lam, p, eps, delta, N, n_test):
    expected = _brute_force(lam, p, eps, delta, N, n_test)
    if expected is None or expected > N // (n_test + 2):
        with pytest.raises(EmbeddingError):
            select_a(lam, p, eps, delta, N, n_test)
    else:
        a, m = select_a(lam, p, eps, delta, N, n_test)
        assert a == expected and m == N // a - n_test - 1


def test_templates():
    assert build_index_template(5, 1.0, 1, 10) == [(-1, 4), (-1, 5), (-1, 6)]
    assert len(build_index_template(5, 4.853, 1, 10)) == 9
    assert build_index_template(3, 0.5, 1, 10) == [(-1, 3)]
    t = build_index_template(4, 1.0, 2, 10)
    assert t == sorted(t) and len(t) == 3 + 5
    with pytest.raises(EmbeddingError, match="cone exceeds raster; position excluded"):
        build_index_template(0, 1.0, 1, 10)


def test_feature_indexing_oracle():
    N, P = 30, 3
    v = np.tile(np.arange(1.0, N + 1)[:, None], (1, P))  # Z_t(x) = t with t0 = 0
    r = RasterSeries(v, np.arange(float(P)))
    plan = make_plan(1.0, 5.0, N, P, n_test=2, force_a=3)
    tr, va, te = extract_features(r, plan, 1)
    X = np.concatenate([tr.inputs, va.inputs, te.inputs])
    Y = np.concatenate([tr.targets, va.targets, te.targets])
    i = np.arange(1, N // 3 + 1)
    assert np.array_equal(X, np.tile((3 * i - 1.0)[:, None], (1, 3)))
    assert np.array_equal(Y, 3.0 * i)
    assert (len(tr), len(va), len(te)) == (7, 1, 2)
    assert va.time_indices.tolist() == [plan.validation_index] == [8]
    assert te.time_indices.tolist() == plan.test_indices == [9, 10]


def test_non_anticipation_and_spacing(gau_small):
    _, r = gau_small
    plan = make_plan(2.0, 1.0, r.N, r.P, n_test=5)
    tmpl = plan.template(3, r.P)
    assert all(dt < 0 and dt >= -plan.p for dt, _ in tmpl)
    tr, _, _ = extract_features(r, plan, 3)
    assert np.all(np.diff(tr.time_indices) == 1)
    # target of example i sits a rows after the target of example i - 1
    assert tr.targets[1] == r.values[2 * plan.a - 1, 3]


def test_gau_table_split():
    plan = make_plan(1.013, 1.896, 10 ** 6, 10, n_test=100, force_a=8)
    assert plan.m == 124899 and plan.D == 3 and plan.positions_used == list(range(1, 9))
    assert not plan.rule_satisfied


def test_plan_invariants():
    with pytest.raises(EmbeddingError):
        EmbeddingPlan(p=2, c=1.0, a=2, epsilon=3, delta=0.025, n_test=0, m=4, D=3, N=10)
    with pytest.raises(EmbeddingError):
        EmbeddingPlan(p=1, c=1.0, a=2, epsilon=3, delta=0.025, n_test=0, m=3, D=3, N=10)


def test_files_round_trip(tmp_path, gau_small):
    _, r = gau_small
    plan = make_plan(2.0, 1.0, r.N, r.P, n_test=5)
    sets = extract_features(r, plan, 2)
    save_features(tmp_path, sets)
    for fs in sets:
        back = load_features(tmp_path, 2, fs.role)
        assert np.array_equal(back.inputs, fs.inputs)
        assert np.array_equal(back.targets, fs.targets)
        assert np.array_equal(back.time_indices, fs.time_indices)
    assert load_plan(save_plan(plan, tmp_path / "plan.json")) == plan
    with pytest.raises(EmbeddingError):
        load_features(tmp_path, 99, Role.TRAIN)
