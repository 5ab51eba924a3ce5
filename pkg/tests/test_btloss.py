import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seisbt.btloss import bt_loss, bt_loss_backward, cross_correlation
from seisbt.errors import UsageError


def _naive_loss(zA, zB, lam):
    # straight from the definition with explicit loops over the matrix
    B, D = zA.shape
    a = (zA - zA.mean(0)) / zA.std(0)
    b = (zB - zB.mean(0)) / zB.std(0)
    total = 0.0
    for i in range(D):
        for j in range(D):
            c = sum(a[k, i] * b[k, j] for k in range(B)) / B
            total += (1 - c) ** 2 if i == j else lam * c * c
    return total


@pytest.mark.parametrize("lam", [0.0, 5e-3, 1.0])
def test_identity_has_zero_loss(lam):
    v = bt_loss(np.eye(7), lam)
    assert v.total == 0.0
    assert v.invariance_term == 0.0 and v.redundancy_term == 0.0


def test_identical_views_give_unit_diagonal(rng):
    z = rng.normal(size=(64, 5))
    C = cross_correlation(z, z).C
    np.testing.assert_allclose(np.diag(C), 1.0, atol=1e-12)


def test_all_ones_matrix():
    v = bt_loss(np.ones((4, 4)), lam=1.0)
    assert v.invariance_term == 0.0
    assert v.redundancy_term == 12.0
    assert v.total == 12.0


def test_matches_explicit_loops(rng):
    zA, zB = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    got = bt_loss(cross_correlation(zA, zB).C, 0.3).total
    assert got == pytest.approx(_naive_loss(zA, zB, 0.3), rel=1e-12)


def test_cross_correlation_against_corrcoef(rng):
    zA, zB = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
    C = cross_correlation(zA, zB).C
    ref = np.corrcoef(zA.T, zB.T)[:3, 3:]
    np.testing.assert_allclose(C, ref, atol=1e-12)


def test_constant_column_is_floored_not_nan(rng):
    zA = rng.normal(size=(10, 3))
    zA[:, 1] = 2.5
    cc = cross_correlation(zA, rng.normal(size=(10, 3)))
    assert np.all(np.isfinite(cc.C))
    assert cc.floored_a.tolist() == [False, True, False]
    assert cc.degenerate


def test_rejects_bad_shapes(rng):
    with pytest.raises(UsageError):
        cross_correlation(rng.normal(size=(5, 3)), rng.normal(size=(5, 4)))
    with pytest.raises(UsageError):
        cross_correlation(rng.normal(size=(1, 3)), rng.normal(size=(1, 3)))
    with pytest.raises(UsageError):
        bt_loss(np.ones((2, 3)))


def test_gradient_matches_finite_differences(rng):
    zA, zB = rng.normal(size=(8, 5)), rng.normal(size=(8, 5))
    _, dA, dB = bt_loss_backward(zA, zB, 5e-3)
    eps = 1e-6
    for z, d in ((zA, dA), (zB, dB)):
        for idx in [(0, 0), (3, 2), (7, 4), (5, 1)]:
            old = z[idx]
            z[idx] = old + eps
            fp = bt_loss(cross_correlation(zA, zB).C, 5e-3).total
            z[idx] = old - eps
            fm = bt_loss(cross_correlation(zA, zB).C, 5e-3).total
            z[idx] = old
            assert d[idx] == pytest.approx((fp - fm) / (2 * eps), rel=1e-6, abs=1e-8)


def test_gradient_against_torch(rng):
    torch = pytest.importorskip("torch")
    zA, zB = rng.normal(size=(16, 6)), rng.normal(size=(16, 6))
    _, dA, dB = bt_loss_backward(zA, zB, 5e-3)
    ta = torch.tensor(zA, requires_grad=True)
    tb = torch.tensor(zB, requires_grad=True)
    a = (ta - ta.mean(0)) / ta.std(0, unbiased=False)
    b = (tb - tb.mean(0)) / tb.std(0, unbiased=False)
    C = a.T @ b / 16
    on = ((1 - torch.diagonal(C)) ** 2).sum()
    off = (C**2).sum() - (torch.diagonal(C) ** 2).sum()
    (on + 5e-3 * off).backward()
    np.testing.assert_allclose(dA, ta.grad.numpy(), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(dB, tb.grad.numpy(), rtol=1e-9, atol=1e-12)


views = st.integers(min_value=0, max_value=2**32 - 1)


@settings(max_examples=40, deadline=None)
@given(seed=views, lam=st.floats(0, 2))
def test_view_swap_invariance(seed, lam):
    r = np.random.default_rng(seed)
    zA, zB = r.normal(size=(12, 4)), r.normal(size=(12, 4))
    ab = bt_loss(cross_correlation(zA, zB).C, lam).total
    ba = bt_loss(cross_correlation(zB, zA).C, lam).total
    assert ab == pytest.approx(ba, rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=views, l1=st.floats(0, 1), l2=st.floats(1.5, 3))
def test_lambda_affinity(seed, l1, l2):
    r = np.random.default_rng(seed)
    C = cross_correlation(r.normal(size=(10, 4)), r.normal(size=(10, 4))).C
    v1, v2 = bt_loss(C, l1), bt_loss(C, l2)
    assert (v2.total - v1.total) / (l2 - l1) == pytest.approx(v1.redundancy_term, abs=1e-12 * max(1, v1.redundancy_term) * 100)


@settings(max_examples=30, deadline=None)
@given(seed=views, scale=st.floats(0.1, 10), shift=st.floats(-5, 5))
def test_loss_invariant_to_affine_rescaling_of_columns(seed, scale, shift):
    r = np.random.default_rng(seed)
    zA, zB = r.normal(size=(9, 3)), r.normal(size=(9, 3))
    base = bt_loss(cross_correlation(zA, zB).C).total
    moved = bt_loss(cross_correlation(zA * scale + shift, zB).C).total
    assert moved == pytest.approx(base, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=views)
def test_correlation_entries_bounded(seed):
    r = np.random.default_rng(seed)
    C = cross_correlation(r.normal(size=(7, 5)), r.normal(size=(7, 5))).C
    assert np.all(np.abs(C) <= 1 + 1e-12)
