import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from kgfair import autodiff as ad
from kgfair.errors import EmptyInput, IndexOutOfRange, NonFiniteInput, ShapeMismatch

SEEDS = range(20)
TOL = 1e-4


def T(a, grad=True):
    return ad.Tensor(np.array(a, dtype=np.float64), requires_grad=grad)


def scalarize(out: ad.Tensor, target: np.ndarray) -> ad.Tensor:
    """Quadratic readout so every output entry influences the scalar."""
    n = out.shape[0] * out.shape[1]
    return ad.mean_squared_diff_loss(ad.reshape(out, n, 1), ad.Tensor(target.reshape(n, 1)))


def random_agg(rng, n_dst, n_src, m):
    pairs = np.unique(np.column_stack([rng.integers(0, n_src, m), rng.integers(0, n_dst, m)]), axis=0)
    return ad.SparseAgg.from_pairs(n_dst, n_src, pairs[:, 0], pairs[:, 1], rng.uniform(0.2, 1.0, len(pairs)))


class TestForward:
    def test_matmul_example(self):
        out = ad.matmul(T([[1, 2], [3, 4]]), T(np.eye(2)))
        assert np.array_equal(out.data, [[1, 2], [3, 4]])

    def test_relu_example(self):
        assert np.array_equal(ad.relu(T([[-1.0, 0.0, 2.0]])).data, [[0, 0, 2]])

    def test_relu_subgradient_at_zero(self):
        x = T([[0.0, 1.0, -1.0]])
        ad.add_n([ad.relu(x)]).backward(np.ones((1, 3)))
        assert np.array_equal(x.grad, [[0, 1, 0]])

    def test_add_rowvec(self):
        out = ad.add_rowvec(T(np.zeros((3, 2))), T([[1.0, 2.0]]))
        assert np.array_equal(out.data, [[1, 2]] * 3)

    def test_no_broadcast(self):
        with pytest.raises(ShapeMismatch):
            ad.add(T(np.zeros((3, 2))), T(np.zeros((1, 2))))
        with pytest.raises(ShapeMismatch):
            ad.matmul(T(np.zeros((3, 2))), T(np.zeros((3, 2))))

    def test_non_finite(self):
        with pytest.raises(NonFiniteInput):
            T([[np.nan]])
        with pytest.raises(NonFiniteInput):
            T([[np.inf, 1.0]])

    def test_spmm_matches_dense(self):
        rng = np.random.default_rng(0)
        agg = random_agg(rng, 6, 5, 12)
        x = rng.normal(size=(5, 3))
        dense = np.zeros((6, 5))
        for s, d, c in zip(agg.src, agg.dst, agg.coeff):
            dense[d, s] += c
        assert np.allclose(ad.spmm(agg, T(x)).data, dense @ x, atol=1e-14)

    def test_spmm_empty(self):
        agg = ad.SparseAgg.from_pairs(3, 2, [], [], [])
        out = ad.spmm(agg, T(np.ones((2, 4))))
        assert out.shape == (3, 4) and not out.data.any()

    def test_spmm_bad_index(self):
        with pytest.raises(IndexOutOfRange):
            ad.SparseAgg.from_pairs(2, 2, [0, 3], [0, 1], [1.0, 1.0])
        agg = ad.SparseAgg.from_pairs(2, 2, [0], [1], [1.0])
        with pytest.raises(IndexOutOfRange):
            ad.spmm(agg, T(np.ones((3, 1))))

    def test_margin_loss_examples(self):
        # all negatives far below the positive: zero loss, zero gradient
        pos, neg = T([[5.0]]), T([[0.0, -1.0, 2.0]])
        loss = ad.margin_ranking_loss(pos, neg)
        loss.backward()
        assert loss.item() == 0.0 and not pos.grad.any() and not neg.grad.any()
        # one violation of size 1 + 0.5
        loss = ad.margin_ranking_loss(T([[0.0]]), T([[0.5, -3.0]]))
        assert loss.item() == pytest.approx(1.5)

    def test_margin_loss_kink_subgradient_zero(self):
        pos, neg = T([[1.0]]), T([[0.0]])  # violation exactly 0
        ad.margin_ranking_loss(pos, neg).backward()
        assert pos.grad[0, 0] == 0.0 and neg.grad[0, 0] == 0.0

    def test_margin_loss_empty(self):
        with pytest.raises(EmptyInput):
            ad.margin_ranking_loss(T(np.zeros((0, 1))), T(np.zeros((0, 3))))

    def test_msd_examples(self):
        assert ad.mean_squared_diff_loss(T([[1.0], [2.0]]), T([[1.0], [2.0]])).item() == 0.0
        assert ad.mean_squared_diff_loss(T([[3.0]]), T([[1.0]])).item() == 4.0
        with pytest.raises(EmptyInput):
            ad.mean_squared_diff_loss(T(np.zeros((0, 1))), T(np.zeros((0, 1))))

    def test_grad_accumulates(self):
        x = T([[2.0]])
        for _ in range(2):
            ad.mean_squared_diff_loss(x, ad.Tensor([[0.0]])).backward()
        assert x.grad[0, 0] == pytest.approx(8.0)


class TestAdam:
    def test_descends(self):
        p = {"x": np.array([[1.0]])}
        ad.adam_update(ad.AdamState(lr=0.1), p, {"x": 2 * p["x"]})
        assert p["x"][0, 0] < 1.0

    def test_first_step_size_is_lr(self):
        # bias correction makes the first step exactly lr * sign(g) (up to eps)
        p = {"x": np.array([[0.3, -2.0]])}
        ad.adam_update(ad.AdamState(lr=0.05), p, {"x": np.array([[4.0, -1e-3]])})
        assert np.allclose(p["x"], [[0.25, -1.95]], atol=1e-6)

    def test_minimizes_quadratic(self):
        p = {"x": np.array([[3.0, -4.0]])}
        st_ = ad.AdamState(lr=0.1)
        for _ in range(500):
            ad.adam_update(st_, p, {"x": 2 * p["x"]})
        assert np.abs(p["x"]).max() < 1e-2


# -- finite-difference gradient checks, 20 random instances each --------------


def gc_matmul(seed):
    rng = np.random.default_rng(seed)
    a, b = T(rng.normal(size=(3, 4))), T(rng.normal(size=(4, 2)))
    tgt = rng.normal(size=(3, 2))
    return ad.finite_difference_check(lambda a, b: scalarize(ad.matmul(a, b), tgt), [a, b])


def gc_relu(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    tgt = rng.normal(size=(4, 3))
    return ad.finite_difference_check(lambda x: scalarize(ad.relu(x), tgt), [T(x)])


def gc_add(seed):
    rng = np.random.default_rng(seed)
    x, y, b = T(rng.normal(size=(3, 2))), T(rng.normal(size=(3, 2))), T(rng.normal(size=(1, 2)))
    tgt = rng.normal(size=(3, 2))
    return ad.finite_difference_check(
        lambda x, y, b: scalarize(ad.add_rowvec(ad.add_n([x, y, x]), b), tgt), [x, y, b])


def gc_rows(seed):
    rng = np.random.default_rng(seed)
    x, y = T(rng.normal(size=(4, 2))), T(rng.normal(size=(3, 2)))
    idx = rng.integers(0, 7, size=9)
    tgt = rng.normal(size=(9, 2))

    def fn(x, y):
        z = ad.concat_rows([x, y])
        return scalarize(ad.gather_rows(ad.add(ad.slice_rows(z, 0, 7), z), idx), tgt)

    return ad.finite_difference_check(fn, [x, y])


def gc_dots(seed):
    rng = np.random.default_rng(seed)
    a, b = T(rng.normal(size=(4, 3))), T(rng.normal(size=(5, 3)))
    rows, cols = rng.integers(0, 4, 6), rng.integers(0, 5, 6)
    tgt = rng.normal(size=(6, 1))

    def fn(a, b):
        pd = ad.pair_dot(a, b, rows, cols)
        rd = ad.rowwise_dot(ad.gather_rows(a, rows), ad.gather_rows(b, cols))
        return scalarize(ad.add(pd, rd), tgt)

    return ad.finite_difference_check(fn, [a, b])


def gc_spmm(seed):
    rng = np.random.default_rng(seed)
    agg = random_agg(rng, 5, 4, 10)
    x = T(rng.normal(size=(4, 3)))
    c = T(rng.uniform(0.2, 1.0, size=(len(agg), 1)))
    tgt = rng.normal(size=(5, 3))
    return ad.finite_difference_check(lambda x, c: scalarize(ad.spmm(agg, x, c), tgt), [x, c])


def gc_edge_scale(seed):
    rng = np.random.default_rng(seed)
    agg = random_agg(rng, 5, 4, 10)
    w = T(rng.uniform(0.5, 1.5, size=(3, 1)))
    index = rng.integers(-1, 3, size=len(agg))
    x = rng.normal(size=(4, 2))
    tgt = rng.normal(size=(5, 2))
    return ad.finite_difference_check(
        lambda w: scalarize(ad.spmm(agg, ad.Tensor(x), ad.edge_scale(agg.coeff, w, index)), tgt), [w])


def gc_margin(seed):
    rng = np.random.default_rng(seed)
    pos, neg = T(rng.normal(size=(4, 1))), T(rng.normal(size=(4, 5)))
    return ad.finite_difference_check(lambda p, n: ad.margin_ranking_loss(p, n), [pos, neg])


def gc_msd(seed):
    rng = np.random.default_rng(seed)
    return ad.finite_difference_check(lambda a, b: ad.mean_squared_diff_loss(a, b),
                                      [T(rng.normal(size=(6, 1))), T(rng.normal(size=(6, 1)))])


# one finite-difference check per differentiable op; reused by the acceptance suite
OP_CHECKS = {
    "matmul": gc_matmul, "relu": gc_relu, "add": gc_add, "rows": gc_rows, "dots": gc_dots,
    "spmm": gc_spmm, "edge_scale": gc_edge_scale, "margin_loss": gc_margin, "msd_loss": gc_msd,
}


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("op", sorted(OP_CHECKS))
def test_gradcheck(op, seed):
    rep = OP_CHECKS[op](seed)
    assert rep.max_rel_error <= TOL, rep


# -- properties ---------------------------------------------------------------

finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4, 2), elements=finite))
def test_matmul_gradient_is_transpose_product(a, b):
    ta, tb = T(a), T(b)
    g = np.arange(6.0).reshape(3, 2)
    ad.matmul(ta, tb).backward(g)
    assert np.allclose(ta.grad, g @ b.T) and np.allclose(tb.grad, a.T @ g)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_spmm_linear_in_source(seed):
    rng = np.random.default_rng(seed)
    agg = random_agg(rng, 4, 3, 6)
    x, y = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    lhs = ad.spmm(agg, T(2 * x - y)).data
    rhs = 2 * ad.spmm(agg, T(x)).data - ad.spmm(agg, T(y)).data
    assert np.allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 1), elements=finite), arrays(np.float64, (5, 3), elements=finite))
def test_margin_loss_nonnegative_and_monotone(pos, neg):
    base = ad.margin_ranking_loss(T(pos), T(neg)).item()
    assert base >= 0
    assert ad.margin_ranking_loss(T(pos + 1.0), T(neg)).item() <= base + 1e-12


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 1), elements=finite), arrays(np.float64, (4, 1), elements=finite))
def test_msd_symmetric(a, b):
    assert ad.mean_squared_diff_loss(T(a), T(b)).item() == pytest.approx(
        ad.mean_squared_diff_loss(T(b), T(a)).item())
