import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from agenet import tensor as T
from agenet.evidential import (
    EPS,
    COEHead,
    GaussianHead,
    HeadOutput,
    evidence_regularizer,
    evidential_loss,
    grade_from_score,
    nig_from_raw,
    nig_nll,
    predictive_variance,
    warmup_lambda,
)
from agenet.ordinal import mine_pairs, ranking_loss, total_loss


def nig(gamma, nu, alpha, beta):
    f = lambda v: T.Tensor(np.atleast_1d(np.asarray(v, dtype=np.float64)))
    return HeadOutput(f(gamma), f(nu), f(alpha), f(beta))


def student_t_nll(y, gamma, nu, alpha, beta):
    # marginal of the NIG prior: Student-t with 2 alpha dof, scale^2 = beta (1 + nu) / (nu alpha)
    scale = math.sqrt(beta * (1 + nu) / (nu * alpha))
    return -stats.t.logpdf(y, df=2 * alpha, loc=gamma, scale=scale)


# -- positivity ----------------------------------------------------------------------


def test_zero_raw_outputs():
    out = nig_from_raw(T.Tensor(np.zeros((1, 4))))
    assert out.gamma.item() == 0
    assert out.nu.item() == pytest.approx(math.log(2) + 1e-6, abs=1e-12)
    assert out.nu.item() == pytest.approx(0.693148, abs=1e-6)
    assert out.alpha.item() == pytest.approx(1.693148, abs=1e-6)
    assert out.beta.item() == pytest.approx(0.693148, abs=1e-6)


def test_raw_limits():
    out = nig_from_raw(T.Tensor(np.array([[0.0, -1e6, 10.0, -np.inf]])))
    assert out.nu.item() == EPS
    assert out.alpha.item() == pytest.approx(math.log1p(math.exp(10)) + 1 + EPS, abs=1e-12)
    assert out.alpha.item() == pytest.approx(11.000045, abs=2e-6)
    assert out.beta.item() > 0


@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=40).filter(lambda v: len(v) % 4 == 0))
def test_positivity_for_any_raw(values):
    out = nig_from_raw(T.Tensor(np.array(values).reshape(-1, 4)))
    assert np.all(out.nu.data > 0) and np.all(out.alpha.data > 1) and np.all(out.beta.data > 0)
    assert np.all(np.isfinite(out.variance()))


def test_head_gamma_bias_and_shape(rng):
    out = COEHead(8, rng)(T.Tensor(np.zeros((3, 8))))
    np.testing.assert_array_equal(out.gamma.data, 2.0)
    assert out.nu.shape == (3,)
    g = GaussianHead(8, rng)(T.Tensor(np.zeros((3, 8))))
    assert not g.evidential and g.variance().shape == (3,)


# -- variance and NLL -------------------------------------------------------------------


def test_predictive_variance_examples():
    assert predictive_variance(1.0, 2.0, 1.0) == 2.0
    assert predictive_variance(2.0, 3.0, 4.0) == 3.0
    assert predictive_variance(1e12, 3.0, 4.0) == pytest.approx(2.0)


def test_predictive_variance_decreasing_in_nu():
    nu = np.geomspace(1e-3, 1e3, 200)
    for alpha in (1.1, 2.0, 5.0):
        for beta in (0.1, 1.0, 3.0):
            assert np.all(np.diff(predictive_variance(nu, alpha, beta)) < 0)


def test_nll_matches_student_t_oracle():
    assert nig_nll(nig(0.0, 1.0, 2.0, 1.0), [0.0]).item() == pytest.approx(student_t_nll(0, 0, 1, 2, 1), abs=1e-12)
    assert nig_nll(nig(0.0, 1.0, 2.0, 1.0), [0.0]).item() == pytest.approx(-math.log(0.375), abs=1e-12)
    assert abs(nig_nll(nig(0.0, 1.0, 2.0, 1.0), [0.0]).item() - 0.980701) <= 1e-3


@given(
    st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 50), st.floats(1.01, 50), st.floats(0.01, 50)
)
def test_nll_oracle_random(y, gamma, nu, alpha, beta):
    got = nig_nll(nig(gamma, nu, alpha, beta), [y]).item()
    assert got == pytest.approx(student_t_nll(y, gamma, nu, alpha, beta), rel=1e-9, abs=1e-9)


@given(st.floats(0.01, 10), st.floats(1.01, 10), st.floats(0.01, 10), st.floats(0.01, 3))
def test_nll_increasing_in_residual(nu, alpha, beta, r):
    p = nig(0.0, nu, alpha, beta)
    a = nig_nll(p, [r]).item()
    b = nig_nll(p, [r * math.sqrt(2)]).item()
    assert b > a
    assert a > nig_nll(p, [0.0]).item()


def test_nll_gradient_wrt_raw(rng):
    raw = T.Tensor(rng.standard_normal((6, 4)), requires_grad=True)
    y = rng.uniform(0, 4, 6)
    assert T.gradcheck(lambda: nig_nll(nig_from_raw(raw), y), {"raw": raw}, tol=1e-4).passed


# -- regularizer and warm-up ------------------------------------------------------------


def test_warmup_values():
    assert warmup_lambda(0) == 0
    assert warmup_lambda(10) == 0.015
    assert warmup_lambda(20) == 0.03 and warmup_lambda(100) == 0.03
    ts = np.linspace(0, 60, 241)
    lam = [warmup_lambda(t) for t in ts]
    assert np.all(np.diff(lam) >= 0) and max(lam) == 0.03


def test_regularizer_examples():
    assert evidence_regularizer(nig(1.3, 4.0, 3.0, 1.0), [0.2], 0).item() == 0
    assert evidence_regularizer(nig(0.0, 1.0, 2.0, 1.0), [1.0], 10).item() == pytest.approx(0.06, abs=1e-15)
    assert evidence_regularizer(nig(0.0, 1.0, 2.0, 1.0), [2.5], 25).item() == pytest.approx(0.03 * 2.5 * 4)


@given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(1.1, 5), st.floats(0, 40))
def test_regularizer_monotone(err, nu, alpha, t):
    r = lambda n, a: evidence_regularizer(nig(0.0, n, a, 1.0), [err], t).item()
    assert r(nu, alpha) <= r(nu + 0.5, alpha) and r(nu, alpha) <= r(nu, alpha + 0.5)
    assert evidence_regularizer(nig(err, nu, alpha, 1.0), [err], t).item() == 0


def test_evidential_loss_at_epoch_zero_is_nll():
    p = nig([1.0, 2.0], [1.0, 3.0], [2.0, 4.0], [1.0, 0.5])
    assert evidential_loss(p, [0.0, 4.0], 0).item() == nig_nll(p, [0.0, 4.0]).item()


# -- grading ---------------------------------------------------------------------------------


def test_grade_from_score_examples():
    np.testing.assert_array_equal(grade_from_score([2.4, 2.5, -0.3, 4.9, 0.5, 1.5, 3.5, -7, 99]), [2, 3, 0, 4, 1, 2, 4, 0, 4])
    with pytest.raises(ValueError):
        grade_from_score([1.0, np.nan])


# -- ranking ----------------------------------------------------------------------------------


def as_set(pairs):
    return {tuple(p) for p in pairs.tolist()}


def test_mine_pairs_examples():
    assert as_set(mine_pairs([3, 1, 1])) == {(0, 1), (0, 2)}
    assert len(mine_pairs([2, 2, 2])) == 0
    assert len(mine_pairs([0, 4], mixup_active=True)) == 0
    with pytest.raises(ValueError):
        mine_pairs([0.5, 2.0])


def test_mixup_batches_have_no_pairs():
    r = np.random.default_rng(7)
    for _ in range(100):
        y = r.integers(0, 5, r.integers(2, 33))
        soft = 0.7 * y + 0.3 * r.permutation(y)
        assert mine_pairs(soft, mixup_active=True).shape == (0, 2)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=30))
def test_pairs_exhaustive_and_antisymmetric(y):
    got = as_set(mine_pairs(y))
    want = {(i, j) for i in range(len(y)) for j in range(len(y)) if y[i] - y[j] >= 1}
    assert got == want
    assert not any((j, i) in got for i, j in got)


def test_ranking_loss_examples():
    s = lambda v: T.Tensor(np.array(v))
    assert ranking_loss(s([2.0, 0.5]), mine_pairs([3, 1])).item() == 0
    assert ranking_loss(s([1.0, 0.5]), mine_pairs([2, 0])).item() == pytest.approx(0.3, abs=1e-15)
    assert ranking_loss(s([1.0, 0.5]), mine_pairs([2, 2])).item() == 0
    # boundary: exactly at the margin the hinge is inactive
    assert ranking_loss(s([0.8, 0.0]), mine_pairs([1, 0])).item() == 0


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=12), st.integers(0, 2**31), st.floats(-100, 100))
def test_ranking_shift_invariance_and_zero_iff(scores, seed, c):
    y = np.random.default_rng(seed).integers(0, 5, len(scores))
    pairs = mine_pairs(y)
    base = ranking_loss(T.Tensor(np.array(scores)), pairs).item()
    assert ranking_loss(T.Tensor(np.array(scores) + c), pairs).item() == pytest.approx(base, abs=1e-9)
    s = np.array(scores)
    satisfied = all(s[i] - s[j] >= 0.8 for i, j in pairs)
    assert (base == 0) == satisfied


def test_ranking_gradient_away_from_kink(rng):
    for _ in range(20):
        y = rng.integers(0, 5, 10)
        s = rng.standard_normal(10) * 2
        pairs = mine_pairs(y)
        if len(pairs) == 0 or np.min(np.abs(0.8 - (s[pairs[:, 0]] - s[pairs[:, 1]]))) < 1e-3:
            continue
        g = T.Tensor(s, requires_grad=True)
        rep = T.gradcheck(lambda: ranking_loss(g, pairs), {"g": g}, step=1e-6, tol=1e-6)
        assert rep.passed, rep


def test_total_loss_examples():
    assert total_loss(T.Tensor(1.0), T.Tensor(0.3)).item() == pytest.approx(1.6)
    assert total_loss(T.Tensor(0.7), T.Tensor(0.0)).item() == 0.7
    assert total_loss(T.Tensor(0.7), T.Tensor(5.0), alpha_rank=0.0).item() == 0.7


@given(st.floats(-1e3, 1e3), st.floats(0, 1e3))
def test_total_loss_bit_exact(evi, rank):
    assert total_loss(T.Tensor(evi), T.Tensor(rank)).item() == evi + 2.0 * rank
