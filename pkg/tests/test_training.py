import numpy as np
import pytest
from oracles import gradient_check, smooth_params

from dronecharge.auction import spa0_batch
from dronecharge.mononet import MonoNetParams, NetworkShape, init_xavier
from dronecharge.training import (
    AdamState,
    BidDistribution,
    DataSplit,
    TrainConfig,
    adam_step,
    generate_profiles,
    grad,
    iterations_to_within,
    loss,
    loss_and_grad,
    revenue_terms,
    stream_rng,
    train,
    warm_start,
    write_trace_csv,
)


def cfg(**kw):
    base = dict(l2_coeff=0.0, k=3.0, epochs=1, num_profiles=1000)
    base.update(kw)
    return TrainConfig(**base)


def zero_grads(params):
    return MonoNetParams(*(np.zeros_like(a) for a in params.arrays()))


class TestTrainConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.l2_coeff, c.weight_floor, c.train_fraction) == (1e-4, 1e-3, 1e-4, 0.7)

    @pytest.mark.parametrize("bad", [dict(learning_rate=0), dict(k=-1), dict(train_fraction=1.0),
                                     dict(minibatch_size=0), dict(l2_coeff=-1), dict(loss_payment="soft")])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_dict_round_trip(self):
        c = TrainConfig(k=5.0, seed=3)
        assert TrainConfig.from_dict(c.to_dict()) == c
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"bogus": 1})


class TestGenerateProfiles:
    def test_split_sizes(self):
        d = generate_profiles(BidDistribution("uniform", 0, 10), 5, 100_000, seed=0)
        assert d.train.shape == (70_000, 5) and d.test.shape == (30_000, 5)
        assert d.train.min() >= 0 and d.train.max() <= 10

    def test_valuation_range(self):
        d = generate_profiles(BidDistribution("valuation", 5, 10, charge=10), 4, 5000, seed=1)
        bids = np.concatenate([d.train, d.test])
        assert bids.min() >= 1.0 and bids.max() <= 2.0

    def test_deterministic(self):
        a = generate_profiles(BidDistribution(), 3, 1000, seed=4)
        b = generate_profiles(BidDistribution(), 3, 1000, seed=4)
        np.testing.assert_array_equal(a.train, b.train)
        np.testing.assert_array_equal(a.test, b.test)
        c = generate_profiles(BidDistribution(), 3, 1000, seed=5)
        assert not np.array_equal(a.train, c.train)

    def test_invalid(self):
        with pytest.raises(ValueError):
            BidDistribution("uniform", 5, 1)
        with pytest.raises(ValueError):
            BidDistribution("valuation", 0, 5)
        with pytest.raises(ValueError):
            generate_profiles(BidDistribution(), 1, 100, seed=0)

    def test_streams_independent(self):
        assert stream_rng(0, "data").random() != stream_rng(0, "init").random()


class TestLoss:
    def test_revenue_term_arithmetic(self):
        # k -> 0 makes g uniform; identity network with bids [4, 2] gives raw
        # inverse payments [2, 4], so the revenue term is -(0.5*2 + 0.5*4) = -3
        p = MonoNetParams.identity(NetworkShape(2, 1, 1))
        value = loss(p, np.array([[4.0, 2.0]]), cfg(k=1e-12, loss_payment="inverse"))
        assert value == pytest.approx(-3.0, abs=1e-9)

    def test_loss_is_soft_revenue(self):
        rng = np.random.default_rng(5)
        p = smooth_params(rng, 4, 3, 4)
        batch = rng.uniform(0, 10, (32, 4))
        g, pay = revenue_terms(p, batch, 3.0)
        assert loss(p, batch, cfg(loss_payment="inverse")) == pytest.approx(-np.mean(np.sum(g * pay, 1)))

    def test_identity_large_k_is_spa0(self):
        p = MonoNetParams.identity(NetworkShape(3, 1, 1))
        batch = np.array([[3.0, 7.0, 5.0]])
        for mode in ("ir", "inverse"):
            assert loss(p, batch, cfg(k=50.0, loss_payment=mode)) == pytest.approx(-5.0, abs=1e-6)

    def test_soft_terms(self):
        p = MonoNetParams.identity(NetworkShape(2, 1, 1))
        g, pay = revenue_terms(p, np.array([[2.0, 4.0]]), 1.0)
        np.testing.assert_allclose(pay, [[4.0, 2.0]])
        np.testing.assert_allclose(g.sum(), 1.0)

    def test_l2_term(self):
        p = MonoNetParams(np.full((2, 1, 1), 1e-4), np.zeros((2, 1, 1)), np.full((1, 1), 1e-4), np.zeros((1, 1)))
        base = loss(p, np.zeros((1, 2)), cfg(l2_coeff=0.001))
        p.bidder_w[0, 0, 0] = 2.0
        # zero bids earn nothing, so only the penalty moves
        assert loss(p, np.zeros((1, 2)), cfg(l2_coeff=0.001)) - base == pytest.approx(0.004 - 1e-11, abs=1e-15)

    def test_empty_batch(self):
        p = MonoNetParams.identity(NetworkShape(2, 1, 1))
        with pytest.raises(ValueError):
            loss(p, np.zeros((0, 2)), cfg())

    def test_ir_mode_never_counts_more_than_bids(self):
        rng = np.random.default_rng(0)
        p = smooth_params(rng, 4, 3, 4)
        batch = rng.uniform(0, 10, (64, 4))
        ir = loss(p, batch, cfg(loss_payment="ir"))
        raw = loss(p, batch, cfg(loss_payment="inverse"))
        # losers' raw inverse lies above their bid, so the raw objective is larger
        assert -raw > -ir
        assert -ir <= batch.sum(axis=1).mean()


class TestGradient:
    @pytest.mark.parametrize("mode", ["ir", "inverse"])
    def test_matches_finite_differences(self, mode):
        rng = np.random.default_rng(1)
        checked = 0
        attempts = 0
        while checked < 15 and attempts < 100:
            attempts += 1
            p = smooth_params(rng, 3, 3, 4)
            batch = rng.uniform(0, 10, (4, 3))
            err = gradient_check(p, batch, cfg(l2_coeff=1e-3, loss_payment=mode))
            if err is None:
                continue
            checked += 1
            assert err <= 1e-4
        assert checked == 15

    def test_dead_relu_leaves_only_l2(self):
        # zero bids with zero biases: every virtual bid is 0, the ReLU and the
        # payment clip sit on their boundaries and the payments are 0
        shape = NetworkShape(3, 2, 3)
        p = init_xavier(shape, seed=2)
        c = cfg(l2_coeff=1e-3)
        value, g = loss_and_grad(p, np.zeros((5, 3)), c)
        assert value == pytest.approx(c.l2_coeff * sum(float(np.sum(a * a)) for a in p.arrays()))
        for ga, a in zip(g.arrays(), p.arrays()):
            np.testing.assert_allclose(ga, 2 * c.l2_coeff * a, rtol=0, atol=1e-15)

    def test_shared_weight_gets_forward_and_inverse_contributions(self):
        # a single shared unit sits on both the virtual-bid path and the payment path
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 5:
            p = smooth_params(rng, 3, 2, 3)
            p.shared_w = rng.uniform(0.5, 1.5, (1, 1))
            p.shared_b = rng.uniform(0, 1, (1, 1))
            p.bidder_w = p.bidder_w[:, :1, :1].copy()
            p.bidder_b = p.bidder_b[:, :1, :1].copy()
            batch = rng.uniform(0, 10, (6, 3))
            c = cfg(l2_coeff=0.0, loss_payment="inverse")
            err = gradient_check(p, batch, c)
            if err is None:
                continue
            checked += 1
            assert err <= 1e-4
            # one-sided difference of the full composite, independent of the stencil above
            h = 1e-6
            plus = p.copy()
            plus.shared_w[0, 0] += h
            fd = (loss(plus, batch, c) - loss(p, batch, c)) / h
            assert grad(p, batch, c).shared_w[0, 0] == pytest.approx(fd, rel=1e-3)


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = init_xavier(NetworkShape(3, 2, 2), seed=0)
        before = p.copy()
        adam_step(p, AdamState.zeros_like(p), zero_grads(p), TrainConfig())
        assert p.equals(before)

    def test_first_step_is_learning_rate(self):
        p = MonoNetParams(np.full((2, 1, 1), 0.5), np.full((2, 1, 1), 0.5), np.full((1, 1), 0.5),
                          np.full((1, 1), 0.5))
        g = zero_grads(p)
        g.bidder_w[0, 0, 0] = 1.0
        state = AdamState.zeros_like(p)
        adam_step(p, state, g, TrainConfig(learning_rate=1e-4))
        assert p.bidder_w[0, 0, 0] == pytest.approx(0.5 - 1e-4, abs=1e-10)
        assert p.bidder_w[1, 0, 0] == 0.5
        assert state.step_count == 1

    def test_clips_after_step(self):
        p = MonoNetParams(np.full((2, 1, 1), 1e-4), np.zeros((2, 1, 1)), np.full((1, 1), 1e-4), np.zeros((1, 1)))
        g = MonoNetParams(*(np.ones_like(a) for a in p.arrays()))
        adam_step(p, AdamState.zeros_like(p), g, TrainConfig(learning_rate=0.1))
        assert p.satisfies_floor(1e-4)
        assert p.bidder_w.min() == 1e-4 and p.bidder_b.max() == 0.0

    def test_shape_mismatch(self):
        p = init_xavier(NetworkShape(2, 1, 1), seed=0)
        q = init_xavier(NetworkShape(3, 1, 1), seed=0)
        with pytest.raises(ValueError):
            adam_step(p, AdamState.zeros_like(p), q, TrainConfig())


@pytest.fixture(scope="module")
def small_run():
    dist = BidDistribution("uniform", 0, 10)
    c = TrainConfig(num_profiles=4000, epochs=3, eval_every=10, seed=7)
    data = generate_profiles(dist, 3, c.num_profiles, c.seed)
    return c, data, dist, train(c, data, dist)


class TestTrain:
    def test_trace_and_floor(self, small_run):
        c, data, _, res = small_run
        assert res.trace[0]["iteration"] == 0
        its, rev = res.revenues()
        assert (np.diff(its) > 0).all()
        assert res.params.satisfies_floor(c.weight_floor)
        spa = float(spa0_batch(data.test).payment.mean())
        assert res.trace[-1]["spa0_revenue"] == spa
        # known law, so the benchmark column is filled
        assert np.isfinite(res.trace[-1]["oracle_revenue"])

    def test_revenue_improves(self, small_run):
        _, _, _, res = small_run
        assert res.final_revenue > res.trace[0]["test_revenue"]

    def test_deterministic(self, small_run, tmp_path):
        c, data, dist, res = small_run
        again = train(c, data, dist)
        assert again.params.equals(res.params)
        # the first row has a NaN loss, so compare the serialised traces
        write_trace_csv(tmp_path / "a.csv", res.trace)
        write_trace_csv(tmp_path / "b.csv", again.trace)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_warm_start_leaves_input_untouched(self, small_run):
        c, data, dist, res = small_run
        before = res.params.copy()
        warm = warm_start(res.params, TrainConfig(num_profiles=4000, epochs=1, seed=1), data, dist)
        assert res.params.equals(before)
        # same distribution: already within 5% of where it ends
        assert abs(warm.trace[0]["test_revenue"] - warm.final_revenue) <= 0.05 * warm.final_revenue

    def test_warm_start_shape_check(self, small_run):
        _, data, _, res = small_run
        with pytest.raises(ValueError):
            warm_start(res.params, TrainConfig(num_groups=2, epochs=1), data)

    def test_bidder_count_mismatch(self):
        data = DataSplit(np.ones((10, 4)), np.ones((5, 4)))
        with pytest.raises(ValueError):
            warm_start(init_xavier(NetworkShape(3, 5, 10), 0), TrainConfig(epochs=1), data)

    def test_trace_csv(self, small_run, tmp_path):
        _, _, _, res = small_run
        write_trace_csv(tmp_path / "t.csv", res.trace)
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "epoch,iteration,train_loss,test_revenue,spa0_revenue,oracle_revenue"
        assert len(lines) == len(res.trace) + 1


class TestIterationsToWithin:
    def test_settling(self):
        trace = [{"iteration": i, "test_revenue": r} for i, r in
                 zip([0, 10, 20, 30, 40], [1.0, 5.0, 9.0, 10.0, 10.0])]
        assert iterations_to_within(trace, 0.05) == 30
        assert iterations_to_within(trace, 0.15) == 20

    def test_excursion_resets(self):
        trace = [{"iteration": i, "test_revenue": r} for i, r in
                 zip([0, 10, 20, 30], [10.0, 5.0, 10.0, 10.0])]
        assert iterations_to_within(trace, 0.05) == 20
