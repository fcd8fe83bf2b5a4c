import numpy as np
import pytest

from nasfas.data import TaskData
from nasfas.meta_nas import MetaConfig, make_state, meta_iteration, run_search
from nasfas.nas import SupernetState, discretize
from nasfas.nn import SGD, Module
from nasfas.search_spaces import fas_space, validate_genotype
from nasfas.tensor import ConfigError, Parameter, Tensor

SGD_CFG = dict(weight_optimizer="sgd", arch_optimizer="sgd", weight_decay=0.0, arch_weight_decay=0.0)


class Linear(Module):
    """pred = x @ (w + b): ``w`` are weights, ``b`` is an architecture-like offset."""

    def __init__(self, w, b=0.0):
        super().__init__()
        self.w = Parameter(np.asarray(w, dtype=np.float64).copy())
        self.b = Parameter(np.full(self.w.shape, b, dtype=np.float64))

    def forward(self, x):
        return (x * (self.w + self.b)).sum(axis=1)

    def weight_parameters(self):
        return [self.w]

    def arch_parameters(self):
        return [self.b]


def lin_loss(model, batch):
    return ((model(Tensor(batch[0])) - Tensor(batch[2])) ** 2).mean() * 0.5


def lin_state(w, b=0.0, outer_lr=0.1, arch_lr=0.0):
    m = Linear(w, b)
    return SupernetState(m, lin_loss, None, SGD(m.weight_parameters(), outer_lr), SGD(m.arch_parameters(), arch_lr))


def lin_batch(rng, n=5, d=3):
    x = rng.normal(size=(n, d))
    return x, np.zeros(n), rng.normal(size=n)


def lin_grad(w, batch):
    x, _, t = batch
    return x.T @ (x @ w - t) / len(t)


class TestMetaStep:
    def test_zero_rates_fixed_point(self, f64, rng):
        st = lin_state(rng.normal(size=3), outer_lr=0.0)
        w0 = st.model.w.data.copy()
        cfg = MetaConfig(inner_lr=0.0, outer_lr=0.0, arch_lr=0.0, **SGD_CFG)
        meta_iteration(st, [lin_batch(rng), lin_batch(rng)], lin_batch(rng), cfg)
        np.testing.assert_array_equal(st.model.w.data, w0)
        np.testing.assert_array_equal(st.model.b.data, 0.0)

    @pytest.mark.parametrize("n_support", [1, 2, 4])
    def test_zero_inner_lr_is_scaled_gradient_step(self, n_support, f64, rng):
        w0 = rng.normal(size=3)
        st = lin_state(w0, outer_lr=0.05)
        query = lin_batch(rng)
        cfg = MetaConfig(inner_lr=0.0, outer_lr=0.05, arch_lr=0.0, **SGD_CFG)
        meta_iteration(st, [lin_batch(rng) for _ in range(n_support)], query, cfg, update_arch=False)
        want = w0 - 0.05 * n_support * lin_grad(w0, query)
        np.testing.assert_allclose(st.model.w.data, want, rtol=0, atol=1e-10)

    def test_first_order_oracle(self, f64, rng):
        w0 = rng.normal(size=3)
        st = lin_state(w0, outer_lr=0.05, arch_lr=0.2)
        supports, query = [lin_batch(rng), lin_batch(rng)], lin_batch(rng)
        cfg = MetaConfig(inner_lr=0.3, outer_lr=0.05, arch_lr=0.2, **SGD_CFG)
        meta_iteration(st, supports, query, cfg)
        total = sum(lin_grad(w0 - 0.3 * lin_grad(w0, s), query) for s in supports)
        w1 = w0 - 0.05 * total
        np.testing.assert_allclose(st.model.w.data, w1, atol=1e-12)
        # alpha step uses the updated weights (b starts at 0)
        np.testing.assert_allclose(st.model.b.data, -0.2 * lin_grad(w1, query), atol=1e-12)

    def test_weights_restored_between_learners(self, f64, rng):
        # identical supports must give identical learner losses
        st = lin_state(rng.normal(size=3))
        s = lin_batch(rng)
        cfg = MetaConfig(inner_lr=0.3, outer_lr=0.1, **SGD_CFG)
        out = meta_iteration(st, [s, s, s], lin_batch(rng), cfg, update_arch=False)
        assert out["query_loss"][0] == out["query_loss"][1] == out["query_loss"][2]


def scalar_domains(xs, cs, per=3):
    """Each domain holds ``per`` copies of one scalar sample (x_d, c_d)."""
    n = len(xs)
    x = np.repeat(np.asarray(xs, dtype=np.float64), per).reshape(-1, 1)
    t = np.repeat(np.asarray(cs, dtype=np.float64), per)
    return TaskData(x, np.zeros(len(t), dtype=np.int64), t, np.repeat(np.arange(n), per))


def test_two_domain_scalar_oracle(f64):
    xs, cs = [1.5, -0.7], [0.4, 2.0]
    data = scalar_domains(xs, cs)
    g1, g1t, g2 = 0.2, 0.15, 0.3
    cfg = MetaConfig(inner_lr=g1, outer_lr=g1t, arch_lr=g2, batch_size=1, epochs=4, iterations_per_epoch=2,
                     seed=5, **SGD_CFG)
    w0, b0 = 0.3, -0.1
    model = Linear([w0], b0)
    st = SupernetState(model, lin_loss)
    log = []
    run_search("dt-meta", data, None, cfg, state=st, log=log)

    def grad(w, b, d):  # d/dw and d/db of 0.5 * (x (w + b) - c)^2
        return xs[d] * (xs[d] * (w + b) - cs[d])

    w, b = w0, b0
    for rec in log:
        q = rec["query_group"]
        (s,) = rec["support_groups"]
        phi = w - g1 * grad(w, b, s)
        w = w - g1t * grad(phi, b, q)
        b = b - g2 * grad(w, b, q)
    assert len(log) == 8
    assert abs(model.w.data[0] - w) < 1e-10
    assert abs(model.b.data[0] - b) < 1e-10


def tiny_data(rng, n_groups=3, per=4):
    n = n_groups * per
    labels = np.tile([1, 0], n // 2)
    targets = rng.uniform(size=(n, 2, 2)) * labels[:, None, None]
    return TaskData(rng.uniform(size=(n, 3, 16, 16)), labels, targets, np.repeat(np.arange(n_groups), per))


TINY = fas_space(channels=2, input_size=16)


class TestSchemes:
    @pytest.mark.parametrize("scheme", ["nas", "dt-nas", "dt-meta"])
    def test_valid_genotype_and_log(self, scheme, rng):
        log = []
        cfg = MetaConfig(epochs=2, iterations_per_epoch=3, batch_size=2, freeze_epochs=1)
        g, _ = run_search(scheme, tiny_data(rng), TINY, cfg, log=log)
        validate_genotype(g, TINY)
        assert len(log) == 6
        assert [r["arch_frozen"] for r in log] == [True] * 3 + [False] * 3

    def test_frozen_alpha_unchanged(self, rng):
        cfg = MetaConfig(epochs=1, iterations_per_epoch=2, batch_size=2, freeze_epochs=1)
        st = make_state(TINY, cfg)
        before = st.model.alphas()
        run_search("dt-meta", tiny_data(rng), TINY, cfg, state=st)
        for k, a in st.model.alphas().items():
            np.testing.assert_array_equal(a, before[k])

    def test_support_query_disjoint_and_coverage(self, rng):
        log = []
        data = tiny_data(rng, n_groups=4)
        cfg = MetaConfig(epochs=1, iterations_per_epoch=8, batch_size=2)
        run_search("dt-meta", data, TINY, cfg, log=log)
        for rec in log:
            assert rec["query_group"] not in rec["support_groups"]
            assert len(rec["support_groups"]) == 3
            assert all(data.groups[i] == rec["query_group"] for i in rec["query_idx"])
            for g, idx in rec["support_idx"].items():
                assert all(data.groups[i] == int(g) for i in idx)
        for start in range(len(log) - 3):
            assert {r["query_group"] for r in log[start:start + 4]} == {0, 1, 2, 3}

    def test_two_groups_alternate(self, rng):
        log = []
        run_search("dt-nas", tiny_data(rng, n_groups=2), TINY, MetaConfig(epochs=1, iterations_per_epoch=6,
                                                                           batch_size=2), log=log)
        q = [r["query_group"] for r in log]
        assert all(a != b for a, b in zip(q, q[1:]))

    def test_nas_split_disjoint(self, rng):
        log = []
        run_search("nas", tiny_data(rng), TINY, MetaConfig(epochs=2, batch_size=2), log=log)
        s = {i for r in log for i in r["support_idx"]}
        q = {i for r in log for i in r["query_idx"]}
        assert not s & q

    def test_deterministic(self, rng):
        data = tiny_data(rng)
        cfg = MetaConfig(epochs=1, iterations_per_epoch=3, batch_size=2, seed=4)
        a, sa = run_search("dt-meta", data, TINY, cfg)
        b, sb = run_search("dt-meta", data, TINY, cfg)
        assert a == b
        for k, v in sa.model.alphas().items():
            np.testing.assert_array_equal(v, sb.model.alphas()[k])

    def test_zero_rates_keep_initial_architecture(self, rng):
        cfg = MetaConfig(inner_lr=0.0, outer_lr=0.0, arch_lr=0.0, epochs=1, iterations_per_epoch=2, batch_size=2,
                         **SGD_CFG)
        st = make_state(TINY, cfg)
        initial = discretize(st.model.alphas(), TINY)
        g, _ = run_search("dt-meta", tiny_data(rng), TINY, cfg, state=st)
        assert g.cells == initial.cells

    def test_errors(self, rng):
        with pytest.raises(ConfigError):
            run_search("maml", tiny_data(rng), TINY, MetaConfig(epochs=1))
        with pytest.raises(ConfigError):
            run_search("dt-meta", tiny_data(rng, n_groups=1), TINY, MetaConfig(epochs=1))
        with pytest.raises(ConfigError):
            MetaConfig(arch_mode="second-order")
        with pytest.raises(ConfigError):
            MetaConfig(inner_lr=-1.0)
