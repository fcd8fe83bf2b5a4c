import numpy as np
import pytest

from nasfas.data import block_mean, input_pipeline, load_dataset, save_dataset, split, task_data
from nasfas.metrics import auc
from nasfas.synthetic import ATTACK_TYPES, TaskSpec, gen_dataset
from nasfas.tensor import ConfigError


@pytest.fixture(scope="module")
def small():
    return gen_dataset(TaskSpec(resolution=32, n_per_class=6, seed=0))


@pytest.fixture(scope="module")
def probe_set():
    return gen_dataset(TaskSpec(resolution=32, n_per_class=48, seed=0))


class TestGenerator:
    def test_layout(self, small):
        assert small.clips.shape == (36, 7, 3, 32, 32)
        assert small.clips.dtype == np.float32
        assert small.clips.min() >= 0 and small.clips.max() <= 1
        assert small.domain_names == ("indoor", "warm", "cool")
        assert small.type_names == ("live",) + ATTACK_TYPES
        for d in range(3):
            m = small.domains == d
            assert (small.labels[m] == 1).sum() == (small.labels[m] == 0).sum() == 6
        np.testing.assert_array_equal(small.labels == 1, small.types == 0)

    def test_deterministic(self, small):
        again = gen_dataset(TaskSpec(resolution=32, n_per_class=6, seed=0))
        np.testing.assert_array_equal(again.clips, small.clips)
        other = gen_dataset(TaskSpec(resolution=32, n_per_class=6, seed=1))
        assert not np.array_equal(other.clips, small.clips)

    def test_depth_targets(self, small):
        live = small.labels == 1
        assert not small.depth[~live].any()
        for d in small.depth[live]:
            assert d.min() == 0 and d.max() == pytest.approx(1)

    def test_spoof_motion_is_planar(self):
        # without noise and drift a spoof clip is static while a live clip still moves (parallax)
        from nasfas.synthetic import Photometric

        flat = (Photometric("clean", noise=0.0),)
        d = gen_dataset(TaskSpec(resolution=32, n_per_class=2, domains=flat, drift=0.0, seed=3))
        motion = np.abs(d.clips[:, -1] - d.clips[:, 0]).mean(axis=(1, 2, 3))
        assert (motion[d.labels == 0] < 1e-6).all()
        assert (motion[d.labels == 1] > 1e-3).all()

    def test_artifact_raises_high_frequency_energy(self):
        def hf(spec):
            d = gen_dataset(spec)
            f = d.clips[d.types == 1][:, 3]  # lattice spoofs, middle frame
            return np.abs(np.diff(f, axis=-1)).mean()

        base = dict(resolution=32, n_per_class=3, attack_types=("lattice",), seed=0)
        assert hf(TaskSpec(artifact=0.2, **base)) > 1.5 * hf(TaskSpec(artifact=0.0, **base))

    def test_spoof_high_frequency_energy(self):
        """Lattice and noise spoofs carry more high-frequency energy than live clips of the same domain."""
        d = gen_dataset(TaskSpec(n_per_class=24, seed=0))
        mid = d.clips[:, 3].astype(np.float64)
        spec = np.abs(np.fft.fft2(mid - mid.mean(axis=(2, 3), keepdims=True))) ** 2
        f = np.fft.fftfreq(mid.shape[-1])
        high = (np.abs(f)[:, None] > 0.25) | (np.abs(f)[None, :] > 0.25)
        energy = (spec * high).sum(axis=(1, 2, 3))
        for dom in range(d.n_domains):
            live = energy[(d.domains == dom) & (d.types == 0)].mean()
            for t in (1, 2):  # lattice, noise; weakest observed ratio is about 1.3
                assert energy[(d.domains == dom) & (d.types == t)].mean() > 1.2 * live

    def test_spec_round_trip(self):
        spec = TaskSpec(resolution=16, artifact=0.1, attack_types=("noise",))
        assert TaskSpec.from_dict(spec.to_dict()) == spec

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            TaskSpec(resolution=30)
        with pytest.raises(ConfigError):
            TaskSpec(attack_types=("deepfake",))
        with pytest.raises(ConfigError):
            TaskSpec(frames=1)


def _logistic(x, y, steps=2000, lr=0.5, l2=1e-3):
    mu, sd = x.mean(0), x.std(0) + 1e-9
    z = np.c_[(x - mu) / sd, np.ones(len(x))]
    w = np.zeros(z.shape[1])
    for _ in range(steps):
        p = 1 / (1 + np.exp(-z @ w))
        w -= lr * (z.T @ (p - y) / len(y) + l2 * w)
    return lambda q: np.c_[(q - mu) / sd, np.ones(len(q))] @ w


def test_linear_probe_shows_domain_gap(probe_set):
    """Logistic regression on pooled middle-frame pixels: strong inside a domain, weaker across."""
    d = probe_set
    mid = d.clips[:, d.clips.shape[1] // 2]
    x = np.stack([block_mean(mid[:, c], 8) for c in range(3)], axis=1).reshape(len(d), -1).astype(np.float64)
    within, cross = [], []
    for dom in range(d.n_domains):
        idx = np.flatnonzero(d.domains == dom)
        r = np.random.default_rng(dom)
        train = np.concatenate([r.permutation(idx[d.labels[idx] == c])[:24] for c in (0, 1)])
        test = np.setdiff1d(idx, train)
        probe = _logistic(x[train], d.labels[train])
        within.append(auc(probe(x[test]), d.labels[test]))
        for other in range(d.n_domains):
            if other != dom:
                m = d.domains == other
                cross.append(auc(probe(x[m]), d.labels[m]))
    assert np.mean(within) > 0.9
    assert np.mean(within) - np.mean(cross) > 0.05


class TestSplits:
    def test_lodo(self, small):
        tr, te = split(small, "leave-one-domain-out", "warm")
        assert set(small.domains[te]) == {1} and 1 not in set(small.domains[tr])

    def test_loto(self, small):
        tr, te = split(small, "leave-one-type-out", "noise", seed=2)
        assert 2 not in set(small.types[tr])
        assert (small.types[te] == 2).sum() == (small.types == 2).sum()
        assert (small.labels[te] == 1).any() and (small.labels[tr] == 1).any()

    @pytest.mark.parametrize("mode,holdout", [("intra-domain", None), ("leave-one-domain-out", 0),
                                              ("leave-one-type-out", "lattice")])
    def test_partition(self, small, mode, holdout):
        tr, te = split(small, mode, holdout)
        assert not set(tr) & set(te)
        assert sorted(np.concatenate([tr, te])) == list(range(len(small)))
        again = split(small, mode, holdout)
        np.testing.assert_array_equal(again[0], tr)

    def test_errors(self, small):
        with pytest.raises(ConfigError):
            split(small, "k-fold")
        with pytest.raises(ConfigError):
            split(small, "leave-one-domain-out")
        with pytest.raises(ConfigError):
            split(small, "leave-one-type-out", "live")
        with pytest.raises(ConfigError):
            split(small, "leave-one-domain-out", "outdoor")


class TestPipeline:
    @pytest.mark.parametrize("mode", ["static", "dynamic", "static-dynamic"])
    def test_shapes(self, small, mode):
        x = input_pipeline(small.clips[0], mode)
        assert x.shape == (3, 32, 32) and x.dtype == np.float32

    def test_static_is_middle_frame(self, small):
        np.testing.assert_array_equal(input_pipeline(small.clips[0], "static"), small.clips[0][3])

    def test_fused_range(self, small):
        x = input_pipeline(small.clips[0], "static-dynamic")
        assert x.min() == 0 and x.max() == 1

    def test_dynamic_constant_clip_is_zero(self):
        assert not input_pipeline(np.full((7, 3, 8, 8), 0.3), "dynamic").any()

    def test_block_mean(self):
        m = np.arange(16.0).reshape(1, 4, 4)
        np.testing.assert_allclose(block_mean(m, 2)[0], [[2.5, 4.5], [10.5, 12.5]])
        with pytest.raises(ConfigError):
            block_mean(m, 3)

    def test_task_data_groups(self, small):
        by_domain = task_data(small, out_size=4)
        np.testing.assert_array_equal(by_domain.groups, small.domains)
        assert by_domain.targets.shape == (36, 4, 4)
        by_type = task_data(small, out_size=4, group_by="type", x=by_domain.x)
        for g in by_type.group_ids:
            m = by_type.groups == g
            assert set(small.labels[m]) == {0, 1}
            assert len(set(small.types[m & (small.labels == 0)])) == 1


def test_disk_round_trip(small, tmp_path):
    sub = small.subset(np.arange(0, 36, 5))
    save_dataset(sub, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert back.domain_names == sub.domain_names and back.type_names == sub.type_names
    np.testing.assert_array_equal(back.labels, sub.labels)
    np.testing.assert_array_equal(back.types, sub.types)
    assert np.abs(back.clips - sub.clips).max() <= 0.5 / 255 + 1e-6
    assert np.abs(back.depth - sub.depth).max() <= 0.5 / 65535 + 1e-6
    with pytest.raises(ConfigError):
        load_dataset(tmp_path / "missing")
