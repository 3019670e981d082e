"""Dataset builders: IDX parsing, colorized digits, structural generator."""

import struct

import numpy as np
import pytest
import scipy.stats

import oracles as oc
from crosscert import (ScmSpec, load_dataset, make_cmnist, make_scm,
                       random_orthogonal, read_idx, save_dataset, split,
                       std_normal_cdf, stream)
from crosscert.errors import (ConfigError, IdxBadMagicError,
                              IdxDimensionError, IdxTruncatedError)
from crosscert.rng import KEY_DATA


def _idx_images_bytes(count=1, rows=28, cols=28, fill=None):
    header = struct.pack(">iiii", 2051, count, rows, cols)
    n = count * rows * cols
    payload = bytes(range(256)) * (n // 256 + 1) if fill is None else fill
    return header + payload[:n]


def _spec(strengths=(0.9, 0.8, 0.1), label_noise=0.25, magnitude=1.5,
          scale=0.8, mixing=None, causal_dim=8, spurious_dim=2, sep=2.4):
    mu = np.zeros(causal_dim)
    mu[0] = sep / 2
    dim = causal_dim + spurious_dim
    if mixing is None:
        mixing = random_orthogonal(dim, stream(0, KEY_DATA, 0))
    return ScmSpec(mu0=-mu, mu1=mu.copy(), noise_scale=scale,
                   spurious_dim=spurious_dim, spurious_magnitude=magnitude,
                   mixing=mixing, strengths=list(strengths),
                   label_noise=label_noise)


# ----- IDX reader -----

def test_read_idx_single_image(tmp_path):
    path = tmp_path / "img"
    path.write_bytes(_idx_images_bytes())
    out = read_idx(path)
    assert out.shape == (1, 784)
    assert out.dtype == np.float64
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0
    # first payload byte is 0, second is 1 -> scaled by 255
    assert out[0, 0] == 0.0
    assert abs(out[0, 1] - 1 / 255) < 1e-15


def test_read_idx_labels(tmp_path):
    path = tmp_path / "lab"
    path.write_bytes(struct.pack(">ii", 2049, 3) + bytes([7, 0, 9]))
    out = read_idx(path)
    assert out.tolist() == [7, 0, 9]
    assert out.dtype == np.int64


def test_read_idx_bad_magic(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(struct.pack(">ii", 9999, 3) + bytes(3))
    with pytest.raises(IdxBadMagicError) as err:
        read_idx(path)
    assert "bad magic" in str(err.value)


def test_read_idx_truncated(tmp_path):
    path = tmp_path / "cut"
    path.write_bytes(_idx_images_bytes()[:-100])
    with pytest.raises(IdxTruncatedError):
        read_idx(path)


def test_read_idx_dimension_overflow(tmp_path):
    path = tmp_path / "huge"
    path.write_bytes(struct.pack(">iiii", 2051, 2 ** 30, 28, 28))
    with pytest.raises(IdxDimensionError):
        read_idx(path)


# ----- colorized digits -----

def test_cmnist_degenerate_strength_matches_label_exactly():
    rng = np.random.default_rng(0)
    images = rng.random((600, 16))
    labels = rng.integers(0, 10, size=600)
    ds = make_cmnist(images, labels, [1.0, 1.0], 0.0, stream(0, KEY_DATA, 1))
    for env in ds.environments:
        chan1_mass = env.x[:, 16:].sum(axis=1)
        color = (chan1_mass > 0).astype(int)
        assert np.array_equal(color, env.y)
        # and labels are the digit threshold, noise-free
    joined_y = np.concatenate([e.y for e in ds.environments])
    assert np.array_equal(joined_y, (labels >= 5).astype(int))


def test_cmnist_realized_strengths_near_configured():
    rng = np.random.default_rng(1)
    n = 3 * 10 ** 4
    images = np.clip(rng.random((n, 8)) + 0.05, 0, 1)
    labels = rng.integers(0, 10, size=n)
    ds = make_cmnist(images, labels, [0.9, 0.8, 0.1], 0.25,
                     stream(0, KEY_DATA, 1))
    for env, want in zip(ds.environments, [0.9, 0.8, 0.1]):
        color = (env.x[:, 8:].sum(axis=1) > 0).astype(int)
        agreement = float(np.mean(color == env.y))
        assert abs(agreement - want) < 0.02, (env.domain_id, agreement)


def test_cmnist_strength_half_gives_independence():
    rng = np.random.default_rng(2)
    n = 10 ** 4
    images = np.clip(rng.random((n, 8)) + 0.05, 0, 1)
    labels = rng.integers(0, 10, size=n)
    ds = make_cmnist(images, labels, [0.5], 0.25, stream(3, KEY_DATA, 1))
    env = ds.environments[0]
    color = (env.x[:, 8:].sum(axis=1) > 0).astype(int)
    table = np.zeros((2, 2))
    for c, y in zip(color, env.y):
        table[c, y] += 1
    _, pvalue, _, _ = scipy.stats.chi2_contingency(table)
    assert pvalue > 0.01


def test_cmnist_rejects_empty_and_bad_args():
    with pytest.raises(ValueError):
        make_cmnist(np.zeros((0, 4)), np.zeros(0), [0.5], 0.0,
                    stream(0, KEY_DATA, 1))
    with pytest.raises(ValueError):
        make_cmnist(np.zeros((4, 4)), np.zeros(4), [1.5], 0.0,
                    stream(0, KEY_DATA, 1))


# ----- structural generator -----

def test_scm_zero_magnitude_environments_identically_distributed():
    spec = _spec(strengths=(0.9, 0.1), magnitude=0.0)
    ds = make_scm(spec, 4000, stream(5, KEY_DATA, 1))
    a, b = ds.environments[0].x, ds.environments[1].x
    # project on a few fixed directions and compare the samples
    rng = np.random.default_rng(0)
    for _ in range(3):
        d = rng.standard_normal(spec.input_dim)
        _, pvalue = scipy.stats.ks_2samp(a @ d, b @ d)
        assert pvalue > 0.005


def test_scm_spurious_threshold_accuracy_tracks_strength():
    spec = _spec(strengths=(0.9, 0.1), mixing=np.eye(10))
    ds = make_scm(spec, 2 * 10 ** 4, stream(7, KEY_DATA, 1))
    for env, want in zip(ds.environments, [0.9, 0.1]):
        pred = (env.x[:, spec.causal_dim] > 0).astype(int)
        acc = float(np.mean(pred == env.y))
        # Bernoulli oracle: the spurious bit agrees with y with the
        # configured strength exactly
        assert abs(acc - want) < 3 * np.sqrt(0.25 / len(env.y)) + 0.002


def test_scm_bayes_accuracy_matches_gaussian_formula():
    mu = np.zeros(8)
    mu[0] = 1.0
    spec = ScmSpec(mu0=-mu, mu1=mu.copy(), noise_scale=0.8, spurious_dim=2,
                   spurious_magnitude=1.5, mixing=np.eye(10),
                   strengths=[0.9, 0.8], label_noise=0.0)
    ds = make_scm(spec, 2 * 10 ** 4, stream(9, KEY_DATA, 1))
    want = std_normal_cdf(np.linalg.norm(spec.mu1 - spec.mu0) / (2 * 0.8))
    for env in ds.environments:
        direction = spec.mu1 - spec.mu0
        pred = (env.x[:, :8] @ direction > 0).astype(int)
        acc = float(np.mean(pred == env.y))
        assert abs(acc - want) < 0.015, (env.domain_id, acc, want)


def test_scm_rejects_non_orthogonal_mixing():
    spec = _spec()
    spec.mixing = np.eye(10) * 1.01
    with pytest.raises(ConfigError):
        make_scm(spec, 100, stream(0, KEY_DATA, 1))


def test_scm_seed_determinism():
    spec = _spec()
    a = make_scm(spec, 500, stream(11, KEY_DATA, 1))
    b = make_scm(spec, 500, stream(11, KEY_DATA, 1))
    for ea, eb in zip(a.environments, b.environments):
        assert np.array_equal(ea.x, eb.x)
        assert np.array_equal(ea.y, eb.y)


def test_scm_realized_strength_within_binomial_error():
    spec = _spec(mixing=np.eye(10))
    n = 10 ** 4
    ds = make_scm(spec, n, stream(13, KEY_DATA, 1))
    for env, want in zip(ds.environments, spec.strengths):
        bit = (env.x[:, spec.causal_dim] > 0).astype(int)
        realized = float(np.mean(bit == env.y))
        se = np.sqrt(want * (1 - want) / n)
        assert abs(realized - want) < 4 * se + 1e-9


def test_scm_conditional_label_law_invariant_across_envs():
    # conformance of the generator's core promise: P(y | causal block) must
    # be the same map in every environment. Fit a logistic model per env and
    # compare predicted probabilities on in-distribution points, using the
    # gap between two half-sample fits of ONE env as the sampling yardstick.
    spec = _spec(strengths=(0.9, 0.2), sep=2.0)
    ds = make_scm(spec, 2 * 10 ** 4, stream(15, KEY_DATA, 1))
    blocks = [(e.x @ spec.mixing)[:, :spec.causal_dim]
              for e in ds.environments]
    grid = blocks[0][:400]

    def fit_probs(c, y):
        beta = oc.logistic_fit(c, y)
        return 1.0 / (1.0 + np.exp(-(grid @ beta[:-1] + beta[-1])))

    between = float(np.max(np.abs(
        fit_probs(blocks[0], ds.environments[0].y)
        - fit_probs(blocks[1], ds.environments[1].y))))
    half = len(blocks[0]) // 2
    within = float(np.max(np.abs(
        fit_probs(blocks[0][:half], ds.environments[0].y[:half])
        - fit_probs(blocks[0][half:], ds.environments[0].y[half:]))))
    assert between < max(1.5 * within, 0.08), (between, within)


# ----- split -----

def test_split_preserves_sizes():
    ds = make_scm(_spec(), 300, stream(17, KEY_DATA, 1))
    train, test = split(ds, [0, 1], 2)
    assert [e.domain_id for e in train.environments] == [0, 1]
    assert [e.domain_id for e in test.environments] == [2]
    assert all(len(e.y) == 300 for e in train.environments + test.environments)


def test_split_rejects_overlap_and_missing():
    ds = make_scm(_spec(), 50, stream(19, KEY_DATA, 1))
    with pytest.raises(ValueError):
        split(ds, [0, 2], 2)
    with pytest.raises(ValueError):
        split(ds, [0, 7], 2)


def test_split_round_trip_multiset():
    ds = make_scm(_spec(), 80, stream(21, KEY_DATA, 1))
    train, test = split(ds, [0, 1], 2)
    all_rows = np.concatenate([e.x for e in ds.environments])
    split_rows = np.concatenate([e.x for e in train.environments]
                                + [e.x for e in test.environments])
    assert np.array_equal(np.sort(all_rows, axis=0), np.sort(split_rows, axis=0))


# ----- cache round trip -----

def test_dataset_cache_round_trip(tmp_path):
    ds = make_scm(_spec(), 120, stream(23, KEY_DATA, 1))
    path = tmp_path / "data.bin"
    save_dataset(path, ds)
    again = load_dataset(path)
    assert again.num_classes == ds.num_classes
    assert again.input_dim == ds.input_dim
    for ea, eb in zip(ds.environments, again.environments):
        assert ea.domain_id == eb.domain_id
        assert ea.spurious_strength == eb.spurious_strength
        assert np.array_equal(ea.x, eb.x)
        assert np.array_equal(ea.y, eb.y)
    path2 = tmp_path / "data2.bin"
    save_dataset(path2, again)
    assert path.read_bytes() == path2.read_bytes()
