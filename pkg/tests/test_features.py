import numpy as np
import pytest

from flowood.errors import ShapeError, ValidationError
from flowood.features import (
    FeatureSet,
    SyntheticSpec,
    generate_synthetic,
    l2_normalize,
    load_feature_set,
    save_feature_set,
    split,
)
from flowood.npyio import write_npy


def write_dir(tmp_path, name="fs", **arrays):
    d = tmp_path / name
    d.mkdir()
    for fname, arr in arrays.items():
        write_npy(d / f"{fname}.npy", arr)
    return d


class TestLoadFeatureSet:
    def test_features_only(self, tmp_path, rng):
        d = write_dir(tmp_path, features=rng.standard_normal((100, 512)).astype(np.float32))
        fs = load_feature_set(d)
        assert fs.n == 100 and fs.dim == 512
        assert fs.logits is None and fs.labels is None and fs.head_weight is None

    def test_missing_features_file(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(FileNotFoundError, match="features.npy"):
            load_feature_set(tmp_path / "empty")

    def test_label_count_mismatch_names_both_files(self, tmp_path, rng):
        d = write_dir(
            tmp_path,
            features=rng.standard_normal((10, 4)).astype(np.float32),
            labels=np.zeros(7, dtype=np.int64),
        )
        with pytest.raises(ShapeError, match=r"labels\.npy.*features\.npy"):
            load_feature_set(d)

    def test_head_dim_mismatch(self, tmp_path, rng):
        d = write_dir(
            tmp_path,
            features=rng.standard_normal((10, 4)).astype(np.float32),
            head_weight=rng.standard_normal((3, 5)).astype(np.float32),
            head_bias=np.zeros(3, dtype=np.float32),
        )
        with pytest.raises(ShapeError, match="head_weight"):
            load_feature_set(d)

    def test_full_directory_and_head_identity(self, tmp_path, rng):
        feats = rng.standard_normal((50, 8)).astype(np.float32)
        w = rng.standard_normal((5, 8)).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        logits = (feats @ w.T + b).astype(np.float32)
        labels = rng.integers(0, 5, 50).astype(np.int64)
        d = write_dir(
            tmp_path, features=feats, logits=logits, labels=labels, head_weight=w, head_bias=b
        )
        fs = load_feature_set(d)
        recomputed = fs.features @ fs.head_weight.T + fs.head_bias
        assert np.abs(recomputed - fs.logits).max() < 1e-3

    def test_inconsistent_logits_rejected(self, tmp_path, rng):
        feats = rng.standard_normal((20, 8)).astype(np.float32)
        w = rng.standard_normal((5, 8)).astype(np.float32)
        b = np.zeros(5, dtype=np.float32)
        wrong_logits = rng.standard_normal((20, 5)).astype(np.float32) * 10
        d = write_dir(
            tmp_path, features=feats, logits=wrong_logits, head_weight=w, head_bias=b
        )
        with pytest.raises(ValidationError, match="deviate"):
            load_feature_set(d)

    def test_save_load_round_trip(self, tmp_path, rng):
        fs = FeatureSet(
            features=rng.standard_normal((30, 6)).astype(np.float32),
            labels=rng.integers(0, 3, 30).astype(np.int64),
            source_name="unit-test",
        )
        save_feature_set(tmp_path / "out", fs)
        back = load_feature_set(tmp_path / "out")
        assert back.source_name == "unit-test"
        assert np.array_equal(back.features, fs.features)
        assert np.array_equal(back.labels, fs.labels)


class TestL2Normalize:
    def test_three_four_five(self):
        normalized, norms = l2_normalize(np.array([[3.0, 4.0]], dtype=np.float32))
        assert np.allclose(normalized, [[0.6, 0.8]])
        assert np.allclose(norms, [5.0])

    def test_axis_vector(self):
        normalized, norms = l2_normalize(np.array([[0.0, 5.0]], dtype=np.float32))
        assert np.allclose(normalized, [[0.0, 1.0]])
        assert norms[0] == 5.0

    def test_unit_vector_unchanged(self):
        x = np.array([[1.0, 0.0, 0.0]], dtype=np.float32)
        normalized, norms = l2_normalize(x)
        assert np.array_equal(normalized, x)
        assert norms[0] == 1.0

    def test_idempotent_and_unit_norm(self, rng):
        x = rng.standard_normal((200, 16)).astype(np.float32) * 10
        once, _ = l2_normalize(x)
        twice, _ = l2_normalize(once)
        assert np.abs(np.linalg.norm(once, axis=1) - 1).max() < 1e-6
        assert np.abs(once - twice).max() < 1e-6

    def test_zero_norm_row_reports_index(self):
        x = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32)
        with pytest.raises(ValidationError, match="index 1"):
            l2_normalize(x)


class TestSynthetic:
    def test_degenerate_limit(self):
        spec = SyntheticSpec(
            dim=16, id_clusters=3, ood_clusters=2, samples_per_cluster=20,
            cluster_spread=0.0, norm_mean=7.0, norm_std=0.0, seed=1,
        )
        id_train, id_val, ood = generate_synthetic(spec)
        for fs in (id_train, id_val, ood):
            assert np.allclose(np.linalg.norm(fs.features, axis=1), 7.0, atol=1e-4)
        normalized, _ = l2_normalize(id_train.features)
        for lab in np.unique(id_train.labels):
            rows = normalized[id_train.labels == lab]
            cosines = rows @ rows.T
            assert np.abs(cosines - 1.0).max() < 1e-5

    def test_deterministic_per_seed(self):
        spec = SyntheticSpec(dim=8, samples_per_cluster=10, seed=42)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.features, fb.features)
            assert np.array_equal(fa.labels, fb.labels)

    def test_intra_cluster_cosine_exceeds_inter(self):
        spec = SyntheticSpec(
            dim=64, id_clusters=10, ood_clusters=2, samples_per_cluster=30,
            cluster_spread=0.05, seed=0,
        )
        id_train, _, _ = generate_synthetic(spec)
        z, _ = l2_normalize(id_train.features)
        gram = z @ z.T
        same = id_train.labels[:, None] == id_train.labels[None, :]
        off_diag = ~np.eye(len(z), dtype=bool)
        intra = gram[same & off_diag].mean()
        inter = gram[~same].mean()
        assert intra > inter

    def test_id_ood_center_separation_over_seeds(self):
        # empirical invariant: min inter-set center distance > 4 sigma in >= 99/100 seeds
        sigma = 0.1
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            centers = rng.standard_normal((15, 16))
            centers /= np.linalg.norm(centers, axis=1, keepdims=True)
            id_c, ood_c = centers[:10], centers[10:]
            dists = np.linalg.norm(id_c[:, None, :] - ood_c[None, :, :], axis=2)
            if dists.min() > 4 * sigma:
                hits += 1
        assert hits >= 99

    def test_labels_are_cluster_indices(self):
        spec = SyntheticSpec(dim=8, id_clusters=4, ood_clusters=3, samples_per_cluster=5, seed=0)
        id_train, id_val, ood = generate_synthetic(spec)
        merged = np.concatenate([id_train.labels, id_val.labels])
        assert set(merged.tolist()) == set(range(4))
        assert set(ood.labels.tolist()) == set(range(3))


class TestSplit:
    def make(self, rng, n=10):
        return FeatureSet(
            features=rng.standard_normal((n, 3)).astype(np.float32),
            labels=np.arange(n, dtype=np.int64),
        )

    def test_sizes(self, rng):
        a, b = split(self.make(rng), 0.8, seed=0)
        assert a.n == 8 and b.n == 2

    def test_partition_is_disjoint_and_complete(self, rng):
        fs = self.make(rng, n=37)
        a, b = split(fs, 0.6, seed=3)
        merged = sorted(a.labels.tolist() + b.labels.tolist())
        assert merged == list(range(37))

    def test_deterministic(self, rng):
        fs = self.make(rng, n=20)
        a1, b1 = split(fs, 0.5, seed=9)
        a2, b2 = split(fs, 0.5, seed=9)
        assert np.array_equal(a1.features, a2.features)
        assert np.array_equal(b1.labels, b2.labels)

    def test_optionals_carried_consistently(self, rng):
        feats = rng.standard_normal((12, 4)).astype(np.float32)
        w = rng.standard_normal((2, 4)).astype(np.float32)
        b = np.zeros(2, dtype=np.float32)
        fs = FeatureSet(
            features=feats,
            logits=(feats @ w.T + b).astype(np.float32),
            labels=np.arange(12, dtype=np.int64),
            head_weight=w,
            head_bias=b,
        )
        a, _ = split(fs, 0.5, seed=0)
        # logits rows must follow their feature rows
        assert np.abs(a.features @ w.T + b - a.logits).max() < 1e-5
        assert a.head_weight is w

    def test_empty_side_rejected(self, rng):
        with pytest.raises(ValidationError, match="empty"):
            split(self.make(rng, n=3), 0.01, seed=0)

    def test_bad_fraction_rejected(self, rng):
        with pytest.raises(ValidationError):
            split(self.make(rng), 1.5, seed=0)
