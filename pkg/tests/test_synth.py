"""Synthetic dataset generation and the slow reference solvers."""
import numpy as np
import pytest

from muka import (
    Dataset,
    KernelSpec,
    ProKeR,
    SupportSet,
    SynthPreset,
    ZeroShot,
    ZeroShotHead,
    generate,
    load_matrix,
    oracle_kernel_ridge,
    oracle_nadaraya_watson,
    zero_shot_logits,
)
from muka.errors import NoConvergence, SchemaError
from muka.synth import PRESETS, SPACE_NAMES


def unit_rows(rng, n, dim):
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestPresetValidation:
    def test_presets_are_registered(self):
        assert set(PRESETS) == {"aligned", "complementary", "redundant"}

    def test_rejects_unknown_name(self):
        with pytest.raises(SchemaError):
            SynthPreset("diagonal")

    def test_rejects_single_class(self):
        with pytest.raises(SchemaError):
            SynthPreset("aligned", num_classes=1)

    def test_rejects_dim_below_class_count(self):
        with pytest.raises(SchemaError):
            SynthPreset("aligned", num_classes=8, dims=(4, 12))

    def test_redundant_needs_equal_dims(self):
        with pytest.raises(SchemaError):
            SynthPreset("redundant", dims=(16, 12))

    def test_rejects_odd_samples_per_class(self):
        with pytest.raises(SchemaError):
            SynthPreset("aligned", samples_per_class=5)

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(SchemaError):
            SynthPreset("aligned", sigma=0.0)

    def test_rejects_single_fold(self):
        with pytest.raises(SchemaError):
            SynthPreset("aligned", folds=1)


class TestGenerate:
    def test_regeneration_is_byte_identical(self, tmp_path):
        preset = SynthPreset("aligned", seed=5, samples_per_class=8)
        generate(preset, tmp_path / "a")
        generate(preset, tmp_path / "b")
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes(), name

    def test_manifest_loads_round_trip(self, tmp_path):
        manifest = generate(SynthPreset("aligned", seed=0, samples_per_class=4), tmp_path)
        assert manifest.space_names == SPACE_NAMES
        assert len(manifest.split_train) == len(manifest.split_test) == 2 * 4
        dataset = Dataset.load(manifest.path)
        assert dataset.heads["fine"].num_classes == 4

    def test_near_noiseless_aligned_is_solved_by_zero_shot(self, tmp_path):
        manifest = generate(
            SynthPreset("aligned", sigma=1e-6, seed=1, samples_per_class=4), tmp_path
        )
        dataset = Dataset.load(manifest.path)
        idx = np.array([i for i, _ in manifest.split_test])
        labels = np.array([c for _, c in manifest.split_test])
        est = ZeroShot(space="fine").fit(None, heads=dataset.heads["fine"])
        preds = est.predict(dataset.embeddings["fine"][idx])
        assert np.mean(preds == labels) == 1.0

    def test_redundant_spaces_carry_identical_payloads(self, tmp_path):
        generate(SynthPreset("redundant", dims=(8, 8), seed=3, samples_per_class=4), tmp_path)
        fine = load_matrix(tmp_path / "fine_audio.mkm")
        coarse = load_matrix(tmp_path / "coarse_audio.mkm")
        assert np.array_equal(fine.values, coarse.values)
        fine_head = load_matrix(tmp_path / "fine_head.mkm")
        coarse_head = load_matrix(tmp_path / "coarse_head.mkm")
        assert np.array_equal(fine_head.values, coarse_head.values)

    def test_complementary_pairs_share_a_center_in_their_blurred_space(self, tmp_path):
        preset = SynthPreset(
            "complementary", num_classes=4, sigma=1e-6, seed=2, samples_per_class=4
        )
        manifest = generate(preset, tmp_path)
        dataset = Dataset.load(manifest.path)
        by_sample = manifest.labels_by_sample()
        labels = np.array([by_sample[i] for i in range(dataset.num_samples)])
        for pair, blurred in ((0, "fine"), (1, "coarse")):
            a, b = 2 * pair, 2 * pair + 1
            sharp = "coarse" if blurred == "fine" else "fine"
            mean_a = dataset.embeddings[blurred][labels == a].mean(axis=0)
            mean_b = dataset.embeddings[blurred][labels == b].mean(axis=0)
            assert np.linalg.norm(mean_a - mean_b) < 1e-5
            mean_a = dataset.embeddings[sharp][labels == a].mean(axis=0)
            mean_b = dataset.embeddings[sharp][labels == b].mean(axis=0)
            assert np.linalg.norm(mean_a - mean_b) > 0.5

    def test_heads_are_orthonormal(self, tmp_path):
        manifest = generate(SynthPreset("aligned", seed=4, samples_per_class=4), tmp_path)
        dataset = Dataset.load(manifest.path)
        for space in SPACE_NAMES:
            w = dataset.heads[space].weights
            # stored as float32, so orthogonality survives only to ~1e-7
            np.testing.assert_allclose(w.T @ w, np.eye(w.shape[1]), atol=1e-6)

    def test_folds_partition_the_sample_pool(self, tmp_path):
        manifest = generate(
            SynthPreset("aligned", folds=5, seed=6, samples_per_class=20), tmp_path
        )
        assert len(manifest.folds) == 5
        everything = set(range(4 * 20))
        for fold in manifest.folds:
            assert set(fold.train) & set(fold.test) == set()
            assert set(fold.train) | set(fold.test) == everything
        covered = sorted(i for fold in manifest.folds for i in fold.test)
        assert covered == sorted(everything)  # fold test slices are disjoint

    def test_manifest_records_the_generator(self, tmp_path):
        manifest = generate(SynthPreset("aligned", seed=7, samples_per_class=4), tmp_path)
        assert manifest.synth["rng"] == "PCG64"
        assert manifest.synth["seed"] == 7


class TestOracleKernelRidge:
    def hand_instance(self):
        head = ZeroShotHead("fine", np.array([[1.0, -1.0]]))
        support = SupportSet(
            embeddings={"fine": np.array([[1.0], [-1.0]])},
            labels=np.array([0, 1]),
            num_classes=2,
            shots_per_class=1,
        )
        return support, head

    def test_hand_instance(self):
        support, head = self.hand_instance()
        gamma = oracle_kernel_ridge(
            support, head, KernelSpec.single("fine", 1.0), lam=1.0, tau=0.0
        )
        expected = np.array([[0.50230, -0.03398], [-0.03398, 0.50230]])
        np.testing.assert_allclose(gamma, expected, atol=1e-4)

    def test_large_lam_returns_the_raw_residual(self):
        support, head = self.hand_instance()
        gamma = oracle_kernel_ridge(
            support, head, KernelSpec.single("fine", 1.0), lam=1e9, tau=1.0
        )
        residual = support.onehot() - zero_shot_logits(support.embeddings["fine"], head)
        np.testing.assert_allclose(gamma, residual, atol=1e-6)

    def test_raises_when_step_budget_is_too_small(self):
        support, head = self.hand_instance()
        with pytest.raises(NoConvergence):
            oracle_kernel_ridge(
                support,
                head,
                KernelSpec.single("fine", 1.0),
                lam=1.0,
                tau=0.0,
                max_steps=3,
            )

    def test_agrees_with_the_closed_form_solver(self):
        rng = np.random.default_rng(42)
        rows = unit_rows(rng, 12, 6)
        y = np.repeat(np.arange(3), 4)
        w = rng.standard_normal((6, 3))
        head = ZeroShotHead("fine", w / np.linalg.norm(w, axis=0, keepdims=True))
        support = SupportSet(
            embeddings={"fine": rows}, labels=y, num_classes=3, shots_per_class=4
        )
        spec = KernelSpec.single("fine", 3.0)
        gamma = oracle_kernel_ridge(support, head, spec, lam=0.5)
        est = ProKeR(lam=0.5, beta=3.0).fit({"fine": rows}, y, heads=head)
        rel = np.linalg.norm(gamma - est.gamma_) / np.linalg.norm(est.gamma_)
        assert rel <= 1e-5


class TestOracleNadarayaWatson:
    def test_sharp_kernel_picks_the_nearest_support(self):
        support = SupportSet(
            embeddings={"fine": np.eye(3)},
            labels=np.array([0, 1, 2]),
            num_classes=3,
            shots_per_class=1,
        )
        probs = oracle_nadaraya_watson(
            {"fine": np.eye(3)[1]}, support, KernelSpec.single("fine", 1e6)
        )
        np.testing.assert_allclose(probs, [0.0, 1.0, 0.0], atol=1e-12)

    def test_single_support_is_certain(self):
        support = SupportSet(
            embeddings={"fine": np.array([[1.0, 0.0]])},
            labels=np.array([0]),
            num_classes=1,
            shots_per_class=1,
        )
        probs = oracle_nadaraya_watson(
            {"fine": np.array([0.0, 1.0])}, support, KernelSpec.single("fine", 1.0)
        )
        np.testing.assert_allclose(probs, [1.0], atol=0)

    def test_equidistant_supports_average_their_labels(self):
        # query on axis 0; three supports orthogonal to it and to each other
        eye = np.eye(4)
        support = SupportSet(
            embeddings={"fine": eye[1:]},
            labels=np.array([0, 0, 1]),
            num_classes=2,
            shots_per_class=2,
        )
        probs = oracle_nadaraya_watson(
            {"fine": eye[0]}, support, KernelSpec.single("fine", 2.0)
        )
        np.testing.assert_allclose(probs, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)
