import numpy as np
import pytest

from crossface.dataset import (DatasetError, Domain, DomainShiftParams,
                               FaceSample, ManifestError, SampleIndex,
                               derive_seed, ingest_manifest, plan_many_splits,
                               plan_split, save_dataset, splitmix64,
                               synthesize_dataset)


def subjects(n):
    return [f"s{k:03d}" for k in range(n)]


class TestSeeds:
    def test_splitmix64_is_deterministic(self):
        assert splitmix64(0) == splitmix64(0)
        assert splitmix64(1) != splitmix64(2)
        assert 0 <= splitmix64(2 ** 63) < 2 ** 64

    def test_derive_seed(self):
        assert derive_seed(42, 0) == derive_seed(42, 0)
        assert derive_seed(42, 0) != derive_seed(42, 1)
        assert derive_seed(42, 1, 2) != derive_seed(42, 2, 1)


class TestPlanSplit:
    def test_reference_scale_counts(self):
        plan = plan_split(subjects(50), seed=3)
        assert (len(plan.train_subjects), len(plan.dev_subjects),
                len(plan.eval_subjects)) == (30, 10, 10)
        gen = [p for p in plan.train_pairs if p.genuine]
        imp = [p for p in plan.train_pairs if not p.genuine]
        assert (len(gen), len(imp)) == (30, 870)
        for pairs in (plan.dev_pairs, plan.eval_pairs):
            assert sum(p.genuine for p in pairs) == 10
            assert sum(not p.genuine for p in pairs) == 90

    def test_disjoint_and_covering(self):
        plan = plan_split(subjects(50), seed=9)
        t, d, e = map(set, (plan.train_subjects, plan.dev_subjects,
                            plan.eval_subjects))
        assert not (t & d) and not (t & e) and not (d & e)
        assert t | d | e == set(subjects(50))

    def test_cv_folds_partition_train(self):
        plan = plan_split(subjects(50), seed=9)
        folds = [set(f) for f in plan.cv_folds]
        assert [len(f) for f in folds] == [10, 10, 10]
        assert folds[0] | folds[1] | folds[2] == set(plan.train_subjects)
        assert not (folds[0] & folds[1]) and not (folds[1] & folds[2])

    def test_fold_pairs_are_within_fold(self):
        plan = plan_split(subjects(50), seed=9)
        for k in range(3):
            pairs = plan.fold_pairs(k)
            fold = set(plan.cv_folds[k])
            assert sum(p.genuine for p in pairs) == 10
            assert sum(not p.genuine for p in pairs) == 90
            assert all(p.id_subject in fold and p.selfie_subject in fold
                       for p in pairs)

    def test_labels_by_brute_force(self):
        plan = plan_split(subjects(12), seed=1)
        for p in plan.train_pairs + plan.dev_pairs + plan.eval_pairs:
            assert p.genuine == (p.id_subject == p.selfie_subject)

    def test_pair_count_formula(self):
        plan = plan_split(subjects(20), seed=4)
        for pairs, u in ((plan.train_pairs, 12), (plan.dev_pairs, 4),
                         (plan.eval_pairs, 4)):
            assert len(pairs) == u * u
            assert sum(p.genuine for p in pairs) == u

    def test_floor_rule_non_divisible(self):
        plan = plan_split(subjects(7), seed=2)
        assert (len(plan.train_subjects), len(plan.dev_subjects),
                len(plan.eval_subjects)) == (4, 1, 2)
        # near-equal folds when train size is not divisible by 3
        assert sorted(len(f) for f in plan.cv_folds) == [1, 1, 2]

    def test_determinism(self):
        assert plan_split(subjects(20), 5) == plan_split(subjects(20), 5)
        assert plan_split(subjects(20), 5) != plan_split(subjects(20), 6)

    def test_too_few_subjects(self):
        with pytest.raises(DatasetError):
            plan_split(subjects(4), 1)


class TestPlanManySplits:
    def test_derived_seed_contract(self):
        plans = plan_many_splits(subjects(20), master_seed=7, n=5)
        assert len(plans) == 5
        assert plans[0] != plans[1]
        assert plans == plan_many_splits(subjects(20), master_seed=7, n=5)

    def test_singleton_equals_plan_split(self):
        [plan] = plan_many_splits(subjects(20), master_seed=7, n=1)
        assert plan == plan_split(subjects(20), derive_seed(7, 0))

    def test_distinct_train_sets(self):
        plans = plan_many_splits(subjects(50), master_seed=3, n=20)
        assert len({plan.train_subjects for plan in plans}) == 20


class TestSynthesize:
    def test_two_samples_per_subject(self, small_samples):
        assert len(small_samples) == 16
        assert len({s.subject_id for s in small_samples}) == 8
        for s in small_samples:
            assert s.domain in (Domain.ID_DOCUMENT, Domain.SELFIE)

    def test_bit_identical_rerun(self):
        a = synthesize_dataset(3, seed=7)
        b = synthesize_dataset(3, seed=7)
        for x, y in zip(a, b):
            assert np.array_equal(x.image, y.image)
            assert x.eyes == y.eyes

    def test_seed_sensitivity(self):
        a = synthesize_dataset(3, seed=7)
        b = synthesize_dataset(3, seed=8)
        assert any(not np.array_equal(x.image, y.image) for x, y in zip(a, b))

    def test_too_few_subjects(self):
        with pytest.raises(DatasetError):
            synthesize_dataset(2, seed=1)

    def test_domains_differ_under_shift(self):
        a, b = synthesize_dataset(3, seed=7)[:2]
        assert a.subject_id == b.subject_id
        assert not np.array_equal(a.image, b.image)

    def test_no_shift_makes_near_duplicates(self):
        a, b = synthesize_dataset(3, seed=7, shift=DomainShiftParams.none())[:2]
        assert np.array_equal(a.image, b.image)


class TestFaceSampleValidation:
    def img(self):
        return np.zeros((100, 100, 3), dtype=np.uint8)

    def test_roi_clamped(self):
        s = FaceSample("a", Domain.SELFIE, self.img(), (-10, -10, 120, 120),
                       ((20, 20), (60, 20)), "a/selfie")
        assert s.roi == (0.0, 0.0, 100.0, 100.0)

    def test_roi_outside(self):
        with pytest.raises(DatasetError, match="outside image bounds"):
            FaceSample("a", Domain.SELFIE, self.img(), (200, 200, 10, 10),
                       ((20, 20), (60, 20)), "a/selfie")

    def test_eye_order(self):
        with pytest.raises(DatasetError, match="left eye"):
            FaceSample("a", Domain.SELFIE, self.img(), (0, 0, 100, 100),
                       ((60, 20), (20, 20)), "a/selfie")

    def test_eye_outside_roi(self):
        with pytest.raises(DatasetError, match="outside ROI"):
            FaceSample("a", Domain.SELFIE, self.img(), (40, 40, 30, 30),
                       ((10, 50), (60, 50)), "a/selfie")


class TestManifest:
    def test_round_trip(self, tmp_path, small_samples):
        manifest = save_dataset(small_samples, str(tmp_path))
        loaded = ingest_manifest(manifest)
        assert len(loaded) == len(small_samples)
        for orig, got in zip(small_samples, loaded):
            assert got.subject_id == orig.subject_id
            assert got.domain == orig.domain
            assert np.array_equal(got.image, orig.image)

    def test_sample_count_scaling(self, tmp_path):
        samples = synthesize_dataset(10, seed=3)
        loaded = ingest_manifest(save_dataset(samples, str(tmp_path)))
        assert len(loaded) == 20
        assert len({s.subject_id for s in loaded}) == 10

    def _write(self, tmp_path, rows, header=None):
        from crossface.dataset import MANIFEST_COLUMNS
        path = tmp_path / "manifest.csv"
        lines = [",".join(header or MANIFEST_COLUMNS)] + rows
        path.write_text("\n".join(lines) + "\n")
        return str(path)

    def _png(self, tmp_path, name="x.png", mode="RGB"):
        from PIL import Image
        p = tmp_path / name
        Image.new(mode, (64, 64)).save(p)
        return name

    def test_unknown_domain(self, tmp_path):
        name = self._png(tmp_path)
        path = self._write(tmp_path, [f"s01,{name},passport,10,20,40,20,0,0,64,64"])
        with pytest.raises(ManifestError, match="row 1.*passport"):
            ingest_manifest(path)

    def test_missing_file(self, tmp_path):
        path = self._write(tmp_path, ["s01,gone.png,id,10,20,40,20,0,0,64,64"])
        with pytest.raises(ManifestError, match="not found"):
            ingest_manifest(path)

    def test_bad_header(self, tmp_path):
        path = self._write(tmp_path, [], header=["a", "b"])
        with pytest.raises(ManifestError, match="header"):
            ingest_manifest(path)

    def test_non_rgb_image(self, tmp_path):
        name = self._png(tmp_path, "gray.png", mode="L")
        path = self._write(tmp_path, [f"s01,{name},id,10,20,40,20,0,0,64,64"])
        with pytest.raises(ManifestError, match="expected 8-bit RGB"):
            ingest_manifest(path)

    def test_malformed_number(self, tmp_path):
        name = self._png(tmp_path)
        path = self._write(tmp_path, [f"s01,{name},id,ten,20,40,20,0,0,64,64"])
        with pytest.raises(ManifestError, match="row 1"):
            ingest_manifest(path)

    def test_invalid_annotation_names_row(self, tmp_path):
        name = self._png(tmp_path)
        rows = [f"s01,{name},id,10,20,40,20,0,0,64,64",
                f"s02,{name},id,40,20,10,20,0,0,64,64"]   # eyes swapped
        with pytest.raises(ManifestError, match="row 2"):
            ingest_manifest(self._write(tmp_path, rows))


class TestShiftParams:
    def test_from_dict(self):
        assert DomainShiftParams.from_dict("none") == DomainShiftParams.none()
        assert DomainShiftParams.from_dict(None) == DomainShiftParams.none()
        assert DomainShiftParams.from_dict("default") == DomainShiftParams()
        custom = DomainShiftParams.from_dict({"color_cast": 2.0})
        assert custom.color_cast == 2.0 and custom.blur_sigma == 1.2


class TestSampleIndex:
    def test_lookup(self, small_samples):
        index = SampleIndex(small_samples)
        assert index.subjects() == sorted({s.subject_id for s in small_samples})
        sid = small_samples[0].subject_id
        assert index.samples_of(sid, Domain.ID_DOCUMENT) == [f"{sid}/id"]

    def test_duplicate_rejected(self, small_samples):
        with pytest.raises(DatasetError, match="duplicate"):
            SampleIndex(list(small_samples) + [small_samples[0]])
