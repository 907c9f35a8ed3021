import numpy as np
import pytest

from vseg import pipeline
from vseg.nrrd import Volume, write_nrrd
from vseg.phantom import PhantomSpec, generate_phantom
from vseg.pipeline import TrainConfig, predict, split_cohort, train, write_curve_csv
from vseg.preprocess import CaseRecord


def phantom_cohort(n, spec_kw=None, seed0=100):
    kw = dict(spec_kw or {})
    return [generate_phantom(PhantomSpec(seed=seed0 + i, **kw), case_id=f"p{i}")
            for i in range(n)]


class TestSplit:
    def test_default_split_sizes(self):
        cases = list(range(152))
        tr, ev = split_cohort(cases, 10.0 / 152.0, seed=0)
        assert len(tr) == 142
        assert len(ev) == 10

    def test_disjoint_and_exhaustive(self):
        cases = [f"c{i}" for i in range(30)]
        tr, ev = split_cohort(cases, 0.2, seed=3)
        assert sorted(tr + ev) == sorted(cases)
        assert not set(tr) & set(ev)

    def test_seed_determinism(self):
        cases = list(range(40))
        assert split_cohort(cases, 0.25, 7) == split_cohort(cases, 0.25, 7)
        assert split_cohort(cases, 0.25, 7) != split_cohort(cases, 0.25, 8)

    def test_eval_never_empty(self):
        tr, ev = split_cohort([1, 2, 3], 0.01, seed=0)
        assert len(ev) == 1

    def test_too_few_cases(self):
        with pytest.raises(ValueError):
            split_cohort([1], 0.5, 0)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.lr == 1e-4
        assert cfg.epochs == 1019
        assert cfg.crop == 64
        assert cfg.batch == 1

    def test_crop_divisibility(self):
        with pytest.raises(ValueError, match="divisible"):
            TrainConfig(crop=60)

    def test_augmentation_is_disabled(self):
        with pytest.raises(ValueError, match="augmentation"):
            TrainConfig(augmentation=True)


def small_train(epochs=4, seed=0, n_train=2, n_eval=1):
    cases = phantom_cohort(n_train + n_eval)
    cfg = TrainConfig(epochs=epochs, crop=32, base_channels=4, seed=seed,
                      lr=3e-3)
    return train(cases[:n_train], cases[n_train:], cfg), cfg


class TestTrain:
    def test_loss_decreases_and_curve_logged(self, tmp_path):
        result, _ = small_train(epochs=5)
        assert len(result.curve) == 5
        assert result.curve[-1]["train_loss"] < result.curve[0]["train_loss"]
        for row in result.curve:
            assert set(row) == set(pipeline.CURVE_COLUMNS)
        path = tmp_path / "curve.csv"
        write_curve_csv(result.curve, path)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(pipeline.CURVE_COLUMNS)
        assert len(lines) == 6

    def test_best_model_tracks_lowest_eval_loss(self):
        result, _ = small_train(epochs=5)
        losses = [row["eval_loss"] for row in result.curve]
        assert result.best_epoch == int(np.argmin(losses)) + 1
        assert result.best_model is not None

    def test_determinism(self):
        r1, _ = small_train(epochs=2, seed=5)
        r2, _ = small_train(epochs=2, seed=5)
        for k in r1.model.params:
            assert np.array_equal(r1.model.params[k].data, r2.model.params[k].data)
        assert r1.curve == r2.curve

    def test_missing_label_rejected(self):
        cases = phantom_cohort(3)
        cases[1] = CaseRecord(case_id="nolabel", pet=cases[1].pet,
                              prostate=cases[1].prostate)
        cfg = TrainConfig(epochs=1, crop=32, base_channels=4)
        with pytest.raises(ValueError, match="label"):
            train(cases[:2], cases[2:], cfg)


class TestPredict:
    def test_composition_and_containment(self):
        result, cfg = small_train(epochs=3)
        case = phantom_cohort(1, seed0=900)[0]
        mask, timing = predict(result.model, result.norm_stats,
                               case.pet, case.prostate, crop=cfg.crop)
        assert mask.kind == "mask"
        assert mask.dims == case.pet.dims
        assert set(np.unique(mask.data)) <= {0.0, 1.0}
        # prediction never leaves the gland
        assert not ((mask.data > 0) & ~(case.prostate.data > 0)).any()
        assert timing["compute_sec"] > 0

    def test_empty_prostate_gives_empty_mask(self):
        result, cfg = small_train(epochs=1)
        dims = (40, 40, 40)
        pet = Volume(data=np.ones(dims, np.float32), spacing=(2, 2, 2))
        prostate = Volume(data=np.zeros(dims, np.float32), spacing=(2, 2, 2),
                          kind="mask")
        mask, _ = predict(result.model, result.norm_stats, pet, prostate,
                          crop=cfg.crop)
        assert mask.data.sum() == 0
        assert mask.dims == dims


def test_overfit_single_case_and_translation_equivariance():
    """A tiny net overfit on one case localizes the lesion; translating
    the input shifts the prediction by the same amount."""
    dims = (48, 48, 48)
    rng = np.random.default_rng(42)

    def make_case(shift):
        pet = rng.uniform(0.9, 1.1, size=dims).astype(np.float32)
        gx, gy, gz = np.meshgrid(*(np.arange(d) for d in dims), indexing="ij")
        c = (24 + shift, 24, 24)
        ball = ((gx - c[0]) ** 2 + (gy - c[1]) ** 2 + (gz - c[2]) ** 2) <= 6.0 ** 2
        pet[ball] += 8.0
        prostate = np.ones(dims, np.float32)
        return CaseRecord(
            case_id=f"shift{shift}",
            pet=Volume(data=pet, spacing=(2, 2, 2)),
            prostate=Volume(data=prostate, spacing=(2, 2, 2), kind="mask"),
            gtv_label=Volume(data=ball.astype(np.float32), spacing=(2, 2, 2),
                             kind="mask"))

    base = make_case(0)
    shifted = make_case(8)
    cfg = TrainConfig(epochs=60, crop=32, base_channels=8, lr=1e-2, seed=1)
    result = train([base], [base], cfg)

    pred0, _ = predict(result.model, result.norm_stats,
                       base.pet, base.prostate, crop=cfg.crop)
    assert pred0.data.any(), "model failed to overfit the training case"
    dsc0 = (2 * (pred0.data * base.gtv_label.data).sum()
            / (pred0.data.sum() + base.gtv_label.data.sum()))
    assert dsc0 > 0.5

    pred8, _ = predict(result.model, result.norm_stats,
                       shifted.pet, shifted.prostate, crop=cfg.crop)
    assert pred8.data.any()
    c0 = np.nonzero(pred0.data)[0].mean()
    c8 = np.nonzero(pred8.data)[0].mean()
    assert abs((c8 - c0) - 8.0) < 2.0


def test_manifest_round_trip(tmp_path):
    case = phantom_cohort(1)[0]
    for name, vol in (("pet", case.pet), ("prostate", case.prostate),
                      ("gtv", case.gtv_label)):
        write_nrrd(vol, tmp_path / f"{name}.nrrd")
    pipeline.write_manifest(
        [{"id": "p0", "pet_path": "pet.nrrd", "prostate_path": "prostate.nrrd",
          "gtv_path": "gtv.nrrd"}],
        tmp_path / "manifest.json")
    cases = pipeline.load_manifest(tmp_path / "manifest.json")
    assert len(cases) == 1
    assert cases[0].case_id == "p0"
    assert np.array_equal(cases[0].pet.data, case.pet.data)
    assert np.array_equal(cases[0].gtv_label.data, case.gtv_label.data)
    assert cases[0].histo_ref is None
