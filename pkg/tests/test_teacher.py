import numpy as np
import pytest

from dnanas.data import gen_synthetic
from dnanas.teacher import FeatureCache, TeacherClassifier, TeacherFloorError, extract_features


@pytest.fixture
def data(tiny_space):
    return {s: gen_synthetic(0, 3, 8, size=8, noise=0.3, split=s) for s in ("train", "val")}


@pytest.fixture
def teacher(tiny_space, data):
    return TeacherClassifier(tiny_space, epochs=2, batch_size=8, floor=0.0).fit(data["train"].images,
                                                                               data["train"].labels)


def test_block_outputs_shapes(teacher, tiny_space, data):
    ys = teacher.block_outputs(data["val"].images)
    assert len(ys) == len(tiny_space.blocks) + 1
    assert ys[0].shape == (24, 4, 8, 8)
    assert ys[1].shape == (24, 4, 4, 4)
    assert ys[2].shape == (24, 6, 4, 4)


def test_run_block_matches_block_outputs(teacher, data):
    ys = teacher.block_outputs(data["val"].images)
    np.testing.assert_array_equal(teacher.run_block(1, ys[1]), ys[2])


def test_floor_enforced(tiny_space, data):
    with pytest.raises(TeacherFloorError) as exc:
        TeacherClassifier(tiny_space, epochs=1, batch_size=8, floor=1.01).fit(data["train"].images,
                                                                           data["train"].labels)
    assert exc.value.floor == 1.01


def test_fit_is_deterministic(tiny_space, data, teacher):
    again = TeacherClassifier(tiny_space, epochs=2, batch_size=8, floor=0.0).fit(data["train"].images,
                                                                               data["train"].labels)
    for name in teacher.params_:
        np.testing.assert_array_equal(teacher.params_[name], again.params_[name])


def test_save_load_roundtrip(tmp_path, teacher, data):
    teacher.save(tmp_path / "t.bin")
    loaded = TeacherClassifier.load(tmp_path / "t.bin")
    np.testing.assert_array_equal(loaded.decision_function(data["val"].images),
                                  teacher.decision_function(data["val"].images))
    assert loaded.get_params()["epochs"] == 2


def test_rejects_bad_input(teacher):
    with pytest.raises(ValueError):
        teacher.predict(np.zeros((2, 3, 9, 9), np.float32))


def test_feature_cache_roundtrip(tmp_path, teacher, data):
    cache = extract_features(teacher, data)
    assert cache.n_blocks == 2 and set(cache.splits) == {"train", "val"}
    y = cache.get("val", 2)
    assert cache.sigma("val", 2) == pytest.approx(float(np.std(y, dtype=np.float64)), rel=1e-12)
    cache.save(tmp_path / "f")
    loaded = FeatureCache.load(tmp_path / "f")
    assert loaded.teacher_digest == cache.teacher_digest
    for s in cache.splits:
        for i in range(3):
            np.testing.assert_array_equal(loaded.get(s, i), cache.get(s, i))
    with pytest.raises(KeyError):
        cache.get("test", 0)
