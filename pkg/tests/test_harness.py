import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privfan import harness
from privfan.blur import BlurParams, blur_image
from privfan.metrics import cra
from privfan.tensor import FeatureTensor, Image


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_encode_decode_exact(seed):
    img, _, _ = harness.generate_scene(harness.SceneSpec(seed=seed, size=(96, 192), plates=1))
    t = harness.encode(img)
    assert t.shape == (16, 24, 48)
    assert np.abs(harness.decode_array(t) - img.data[0]).max() <= 1e-6


def test_scene_is_deterministic_and_consistent():
    spec = harness.SceneSpec(seed=7)
    img, labels, anns = harness.generate_scene(spec)
    img2, labels2, anns2 = harness.generate_scene(spec)
    assert img == img2 and anns == anns2
    assert np.array_equal(labels.segmentation, labels2.segmentation)
    assert len(anns) == 2 and all(a.within(128, 256) for a in anns)
    for a in anns:
        x, y, w, h = a.bbox
        assert x % 4 == 0 and y % 4 == 0 and h == harness.PLATE_H
        assert set(a.text) <= set(harness.ALPHABET)
        assert np.all(labels.segmentation[y : y + h, x : x + w] == labels.ignore_id)
    # every class survives the plates
    assert set(np.unique(labels.segmentation)) == set(range(4)) | {255}


def test_heads_read_only_the_coarse_channel():
    img, labels, _ = harness.generate_scene(harness.SceneSpec(seed=3))
    t = harness.encode(img)
    data = t.data.copy()
    data[1:] = 0
    stripped = FeatureTensor(data)
    k = labels.num_classes
    assert np.array_equal(harness.seg_head(t, k), harness.seg_head(stripped, k))
    assert np.array_equal(harness.disp_head(t), harness.disp_head(stripped))
    valid = labels.valid_mask
    assert np.array_equal(harness.seg_head(t, k)[valid], labels.segmentation[valid])
    assert np.allclose(harness.disp_head(t)[valid], labels.disparity[valid], atol=1e-6)


def test_recognizer_reads_clean_plates(small_corpus):
    preds = {s.image_id: harness.recognize_plates(s.image, s.annotations) for s in small_corpus.scenes}
    assert cra(small_corpus.annotations, preds).cra == 100.0


def test_recognizer_fails_without_detail():
    img, _, anns = harness.generate_scene(harness.SceneSpec(seed=11))
    t = harness.encode(img)
    data = t.data.copy()
    data[1:] = 0
    coarse = harness.decode(FeatureTensor(data))
    preds = {anns[0].image_id: harness.recognize_plates(coarse, anns)}
    assert cra(anns, preds).cra < 20
    blurred = blur_image(img, BlurParams(4.0))
    assert cra(anns, {anns[0].image_id: harness.recognize_plates(blurred, anns)}).cra < 20


def test_recognizer_blank_plate_reads_nothing():
    plane = np.ones((40, 80))
    assert harness.recognize_glyphs(Image(plane), [(0, 0, harness.plate_width(4), harness.PLATE_H)]) == [""]


def test_spec_validation():
    with pytest.raises(ValueError):
        harness.SceneSpec(seed=0, size=(30, 64))
    with pytest.raises(ValueError):
        harness.SceneSpec(seed=0, regions=1)
    with pytest.raises(harness.PlacementError):
        harness.generate_scene(harness.SceneSpec(seed=0, size=(16, 32), plates=3))
    with pytest.raises(ValueError):
        harness.encode(Image(np.zeros((3, 8, 8))))
    with pytest.raises(ValueError):
        harness.decode_array(FeatureTensor(np.zeros((4, 2, 2), np.float32)))
