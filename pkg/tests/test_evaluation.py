import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from egograph.errors import EmptyOutputError, FormatError, ParameterError, ShapeError
from egograph.evaluation import (confusion_image, default_palette, emit_confusion_matrix,
                                 emit_segment_plot, evaluate, load_palette, read_ppm,
                                 report_from_confusion, segment_image)


def labels_from_confusion(cm):
    truth, pred = [], []
    for k, row in enumerate(cm):
        for l, count in enumerate(row):
            truth += [k] * count
            pred += [l] * count
    return np.array(pred), np.array(truth)


def test_perfect_prediction():
    y = np.array([0, 1, 1, 0, 1, 0, 0, 1, 1, 0])
    r = evaluate(y, y, 2)
    assert r.accuracy == 1.0 and r.mean_precision == 1.0 and r.mean_recall == 1.0
    np.testing.assert_array_equal(r.precision, 1.0)
    np.testing.assert_array_equal(r.recall, 1.0)


def test_hand_computed_confusion():
    pred, truth = labels_from_confusion([[3, 1], [2, 4]])
    r = evaluate(pred, truth, 2)
    np.testing.assert_array_equal(r.confusion, [[3, 1], [2, 4]])
    assert r.precision[0] == 3 / 5 and r.recall[0] == 3 / 4
    assert r.precision[1] == 4 / 5 and r.recall[1] == 4 / 6
    assert r.accuracy == 7 / 10


def test_never_predicted_class_flagged():
    r = evaluate([0, 1, 0, 1], [0, 1, 2, 2], 3)
    assert r.precision[2] == 0.0 and r.precision_undefined[2]
    assert not r.recall_undefined[2] and r.recall[2] == 0.0
    assert not r.precision_undefined[:2].any()


def test_absent_true_class_recall_flagged():
    r = evaluate([0, 2], [0, 0], 3)
    assert r.recall_undefined[1] and r.recall_undefined[2] and r.recall[2] == 0.0


def test_length_mismatch():
    with pytest.raises(ShapeError):
        evaluate([0, 1], [0, 1, 1], 2)


def test_eval_classes_subset_means():
    r = evaluate([0, 1, 2, 2, 1], [0, 1, 2, 1, 2], 3, eval_classes=[0, 2])
    assert r.mean_precision == (r.precision[0] + r.precision[2]) / 2
    assert r.mean_recall == (r.recall[0] + r.recall[2]) / 2
    with pytest.raises(ParameterError):
        evaluate([0], [0], 2, eval_classes=[5])


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=80),
       st.sets(st.integers(0, 4), min_size=1))
def test_report_invariants(pairs, eval_classes):
    pred, truth = map(np.array, zip(*pairs))
    r = evaluate(pred, truth, 5, sorted(eval_classes))
    assert r.confusion.sum() == len(pred)
    assert r.accuracy == np.trace(r.confusion) / len(pred)
    assert np.all((0 <= r.precision) & (r.precision <= 1))
    assert np.all((0 <= r.recall) & (r.recall <= 1))
    idx = sorted(eval_classes)
    assert r.mean_precision == pytest.approx(sum(r.precision[idx]) / len(idx), abs=1e-15)


def test_report_dict_is_json():
    r = report_from_confusion([[3, 1], [2, 4]])
    d = json.loads(json.dumps(r.to_dict(["a", "b"])))
    assert d["confusion"] == [[3, 1], [2, 4]] and d["segments"] == 10


# -- images ------------------------------------------------------------------

def test_segment_plot_four_segments(tmp_path):
    p = tmp_path / "s.ppm"
    pal = default_palette()
    emit_segment_plot([0, 0, 1, 1], p, height=10)
    img = read_ppm(p)
    assert img.shape == (10, 4, 3)
    assert np.all(img[:, :2] == pal[0]) and np.all(img[:, 2:] == pal[1])


def test_segment_plot_empty_refused(tmp_path):
    with pytest.raises(EmptyOutputError):
        emit_segment_plot([], tmp_path / "s.ppm")


def test_segment_plot_width_and_truth_strip(tmp_path):
    pred = np.random.default_rng(0).integers(0, 14, 4000)
    p = tmp_path / "s.ppm"
    emit_segment_plot(pred, p, height=3, truth=np.zeros(4000, dtype=int))
    img = read_ppm(p)
    assert img.shape == (6, 4000, 3)
    assert np.all(img[3:] == default_palette()[0])


def test_segment_plot_palette_too_small():
    with pytest.raises(ParameterError):
        segment_image([0, 3], palette=[[0, 0, 0], [1, 1, 1]])


def test_palette_loading(tmp_path):
    assert default_palette().shape == (14, 3)
    p = tmp_path / "pal.json"
    p.write_text("[[1, 2, 3], [4, 5, 6]]")
    np.testing.assert_array_equal(load_palette(p), [[1, 2, 3], [4, 5, 6]])
    p.write_text("[[1, 2], [4, 5]]")
    with pytest.raises(FormatError):
        load_palette(p)


def test_confusion_csv_exact(tmp_path):
    c, i = tmp_path / "c.csv", tmp_path / "c.ppm"
    emit_confusion_matrix(report_from_confusion([[3, 1], [2, 4]]), c, i)
    assert c.read_bytes() == b"3,1\n2,4"
    assert read_ppm(i).shape == (32, 32, 3)


def test_confusion_image_identity_and_zero_row():
    img = confusion_image(np.diag([5, 2, 9]), cell=1)[..., 0]
    np.testing.assert_array_equal(img, [[0, 255, 255], [255, 0, 255], [255, 255, 0]])
    img = confusion_image([[0, 0], [1, 3]], cell=1)[..., 0]
    np.testing.assert_array_equal(img[0], [255, 255])
    np.testing.assert_array_equal(img[1], [191, 64])


def test_confusion_image_row_normalized_blocks():
    img = confusion_image([[2, 2], [0, 10]], cell=4)
    assert img.shape == (8, 8, 3)
    assert np.all(img[:4, :4] == img[:4, 4:]) and np.all(img[4:, 4:] == 0)
