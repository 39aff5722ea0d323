import math

import numpy as np
import pytest

from fusekit.evaluation import (
    CalibrationReport,
    PredictionSet,
    calibration,
    compute_metrics,
    confusion_matrix,
    deep_ensemble_average,
    histogram_kl,
    oracle_merge,
    oracle_score,
)


def brute_force_merge(preds, gt, ignore_label=255):
    """Pixel-by-pixel reference: keep preds[0] unless some model is right."""
    h, w = gt.shape
    out = np.array(preds[0], copy=True)
    for y in range(h):
        for x in range(w):
            if gt[y, x] == ignore_label:
                continue
            for pred in preds:
                if pred[y, x] == gt[y, x]:
                    out[y, x] = gt[y, x]
                    break
    return out


def brute_force_cm(preds, gts, num_classes, ignore_label=255):
    counts = [[0] * num_classes for _ in range(num_classes)]
    for pred, gt in zip(preds, gts):
        for g, p in zip(gt.ravel().tolist(), pred.ravel().tolist()):
            if g == ignore_label:
                continue
            counts[g][p] += 1
    return counts


def brute_force_bins(conf, correct, num_bins):
    """Per-bin count/accuracy/confidence via explicit loops."""
    totals = [0] * num_bins
    hits = [0] * num_bins
    conf_sums = [0.0] * num_bins
    for c, ok in zip(conf.tolist(), correct.tolist()):
        b = min(int(c * num_bins), num_bins - 1)
        totals[b] += 1
        hits[b] += int(ok)
        conf_sums[b] += c
    return totals, hits, conf_sums


class TestOracleMerge:
    def test_worked_trace(self):
        # gt [1,2,3]; model A right on pixel 0, model B right on pixel 1,
        # nobody right on pixel 2 which keeps model A's value 0.
        gt = np.array([[1, 2, 3]], dtype=np.uint16)
        pa = np.array([[1, 0, 0]], dtype=np.uint16)
        pb = np.array([[0, 2, 0]], dtype=np.uint16)
        np.testing.assert_array_equal(oracle_merge([pa, pb], gt), [[1, 2, 0]])

    def test_single_model_identity(self):
        gt = np.array([[0, 1], [2, 3]], dtype=np.uint16)
        pred = np.array([[0, 0], [2, 2]], dtype=np.uint16)
        np.testing.assert_array_equal(oracle_merge([pred], gt), pred)

    def test_ignore_pixels_pass_through(self):
        gt = np.array([[255, 1]], dtype=np.uint16)
        pa = np.array([[4, 0]], dtype=np.uint16)
        pb = np.array([[255, 1]], dtype=np.uint16)
        merged = oracle_merge([pa, pb], gt)
        assert merged[0, 0] == 4  # first model's value survives under ignore

    def test_order_of_models_irrelevant_on_agreement(self):
        gt = np.array([[1, 2]], dtype=np.uint16)
        pa = np.array([[1, 2]], dtype=np.uint16)
        pb = np.array([[1, 0]], dtype=np.uint16)
        np.testing.assert_array_equal(
            oracle_merge([pa, pb], gt), oracle_merge([pb, pa], gt)
        )

    def test_matches_brute_force(self, rng):
        for _ in range(10):
            k = int(rng.integers(1, 4))
            gt = rng.integers(0, 4, size=(6, 7)).astype(np.uint16)
            gt[rng.random(gt.shape) < 0.1] = 255
            preds = [rng.integers(0, 4, size=gt.shape).astype(np.uint16) for _ in range(k)]
            np.testing.assert_array_equal(
                oracle_merge(preds, gt), brute_force_merge(preds, gt)
            )

    def test_no_predictions_rejected(self):
        with pytest.raises(ValueError):
            oracle_merge([], np.zeros((2, 2), dtype=np.uint16))

    def test_shape_mismatch_rejected(self):
        gt = np.zeros((2, 2), dtype=np.uint16)
        with pytest.raises(ValueError, match="shape"):
            oracle_merge([np.zeros((2, 3), dtype=np.uint16)], gt)


class TestConfusionMatrix:
    def test_hand_tally(self):
        gt = np.array([[0, 0, 0, 1, 1, 1]], dtype=np.uint16)
        pred = np.array([[0, 0, 1, 0, 1, 1]], dtype=np.uint16)
        cm = confusion_matrix([pred], [gt], num_classes=2)
        np.testing.assert_array_equal(cm.counts, [[2, 1], [1, 2]])
        assert cm.valid_pixels == 6

    def test_ignore_excluded(self):
        gt = np.array([[0, 255]], dtype=np.uint16)
        pred = np.array([[0, 0]], dtype=np.uint16)
        cm = confusion_matrix([pred], [gt], num_classes=2)
        assert cm.valid_pixels == 1

    def test_accumulates_over_images(self):
        gt = np.array([[0]], dtype=np.uint16)
        pred = np.array([[1]], dtype=np.uint16)
        cm = confusion_matrix([pred, pred, pred], [gt, gt, gt], num_classes=2)
        assert cm.counts[0, 1] == 3

    def test_label_out_of_range_rejected(self):
        gt = np.array([[5]], dtype=np.uint16)
        pred = np.array([[0]], dtype=np.uint16)
        with pytest.raises(ValueError, match="num_classes"):
            confusion_matrix([pred], [gt], num_classes=2)

    def test_matches_brute_force(self, rng):
        for _ in range(10):
            c = int(rng.integers(2, 6))
            gts, preds = [], []
            for _ in range(int(rng.integers(1, 4))):
                gt = rng.integers(0, c, size=(5, 8)).astype(np.uint16)
                gt[rng.random(gt.shape) < 0.15] = 255
                gts.append(gt)
                preds.append(rng.integers(0, c, size=gt.shape).astype(np.uint16))
            cm = confusion_matrix(preds, gts, num_classes=c)
            np.testing.assert_array_equal(cm.counts, brute_force_cm(preds, gts, c))


class TestComputeMetrics:
    def test_hand_values(self):
        # counts [[2,1],[1,2]]: IoU = 2/4 = 0.5 per class, miou 0.5,
        # pixel accuracy 4/6.
        gt = np.array([[0, 0, 0, 1, 1, 1]], dtype=np.uint16)
        pred = np.array([[0, 0, 1, 0, 1, 1]], dtype=np.uint16)
        scores = compute_metrics(confusion_matrix([pred], [gt], num_classes=2))
        np.testing.assert_allclose(scores.iou, [0.5, 0.5])
        assert scores.miou == pytest.approx(0.5, abs=1e-15)
        assert scores.pixel_accuracy == pytest.approx(4 / 6, abs=1e-15)

    def test_perfect_prediction(self):
        gt = np.array([[0, 1, 2]], dtype=np.uint16)
        scores = compute_metrics(confusion_matrix([gt], [gt], num_classes=3))
        assert scores.miou == 1.0
        assert scores.precision == 1.0
        assert scores.recall == 1.0

    def test_present_but_never_predicted_counts_as_zero(self):
        # Class 1 has ground-truth pixels and zero predictions; its IoU
        # of 0 stays in the mean, dragging it to (1 + 0) / 2.
        gt = np.array([[0, 1]], dtype=np.uint16)
        pred = np.array([[0, 0]], dtype=np.uint16)
        scores = compute_metrics(confusion_matrix([pred], [gt], num_classes=2))
        assert scores.iou[1] == 0.0
        assert bool(scores.included[1]) is True
        assert scores.miou == pytest.approx(0.25, abs=1e-15)  # IoU [0.5, 0.0]

    def test_absent_class_excluded(self):
        # Class 2 never appears on either side: NaN IoU, out of the mean.
        gt = np.array([[0, 1]], dtype=np.uint16)
        pred = np.array([[0, 1]], dtype=np.uint16)
        scores = compute_metrics(confusion_matrix([pred], [gt], num_classes=3))
        assert math.isnan(scores.iou[2])
        assert bool(scores.included[2]) is False
        assert scores.miou == 1.0

    def test_all_empty_rejected(self):
        gt = np.full((2, 2), 255, dtype=np.uint16)
        pred = np.zeros((2, 2), dtype=np.uint16)
        cm = confusion_matrix([pred], [gt], num_classes=2)
        cm.counts[:] = 0
        with pytest.raises(ValueError, match="empty"):
            compute_metrics(cm)

    def test_iou_definition_random(self, rng):
        for _ in range(10):
            c = int(rng.integers(2, 5))
            gt = rng.integers(0, c, size=(10, 10)).astype(np.uint16)
            pred = rng.integers(0, c, size=(10, 10)).astype(np.uint16)
            scores = compute_metrics(confusion_matrix([pred], [gt], num_classes=c))
            for cls in range(c):
                tp = int(np.sum((gt == cls) & (pred == cls)))
                union = int(np.sum((gt == cls) | (pred == cls)))
                if union == 0:
                    assert math.isnan(scores.iou[cls])
                else:
                    assert scores.iou[cls] == pytest.approx(tp / union, abs=1e-12)


class TestOracleScore:
    def test_union_beats_each_member(self, rng):
        gts, model_a, model_b = [], [], []
        for seed in range(3):
            gt = np.random.default_rng(seed).integers(0, 4, size=(8, 8)).astype(np.uint16)
            gts.append(gt)
            r = np.random.default_rng(100 + seed)
            model_a.append(np.where(r.random(gt.shape) < 0.6, gt, (gt + 1) % 4).astype(np.uint16))
            model_b.append(np.where(r.random(gt.shape) < 0.6, gt, (gt + 2) % 4).astype(np.uint16))
        oracle = oracle_score([model_a, model_b], gts, num_classes=4)
        single_a = compute_metrics(confusion_matrix(model_a, gts, num_classes=4))
        single_b = compute_metrics(confusion_matrix(model_b, gts, num_classes=4))
        assert oracle.pixel_accuracy >= max(single_a.pixel_accuracy, single_b.pixel_accuracy)

    def test_length_mismatch_rejected(self):
        gt = np.zeros((2, 2), dtype=np.uint16)
        with pytest.raises(ValueError, match="predictions"):
            oracle_score([[gt]], [gt, gt], num_classes=2)


class TestDeepEnsembleAverage:
    def _prob_set(self, probs):
        probs = [np.asarray(p, dtype=np.float32) for p in probs]
        labels = [p.argmax(axis=0).astype(np.uint16) for p in probs]
        return PredictionSet(labels=labels, probs=probs)

    def test_mean_of_probs(self):
        p1 = np.array([[[0.8]], [[0.2]]])
        p2 = np.array([[[0.4]], [[0.6]]])
        out = deep_ensemble_average([self._prob_set([p1]), self._prob_set([p2])])
        np.testing.assert_allclose(out.probs[0][:, 0, 0], [0.6, 0.4], atol=1e-7)
        assert out.labels[0][0, 0] == 0
        assert out.confidence[0][0, 0] == pytest.approx(0.6, abs=1e-7)

    def test_tie_breaks_to_lowest_class(self):
        p1 = np.array([[[0.6]], [[0.4]]])
        p2 = np.array([[[0.4]], [[0.6]]])
        out = deep_ensemble_average([self._prob_set([p1]), self._prob_set([p2])])
        assert out.labels[0][0, 0] == 0  # mean is exactly [0.5, 0.5]

    def test_single_member_identity(self):
        p = np.array([[[0.7]], [[0.3]]])
        out = deep_ensemble_average([self._prob_set([p])])
        np.testing.assert_allclose(out.probs[0], p, atol=1e-7)

    def test_missing_probs_rejected(self):
        ps = PredictionSet(labels=[np.zeros((1, 1), dtype=np.uint16)])
        with pytest.raises(ValueError, match="probability"):
            deep_ensemble_average([ps])

    def test_result_validates(self, rng):
        sets = []
        for _ in range(3):
            logits = rng.standard_normal((4, 3, 3))
            probs = np.exp(logits) / np.exp(logits).sum(axis=0)
            sets.append(self._prob_set([probs]))
        out = deep_ensemble_average(sets)
        out.validate()


class TestCalibration:
    def _flat_set(self, conf, labels, gts):
        preds = PredictionSet(
            labels=[np.asarray(labels, dtype=np.uint16).reshape(1, -1)],
            confidence=[np.asarray(conf, dtype=np.float32).reshape(1, -1)],
        )
        return preds, [np.asarray(gts, dtype=np.uint16).reshape(1, -1)]

    def test_worked_example(self):
        # 10 pixels all at confidence 0.9, 8 of them correct: one bin
        # with gap |0.8 - 0.9| = 0.1, so ECE = 0.1 / 10 and MCE = 0.1.
        # Tolerance covers float32 storage of 0.9.
        conf = [0.9] * 10
        labels = [0] * 10
        gts = [0] * 8 + [1] * 2
        preds, gt_maps = self._flat_set(conf, labels, gts)
        report = calibration(preds, gt_maps, num_bins=10)
        assert report.ece == pytest.approx(0.01, abs=1e-7)
        assert report.mce == pytest.approx(0.1, abs=1e-7)
        occupied = [b for b in report.bins if b.count]
        assert len(occupied) == 1
        assert occupied[0].count == 10
        assert occupied[0].accuracy == pytest.approx(0.8, abs=1e-12)

    def test_exact_values_with_representable_confidence(self):
        # 0.875 is exact in float32 (bin 8); accuracy 0.75 of 8 pixels.
        conf = [0.875] * 8
        labels = [0] * 8
        gts = [0] * 6 + [1] * 2
        preds, gt_maps = self._flat_set(conf, labels, gts)
        report = calibration(preds, gt_maps, num_bins=10)
        assert report.bins[8].count == 8
        assert report.ece == pytest.approx(0.0125, abs=1e-12)
        assert report.mce == pytest.approx(0.125, abs=1e-12)

    def test_weighted_ece_matches_manual(self):
        # Two occupied bins out of ten with different sizes.
        conf = [0.15] * 4 + [0.95] * 6
        labels = [0] * 10
        gts = [0, 1, 1, 1] + [0] * 6
        preds, gt_maps = self._flat_set(conf, labels, gts)
        report = calibration(preds, gt_maps, num_bins=10, weighted_ece=True)
        gap_low = abs(0.25 - 0.15)
        gap_high = abs(1.0 - 0.95)
        expected = (4 * gap_low + 6 * gap_high) / 10
        assert report.ece == pytest.approx(expected, abs=1e-6)

    def test_confidence_one_joins_top_bin(self):
        preds, gt_maps = self._flat_set([1.0], [0], [0])
        report = calibration(preds, gt_maps, num_bins=10)
        assert report.bins[9].count == 1

    def test_perfectly_calibrated(self):
        # Accuracy equals confidence inside every occupied bin.
        conf, labels, gts = [], [], []
        for b, acc in ((2, 0.25), (7, 0.75)):
            center = (b + 0.5) / 10
            n = 8
            hits = int(round(acc * n))
            conf += [center] * n
            labels += [0] * n
            gts += [0] * hits + [1] * (n - hits)
        preds, gt_maps = self._flat_set(conf, labels, gts)
        report = calibration(preds, gt_maps, num_bins=10)
        assert report.ece == pytest.approx(0.0, abs=1e-9)
        assert report.mce == pytest.approx(0.0, abs=1e-9)

    def test_ignore_pixels_excluded(self):
        preds, _ = self._flat_set([0.9, 0.9], [0, 0], [0, 0])
        gt = np.array([[0, 255]], dtype=np.uint16)
        report = calibration(preds, [gt], num_bins=10)
        assert sum(b.count for b in report.bins) == 1

    def test_kl_none_when_all_correct(self):
        preds, gt_maps = self._flat_set([0.9] * 4, [0] * 4, [0] * 4)
        report = calibration(preds, gt_maps, num_bins=10)
        assert report.kl is None

    def test_bins_match_brute_force(self, rng):
        for _ in range(10):
            n = int(rng.integers(5, 60))
            conf = rng.random(n).astype(np.float32)
            gts = rng.integers(0, 2, size=n)
            labels = np.where(rng.random(n) < 0.5, gts, 1 - gts)
            preds, gt_maps = self._flat_set(conf, labels, gts)
            report = calibration(preds, gt_maps, num_bins=10)
            totals, hits, conf_sums = brute_force_bins(
                conf.astype(np.float64), labels == gts, 10
            )
            for b in range(10):
                assert report.bins[b].count == totals[b]
                if totals[b]:
                    assert report.bins[b].accuracy == pytest.approx(
                        hits[b] / totals[b], abs=1e-12
                    )
                    assert report.bins[b].confidence == pytest.approx(
                        conf_sums[b] / totals[b], rel=1e-6
                    )

    def test_no_valid_pixels_rejected(self):
        preds, _ = self._flat_set([0.9], [0], [0])
        gt = np.array([[255]], dtype=np.uint16)
        with pytest.raises(ValueError, match="valid"):
            calibration(preds, [gt], num_bins=10)

    def test_missing_confidence_rejected(self):
        preds = PredictionSet(labels=[np.zeros((1, 1), dtype=np.uint16)])
        with pytest.raises(ValueError, match="confidence"):
            calibration(preds, [np.zeros((1, 1), dtype=np.uint16)])


class TestHistogramKl:
    def test_worked_example(self):
        # 0.5*ln(2) + 0.5*ln(2/3) computed by hand.
        p = np.array([0.5, 0.5])
        q = np.array([0.25, 0.75])
        expected = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
        assert histogram_kl(p, q) == pytest.approx(expected, abs=1e-15)
        assert histogram_kl(p, q) == pytest.approx(0.14384, abs=5e-6)

    def test_identical_distributions(self):
        p = np.array([0.2, 0.3, 0.5])
        assert histogram_kl(p, p) == pytest.approx(0.0, abs=1e-15)

    def test_zero_p_bins_contribute_nothing(self):
        p = np.array([1.0, 0.0])
        q = np.array([0.5, 0.5])
        assert histogram_kl(p, q) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_empty_q_bin_clamped(self):
        p = np.array([0.5, 0.5])
        q = np.array([1.0, 0.0])
        assert math.isfinite(histogram_kl(p, q))
        assert histogram_kl(p, q) > 0

    def test_nonnegative_random(self, rng):
        for _ in range(20):
            raw_p = rng.random(10)
            raw_q = rng.random(10)
            p = raw_p / raw_p.sum()
            q = raw_q / raw_q.sum()
            assert histogram_kl(p, q) >= -1e-12


class TestPredictionSetValidation:
    def test_good_set_passes(self, rng):
        logits = rng.standard_normal((3, 4, 5))
        probs = np.exp(logits) / np.exp(logits).sum(axis=0)
        ps = PredictionSet(
            labels=[probs.argmax(axis=0).astype(np.uint16)],
            confidence=[probs.max(axis=0).astype(np.float32)],
            probs=[probs.astype(np.float32)],
        )
        ps.validate()

    def test_confidence_out_of_range(self):
        ps = PredictionSet(
            labels=[np.zeros((2, 2), dtype=np.uint16)],
            confidence=[np.full((2, 2), 1.5, dtype=np.float32)],
        )
        with pytest.raises(ValueError, match="confidence"):
            ps.validate()

    def test_probs_not_normalized(self):
        ps = PredictionSet(
            labels=[np.zeros((1, 1), dtype=np.uint16)],
            probs=[np.full((2, 1, 1), 0.9, dtype=np.float32)],
        )
        with pytest.raises(ValueError, match="sum to 1"):
            ps.validate()

    def test_labels_disagree_with_probs(self):
        probs = np.array([[[0.2]], [[0.8]]], dtype=np.float32)
        ps = PredictionSet(labels=[np.zeros((1, 1), dtype=np.uint16)], probs=[probs])
        with pytest.raises(ValueError, match="argmax"):
            ps.validate()
