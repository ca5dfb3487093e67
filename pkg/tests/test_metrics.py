import os
import tempfile
import unittest

import numpy as np
import torch

from DCFM.errors import ConfigError, DataIOError, LabelError, MetricError, ShapeError
from DCFM.data.netpbm import write_pgm
from DCFM.evaluation import (ConfusionMatrix, cosine_similarity_map,
                             evaluate_clips, evaluate_directories,
                             mean_coherence, mvc, video_consistency)


def iou_oracle(pred, gt, num_classes, ignore=255):
    '''Per-class IoU from pixel sets, None for classes absent from both.'''
    valid = gt != ignore
    out = []
    for c in range(num_classes):
        p = (pred == c) & valid
        g = (gt == c) & valid
        union = (p | g).sum()
        out.append(float((p & g).sum() / union) if union else None)
    return out


class ConfusionMatrixTest(unittest.TestCase):

    def test_small_example(self):
        cm = ConfusionMatrix(3)
        gt = np.array([[0, 0, 1], [1, 2, 255]])
        pred = np.array([[0, 1, 1], [1, 2, 0]])
        cm.accumulate(pred, gt)
        self.assertEqual(cm.total, 5)
        self.assertEqual(cm.counts.tolist(), [[1, 1, 0], [0, 2, 0], [0, 0, 1]])
        iou = cm.per_class_iou()
        self.assertAlmostEqual(iou[0], 1 / 2)
        self.assertAlmostEqual(iou[1], 2 / 3)
        self.assertAlmostEqual(iou[2], 1.)
        self.assertAlmostEqual(cm.miou(), (1 / 2 + 2 / 3 + 1.) / 3)
        self.assertAlmostEqual(cm.wiou(), 2 / 5 * 1 / 2 + 2 / 5 * 2 / 3 + 1 / 5)
        self.assertAlmostEqual(cm.pixel_accuracy(), 4 / 5)

    def test_absent_classes(self):
        cm = ConfusionMatrix(4)
        cm.accumulate(np.array([0, 0, 1]), np.array([0, 0, 0]))
        iou = cm.per_class_iou()
        self.assertEqual(iou[2], None)
        self.assertEqual(iou[3], None)
        self.assertEqual(iou[1], 0.)
        # only class 0 occurs in the ground truth
        self.assertAlmostEqual(cm.miou(), 2 / 3)

    def test_perfect_prediction(self):
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 5, (20, 30))
        cm = ConfusionMatrix(5)
        cm.accumulate(gt, gt)
        self.assertEqual(cm.miou(), 1.)
        self.assertEqual(cm.wiou(), 1.)

    def test_half_wrong(self):
        gt = np.array([[0, 0], [1, 1]])
        cm = ConfusionMatrix(2)
        cm.accumulate(np.zeros_like(gt), gt)
        self.assertAlmostEqual(cm.miou(), 0.25)
        self.assertAlmostEqual(cm.wiou(), 0.25)

    def test_single_class_image(self):
        cm = ConfusionMatrix(3)
        ones = np.ones((4, 4), dtype=np.uint8)
        cm.accumulate(ones, ones)
        self.assertEqual(cm.counts[1, 1], 16)
        self.assertEqual(cm.total, 16)

    def test_accumulation_is_additive(self):
        rng = np.random.default_rng(1)
        a = ConfusionMatrix(3)
        b = ConfusionMatrix(3)
        preds = [rng.integers(0, 3, (8, 8)) for _ in range(3)]
        gts = [rng.integers(0, 3, (8, 8)) for _ in range(3)]
        for p, g in zip(preds, gts):
            a.accumulate(p, g)
        b.accumulate(np.stack(preds), np.stack(gts))
        self.assertTrue(np.array_equal(a.counts, b.counts))
        a.reset()
        self.assertEqual(a.total, 0)

    def test_errors(self):
        cm = ConfusionMatrix(3)
        with self.assertRaises(MetricError):
            cm.miou()
        with self.assertRaises(LabelError):
            cm.accumulate(np.array([3]), np.array([0]))
        with self.assertRaises(LabelError):
            cm.accumulate(np.array([0]), np.array([7]))
        with self.assertRaises(ShapeError):
            cm.accumulate(np.zeros((2, 2)), np.zeros((2, 3)))
        with self.assertRaises(ConfigError):
            ConfusionMatrix(0)
        # an all-ignored pair adds nothing and is not an error
        cm.accumulate(np.array([0, 1]), np.array([255, 255]))
        self.assertEqual(cm.total, 0)

    def test_random_against_pixel_sets(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = int(rng.integers(2, 6))
            shape = tuple(rng.integers(1, 12, 2))
            gt = rng.integers(0, n, shape)
            gt[rng.random(shape) < 0.1] = 255
            pred = rng.integers(0, n, shape)
            cm = ConfusionMatrix(n)
            cm.accumulate(pred, gt)
            if cm.total == 0:
                continue
            expected = iou_oracle(pred, gt, n)
            for got, want in zip(cm.per_class_iou(), expected):
                if want is None:
                    self.assertIsNone(got)
                else:
                    self.assertAlmostEqual(got, want)
            present = [c for c in range(n) if ((gt == c)).any()]
            self.assertAlmostEqual(cm.miou(),
                                   np.mean([expected[c] for c in present]))
            valid = gt != 255
            freq = [((gt == c) & valid).sum() / valid.sum() for c in present]
            self.assertAlmostEqual(cm.wiou(), sum(
                f * expected[c] for f, c in zip(freq, present)))

    def test_class_permutation(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(2, 6))
            gt = rng.integers(0, n, (9, 7))
            pred = np.where(rng.random((9, 7)) < 0.6, gt,
                            rng.integers(0, n, (9, 7)))
            perm = rng.permutation(n)
            a = ConfusionMatrix(n)
            a.accumulate(pred, gt)
            b = ConfusionMatrix(n)
            b.accumulate(perm[pred], perm[gt])
            self.assertAlmostEqual(a.miou(), b.miou(), places=12)
            self.assertAlmostEqual(a.wiou(), b.wiou(), places=12)


def vc_oracle(preds, gts, l):
    '''VC_l from explicit (pixel, class) sets.'''
    h, w = gts[0].shape
    scores = []
    for i in range(len(gts) - l + 1):
        stable = set()
        for y in range(h):
            for x in range(w):
                values = {int(g[y, x]) for g in gts[i:i + l]}
                if len(values) == 1 and 255 not in values:
                    stable.add((y, x, values.pop()))
        if not stable:
            continue
        agree = {(y, x, c) for (y, x, c) in stable
                 if all(int(p[y, x]) == c for p in preds[i:i + l])}
        scores.append(len(agree) / len(stable))
    return float(np.mean(scores)) if scores else 0.


class ConsistencyTest(unittest.TestCase):

    def test_examples(self):
        gts = [np.array([[0, 1]])] * 3
        self.assertEqual(video_consistency(gts, gts, 3), 1.)
        preds = [np.array([[0, 1]]), np.array([[0, 0]]), np.array([[0, 1]])]
        self.assertEqual(video_consistency(preds, gts, 3), 0.5)
        wrong = [np.array([[2, 2]])] * 3
        self.assertEqual(video_consistency(wrong, gts, 3), 0.)
        # length-one windows reduce to per-frame pixel accuracy
        self.assertAlmostEqual(video_consistency(preds, gts, 1), (1 + .5 + 1) / 3)

    def test_unstable_ground_truth_is_skipped(self):
        gts = [np.array([[0]]), np.array([[1]]), np.array([[1]])]
        preds = [np.array([[1]])] * 3
        # the first window of length 2 has no stable pixel
        self.assertEqual(video_consistency(preds, gts, 2), 1.)
        self.assertEqual(video_consistency(preds, gts, 3), 0.)

    def test_random_against_pixel_sets(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            n = int(rng.integers(2, 7))
            l = int(rng.integers(1, n + 1))
            shape = tuple(rng.integers(1, 6, 2))
            gts = [rng.integers(0, 2, shape) for _ in range(n)]
            preds = [np.where(rng.random(shape) < 0.8, g, 1 - g) for g in gts]
            self.assertAlmostEqual(video_consistency(preds, gts, l),
                                   vc_oracle(preds, gts, l))

    def test_three_classes_exact(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = int(rng.integers(2, 7))
            l = int(rng.integers(1, n + 1))
            gts = [rng.integers(0, 3, (8, 8))]
            for _ in range(n - 1):
                change = rng.random((8, 8)) < 0.2
                gts.append(np.where(change, rng.integers(0, 3, (8, 8)), gts[-1]))
            gts[0][rng.random((8, 8)) < 0.05] = 255
            preds = [np.where(rng.random((8, 8)) < 0.9, g % 255,
                              rng.integers(0, 3, (8, 8))) for g in gts]
            self.assertEqual(video_consistency(preds, gts, l),
                             vc_oracle(preds, gts, l))

    def test_longer_windows_score_lower(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            gt = rng.integers(0, 3, (6, 6))
            gts = [gt] * 10
            preds = [np.where(rng.random((6, 6)) < 0.85, gt,
                              rng.integers(0, 3, (6, 6))) for _ in range(10)]
            values = [video_consistency(preds, gts, l) for l in range(1, 11)]
            for shorter, longer in zip(values, values[1:]):
                self.assertLessEqual(longer, shorter + 1e-12)

    def test_errors(self):
        gts = [np.zeros((2, 2))] * 3
        with self.assertRaises(ConfigError):
            video_consistency(gts, gts, 4)
        with self.assertRaises(ConfigError):
            video_consistency(gts, gts, 0)
        with self.assertRaises(ShapeError):
            video_consistency(gts[:2], gts, 2)
        with self.assertRaises(MetricError):
            mvc([])
        self.assertAlmostEqual(mvc([0.5, 1.]), 0.75)
        self.assertEqual(mvc([1., 0.]), 0.5)


class CoherenceTest(unittest.TestCase):

    def test_constant_map(self):
        fused = torch.ones(4, 5, 6) * torch.randn(4, 1, 1)
        sim = cosine_similarity_map(fused)
        self.assertEqual(tuple(sim.shape), (5, 6))
        self.assertTrue(torch.allclose(sim, torch.ones(5, 6)))

    def test_alternating_rows(self):
        v = torch.randn(3, 1, 1)
        sign = torch.tensor([1., -1., 1., -1., 1.]).view(1, 5, 1)
        fused = v * sign * torch.ones(1, 5, 5)
        sim = cosine_similarity_map(fused)
        # interior: 2 same-row neighbors agree, 6 in adjacent rows oppose
        self.assertAlmostEqual(float(sim[1:-1, 1:-1].mean()), -0.5, places=5)

    def test_against_loop(self):
        torch.manual_seed(4)
        fused = torch.randn(3, 4, 5)
        fused[:, 2, 2] = 0.
        sim = cosine_similarity_map(fused)
        for y in range(4):
            for x in range(5):
                values = []
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if (dy, dx) == (0, 0) or not (0 <= yy < 4 and 0 <= xx < 5):
                            continue
                        a, b = fused[:, y, x], fused[:, yy, xx]
                        denominator = a.norm() * b.norm()
                        values.append(float(a @ b / denominator)
                                      if denominator > 0 else 0.)
                self.assertAlmostEqual(float(sim[y, x]), np.mean(values), places=5)

    def test_batch_and_errors(self):
        fused = torch.ones(2, 3, 4, 4)
        self.assertAlmostEqual(mean_coherence(fused), 1., places=6)
        with self.assertRaises(ShapeError):
            cosine_similarity_map(torch.ones(3, 2, 5))


class EvaluateTest(unittest.TestCase):

    def test_evaluate_clips(self):
        video = [(np.array([[0, 1]]), np.array([[0, 1]]))] * 8
        report = evaluate_clips([video, video[:4]], 2, vc_lengths=(4, 8, 16))
        self.assertEqual(report.miou, 1.)
        self.assertEqual(report.frames_scored, 12)
        self.assertEqual(report.mvc, {'4': 1., '8': 1., '16': None})
        self.assertEqual(report.to_dict()['mvc']['16'], None)

    def _write_clip(self, root, labels):
        os.makedirs(root)
        for j, label in enumerate(labels):
            write_pgm(os.path.join(root, f"{j:05d}.pgm"), label)

    def test_directories(self):
        rng = np.random.default_rng(5)
        labels = [rng.integers(0, 3, (8, 8)).astype(np.uint8) for _ in range(8)]
        with tempfile.TemporaryDirectory() as tmp:
            self._write_clip(os.path.join(tmp, 'pred'), labels)
            self._write_clip(os.path.join(tmp, 'gt', 'labels'), labels)
            report = evaluate_directories(os.path.join(tmp, 'pred'),
                                          os.path.join(tmp, 'gt'),
                                          vc_lengths=(8,))
            self.assertEqual(report.miou, 1.)
            self.assertEqual(report.mvc['8'], 1.)
            self.assertEqual(len(report.per_class_iou), 3)

            os.remove(os.path.join(tmp, 'pred', '00003.pgm'))
            with self.assertRaises(DataIOError):
                evaluate_directories(os.path.join(tmp, 'pred'),
                                     os.path.join(tmp, 'gt'))

    def test_sparse_ground_truth(self):
        rng = np.random.default_rng(10)
        labels = [rng.integers(0, 3, (4, 4)).astype(np.uint8) for _ in range(6)]
        with tempfile.TemporaryDirectory() as tmp:
            self._write_clip(os.path.join(tmp, 'pred'), labels)
            os.makedirs(os.path.join(tmp, 'gt'))
            for j in (0, 2, 4):
                write_pgm(os.path.join(tmp, 'gt', f"{j:05d}.pgm"), labels[j])
            report = evaluate_directories(os.path.join(tmp, 'pred'),
                                          os.path.join(tmp, 'gt'),
                                          vc_lengths=(2,), num_classes=3)
            self.assertEqual(report.frames_scored, 3)
            self.assertEqual(report.miou, 1.)
            self.assertIsNone(report.mvc['2'])

    def test_unpadded_stems_in_frame_order(self):
        gts = [np.full((2, 2), c, dtype=np.uint8) for c in (0, 0, 1) * 4]
        preds = [g.copy() for g in gts]
        preds[2][0, 0] = 0
        with tempfile.TemporaryDirectory() as tmp:
            for root, maps in (('pred', preds), ('gt', gts)):
                os.makedirs(os.path.join(tmp, root))
                for j, m in enumerate(maps):
                    write_pgm(os.path.join(tmp, root, f"{j}.pgm"), m)
            report = evaluate_directories(os.path.join(tmp, 'pred'),
                                          os.path.join(tmp, 'gt'),
                                          vc_lengths=(2,), num_classes=2)
        expected = evaluate_clips([list(zip(preds, gts))], 2, vc_lengths=(2,))
        self.assertEqual(report.mvc, expected.mvc)

    def test_clip_sets(self):
        rng = np.random.default_rng(6)
        with tempfile.TemporaryDirectory() as tmp:
            for name in ('a', 'b'):
                labels = [rng.integers(0, 2, (4, 4)).astype(np.uint8)
                          for _ in range(3)]
                self._write_clip(os.path.join(tmp, 'gt', name, 'labels'), labels)
                self._write_clip(os.path.join(tmp, 'pred', name), labels)
            report = evaluate_directories(os.path.join(tmp, 'pred'),
                                          os.path.join(tmp, 'gt'),
                                          vc_lengths=(2,), num_classes=2)
            self.assertEqual(report.frames_scored, 6)
            self.assertEqual(report.miou, 1.)
            with self.assertRaises(DataIOError):
                evaluate_directories(os.path.join(tmp, 'missing'),
                                     os.path.join(tmp, 'gt'))


if __name__ == '__main__':
    unittest.main()
