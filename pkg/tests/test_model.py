import unittest

import torch

from DCFM.errors import ConfigError, ShapeError
from DCFM.framework import DCFMNet, ModelConfig, SequenceStage
from DCFM.framework.flops import keyframe_flops, nonkey_flops
from DCFM.modules import ConvBlock, FeatureFusion, InputScaling


class ShapeTest(unittest.TestCase):

    def __init__(self, *args):
        super().__init__(*args)

        torch.manual_seed(0)
        self.net = DCFMNet(ModelConfig(num_classes=4))
        self.frame = torch.rand(3, 48, 64) * 255.

    def test_intermediate_shapes(self):
        pair, coarse, full = self.net.keyframe_forward(self.frame)
        self.assertEqual(tuple(pair.indep.shape), (16, 12, 16))
        self.assertEqual(tuple(pair.common.shape), (32, 3, 4))
        self.assertEqual(tuple(pair.fused.shape), (32, 12, 16))
        self.assertEqual(tuple(coarse.shape), (4, 12, 16))
        self.assertEqual(tuple(full.shape), (4, 48, 64))

    def test_output_shapes_without_running(self):
        shapes = self.net.output_shapes(96, 128)
        self.assertEqual(shapes['indep'], (16, 24, 32))
        self.assertEqual(shapes['common'], (32, 6, 8))
        self.assertEqual(shapes['full_logits'], (4, 96, 128))
        self.net.reset_counters()
        self.assertEqual(self.net.call_counts()['enc_lo'], 0)

    def test_other_frame_sizes(self):
        frame = torch.rand(3, 32, 96) * 255.
        _, _, full = self.net.keyframe_forward(frame)
        self.assertEqual(tuple(full.shape), (4, 32, 96))

    def test_batched_matches_single(self):
        frames = torch.rand(2, 3, 48, 64) * 255.
        pair, _, full = self.net.keyframe_forward(frames)
        self.assertEqual(tuple(pair.common.shape), (2, 32, 3, 4))
        for i in range(2):
            _, _, single = self.net.keyframe_forward(frames[i])
            self.assertTrue(torch.allclose(full[i], single, atol=1e-5))

    def test_bad_frame_size(self):
        with self.assertRaises(ShapeError):
            self.net.keyframe_forward(torch.zeros(3, 40, 64))
        with self.assertRaises(ShapeError):
            self.net.keyframe_forward(torch.zeros(48, 64))
        with self.assertRaises(ShapeError):
            self.net.keyframe_forward(torch.zeros(1, 48, 64))

    def test_pad_and_crop(self):
        frame = torch.rand(3, 40, 50) * 255.
        padded, size = DCFMNet.pad_frame(frame)
        self.assertEqual(tuple(padded.shape), (3, 48, 64))
        self.assertEqual(size, (40, 50))
        self.assertTrue(torch.equal(DCFMNet.crop(padded, size), frame))
        # a side shorter than its padding falls back to replicate
        tiny, _ = DCFMNet.pad_frame(torch.rand(3, 4, 16))
        self.assertEqual(tuple(tiny.shape), (3, 16, 16))

    def test_sequence_stage_shapes(self):
        stage = SequenceStage(3, 48, 64)
        stage.append(InputScaling)
        stage.append(ConvBlock, channels_out=8, stride=2)
        stage.append(ConvBlock, channels_out=8, stride=2)
        self.assertEqual(stage.shapes[-1], (8, 12, 16))
        out = stage([torch.zeros(1, 3, 48, 64)])[0]
        self.assertEqual(tuple(out.shape), (1, 8, 12, 16))
        self.assertEqual(stage.calls, 1)


class ForwardTest(unittest.TestCase):

    def __init__(self, *args):
        super().__init__(*args)

        torch.manual_seed(1)
        self.cfg = ModelConfig(num_classes=3, seed=7)
        self.net = DCFMNet(self.cfg)
        self.frame = torch.rand(3, 48, 64) * 255.

    def test_zero_frame_gives_zero_logits(self):
        _, coarse, full = self.net.keyframe_forward(torch.zeros(3, 48, 64))
        self.assertTrue(torch.equal(full, torch.zeros_like(full)))
        self.assertTrue(torch.equal(coarse, torch.zeros_like(coarse)))

    def test_seeded_construction(self):
        torch.manual_seed(5)
        before = torch.rand(4)
        torch.manual_seed(5)
        other = DCFMNet(self.cfg)
        after = torch.rand(4)
        # construction does not consume the global generator
        self.assertTrue(torch.equal(before, after))
        for (n1, p1), (n2, p2) in zip(self.net.named_parameters(),
                                      other.named_parameters()):
            self.assertEqual(n1, n2)
            self.assertTrue(torch.equal(p1, p2))

        different = DCFMNet(ModelConfig(num_classes=3, seed=8))
        self.assertFalse(torch.equal(next(self.net.parameters()),
                                     next(different.parameters())))

    def test_forward_is_deterministic(self):
        _, _, a = self.net.keyframe_forward(self.frame)
        _, _, b = self.net.keyframe_forward(self.frame)
        self.assertTrue(torch.equal(a, b))

    def test_nonkey_with_own_common_equals_keyframe(self):
        pair, coarse, full = self.net.keyframe_forward(self.frame)
        coarse_n, full_n = self.net.nonkey_forward(self.frame, pair.common)
        self.assertTrue(torch.allclose(coarse, coarse_n))
        self.assertTrue(torch.allclose(full, full_n))

    def test_nonkey_skips_deep_stage(self):
        pair, _, _ = self.net.keyframe_forward(self.frame)
        self.net.reset_counters()
        self.net.nonkey_forward(torch.rand(3, 48, 64) * 255., pair.common)
        counts = self.net.call_counts()
        self.assertEqual(counts['enc_hi'], 0)
        self.assertEqual(counts['enc_lo'], 1)
        self.assertEqual(counts['fuse'], 1)
        self.assertEqual(counts['decode'], 1)

    def test_keyframe_runs_shallow_stage_once(self):
        self.net.reset_counters()
        self.net.keyframe_forward(self.frame)
        self.assertEqual(self.net.call_counts(),
                         {'enc_lo': 1, 'enc_hi': 1, 'fuse': 1, 'decode': 1})

    def test_nonkey_cost_below_half(self):
        ratio = nonkey_flops(self.net) / keyframe_flops(self.net)
        self.assertLess(ratio, 0.5)
        self.assertGreater(ratio, 0.)

    def test_constant_fused_gives_interior_constant_logits(self):
        fused = torch.full((32, 12, 16), 0.5)
        coarse, _ = self.net.decode(fused)
        interior = coarse[:, 1:-1, 1:-1]
        reference = interior[:, :1, :1].expand_as(interior)
        self.assertTrue(torch.allclose(interior, reference, atol=1e-6))


class FusionTest(unittest.TestCase):

    def __init__(self, *args):
        super().__init__(*args)

        torch.manual_seed(2)
        self.common = torch.randn(1, 32, 3, 4)
        self.indep = torch.randn(1, 16, 12, 16)

    def test_only_leading_half_is_used(self):
        ffm = FeatureFusion([(32, 3, 4), (16, 12, 16)], indep_half=8)
        perturbed = self.indep.clone()
        perturbed[:, 8:] += torch.randn(1, 8, 12, 16)
        a = ffm([self.common, self.indep])[0]
        b = ffm([self.common, perturbed])[0]
        self.assertTrue(torch.equal(a, b))
        perturbed[:, :8] += 1.
        c = ffm([self.common, perturbed])[0]
        self.assertFalse(torch.equal(a, c))

    def test_ablation_switches(self):
        torch.manual_seed(3)
        no_indep = DCFMNet(ModelConfig(num_classes=3, use_indep=False))
        common = no_indep.keyframe_forward(torch.rand(3, 48, 64) * 255.)[0].common
        a = no_indep.nonkey_forward(torch.rand(3, 48, 64) * 255., common)[1]
        b = no_indep.nonkey_forward(torch.rand(3, 48, 64) * 255., common)[1]
        self.assertTrue(torch.equal(a, b))

        no_common = DCFMNet(ModelConfig(num_classes=3, use_common=False))
        frame = torch.rand(3, 48, 64) * 255.
        a = no_common.nonkey_forward(frame, torch.randn(32, 3, 4))[1]
        b = no_common.nonkey_forward(frame, torch.randn(32, 3, 4))[1]
        self.assertTrue(torch.equal(a, b))

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            ModelConfig(use_common=False, use_indep=False)
        with self.assertRaises(ConfigError):
            ModelConfig(num_classes=1)
        with self.assertRaises(ConfigError):
            ModelConfig(indep_half=17)
        with self.assertRaises(ConfigError):
            ModelConfig.from_dict({'num_classes': 3, 'width': 4})
        cfg = ModelConfig.from_dict(ModelConfig(num_classes=5).to_dict())
        self.assertEqual(cfg.num_classes, 5)
        self.assertEqual(cfg.indep_half, 8)
        with self.assertWarns(UserWarning):
            ModelConfig(indep_half=0)

    def test_wrong_channel_count(self):
        ffm = FeatureFusion([(32, 3, 4), (16, 12, 16)])
        with self.assertRaises(ShapeError):
            ffm([torch.randn(1, 31, 3, 4), self.indep])


if __name__ == '__main__':
    unittest.main()
