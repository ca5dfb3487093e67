import json
import os
import tempfile
import unittest

import numpy as np
import torch

from DCFM.errors import (ConfigError, DataIOError, ManifestError,
                         ModelFormatError, NetpbmFormatError)
from DCFM.data import (generate_synthetic, load_clip_dir, load_manifest,
                       load_model, rasterize_labels, read_netpbm, read_pgm,
                       read_ppm, render_clip, save_model, write_pgm, write_ppm)
from DCFM.data.serialization import MAGIC, model_from_bytes, model_to_bytes
from DCFM.data.synthetic import Shape, reflect
from DCFM.framework import DCFMNet, GenConfig, ModelConfig, ScheduleConfig
from DCFM.framework.inference import run_video


class NetpbmTest(unittest.TestCase):

    def __init__(self, *args):
        super().__init__(*args)

        self.rng = np.random.default_rng(0)
        self.tmp = tempfile.TemporaryDirectory()

    def setUp(self):
        self.dir = self.tmp.name

    def _path(self, name):
        return os.path.join(self.dir, name)

    def test_round_trip(self):
        rgb = self.rng.integers(0, 256, (5, 7, 3)).astype(np.uint8)
        gray = self.rng.integers(0, 256, (5, 7)).astype(np.uint8)
        write_ppm(self._path('a.ppm'), rgb)
        write_pgm(self._path('a.pgm'), gray)
        self.assertTrue(np.array_equal(read_ppm(self._path('a.ppm')), rgb))
        self.assertTrue(np.array_equal(read_pgm(self._path('a.pgm')), gray))

        with open(self._path('a.ppm'), 'rb') as fh:
            first = fh.read()
        self.assertTrue(first.startswith(b'P6\n7 5\n255\n'))
        write_ppm(self._path('b.ppm'), read_ppm(self._path('a.ppm')))
        with open(self._path('b.ppm'), 'rb') as fh:
            self.assertEqual(fh.read(), first)

    def test_header_comments_and_whitespace(self):
        raster = bytes(range(6))
        with open(self._path('c.pgm'), 'wb') as fh:
            fh.write(b'P5 # a comment\n3\t# width\n 2\n255\n' + raster)
        grid = read_netpbm(self._path('c.pgm'))
        self.assertEqual(grid.shape, (2, 3))
        self.assertEqual(grid.ravel().tolist(), list(range(6)))

    def test_unsupported_maxval(self):
        with open(self._path('d.pgm'), 'wb') as fh:
            fh.write(b'P5\n1 1\n65535\n\x00\x00')
        with self.assertRaises(NetpbmFormatError):
            read_pgm(self._path('d.pgm'))

    def test_malformed(self):
        cases = {'magic.ppm': b'P3\n1 1\n255\n000',
                 'short.ppm': b'P6\n2 2\n255\n' + bytes(5),
                 'header.ppm': b'P6\n2',
                 'token.ppm': b'P6\n2 x\n255\n' + bytes(12)}
        for name, data in cases.items():
            with open(self._path(name), 'wb') as fh:
                fh.write(data)
            with self.assertRaises(NetpbmFormatError, msg=name):
                read_ppm(self._path(name))
        # right format, wrong kind
        write_pgm(self._path('gray.pgm'), np.zeros((2, 2), dtype=np.uint8))
        with self.assertRaises(NetpbmFormatError):
            read_ppm(self._path('gray.pgm'))

    def test_write_checks(self):
        with self.assertRaises(NetpbmFormatError):
            write_pgm(self._path('e.pgm'), np.full((2, 2), 256))
        with self.assertRaises(NetpbmFormatError):
            write_ppm(self._path('e.ppm'), np.zeros((2, 2)))
        with self.assertRaises(DataIOError):
            read_pgm(self._path('does_not_exist.pgm'))


class SyntheticTest(unittest.TestCase):

    def __init__(self, *args):
        super().__init__(*args)
        self.cfg = GenConfig(videos=2, frames_per_video=4, height=32, width=48,
                             classes=4, seed=3)

    def test_reflect(self):
        self.assertEqual(reflect(5., 0., 10.), 5.)
        self.assertEqual(reflect(12., 0., 10.), 8.)
        self.assertEqual(reflect(-3., 0., 10.), 3.)
        self.assertEqual(reflect(23., 0., 10.), 3.)

    def test_labels_follow_shapes(self):
        rect = Shape('rect', 2, (8., 8.), (2., 3.), (0., 1.), (255., 0., 0.))
        label = rasterize_labels([rect], 0, 16, 16)
        # pixel centers y + .5 in [6, 10], x + .5 in [5, 11]
        self.assertEqual(int((label == 2).sum()), 4 * 6)
        self.assertEqual(label[6, 5], 2)
        self.assertEqual(label[5, 5], 0)
        moved = rasterize_labels([rect], 2, 16, 16)
        self.assertEqual(moved[6, 12], 2)
        self.assertEqual(moved[6, 5], 0)

        disk = Shape('disk', 1, (8., 8.), (3., 3.), (0., 0.), (0., 255., 0.))
        both = rasterize_labels([rect, disk], 0, 16, 16)
        self.assertEqual(both[8, 8], 1)

    def test_render_is_deterministic(self):
        a_frames, a_labels, _ = render_clip(self.cfg, 1)
        b_frames, b_labels, _ = render_clip(self.cfg, 1)
        for a, b in zip(a_frames + a_labels, b_frames + b_labels):
            self.assertTrue(np.array_equal(a, b))
        c_frames, _, _ = render_clip(self.cfg, 0)
        self.assertFalse(np.array_equal(a_frames[0], c_frames[0]))

    def test_static_noise_free_frames(self):
        cfg = GenConfig(videos=1, frames_per_video=5, height=32, width=32,
                        max_speed=0., noise_sigma=0.)
        frames, labels, _ = render_clip(cfg, 0)
        for frame, label in zip(frames[1:], labels[1:]):
            self.assertTrue(np.array_equal(frame, frames[0]))
            self.assertTrue(np.array_equal(label, labels[0]))

    def test_labels_match_rasterized_shapes(self):
        frames, labels, shapes = render_clip(self.cfg, 0)
        for t, label in enumerate(labels):
            self.assertTrue(np.array_equal(
                label, rasterize_labels(shapes, t, 32, 48)))
            self.assertEqual(label.dtype, np.uint8)
            self.assertEqual(frames[t].shape, (32, 48, 3))

    def test_classes_are_visible(self):
        covered = 0
        for seed in range(50):
            cfg = GenConfig(videos=1, frames_per_video=1, height=48, width=64,
                            classes=4, shapes_per_video=3, seed=seed)
            _, labels, _ = render_clip(cfg, 0)
            covered += set(np.unique(labels[0])) == {0, 1, 2, 3}
        self.assertGreaterEqual(covered, 45)

    def test_generate_writes_identical_bytes(self):
        with tempfile.TemporaryDirectory() as tmp:
            a = os.path.join(tmp, 'a')
            b = os.path.join(tmp, 'b')
            generate_synthetic(self.cfg, a, progress=False)
            generate_synthetic(self.cfg, b, progress=False)
            for root, _, files in os.walk(a):
                for name in files:
                    rel = os.path.relpath(os.path.join(root, name), a)
                    with open(os.path.join(a, rel), 'rb') as fa, \
                            open(os.path.join(b, rel), 'rb') as fb:
                        self.assertEqual(fa.read(), fb.read(), msg=rel)
            frames = [f for _, _, files in os.walk(a) for f in files
                      if f.endswith('.ppm')]
            self.assertEqual(len(frames), 8)

            data = load_manifest(a)
            self.assertEqual(len(data), 2)
            self.assertEqual(data[0].id, 'clip_000')
            self.assertEqual(tuple(data[0].frames[0].shape), (3, 32, 48))
            self.assertEqual(sorted(data[0].labels), [0, 1, 2, 3])

    def test_sparse_labels(self):
        cfg = GenConfig(videos=1, frames_per_video=5, height=16, width=16,
                        label_mode='sparse')
        with tempfile.TemporaryDirectory() as tmp:
            manifest = generate_synthetic(cfg, tmp, progress=False)
            self.assertEqual(list(manifest['videos'][0]['labels']), ['2'])
            self.assertEqual(manifest['generator']['label_mode'], 'sparse')
            self.assertEqual(sorted(load_manifest(tmp)[0].labels), [2])

    def test_config_checks(self):
        with self.assertRaises(ConfigError):
            GenConfig(height=40)
        with self.assertRaises(ConfigError):
            GenConfig(classes=1)
        with self.assertRaises(ConfigError):
            GenConfig(label_mode='every_other')


class ManifestTest(unittest.TestCase):

    def __init__(self, *args):
        super().__init__(*args)
        self.tmp = tempfile.TemporaryDirectory()

    def setUp(self):
        self.root = self.tmp.name
        os.makedirs(os.path.join(self.root, 'v'), exist_ok=True)
        for j in range(2):
            write_ppm(os.path.join(self.root, 'v', f'{j}.ppm'),
                      np.zeros((16, 16, 3), dtype=np.uint8))
        write_pgm(os.path.join(self.root, 'v', '0.pgm'),
                  np.ones((16, 16), dtype=np.uint8))

    def _load(self, manifest):
        path = os.path.join(self.root, 'manifest.json')
        with open(path, 'w') as fh:
            json.dump(manifest, fh)
        return load_manifest(path)

    def _manifest(self, **overrides):
        video = {'id': 'v', 'frames': ['v/0.ppm', 'v/1.ppm'],
                 'labels': {'0': 'v/0.pgm'}}
        video.update(overrides.pop('video', {}))
        manifest = {'num_classes': 3, 'height': 16, 'width': 16,
                    'videos': [video]}
        manifest.update(overrides)
        return manifest

    def test_valid(self):
        data = self._load(self._manifest())
        self.assertEqual(len(data[0]), 2)
        self.assertEqual(data[0].labels[0].max(), 1)
        self.assertEqual(data.labeled_frames(), [(0, 0)])

    def test_invalid(self):
        cases = [
            self._manifest(num_classes=1),
            self._manifest(height=32),
            self._manifest(video={'frames': ['v/0.ppm', 'v/2.ppm']}),
            self._manifest(video={'labels': {'5': 'v/0.pgm'}}),
            self._manifest(video={'labels': {'x': 'v/0.pgm'}}),
            self._manifest(video={'frames': []}),
        ]
        del cases[0]['num_classes']
        for manifest in cases:
            with self.assertRaises(ManifestError, msg=str(manifest)):
                self._load(manifest)

    def test_label_out_of_range(self):
        write_pgm(os.path.join(self.root, 'v', '0.pgm'),
                  np.full((16, 16), 3, dtype=np.uint8))
        with self.assertRaises(ManifestError):
            self._load(self._manifest())
        # the ignore label is always allowed
        write_pgm(os.path.join(self.root, 'v', '0.pgm'),
                  np.full((16, 16), 255, dtype=np.uint8))
        self._load(self._manifest())

    def test_missing_and_broken_files(self):
        with self.assertRaises(DataIOError):
            load_manifest(os.path.join(self.root, 'nothing.json'))
        path = os.path.join(self.root, 'broken.json')
        with open(path, 'w') as fh:
            fh.write('{"num_classes": ')
        with self.assertRaises(ManifestError):
            load_manifest(path)

    def test_clip_directory(self):
        with tempfile.TemporaryDirectory() as tmp:
            clip = os.path.join(tmp, 'walk')
            os.makedirs(os.path.join(clip, 'labels'))
            for j in range(3):
                write_ppm(os.path.join(clip, f'{j:05d}.ppm'),
                          np.full((16, 32, 3), j, dtype=np.uint8))
            write_pgm(os.path.join(clip, 'labels', '00001.pgm'),
                      np.zeros((16, 32), dtype=np.uint8))
            loaded = load_clip_dir(clip)
            self.assertEqual(loaded.id, 'walk')
            self.assertEqual(len(loaded), 3)
            self.assertEqual(loaded.size, (16, 32))
            self.assertEqual(sorted(loaded.labels), [1])
            self.assertEqual(float(loaded.frames[2][0, 0, 0]), 2.)


class SerializationTest(unittest.TestCase):

    def __init__(self, *args):
        super().__init__(*args)
        self.net = DCFMNet(ModelConfig(num_classes=3, c_hi=24, hi_depth=1,
                                       seed=5))

    def test_round_trip(self):
        data = model_to_bytes(self.net)
        self.assertTrue(data.startswith(MAGIC))
        loaded = model_from_bytes(data)
        self.assertEqual(loaded.config, self.net.config)
        for (n1, p1), (n2, p2) in zip(self.net.named_parameters(),
                                      loaded.named_parameters()):
            self.assertEqual(n1, n2)
            self.assertTrue(torch.equal(p1, p2))
        self.assertEqual(model_to_bytes(loaded), data)

    def test_saved_model_replays_inference(self):
        torch.manual_seed(6)
        frames = [torch.rand(3, 48, 64) * 255. for _ in range(4)]
        cfg = ScheduleConfig(K=2)
        before, _ = run_video(self.net, frames, cfg)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'model.bin')
            save_model(path, self.net)
            after, _ = run_video(load_model(path), frames, cfg)
        for a, b in zip(before, after):
            self.assertTrue(torch.equal(a.logits, b.logits))

    def test_corrupt_files(self):
        data = model_to_bytes(self.net)
        with self.assertRaises(ModelFormatError):
            model_from_bytes(b'XXXX' + data[4:])
        with self.assertRaises(ModelFormatError):
            model_from_bytes(data[:-3])
        with self.assertRaises(ModelFormatError):
            model_from_bytes(data[:10])
        with self.assertRaises(ModelFormatError):
            model_from_bytes(data[:4] + (2).to_bytes(4, 'little') + data[8:])
        with self.assertRaises(ModelFormatError):
            model_from_bytes(data + data[-8:])
        with self.assertRaises(DataIOError):
            load_model('/nonexistent/model.bin')


if __name__ == '__main__':
    unittest.main()
