'''Command line: `dcfm <command>` or `python -m DCFM <command>`.

Commands: gen, train, infer, eval, bench, gradcheck. Settings resolve as
defaults <- `--config` JSON file <- flags, and every run writing to an
output location echoes the resolved settings there as resolved_config.json.

Exit codes: 0 success, 2 bad configuration or input values, 3 file
problems, 4 numeric failure (NaN/Inf, failed gradient check).
'''

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from DCFM.errors import (ConfigError, DataIOError, DCFMError, NonFiniteError)
from DCFM.framework.config import CliConfig
from DCFM.framework.dcfm_net import DCFMNet
from DCFM.framework.training import train
from DCFM.framework.inference import (benchmark_video, run_video,
                                      sweep_keyframe_interval)
from DCFM.framework.gradcheck import check_operators, loss_gradcheck
from DCFM.data.manifest import load_clip_dir, load_manifest
from DCFM.data.netpbm import write_pgm
from DCFM.data.serialization import load_model, save_model
from DCFM.data.synthetic import generate_synthetic
from DCFM.evaluation.metrics import evaluate_directories

__all__ = ['main', 'build_parser']

logger = logging.getLogger('DCFM')

RESOLVED_NAME = 'resolved_config.json'

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

# argparse bookkeeping that never reaches the config
_NOT_CONFIG = {'config', 'verbose', 'func'}


def _parse_size(text: str):
    try:
        h, w = text.lower().split('x')
        return int(h), int(w)
    except ValueError:
        raise ConfigError(f'size must look like HxW, e.g. 48x64, '
                          f'got "{text}"') from None


def _parse_ints(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        return [int(v) for v in str(text).split(',') if v.strip()]
    except ValueError:
        raise ConfigError(f'expected a comma-separated list of integers, '
                          f'got "{text}"') from None


def _write_json(path, obj):
    try:
        with open(path, 'w') as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write('\n')
    except OSError as e:
        raise DataIOError(f"Cannot write {path}: {e}") from e


def _makedirs(path):
    if not path:
        return
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"Cannot create directory {path}: {e}") from e


def _require_key(config: CliConfig, key: str, flag: str) -> str:
    value = config.values.get(key)
    if value is None:
        raise ConfigError(f"{flag} is required (as a flag or in --config)")
    return value


def _progress() -> bool:
    return sys.stderr.isatty()


# ----------------------------------------------------------------------
# commands

def cmd_gen(config: CliConfig) -> int:
    out = _require_key(config, 'out', '--out')
    gen_cfg = config.gen()
    _makedirs(out)
    generate_synthetic(gen_cfg, out, progress=_progress())
    _write_json(os.path.join(out, RESOLVED_NAME),
                config.resolved(gen_cfg, command='gen', out=out))
    return EXIT_OK


def cmd_train(config: CliConfig) -> int:
    data = _require_key(config, 'data', '--data')
    out = _require_key(config, 'out', '--out')
    dataset = load_manifest(data)

    requested = config.values.get('num_classes')
    if requested is not None and requested != dataset.num_classes:
        raise ConfigError(f"num_classes={requested} contradicts the dataset's "
                          f"{dataset.num_classes} classes")
    config.update({'num_classes': dataset.num_classes})
    model_cfg = config.model()
    train_cfg = config.train()

    out_dir = os.path.dirname(os.path.abspath(out))
    _makedirs(out_dir)
    model = DCFMNet(model_cfg)
    result = train(model, dataset, train_cfg,
                   log_path=os.path.join(out_dir, 'train_log.jsonl'),
                   progress=_progress())
    save_model(out, model)
    _write_json(os.path.join(out_dir, RESOLVED_NAME),
                config.resolved(model_cfg, train_cfg, command='train',
                                data=data, out=out))
    logger.info("Final loss %.4f after %d iterations", result.final.total,
                result.iterations)
    return EXIT_OK


def _load_inputs(config: CliConfig):
    model = load_model(_require_key(config, 'model', '--model'))
    clip = load_clip_dir(_require_key(config, 'video', '--video'),
                         model.config.num_classes)
    return model, clip


def cmd_infer(config: CliConfig) -> int:
    out = _require_key(config, 'out', '--out')
    model, clip = _load_inputs(config)
    schedule = config.schedule()
    schedule.check_clip(len(clip))
    workers = int(config.values.get('workers') or 0)

    predictions, report = run_video(model, clip, schedule, workers=workers,
                                    keep_logits=False)
    _makedirs(out)
    for p in predictions:
        write_pgm(os.path.join(out, f"{p.index:05d}.pgm"), p.label)
    _write_json(os.path.join(out, 'run_report.json'), report.to_dict())
    _write_json(os.path.join(out, RESOLVED_NAME),
                config.resolved(schedule, command='infer',
                                model=config.values['model'],
                                video=config.values['video'], out=out,
                                workers=workers))
    logger.info("Segmented %d frames, keyframes %s, %.2f ms/frame",
                len(predictions), report.keyframe_indices,
                report.avg_ms_per_frame)
    return EXIT_OK


def cmd_eval(config: CliConfig) -> int:
    pred = _require_key(config, 'pred', '--pred')
    gt = _require_key(config, 'gt', '--gt')
    vc = _parse_ints(config.values.get('vc', '8,16'))
    report = evaluate_directories(pred, gt, vc, config.values.get('classes'))
    metrics = report.to_dict()
    print(json.dumps(metrics, indent=2, sort_keys=True))
    out = config.values.get('out')
    if out:
        _makedirs(out)
        _write_json(os.path.join(out, 'metrics.json'), metrics)
        _write_json(os.path.join(out, RESOLVED_NAME),
                    dict(config.values, command='eval', vc=vc))
    return EXIT_OK


def cmd_bench(config: CliConfig) -> int:
    model, clip = _load_inputs(config)
    schedule = config.schedule()
    schedule.check_clip(len(clip))
    reps = int(config.values.get('reps') or 3)
    sweep = config.values.get('sweep_k')

    if sweep:
        result = {'sweep': sweep_keyframe_interval(
            model, clip, schedule, _parse_ints(sweep), reps)}
    else:
        result = benchmark_video(model, clip, schedule, reps).to_dict()
    print(json.dumps(result, indent=2, sort_keys=True))
    out = config.values.get('out')
    if out:
        _makedirs(out)
        _write_json(os.path.join(out, 'bench_report.json'), result)
        _write_json(os.path.join(out, RESOLVED_NAME),
                    config.resolved(schedule, command='bench', reps=reps,
                                    model=config.values['model'],
                                    video=config.values['video'],
                                    sweep_k=sweep, out=out))
    return EXIT_OK


def cmd_gradcheck(config: CliConfig) -> int:
    seed = int(config.values.get('seed', 1))
    size = _parse_size(config.values.get('size', '16x16'))
    samples = int(config.values.get('samples') or 100)
    classes = int(config.values.get('classes') or 3)

    operators = check_operators(seed)
    report = loss_gradcheck(seed=seed, size=size, classes=classes,
                            samples=samples)
    result = dict(report.to_dict(), operators=operators)
    print(json.dumps(result, indent=2, sort_keys=True))
    out = config.values.get('out')
    if out:
        _makedirs(out)
        _write_json(os.path.join(out, 'gradcheck_report.json'), result)
        _write_json(os.path.join(out, RESOLVED_NAME),
                    dict(config.values, command='gradcheck', seed=seed,
                         size=f"{size[0]}x{size[1]}", samples=samples,
                         classes=classes))
    if not report.passed or not all(operators.values()):
        failed = [name for name, ok in operators.items() if not ok]
        logger.error("Gradient check failed: max relative error %.3e "
                     "(tolerance %.0e), failing operators %s",
                     report.max_rel_error, report.tolerance, failed)
        return EXIT_NUMERIC
    return EXIT_OK


# ----------------------------------------------------------------------
# parser

def _schedule_flags(p: argparse.ArgumentParser):
    p.add_argument('--policy', choices=['fixed', 'aks', 'adaptive'],
                   help='keyframe policy (default fixed)')
    p.add_argument('--K', type=int, help='fixed keyframe interval')
    p.add_argument('--min-k', dest='min_k', type=int,
                   help='minimum adaptive keyframe interval')
    p.add_argument('--S', dest='threshold', type=float,
                   help='adaptive threshold on mean |frame difference|')
    p.add_argument('--first-key', dest='first_key', type=int,
                   help='index of the first keyframe')
    p.add_argument('--mode', choices=['P', 'B'],
                   help='previous keyframe only (P) or both sides (B)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='dcfm',
        description='Keyframe-based video semantic segmentation with deep '
                    'common feature reuse.')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON file with settings; flags win')
    common.add_argument('--verbose', '-v', action='store_true',
                        help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen', parents=[common],
                       help='generate a synthetic moving-shapes dataset')
    p.add_argument('--out', help='output directory')
    p.add_argument('--videos', type=int)
    p.add_argument('--frames', dest='frames_per_video', type=int)
    p.add_argument('--size', help='HxW, multiples of 16')
    p.add_argument('--classes', type=int)
    p.add_argument('--shapes', dest='shapes_per_video', type=int)
    p.add_argument('--max-speed', dest='max_speed', type=float)
    p.add_argument('--noise', dest='noise_sigma', type=float)
    p.add_argument('--label-mode', dest='label_mode',
                   choices=['dense', 'sparse'])
    p.add_argument('--seed', type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser('train', parents=[common], help='train a model')
    p.add_argument('--data', help='dataset directory or manifest.json')
    p.add_argument('--out', help='model file to write')
    p.add_argument('--iters', type=int)
    p.add_argument('--batch', type=int)
    p.add_argument('--lr', dest='base_lr', type=float)
    p.add_argument('--lambda-b', dest='lambda_b', type=float)
    p.add_argument('--lambda-c', dest='lambda_c', type=float)
    p.add_argument('--optimizer', choices=['sgd', 'adamw'])
    p.add_argument('--no-li', dest='use_li', action='store_const', const=False)
    p.add_argument('--no-lb', dest='use_lb', action='store_const', const=False)
    p.add_argument('--no-lc', dest='use_lc', action='store_const', const=False)
    p.add_argument('--seed', type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('infer', parents=[common], help='segment a clip')
    p.add_argument('--model')
    p.add_argument('--video', help='clip directory')
    p.add_argument('--out', help='output directory')
    p.add_argument('--workers', type=int,
                   help='threads for non-key frames (default 0: sequential)')
    _schedule_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser('eval', parents=[common],
                       help='score predictions against ground truth')
    p.add_argument('--pred')
    p.add_argument('--gt')
    p.add_argument('--vc', help='VC window lengths, e.g. 8,16')
    p.add_argument('--classes', type=int)
    p.add_argument('--out', help='directory for metrics.json')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('bench', parents=[common], help='time inference')
    p.add_argument('--model')
    p.add_argument('--video', help='clip directory')
    p.add_argument('--reps', type=int)
    p.add_argument('--sweep-k', dest='sweep_k',
                   help='comma-separated keyframe intervals to compare')
    p.add_argument('--out', help='directory for bench_report.json')
    _schedule_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser('gradcheck', parents=[common],
                       help='finite-difference check of the loss gradient')
    p.add_argument('--seed', type=int)
    p.add_argument('--size', help='HxW, multiples of 16')
    p.add_argument('--samples', type=int)
    p.add_argument('--classes', type=int)
    p.add_argument('--out', help='directory for gradcheck_report.json')
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _resolve(args: argparse.Namespace) -> CliConfig:
    config = CliConfig.from_file(args.config)
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    config.update(flags)
    if args.command == 'gen' and 'size' in config.values:
        h, w = _parse_size(config.values['size'])
        config.update({'height': h, 'width': w})
    return config


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        config = _resolve(args)
        return args.func(config)
    except NonFiniteError as e:
        logger.error("%s", e)
        return EXIT_NUMERIC
    except DataIOError as e:
        logger.error("%s", e)
        return EXIT_IO
    except (DCFMError, ValueError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except OSError as e:
        logger.error("%s", e)
        return EXIT_IO


if __name__ == '__main__':
    sys.exit(main())
