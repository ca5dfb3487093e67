'''Configuration dataclasses.

Each config validates itself on construction and raises `ConfigError`
naming the offending field. `from_dict` rejects unknown keys, `to_dict`
is JSON-ready.

`CliConfig` is the flat union of all keys the command line exposes; it is
resolved as defaults <- JSON file <- flags and then split back into the
typed configs.
'''

import json
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional

from ..errors import ConfigError, DataIOError

__all__ = [
    'ModelConfig',
    'TrainConfig',
    'ScheduleConfig',
    'GenConfig',
    'CliConfig',
]


class _ConfigMixin:

    @classmethod
    def from_dict(cls, values: Dict[str, Any]):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"Unknown {cls.__name__} keys: {unknown}")
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _require(ok: bool, message: str):
    if not ok:
        raise ConfigError(message)


@dataclass
class ModelConfig(_ConfigMixin):
    '''Widths and switches of the network.

    Attributes:
      num_classes: number of semantic classes.
      in_channels: frame channels.
      c_f_indep: channels of the shallow (independent) feature.
      c_hi: width of the deep encoder.
      c_common: channels of the common feature, also the fused width.
      indep_half: independent channels passed to the fusion module,
        defaults to c_f_indep // 2.
      hi_depth: extra stride-1 3x3 layers inside each deep block.
      project_common: keep the 1x1 projection even when c_common == c_hi.
      use_common, use_indep: ablation switches of the fusion module.
      norm_eps: epsilon of the channel normalization.
      seed: parameter initialization seed.
    '''
    num_classes: int = 4
    in_channels: int = 3
    c_f_indep: int = 16
    c_hi: int = 48
    c_common: int = 32
    indep_half: Optional[int] = None
    hi_depth: int = 5
    project_common: bool = True
    use_common: bool = True
    use_indep: bool = True
    norm_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.indep_half is None:
            self.indep_half = self.c_f_indep // 2
        _require(self.num_classes >= 2,
                 f"num_classes must be >= 2, got {self.num_classes}")
        for name in ('in_channels', 'c_f_indep', 'c_hi', 'c_common'):
            _require(getattr(self, name) >= 1,
                     f"{name} must be >= 1, got {getattr(self, name)}")
        _require(0 <= self.indep_half <= self.c_f_indep,
                 f"indep_half={self.indep_half} must lie in "
                 f"[0, c_f_indep={self.c_f_indep}]")
        _require(self.hi_depth >= 0,
                 f"hi_depth must be >= 0, got {self.hi_depth}")
        _require(self.use_common or self.use_indep,
                 "at least one of use_common / use_indep must be true")
        _require(self.project_common or self.c_common == self.c_hi,
                 "project_common=false requires c_common == c_hi")
        _require(self.norm_eps > 0, f"norm_eps must be > 0, got {self.norm_eps}")
        if self.use_indep and self.indep_half == 0:
            warnings.warn("indep_half=0 passes no independent channels to the "
                          "fusion module although use_indep is set")


@dataclass
class TrainConfig(_ConfigMixin):
    '''Symmetric training settings.

    The loss is total = l_i + lambda_b * l_b + lambda_c * l_c, each term
    switched by its `use_*` flag. `decoder_lr_mult` scales the rate of the
    fusion module and decoder relative to the encoders.
    '''
    lambda_b: float = 0.4
    lambda_c: float = 10.0
    base_lr: float = 0.01
    momentum: float = 0.9
    poly_power: float = 0.9
    iters: int = 2000
    batch: int = 4
    seed: int = 0
    use_li: bool = True
    use_lb: bool = True
    use_lc: bool = True
    optimizer: str = 'sgd'
    decoder_lr_mult: float = 1.0
    weight_decay: float = 0.
    flip: bool = True
    log_every: int = 1
    seg_loss: str = 'ce'
    consistency_loss: str = 'mse'

    def __post_init__(self):
        _require(self.lambda_b >= 0, f"lambda_b must be >= 0, got {self.lambda_b}")
        _require(self.lambda_c >= 0, f"lambda_c must be >= 0, got {self.lambda_c}")
        _require(self.iters >= 1, f"iters must be >= 1, got {self.iters}")
        _require(self.batch >= 1, f"batch must be >= 1, got {self.batch}")
        _require(self.base_lr >= 0, f"base_lr must be >= 0, got {self.base_lr}")
        _require(0 <= self.momentum < 1,
                 f"momentum must lie in [0, 1), got {self.momentum}")
        _require(self.decoder_lr_mult >= 0,
                 f"decoder_lr_mult must be >= 0, got {self.decoder_lr_mult}")
        _require(self.use_li or self.use_lb or self.use_lc,
                 "at least one of use_li, use_lb, use_lc must be enabled")
        _require(self.log_every >= 1,
                 f"log_every must be >= 1, got {self.log_every}")
        _require(self.optimizer in ('sgd', 'adamw'),
                 f'optimizer must be "sgd" or "adamw", got "{self.optimizer}"')
        # ohem, dice etc. are reserved names, not implemented
        _require(self.seg_loss == 'ce',
                 f'seg_loss "{self.seg_loss}" is not implemented, use "ce"')
        _require(self.consistency_loss == 'mse',
                 f'consistency_loss "{self.consistency_loss}" is not '
                 f'implemented, use "mse"')


@dataclass
class ScheduleConfig(_ConfigMixin):
    '''Keyframe policy for video inference.

    Attributes:
      policy: 'fixed' (a keyframe every K frames) or 'adaptive' (a new
        keyframe once the mean absolute frame difference to the previous
        keyframe exceeds `threshold`, at least `min_k` frames apart).
      K: fixed keyframe interval.
      min_k: minimum adaptive keyframe interval.
      threshold: adaptive score threshold S, on the [0, 255] pixel scale.
      first_key: index T of the first keyframe.
      mode: 'B' merges the previous and the next keyframe, 'P' uses the
        previous one only.
    '''
    policy: str = 'fixed'
    K: int = 2
    min_k: int = 1
    threshold: float = 10.0
    first_key: int = 0
    mode: str = 'B'

    def __post_init__(self):
        if self.policy == 'aks':
            self.policy = 'adaptive'
        _require(self.policy in ('fixed', 'adaptive'),
                 f'policy must be "fixed" or "adaptive", got "{self.policy}"')
        _require(self.mode in ('B', 'P'),
                 f'mode must be "B" or "P", got "{self.mode}"')
        _require(self.K >= 1, f"K must be >= 1, got {self.K}")
        _require(self.min_k >= 1, f"min_k must be >= 1, got {self.min_k}")
        _require(self.first_key >= 0,
                 f"first_key must be >= 0, got {self.first_key}")

    def check_clip(self, n_frames: int):
        _require(n_frames >= 1, "cannot schedule an empty clip")
        _require(self.first_key < n_frames,
                 f"first_key={self.first_key} is outside a clip of "
                 f"{n_frames} frames")


@dataclass
class GenConfig(_ConfigMixin):
    '''Synthetic moving-shapes video set.

    `label_mode` is 'dense' (every frame labeled) or 'sparse' (only the
    middle frame of each clip).'''
    videos: int = 20
    frames_per_video: int = 12
    height: int = 48
    width: int = 64
    classes: int = 4
    shapes_per_video: int = 3
    max_speed: float = 3.0
    noise_sigma: float = 4.0
    label_mode: str = 'dense'
    seed: int = 0

    def __post_init__(self):
        _require(self.videos >= 1, f"videos must be >= 1, got {self.videos}")
        _require(self.frames_per_video >= 1,
                 f"frames_per_video must be >= 1, got {self.frames_per_video}")
        _require(self.classes >= 2, f"classes must be >= 2, got {self.classes}")
        _require(self.classes <= 255,
                 f"classes must be <= 255 (255 is the ignore label), "
                 f"got {self.classes}")
        for name in ('height', 'width'):
            value = getattr(self, name)
            _require(value >= 16 and value % 16 == 0,
                     f"{name} must be a positive multiple of 16, got {value}")
        _require(self.shapes_per_video >= 0,
                 f"shapes_per_video must be >= 0, got {self.shapes_per_video}")
        _require(self.max_speed >= 0,
                 f"max_speed must be >= 0, got {self.max_speed}")
        _require(self.noise_sigma >= 0,
                 f"noise_sigma must be >= 0, got {self.noise_sigma}")
        _require(self.label_mode in ('dense', 'sparse'),
                 f'label_mode must be "dense" or "sparse", '
                 f'got "{self.label_mode}"')


_SECTIONS = (ModelConfig, TrainConfig, ScheduleConfig, GenConfig)

# 'S' is the user-facing name of the adaptive threshold, 'seed' feeds
# every section that has one
_ALIASES = {'S': 'threshold'}

# per-run keys (command name, paths, repetition counts) that belong to no
# section but make resolved_config.json self-contained
RUN_KEYS = {'command', 'data', 'out', 'model', 'video', 'pred', 'gt',
            'reps', 'vc', 'size', 'samples', 'workers', 'sweep_k'}


@dataclass
class CliConfig:
    '''Flat key/value view over all config sections.

    `values` holds only explicitly set keys; everything else falls back to
    the dataclass defaults when a section is built.'''
    values: Dict[str, Any] = field(default_factory=dict)

    @staticmethod
    def known_keys():
        keys = set(_ALIASES)
        for section in _SECTIONS:
            keys.update(f.name for f in fields(section))
        return keys

    @classmethod
    def from_file(cls, path: Optional[str]) -> 'CliConfig':
        if path is None:
            return cls()
        try:
            with open(path, 'r') as fh:
                values = json.load(fh)
        except OSError as e:
            raise DataIOError(f"Cannot read config file {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        config = cls()
        config.update(values)
        return config

    def update(self, values: Dict[str, Any]):
        '''Merge `values` over the current ones; None values are skipped so
        unset command-line flags do not shadow file values.'''
        unknown = sorted(set(values) - self.known_keys() - RUN_KEYS)
        if unknown:
            raise ConfigError(f"Unknown config keys: {unknown}")
        for key, value in values.items():
            if value is not None:
                self.values[_ALIASES.get(key, key)] = value

    def section(self, section_cls):
        names = {f.name for f in fields(section_cls)}
        return section_cls.from_dict({k: v for k, v in self.values.items()
                                      if k in names})

    def model(self) -> ModelConfig:
        return self.section(ModelConfig)

    def train(self) -> TrainConfig:
        return self.section(TrainConfig)

    def schedule(self) -> ScheduleConfig:
        return self.section(ScheduleConfig)

    def gen(self) -> GenConfig:
        return self.section(GenConfig)

    def resolved(self, *sections, **extra) -> Dict[str, Any]:
        '''Fully resolved flat dict of the given built sections plus `extra`
        entries (command name, paths), as echoed to resolved_config.json.'''
        out = {}
        for built in sections:
            out.update(built.to_dict())
        out.update(extra)
        return out
