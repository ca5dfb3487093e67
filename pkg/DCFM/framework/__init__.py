"""
The framework module assembles the DCFM network from the building blocks in
DCFM.modules and holds everything that runs it: configuration, symmetric
training, keyframe-based video inference, cost counting and gradient checks.
"""

from .config import *
from .sequence_stage import *
from .dcfm_net import *
from .flops import *
from .training import *
from .inference import *
from .gradcheck import *

__all__ = [
    'ModelConfig',
    'TrainConfig',
    'ScheduleConfig',
    'GenConfig',
    'CliConfig',
    'SequenceStage',
    'DCFMNet',
    'FeaturePair',
    'STRIDE',
    'count_macs',
    'count_flops',
    'keyframe_flops',
    'nonkey_flops',
    'LossBreakdown',
    'TrainingPair',
    'TrainingResult',
    'sample_pair_indices',
    'sample_training_pair',
    'compute_mask',
    'compute_joint_loss',
    'train_step',
    'train',
    'frame_score',
    'next_keyframe_index',
    'schedule_keyframes',
    'merge_predictions',
    'KeyframeCache',
    'EngineReport',
    'run_video',
    'latency_report',
    'benchmark_video',
    'sweep_keyframe_interval',
    'loss_gradcheck',
    'check_operators',
]
