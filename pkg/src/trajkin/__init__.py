"""Three-stream pedestrian trajectory forecasting with motion-consistency
self-supervision: joint position/velocity/acceleration prediction, heuristic
candidate scoring, and best-of-K evaluation."""

from .data import SceneWindow, SplitSpec, load_tracks, make_splits, synth_scene, window_scenes
from .evaluation import EvalResult, ade, evaluate, fde, min_of_k
from .kinematics import (
    KinematicTriple,
    derive_accel,
    derive_velocity,
    global_velocity,
    integrate_positions,
    observed_triple,
    pseudo_accel,
    pseudo_velocity,
)
from .losses import LossConfig, LossReport, cons1_loss, cons2_loss, diff_tolerance, position_loss, total_loss, va_loss
from .model import ModelConfig, PredictionSet, ThreeStreamNet, load_checkpoint, save_checkpoint
from .scoring import CandidateScores, ScoreWeights, accel_similarity, combined_scores, directional_consistency, select_best
from .training import TrainConfig, ablation_variant, fit, train_step

__version__ = "0.1.0"
