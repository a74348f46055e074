"""Online multi-object tracking with transformer-based track recovery.

The package couples a ByteTrack-style association loop with a small
decision transformer that re-examines paused tracks: for every track the
detector lost, the model weighs a motion-predicted candidate box against
contextual distractors and two learned abstain options, and only keeps
the track alive when the candidate wins. Everything runs on plain numpy,
including training.
"""

__version__ = "0.1.0"

from .core import BBox, Detection, Observation, Source, Track, TrackState
from .model import DecisionModel, ModelConfig, Outcome, forward, init_model
from .model_io import load_model, save_model
from .synth import SceneConfig, generate_scene, inject_detector
from .tracker import Tracker, TrackerConfig, run_sequence

__all__ = [
    "BBox",
    "Detection",
    "Observation",
    "Source",
    "Track",
    "TrackState",
    "DecisionModel",
    "ModelConfig",
    "Outcome",
    "forward",
    "init_model",
    "load_model",
    "save_model",
    "SceneConfig",
    "generate_scene",
    "inject_detector",
    "Tracker",
    "TrackerConfig",
    "run_sequence",
    "__version__",
]
