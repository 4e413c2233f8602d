"""Vision-steered delay-and-sum beamforming for planar microphone arrays."""

from .beamformer import Beamformer, FrameSpec, process_offline
from .config import ConfigError, ScenarioConfig, load_scenario, shipped_scenario
from .detection import TargetScript, TrajectoryScript, generate_detections
from .experiments import run_experiment, run_pipeline
from .geometry import (
    DoaAngles,
    MicArray,
    PropagationConfig,
    beampattern,
    build_concentric_array,
    reference_array,
    steering_delays,
    unit_vector,
)
from .metrics import SirSeries, band_power, delta_sir, sir_broadband, sir_tone_tone
from .pipeline import DoaHistory, PipelineSettings, lookup_closest_not_future, run_stream
from .scene import MultichannelSignal, SourceSpec, Tone, Trajectory, WhiteNoise, synthesize_scene
from .vision import CameraModel, DetectionEvent, MountingOffset, detection_to_doa, doa_from_position

__version__ = "0.1.0"
