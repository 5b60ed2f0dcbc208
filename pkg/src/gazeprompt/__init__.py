"""Gaze-based activity recognition by prompting multimodal language models with
visualizations or text encodings of eye-tracking windows."""
from .core import (
    BUILTIN_SPECS, AdapterKind, CoordinateSpace, DatasetSpec, GazeSample, GazeTrace, Unit,
    WindowInstance, WindowPolicy, ingest, ingest_many, iter_windows, segment_windows, to_canvas,
)
from .encode import (
    DEFAULT_TOKEN_MODEL, TextKind, TextPrompt, TokenMode, TokenModel, encode_feature_text,
    encode_raw_text, estimate_tokens,
)
from .errors import ConfigError, DataError, GazePromptError, TransportError
from .events import Fixation, IdtParams, Saccade, idt_detect, idt_oracle
from .prompt import INVALID, ActivityCatalog, PromptBundle, PromptContext, Shot, build_user_prompt, parse_response
from .render import Canvas, RenderedImage, Style, VizKind, render
from .client import ModelConfig, make_backend
from .evaluation import Condition, ExperimentPlan, Report, TrialRecord, read_records, run, score
from .estimators import FixationDetector, PromptedActivityClassifier, TextPromptEncoder, VisualPromptRenderer
from .synth import SynthActivity, SynthKind, synth_generate, synthetic_dataset

__version__ = "0.1.0"
