"""Multi-task 1-D double hierarchical residual network (DHRN) for acoustic
cavitation detection and cavitation-intensity recognition, written on plain
numpy with hand-written backward passes."""

from .metrics import ConfusionMatrix, confusion_matrix, render_report, scores
from .model import DhrnConfig, DhrnModel, Mode, build_dhrn, load_checkpoint, model_backward, model_forward, save_checkpoint
from .signals import FlowLabel, Intensity, Detection, Manifest, Signal, Split, SplitConfig, load_signal, split_dataset
from .swinfft import WindowConfig, augment_split, decimate, rfft_magnitude, split_windows
from .synth import SynthSpec, generate_dataset
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"
