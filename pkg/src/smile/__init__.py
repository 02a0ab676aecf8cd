"""Sequence recognizer domain adaptation lab: a self-contained autodiff
engine, synthetic two-domain glyph corpora, an attention recognizer, and
entropy-minimization training with class-balanced self-paced selection."""

from .data import (Corpus, DomainConfig, TextImage, VocabSpec, build_glyph12,
                   generate_corpus, load_corpus, make_templates,
                   render_string, save_corpus)
from .errors import (ContractError, DimensionError, FormatError,
                     IndexRangeError, NumericalAbort)
from .losses import decoder_loss, sequence_entropy, smile_loss, step_entropy
from .metrics import (EvalResult, compare_report, edit_distance, evaluate,
                      word_accuracy)
from .recognizer import ArchSpec, DecoderOutput, Recognizer
from .self_paced import (PacingSchedule, PredictionPool, SelectionResult,
                         build_pool, portion_at, select,
                         selected_entropy_loss)
from .tensor import Tape, Tensor
from .trainer import (Checkpoint, MetricsLog, TrainConfig, load_checkpoint,
                      save_checkpoint, sweep, train, train_with_corpora)

__version__ = "0.1.0"

__all__ = [
    "ArchSpec", "Checkpoint", "ContractError", "Corpus", "DecoderOutput",
    "DimensionError", "DomainConfig", "EvalResult", "FormatError",
    "IndexRangeError", "MetricsLog", "NumericalAbort", "PacingSchedule",
    "PredictionPool", "Recognizer", "SelectionResult", "Tape", "Tensor",
    "TextImage", "TrainConfig", "VocabSpec", "build_glyph12", "build_pool",
    "compare_report", "decoder_loss", "edit_distance", "evaluate",
    "generate_corpus", "load_checkpoint", "load_corpus", "make_templates",
    "portion_at", "render_string", "save_checkpoint", "save_corpus",
    "select", "selected_entropy_loss", "sequence_entropy", "smile_loss",
    "step_entropy", "sweep", "train", "train_with_corpora", "word_accuracy",
]
