"""Desk-scale zero-shot singing voice synthesis and conversion."""

from .checkpoint import Checkpoint, ModelConfig, load_checkpoint, save_checkpoint
from .dsp import AudioBuffer, SpectralConfig, griffin_lim, mel_spectrogram, read_wav, write_wav
from .embeddings import timbre_embed
from .features import DomainMode, extract_amplitude, extract_f0
from .pipeline import TrainConfig, convert_svc_b, convert_svc_c, synthesize_svs, train
from .score import StyleToken, parse_score

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "Checkpoint",
    "DomainMode",
    "ModelConfig",
    "SpectralConfig",
    "StyleToken",
    "TrainConfig",
    "convert_svc_b",
    "convert_svc_c",
    "extract_amplitude",
    "extract_f0",
    "griffin_lim",
    "load_checkpoint",
    "mel_spectrogram",
    "parse_score",
    "read_wav",
    "save_checkpoint",
    "synthesize_svs",
    "timbre_embed",
    "train",
    "write_wav",
]
