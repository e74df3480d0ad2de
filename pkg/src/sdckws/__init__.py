"""Keyword spotting with shifted-delta features and a cross-attention matcher."""

from .dsp import FrameMatrix, SpectrumMatrix, Waveform
from .features import (
    FeatureKind,
    FeatureMatrix,
    FrontEndConfig,
    SdcConfig,
    make_front_end,
    mel_spectrogram,
    mfcc,
    plp,
    rasta_plp,
    sdc,
)
from .metrics import ScoredSet, auc, eer, f1_at
from .model import Checkpoint, KwsModel, ModelConfig, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "FeatureKind",
    "FeatureMatrix",
    "FrameMatrix",
    "FrontEndConfig",
    "KwsModel",
    "ModelConfig",
    "ScoredSet",
    "SdcConfig",
    "SpectrumMatrix",
    "Waveform",
    "auc",
    "eer",
    "f1_at",
    "make_front_end",
    "mel_spectrogram",
    "mfcc",
    "plp",
    "rasta_plp",
    "sdc",
    "train",
]
