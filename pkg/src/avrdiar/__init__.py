"""Audio-visual speaker diarization with a visibility-aware relation network."""

from .core import Config, Diarization, RttmRecord, TimeInterval, load_config, parse_rttm, serialize_rttm
from .relation import RelationModel, score_pair, visibility_case
from .scoring import DerBreakdown, compute_der

__version__ = "0.1.0"

__all__ = [
    "Config", "DerBreakdown", "Diarization", "RelationModel", "RttmRecord", "TimeInterval",
    "compute_der", "load_config", "parse_rttm", "score_pair", "serialize_rttm",
    "visibility_case",
]
