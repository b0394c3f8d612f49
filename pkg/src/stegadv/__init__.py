"""Adversarially enhanced J-UNIWARD JPEG steganography."""
from .advloop import LoopConfig, ModelChain, SelectionMask, run_training, select_top_p, update_costs
from .analyzer import AnalyzerModel, TrainConfig
from .coder import ChangeMap, EmbedRequest
from .jpegio import CoefficientImage, SpatialImage, compress_gray, decode_jpeg, encode_jpeg
from .juniward import CostMap, juniward_cost
from .stegogen import compose_cost, generate_stego, temporary_cost

__version__ = "0.1.0"

__all__ = [
    "AnalyzerModel", "ChangeMap", "CoefficientImage", "CostMap", "EmbedRequest", "LoopConfig",
    "ModelChain", "SelectionMask", "SpatialImage", "TrainConfig", "compose_cost", "compress_gray",
    "decode_jpeg", "encode_jpeg", "generate_stego", "juniward_cost", "run_training",
    "select_top_p", "temporary_cost", "update_costs",
]
