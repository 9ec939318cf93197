from harmony.models.bundle import EncoderBundle
from harmony.models.heads import ContrastiveHead, DistillHead
from harmony.models.text import TextDecoder, TextTransformer
from harmony.models.vision import VisionDecoder, VisionTransformer

__all__ = [
    "ContrastiveHead",
    "DistillHead",
    "EncoderBundle",
    "TextDecoder",
    "TextTransformer",
    "VisionDecoder",
    "VisionTransformer",
]
