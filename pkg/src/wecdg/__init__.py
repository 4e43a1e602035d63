"""Wavelet-domain exposure correction with degradation descriptors.

A numpy reverse-mode autodiff engine, Haar wavelets, descriptor generation
and matching, descriptor-conditioned attention, two-stage wavelet
restoration blocks, the four-term training objective, and a CLI.
"""

from .errors import WecdgError
from .imageio import ImageBuffer, load_image, save_image
from .model import WECDG, ModelConfig
from .sdgm import SDGM, DegradationDescriptor, SDGMConfig
from .tensor import Tensor
from .wavelet import WaveletSubbands, dwt2, iwt2, swap_subbands

__version__ = "0.1.0"

__all__ = [
    "WECDG", "ModelConfig", "SDGM", "SDGMConfig", "DegradationDescriptor", "ImageBuffer",
    "Tensor", "WaveletSubbands", "WecdgError", "dwt2", "iwt2", "swap_subbands",
    "load_image", "save_image",
]
