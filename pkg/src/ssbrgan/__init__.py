"""Body-part regression scores for slice pairing in unpaired CT contrast translation."""

from .volume import Modality, Volume, load_volume, normalize_intensity, save_volume, select_abdominal_roi
from .phantom import PhantomSpec, generate_phantom_pair
from .ssbr import SsbrConfig, load_ssbr, score_volume, train_ssbr
from .pairing import make_paired_batch, make_pbs_batch, pbs_pair
from .translate import TranslatorConfig, load_translator, train_translation, translate_volume
from .metrics import evaluate_paired, mse, psnr, ssim

__version__ = "0.1.0"

__all__ = [
    "Modality", "Volume", "load_volume", "normalize_intensity", "save_volume", "select_abdominal_roi",
    "PhantomSpec", "generate_phantom_pair",
    "SsbrConfig", "load_ssbr", "score_volume", "train_ssbr",
    "make_paired_batch", "make_pbs_batch", "pbs_pair",
    "TranslatorConfig", "load_translator", "train_translation", "translate_volume",
    "evaluate_paired", "mse", "psnr", "ssim",
]
