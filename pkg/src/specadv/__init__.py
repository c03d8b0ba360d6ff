"""Transferable adversarial examples via frequency-domain model augmentation."""

from .attacks import (
    AdversarialResult,
    AttackConfig,
    Ensemble,
    attack_ifgsm,
    attack_s2i,
    clip_to_ball,
    compose,
    craft_batch,
    di_transform,
    ensemble_loss,
    momentum_update,
    si_average_grad,
    ti_smooth,
)
from .data import Dataset, load_idx, save_idx, synthetic_dataset
from .evaluate import TransferReport, ablate, evaluate_transfer
from .models import Model, TrainConfig, build, load_weights, save_weights, train
from .saliency import (
    SaliencyMap,
    average_saliency,
    export_pgm,
    proposition1_check,
    saliency_cosine,
    spatial_saliency,
    spectrum_saliency,
)
from .spectral import (
    FULL_IMAGE,
    DctBasis,
    Spectrum,
    SpectrumTransformParams,
    block_dct2,
    block_idct2,
    dct2,
    dct_basis,
    idct2,
    spectrum_transform,
)

__version__ = "0.1.0"
