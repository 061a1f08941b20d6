"""Self-supervised pretraining for lung CT classifiers.

The pipeline: render multi-octave gradient noise, harvest bright lesion-like
patches, paste them into normal scans (or blur / locally shuffle the scans)
to make pseudo-diseased images, pretrain a small U-Net to restore the
originals, then transplant its encoder into a binary classifier and
fine-tune. Ships as both a library (including sklearn-style estimators) and
the `plr` command-line tool.
"""

from .corrupt import CorruptionSpec, gaussian_blur, generate_dataset, local_shuffle, paste_patches
from .estimators import (
    GaussianBlurCorruptor,
    LesionClassifier,
    LocalShuffleCorruptor,
    PerlinPasteCorruptor,
    RestorationPretrainer,
)
from .image import (
    affine_augment,
    derive_lung_mask,
    load_image,
    load_mask,
    resize_bilinear,
    save_image,
    save_mask,
)
from .manifest import DatasetManifest, read_manifest, write_manifest
from .metrics import Metrics, compute_metrics, roc_auc
from .nn.net import EncoderClassifier, UNet, UNetConfig
from .nn.weights import ModelWeights, load_weights, save_weights
from .patches import LesionPatch, PatchBank, build_bank, load_bank, sample_patch, save_bank
from .perlin import OctaveParams, PerlinTable, build_table, fade, noise2, octave_noise, render_noise_image
from .similarity import SimilarityReport, cosine_distance, js_divergence, set_similarity, to_vector
from .train import (
    TrainConfig,
    evaluate_manifest,
    export_activations,
    finetune,
    finetune_config,
    pretrain,
    pretrain_config,
    subsample_labeled,
    sweep,
)

__version__ = "0.1.0"
