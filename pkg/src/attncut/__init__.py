"""Unpaired image-to-image translation with attention-selected PatchNCE patches."""

from .attention import AttentionConfig, PatchSampler, PatchSelection, compute_significance, select_patches
from .contrastive import ProjectionHead, build_heads, identity_patch_nce, info_nce, patch_nce_loss, project
from .data_io import UnpairedDataset, denormalize_image, load_unpaired_dataset, normalize_image
from .discriminator import DiscriminatorConfig, build_discriminator, discriminate
from .generator import FeatureStack, GeneratorConfig, build_generator, encode_features, receptive_field, translate
from .metrics import EmbeddedSet, MetricReport, embed_images, fid, inception_score, swd
from .trainer import LossReport, TrainConfig, lsgan_d_loss, lsgan_g_loss, total_generator_objective, train, train_step

__version__ = "0.1.0"
