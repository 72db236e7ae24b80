"""Pseudo-label mining from the stability of neighbourhoods across two
successive feature embeddings of a partially labeled dataset."""

from .cospace import CoSpace, FeatureSpace, make_cospace, reduce, reduce_cospace
from .dataset import Partition, augment, load_features, load_labels, write_features
from .graph import build_knn, build_transition
from .mining import (
    Confidence,
    MiningConfig,
    MiningResult,
    confidence,
    confidence_ablation,
    mine_iteration,
    run_loop,
    select,
)
from .propagation import intrinsic_variation, propagate
from .variation import hellinger, local_covariance, transformation_matrix

__version__ = "0.1.0"
