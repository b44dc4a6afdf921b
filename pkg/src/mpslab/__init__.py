"""Minimal sufficient pixel sets for black-box image classifiers."""

__version__ = "0.1.0"

from .extraction import MpsRecord, area_ratio, explain, extract_mps, rank_pixels, verify_sufficiency
from .occlusion import Region, composite, split_region
from .oracle import (
    Classification,
    ModelManifest,
    SyntheticOracleSpec,
    load_external_model,
    make_synthetic_oracle,
)
from .responsibility import SearchConfig, build_landscape, part_responsibility
from .setmetrics import dice, hausdorff, pairwise_matrix, resample_mask
from .stats import bonferroni, chi2_sf, fit_size_model, friedman, kruskal_wallis
