from pathlib import Path
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from data_io.bags import EmbeddingBag, write_dataset
from helpers.logging_helper import get_logger

logger = get_logger(__name__)

STAINS = ('H&E', 'CD20', 'CD68', 'CD138')


class SyntheticConfig(BaseModel):
    """
    Multiple-instance toy cohort: class-0 patches scatter around mu0, class-1
    bags additionally hold a fraction of signal patches shifted by
    class_separation along one fixed unit direction.
    """
    num_patients: int = Field(40, ge=4)
    patches_per_slide: Tuple[int, int] = (16, 32)
    slides_per_patient: Tuple[int, int] = (1, 3)
    feature_dim: int = Field(64, ge=1)
    class_separation: float = Field(4.0, gt=0.0)
    noise: float = Field(1.0, ge=0.0)
    signal_fraction: float = Field(0.2, gt=0.0, le=1.0)
    slide_spread: float = Field(0.0, ge=0.0)
    seed: int = 0

    @model_validator(mode='after')
    def _ranges(self) -> 'SyntheticConfig':
        for name in ('patches_per_slide', 'slides_per_patient'):
            low, high = getattr(self, name)
            if low < 1 or high < low:
                raise ValueError(f"{name} must be a range 1 <= low <= high, got ({low}, {high})")
        return self


def synthesize_bags(cfg: SyntheticConfig) -> List[EmbeddingBag]:
    """Generate the cohort in memory; a pure function of the config"""
    rng = np.random.default_rng(cfg.seed)
    dim = cfg.feature_dim
    mu0 = rng.normal(0.0, 1.0, dim)
    direction = rng.normal(0.0, 1.0, dim)
    direction /= np.linalg.norm(direction)
    labels = rng.permutation(np.arange(cfg.num_patients) % 2)

    bags = []
    for index, label in enumerate(labels):
        patient_id = f"patient_{index:03d}"
        num_slides = int(rng.integers(cfg.slides_per_patient[0], cfg.slides_per_patient[1] + 1))
        blocks, slide_ids, stains = [], [], []
        for slide in range(num_slides):
            patches = int(rng.integers(cfg.patches_per_slide[0], cfg.patches_per_slide[1] + 1))
            stain = STAINS[int(rng.integers(len(STAINS)))]
            centre = mu0 + cfg.slide_spread * rng.normal(0.0, 1.0, dim)
            blocks.append(centre + cfg.noise * rng.normal(0.0, 1.0, (patches, dim)))
            slide_ids.extend([f"{patient_id}_slide{slide}"] * patches)
            stains.extend([stain] * patches)

        features = np.concatenate(blocks)
        if label == 1:
            rows = features.shape[0]
            signal = rng.choice(rows, size=max(1, int(round(cfg.signal_fraction * rows))), replace=False)
            features[signal] += cfg.class_separation * direction
        bags.append(EmbeddingBag(patient_id, int(label), features, slide_ids, stains))
    return bags


def generate_synthetic(out_dir: Path, cfg: SyntheticConfig) -> Path:
    """
    Write a synthetic cohort to disk

    Args:
        out_dir (Path): Destination directory (manifest.json + patients/)
        cfg (SyntheticConfig): Generator settings, seed included

    Returns:
        Path of the written manifest
    """
    bags = synthesize_bags(cfg)
    manifest = write_dataset(bags, out_dir)
    logger.info(f"Wrote {len(bags)} synthetic patients (F={cfg.feature_dim}, seed={cfg.seed}) to {manifest}")
    return manifest
