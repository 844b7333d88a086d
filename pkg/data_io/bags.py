import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ValidationError, field_validator

from helpers.errors import DataFormatError
from helpers.export_helper import atomic_write_bytes, write_json
from helpers.logging_helper import get_logger

logger = get_logger(__name__)

PAYLOAD_DTYPE = np.dtype('<f8')


@dataclass
class EmbeddingBag:
    """
    One patient's patch embeddings, stacked across all of their slides.
    Row i of `features` came from slide `slide_ids[i]` prepared with `stains[i]`.
    """
    patient_id: str
    label: int
    features: np.ndarray
    slide_ids: List[str]
    stains: List[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.label not in (0, 1):
            raise DataFormatError(f"patient {self.patient_id}: label must be 0 or 1, got {self.label}")
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataFormatError(f"patient {self.patient_id}: bag needs at least one row of features")
        rows = self.features.shape[0]
        if len(self.slide_ids) != rows or len(self.stains) != rows:
            raise DataFormatError(f"patient {self.patient_id}: {rows} feature rows but "
                                  f"{len(self.slide_ids)} slide ids and {len(self.stains)} stains")

    @property
    def num_rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def filter_stain(self, stain: str) -> 'EmbeddingBag':
        """Keep only rows of one stain; the patient label propagates to them"""
        mask = np.array([s == stain for s in self.stains], dtype=bool)
        if not mask.any():
            raise DataFormatError(f"patient {self.patient_id}: no rows with stain '{stain}'")
        return EmbeddingBag(
            patient_id=self.patient_id,
            label=self.label,
            features=self.features[mask],
            slide_ids=[s for s, keep in zip(self.slide_ids, mask) if keep],
            stains=[s for s, keep in zip(self.stains, mask) if keep],
        )


class PatientEntry(BaseModel):
    id: str
    label: int
    path: str

    @field_validator('label')
    @classmethod
    def _binary(cls, value: int) -> int:
        if value not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {value}")
        return value


class DatasetManifest(BaseModel):
    feature_dim: int
    patients: List[PatientEntry]
    stain: Optional[str] = None


def write_embedding_file(path: Path, bag: EmbeddingBag) -> Path:
    """JSON header line (rows, feature_dim, per-row slide/stain) then little-endian float64 rows"""
    header = {
        'rows': bag.num_rows,
        'feature_dim': bag.feature_dim,
        'slides': [[slide, stain] for slide, stain in zip(bag.slide_ids, bag.stains)],
    }
    payload = np.ascontiguousarray(bag.features, dtype=PAYLOAD_DTYPE).tobytes()
    return atomic_write_bytes(path, json.dumps(header, sort_keys=True).encode('utf-8') + b'\n' + payload)


def _read_binary(path: Path, entry: PatientEntry, feature_dim: int) -> EmbeddingBag:
    raw = path.read_bytes()
    newline = raw.find(b'\n')
    if newline < 0:
        raise DataFormatError(f"patient {entry.id}: {path} has no header line")
    try:
        header = json.loads(raw[:newline].decode('utf-8'))
        rows, dim, slides = int(header['rows']), int(header['feature_dim']), header['slides']
    except (ValueError, KeyError, TypeError) as e:
        raise DataFormatError(f"patient {entry.id}: bad header in {path}: {e}") from e

    if dim != feature_dim:
        raise DataFormatError(f"patient {entry.id}: rows have dimension {dim}, manifest says {feature_dim}")
    payload = raw[newline + 1:]
    expected = rows * dim * PAYLOAD_DTYPE.itemsize
    if len(payload) != expected or len(slides) != rows:
        raise DataFormatError(f"patient {entry.id}: {path} holds {len(payload)} payload bytes and "
                              f"{len(slides)} slide entries, expected {expected} bytes for {rows} rows")

    features = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).reshape(rows, dim).astype(np.float64)
    bad_rows = np.flatnonzero(~np.isfinite(features).all(axis=1))
    if bad_rows.size:
        raise DataFormatError(f"patient {entry.id}: row {int(bad_rows[0])} has non-finite values in {path}")
    return EmbeddingBag(entry.id, entry.label, features,
                        [str(s[0]) for s in slides], [str(s[1]) for s in slides])


def _read_csv(path: Path, entry: PatientEntry, feature_dim: int) -> EmbeddingBag:
    frame = pd.read_csv(path, dtype={'slide_id': str, 'stain': str})
    feature_columns = [c for c in frame.columns if c not in ('slide_id', 'stain')]
    if 'slide_id' not in frame.columns or 'stain' not in frame.columns:
        raise DataFormatError(f"patient {entry.id}: {path} needs slide_id and stain columns")
    if len(feature_columns) != feature_dim:
        raise DataFormatError(f"patient {entry.id}: rows have dimension {len(feature_columns)}, "
                              f"manifest says {feature_dim}")
    values = frame[feature_columns].to_numpy(dtype=np.float64)
    bad_rows = np.flatnonzero(~np.isfinite(values).all(axis=1))
    if bad_rows.size:
        raise DataFormatError(f"patient {entry.id}: row {int(bad_rows[0])} has missing or non-finite values")
    return EmbeddingBag(entry.id, entry.label, values,
                        frame['slide_id'].tolist(), frame['stain'].tolist())


def _load_patient(root: Path, entry: PatientEntry, feature_dim: int, stain: Optional[str]) -> EmbeddingBag:
    path = Path(entry.path)
    if not path.is_absolute():
        path = root / path
    if not path.exists():
        raise FileNotFoundError(f"embedding file for patient {entry.id} not found: {path}")
    reader = _read_csv if path.suffix.lower() == '.csv' else _read_binary
    bag = reader(path, entry, feature_dim)
    return bag.filter_stain(stain) if stain else bag


def read_manifest(manifest_path: Path) -> DatasetManifest:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    try:
        return DatasetManifest(**json.loads(manifest_path.read_text()))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{manifest_path} is not valid JSON: {e}") from e
    except ValidationError as e:
        raise DataFormatError(f"{manifest_path}: {e}") from e


def load_bags(manifest_path: Path, stain: Optional[str] = None, n_jobs: int = 1) -> List[EmbeddingBag]:
    """
    Load every patient bag listed in a manifest

    Args:
        manifest_path (Path): JSON manifest (feature_dim, patients, optional stain)
        stain (str): Keep only rows of this stain; overrides the manifest's filter
        n_jobs (int): Parallel readers across patient files

    Returns:
        One EmbeddingBag per patient, rows in file order
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    stain = stain or manifest.stain
    root = manifest_path.parent

    ids = [entry.id for entry in manifest.patients]
    if len(set(ids)) != len(ids):
        raise DataFormatError(f"{manifest_path}: patient ids must be unique")

    if n_jobs == 1:
        bags = [_load_patient(root, entry, manifest.feature_dim, stain) for entry in manifest.patients]
    else:
        bags = Parallel(n_jobs=n_jobs, prefer='threads')(
            delayed(_load_patient)(root, entry, manifest.feature_dim, stain) for entry in manifest.patients)

    logger.info(f"Loaded {len(bags)} patients from {manifest_path}" + (f" (stain {stain})" if stain else ''))
    return bags


def write_dataset(bags: Sequence[EmbeddingBag], out_dir: Path, stain: Optional[str] = None) -> Path:
    """Write one embedding file per patient plus manifest.json; returns the manifest path"""
    out_dir = Path(out_dir)
    if not bags:
        raise DataFormatError("cannot write an empty dataset")
    feature_dim = bags[0].feature_dim
    patients = []
    for bag in bags:
        if bag.feature_dim != feature_dim:
            raise DataFormatError(f"patient {bag.patient_id}: dimension {bag.feature_dim} differs from {feature_dim}")
        relative = Path('patients') / f"{bag.patient_id}.emb"
        write_embedding_file(out_dir / relative, bag)
        patients.append({'id': bag.patient_id, 'label': bag.label, 'path': relative.as_posix()})

    manifest = {'feature_dim': feature_dim, 'patients': patients}
    if stain:
        manifest['stain'] = stain
    return write_json(out_dir / 'manifest.json', manifest)
