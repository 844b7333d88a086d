import math
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from data_io.bags import EmbeddingBag
from helpers.errors import StratificationError
from helpers.logging_helper import get_logger
from helpers.settings import ModelConfig, TrainConfig
from models.resources import param_count
from training.trainer import split_hash, stratified_split, train

logger = get_logger(__name__)

ABLATION_COLUMNS = ['variant', 'f1', 'auc', 'params', 'runtime', 'split_hash', 'status', 'error']

DEFAULT_K_LIST = [1, 2, 3, 4, 5, 10, 20, 50, 100]
DEFAULT_LAYERS_LIST = [1, 2, 3, 4, 5]
DEFAULT_HEADS_LIST = [1, 2, 4, 8]


@dataclass
class AblationVariant:
    name: str
    model_cfg: ModelConfig
    k: int
    stain: Optional[str] = None


class AblationEvaluator(ABC):
    def __init__(self,
                 dataset: Sequence[EmbeddingBag],
                 model_cfg: ModelConfig,
                 train_cfg: TrainConfig,
                 k: int = 5,
                 n_jobs: int = 1,
                 progress: bool = True):
        """
        Base class for ablation grids

        Every cell trains from the same seed on the same train/test split, so
        the only thing that changes between rows is the ablated variable.

        Args:
            dataset (Sequence[EmbeddingBag]): All patients, loaded once
            model_cfg (ModelConfig): Architecture the variants start from
            train_cfg (TrainConfig): Optimizer and schedule shared by all cells
            k (int): Default neighbours per node
            n_jobs (int): Worker processes across cells
            progress (bool): Show a progress bar over cells
        """
        self.dataset = list(dataset)
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.k = k
        self.n_jobs = n_jobs
        self.progress = progress
        self.train_bags, self.test_bags = stratified_split(self.dataset, train_cfg.split_ratio, train_cfg.seed)
        self.split_hash = split_hash(self.train_bags, self.test_bags)

    @property
    @abstractmethod
    def grid_name(self) -> str:
        pass

    @abstractmethod
    def variants(self) -> List[AblationVariant]:
        """
        Grid cells of this ablation

        Returns:
            One AblationVariant per output row, in output order
        """
        pass

    def _variant(self, name: str, **changes: Any) -> AblationVariant:
        k = changes.pop('k', self.k)
        stain = changes.pop('stain', None)
        return AblationVariant(name, self.model_cfg.model_copy(update=changes), k, stain)

    def _handle_error(self, variant: AblationVariant, error: Exception, stage: str) -> Dict[str, Any]:
        """Log a failed cell and turn it into a row without raising"""
        error_message = f"{stage} error: {type(error).__name__}: {error}"
        logger.error(f"Ablation cell {variant.name} failed: {error_message}")
        return {
            'variant': variant.name,
            'f1': math.nan,
            'auc': math.nan,
            'params': param_count(variant.model_cfg),
            'runtime': 0.0,
            'split_hash': self.split_hash,
            'status': 'failed',
            'error': error_message,
        }

    def _cell_split(self, variant: AblationVariant) -> Tuple[List[EmbeddingBag], List[EmbeddingBag]]:
        """Shared split, narrowed to the variant's stain when it names one"""
        if variant.stain is None:
            return self.train_bags, self.test_bags
        train_bags, test_bags = (
            [bag.filter_stain(variant.stain) for bag in bags if variant.stain in bag.stains]
            for bags in (self.train_bags, self.test_bags)
        )
        if not train_bags or not test_bags:
            side = 'training' if not train_bags else 'test'
            raise StratificationError(f"no {side} patients have stain {variant.stain}")
        logger.debug(f"Cell {variant.name}: {len(train_bags)} train and {len(test_bags)} test patients")
        return train_bags, test_bags

    def run_cell(self, variant: AblationVariant) -> Dict[str, Any]:
        """Train one variant and report its best-epoch test metrics"""
        started = time.perf_counter()
        try:
            split = self._cell_split(variant)
            result = train(self.dataset, variant.model_cfg, self.train_cfg, k=variant.k,
                           progress=False, split=split)
        except Exception as e:
            return self._handle_error(variant, e, 'Training')

        row = {
            'variant': variant.name,
            'f1': result.best_metrics.f1,
            'auc': result.best_metrics.auc,
            'params': result.best_params.total_param_count,
            'runtime': time.perf_counter() - started,
            'split_hash': self.split_hash,
            'status': 'ok',
            'error': '',
        }
        logger.info(f"Ablation cell {variant.name}: f1={row['f1']:.3f} auc={row['auc']:.3f}")
        return row

    def run_evaluation(self) -> pd.DataFrame:
        """Run every cell and collect one row per variant"""
        cells = self.variants()
        logger.info(f"Running {self.grid_name} ablation: {len(cells)} cells, split {self.split_hash}")
        if self.n_jobs == 1:
            rows = [self.run_cell(v) for v in tqdm(cells, desc=f"ablate {self.grid_name}", disable=not self.progress)]
        else:
            rows = Parallel(n_jobs=self.n_jobs)(delayed(self.run_cell)(v) for v in cells)
        return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


class GnnAblation(AblationEvaluator):
    """Message-passing layer crossed with pooling layer"""
    grid_name = 'gnn'

    def variants(self) -> List[AblationVariant]:
        return [self._variant(f"{conv.upper()}+{'SAGPool' if pool == 'sag' else 'TopK'}",
                              conv_kind=conv, pool_kind=pool)
                for conv in ('gat', 'gcn') for pool in ('sag', 'topk')]


class KAblation(AblationEvaluator):
    grid_name = 'k'

    def __init__(self, *args, k_list: Optional[Sequence[int]] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.k_list = list(k_list or DEFAULT_K_LIST)

    def variants(self) -> List[AblationVariant]:
        return [self._variant(f"k={k}", k=k) for k in self.k_list]


class LayerAblation(AblationEvaluator):
    grid_name = 'layers'

    def __init__(self, *args, layers_list: Optional[Sequence[int]] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.layers_list = list(layers_list or DEFAULT_LAYERS_LIST)

    def variants(self) -> List[AblationVariant]:
        return [self._variant(f"layers={n}", num_blocks=n) for n in self.layers_list]


class HeadAblation(AblationEvaluator):
    grid_name = 'heads'

    def __init__(self, *args, heads_list: Optional[Sequence[int]] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.heads_list = list(heads_list or DEFAULT_HEADS_LIST)

    def variants(self) -> List[AblationVariant]:
        return [self._variant(f"heads={m}", heads=m) for m in self.heads_list]


class StainAblation(AblationEvaluator):
    """
    Multi-stain bags against each single stain on the same patient split.
    Single-stain cells keep only the patients that carry that stain.
    """
    grid_name = 'stain'

    def __init__(self, *args, stain_list: Optional[Sequence[str]] = None, **kwargs):
        super().__init__(*args, **kwargs)
        present = list(dict.fromkeys(s for bag in self.dataset for s in bag.stains))
        self.stain_list = list(stain_list or present)

    def variants(self) -> List[AblationVariant]:
        return [self._variant('multi-stain')] + [self._variant(f"stain={s}", stain=s) for s in self.stain_list]


def create_ablation(grid: str, dataset: Sequence[EmbeddingBag], model_cfg: ModelConfig,
                    train_cfg: TrainConfig, k: int = 5, n_jobs: int = 1, progress: bool = True,
                    grid_values: Optional[Sequence[Any]] = None) -> AblationEvaluator:
    """Create the ablation harness for a grid name"""
    ablation_map: Dict[str, Tuple[type, Optional[str]]] = {
        'gnn': (GnnAblation, None),
        'k': (KAblation, 'k_list'),
        'layers': (LayerAblation, 'layers_list'),
        'heads': (HeadAblation, 'heads_list'),
        'stain': (StainAblation, 'stain_list'),
    }

    entry = ablation_map.get(grid)
    if not entry:
        raise ValueError(f"Unknown ablation grid: {grid}")

    ablation_class, values_argument = entry
    extra = {values_argument: grid_values} if values_argument and grid_values else {}
    return ablation_class(dataset, model_cfg, train_cfg, k=k, n_jobs=n_jobs, progress=progress, **extra)
