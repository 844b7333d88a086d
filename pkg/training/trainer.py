import hashlib
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from autodiff import backward
from data_io.bags import EmbeddingBag
from evaluators.metrics import MetricsReport, compute_metrics
from graphs.knn_graph import PatchGraph, build_knn_graph
from helpers.errors import StratificationError, UndefinedMetricError
from helpers.logging_helper import get_logger
from helpers.settings import ModelConfig, TrainConfig
from models.mustang import ModelParams, init_params, mustang_forward
from training.loss import cross_entropy, positive_probability
from training.optimizer import AdamState, adam_step

logger = get_logger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    f1: float
    auc: float
    sens: float
    spec: float


@dataclass
class TrainingResult:
    """Best-F1 snapshot (selected on the test split) plus the final-epoch state"""
    best_params: ModelParams
    final_params: ModelParams
    history: List[EpochRecord]
    best_epoch: int
    best_metrics: MetricsReport
    final_metrics: MetricsReport
    train_ids: List[str]
    test_ids: List[str]
    runtime_seconds: float = 0.0
    split_hash: str = field(default='')

    def history_rows(self) -> List[Dict[str, float]]:
        return [asdict(record) for record in self.history]


@dataclass
class PreparedBag:
    bag: EmbeddingBag
    graph: PatchGraph

    @property
    def label(self) -> int:
        return self.bag.label

    @property
    def patient_id(self) -> str:
        return self.bag.patient_id


def prepare_graphs(bags: Sequence[EmbeddingBag], k: int) -> List[PreparedBag]:
    """Build every bag's k-NN graph once, ahead of the epoch loop"""
    return [PreparedBag(bag, build_knn_graph(bag.features, k, bag.slide_ids)) for bag in bags]


def _train_count(size: int, ratio: float) -> int:
    return min(size - 1, max(1, math.ceil(round(ratio * size, 9))))


def stratified_split(patients: Sequence, ratio: float, seed: int) -> Tuple[List, List]:
    """
    Per-class shuffled split, rounding each class's train share up

    Args:
        patients (Sequence): Items with a `label` attribute in {0, 1}
        ratio (float): Train fraction in (0, 1)
        seed (int): Shuffle seed

    Returns:
        Tuple of (train, test), each in dataset order

    Raises:
        StratificationError: If a class has fewer than 2 patients
    """
    rng = np.random.default_rng(seed)
    train_index, test_index = [], []
    for label in (0, 1):
        members = [i for i, patient in enumerate(patients) if patient.label == label]
        if len(members) < 2:
            raise StratificationError(f"class {label} has {len(members)} patient(s); at least 2 are needed to split")
        shuffled = rng.permutation(members)
        cut = _train_count(len(members), ratio)
        train_index.extend(int(i) for i in shuffled[:cut])
        test_index.extend(int(i) for i in shuffled[cut:])
    return ([patients[i] for i in sorted(train_index)],
            [patients[i] for i in sorted(test_index)])


def split_hash(train: Sequence, test: Sequence) -> str:
    """Short digest identifying a train/test patient split"""
    text = 'train:' + ','.join(sorted(p.patient_id for p in train))
    text += '|test:' + ','.join(sorted(p.patient_id for p in test))
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]


def predict_scores(params: ModelParams, cfg: ModelConfig, patients: Sequence[PreparedBag],
                   n_jobs: int = 1) -> List[float]:
    """Positive-class probability per patient, evaluated with read-only parameters"""
    def _score(patient: PreparedBag) -> float:
        logits, _ = mustang_forward(patient.graph, params, cfg)
        return positive_probability(logits)

    if n_jobs == 1:
        return [_score(patient) for patient in patients]
    return Parallel(n_jobs=n_jobs, prefer='threads')(delayed(_score)(patient) for patient in patients)


def evaluate_params(params: ModelParams, cfg: ModelConfig, patients: Sequence[PreparedBag],
                    n_jobs: int = 1) -> Tuple[MetricsReport, List[float]]:
    """Score patients and compute metrics, tolerating one-class sets (AUC left NaN)"""
    scores = predict_scores(params, cfg, patients, n_jobs)
    labels = [patient.label for patient in patients]
    try:
        report = compute_metrics(scores, labels)
    except UndefinedMetricError as e:
        logger.warning(f"{e}; reporting confusion metrics only")
        report = e.report
    return report, scores


def snapshot(params: ModelParams) -> Dict[str, np.ndarray]:
    # Parameter arrays are replaced, never mutated, so references are enough
    return {name: param.data for name, param in params.named_parameters().items()}


def restore(cfg: ModelConfig, state: Dict[str, np.ndarray]) -> ModelParams:
    params = init_params(cfg, seed=0)
    for name, param in params.named_parameters().items():
        param.data = state[name]
    return params


def train(dataset: Sequence[EmbeddingBag],
          model_cfg: ModelConfig,
          train_cfg: TrainConfig,
          k: int = 5,
          n_jobs: int = 1,
          progress: bool = True,
          split: Optional[Tuple[Sequence[EmbeddingBag], Sequence[EmbeddingBag]]] = None) -> TrainingResult:
    """
    Train with one Adam step per patient bag and keep the best test-F1 snapshot

    Args:
        dataset (Sequence[EmbeddingBag]): All patients
        model_cfg (ModelConfig): Architecture
        train_cfg (TrainConfig): Optimizer and schedule
        k (int): Neighbours per node in each bag's k-NN graph
        n_jobs (int): Threads for test-set evaluation
        progress (bool): Show a progress bar over epochs
        split (Tuple): Precomputed (train, test) split; computed from the seed if absent

    Returns:
        TrainingResult with best-F1 parameters (earlier epoch wins ties),
        final parameters and the per-epoch loss/metric history
    """
    started = time.perf_counter()
    train_bags, test_bags = split if split is not None else stratified_split(
        dataset, train_cfg.split_ratio, train_cfg.seed)
    if len({bag.label for bag in train_bags}) < 2:
        raise StratificationError("training split must contain both classes")

    train_set = prepare_graphs(train_bags, k)
    test_set = prepare_graphs(test_bags, k)
    logger.info(f"Training on {len(train_set)} patients, testing on {len(test_set)} (k={k})")

    params = init_params(model_cfg, train_cfg.seed)
    state = AdamState()
    rng = np.random.default_rng(train_cfg.seed)

    history: List[EpochRecord] = []
    best_f1 = -1.0
    best_state, best_epoch, best_report = None, 0, None
    report = None

    for epoch in tqdm(range(1, train_cfg.epochs + 1), desc='epochs', disable=not progress):
        order = rng.permutation(len(train_set)) if train_cfg.shuffle_each_epoch else np.arange(len(train_set))
        losses = []
        for index in order:
            patient = train_set[int(index)]
            logits, _ = mustang_forward(patient.graph, params, model_cfg)
            loss = cross_entropy(logits, patient.label)
            parameters = params.parameters()
            backward(loss, parameters)
            adam_step(parameters, {p.name: p.grad for p in parameters}, state, train_cfg)
            losses.append(loss.item())

        report, _ = evaluate_params(params, model_cfg, test_set, n_jobs)
        record = EpochRecord(epoch=epoch, loss=float(np.mean(losses)), f1=report.f1,
                             auc=report.auc, sens=report.sensitivity, spec=report.specificity)
        history.append(record)
        logger.info(f"Epoch {epoch}: loss={record.loss:.4f} f1={record.f1:.3f} auc={record.auc:.3f}")

        if report.f1 > best_f1:
            best_f1, best_state, best_epoch, best_report = report.f1, snapshot(params), epoch, report

    return TrainingResult(
        best_params=restore(model_cfg, best_state),
        final_params=params,
        history=history,
        best_epoch=best_epoch,
        best_metrics=best_report,
        final_metrics=report,
        train_ids=[bag.patient_id for bag in train_bags],
        test_ids=[bag.patient_id for bag in test_bags],
        runtime_seconds=time.perf_counter() - started,
        split_hash=split_hash(train_bags, test_bags),
    )
