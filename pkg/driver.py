import functools
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import click
import numpy as np
import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError
from tqdm import tqdm

from data_io.bags import EmbeddingBag, load_bags, read_manifest
from data_io.checkpoint import load_checkpoint, save_checkpoint
from data_io.synthetic import SyntheticConfig, generate_synthetic
from evaluators.ablation_evaluator import create_ablation
from evaluators.metrics import MetricsReport
from graphs.knn_graph import build_knn_graph, component_labels, graph_stats
from graphs.layout import spring_layout
from helpers.errors import ConfigError
from helpers.export_helper import (write_csv, write_edge_list, write_json, write_layout_svg,
                                   write_line_plot_svg, write_node_table)
from helpers.logging_helper import get_logger, set_level
from helpers.settings import RunConfig, load_run_config
from models.mustang import mustang_forward
from models.resources import resource_estimate
from training.trainer import evaluate_params, prepare_graphs, stratified_split, train

# Load environment variables from config.env
load_dotenv('config.env')

logger = get_logger('driver')

DEFAULT_ESTIMATE_K = '5,10,20,30,40,50,60,70,80,90,100'


def _progress() -> bool:
    return sys.stderr.isatty()


def _one_line(error: Exception) -> str:
    return ' '.join(str(error).split()) or type(error).__name__


def handle_errors(command: Callable) -> Callable:
    """Turn any failure into a one-line stderr diagnostic and exit status 1"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except click.ClickException:
            raise
        except ValidationError as e:
            click.echo(f"error: ConfigError: {_one_line(e)}", err=True)
        except Exception as e:
            logger.debug("Command failed", exc_info=True)
            click.echo(f"error: {type(e).__name__}: {_one_line(e)}", err=True)
        sys.exit(1)
    return wrapper


def parse_int_list(value: Optional[str]) -> Optional[List[int]]:
    if value is None:
        return None
    try:
        values = [int(part) for part in value.split(',') if part.strip()]
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated list of integers, got '{value}'") from e
    if not values:
        raise ConfigError("integer list is empty")
    return values


def parse_str_list(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    values = [part.strip() for part in value.split(',') if part.strip()]
    if not values:
        raise ConfigError("list is empty")
    return values


def run_options(command: Callable) -> Callable:
    """Flags shared by every command that resolves a RunConfig"""
    options = [
        click.option('--config', 'config_file', type=click.Path(path_type=Path), default=None,
                     help='JSON file with RunConfig fields; flags override it'),
        click.option('--manifest', type=click.Path(path_type=Path), default=None,
                     help='Dataset manifest (JSON)'),
        click.option('--out', type=click.Path(path_type=Path), default=None,
                     help='Output directory [default: runs/latest]'),
        click.option('--k', type=int, default=None, help='Neighbours per node in each k-NN graph [default: 5]'),
        click.option('--seed', type=int, default=None, help='Seed for initialization, split and shuffling [default: 0]'),
        click.option('--epochs', type=int, default=None, help='Training epochs [default: 50]'),
        click.option('--lr', type=float, default=None, help='Adam learning rate [default: 0.0001]'),
        click.option('--ratio', type=float, default=None, help='Pooling ratio in (0, 1] [default: 0.8]'),
        click.option('--heads', type=int, default=None, help='GAT attention heads [default: 2]'),
        click.option('--blocks', type=int, default=None, help='Conv + pool blocks [default: 4]'),
        click.option('--hidden', type=int, default=None, help='Hidden width of every block [default: 512]'),
        click.option('--conv', type=click.Choice(['gat', 'gcn']), default=None,
                     help='Message-passing layer [default: gat]'),
        click.option('--pool', type=click.Choice(['sag', 'topk']), default=None,
                     help='Pooling layer [default: sag]'),
        click.option('--stain', type=str, default=None, help='Keep only rows of this stain [default: all stains]'),
        click.option('--n-jobs', 'n_jobs', type=int, default=None,
                     help='Parallel workers for loading, evaluation and ablation cells [default: 1]'),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def resolve_config(options: Dict[str, Any], **extra: Any) -> RunConfig:
    overrides = {
        'manifest': options.get('manifest'),
        'out': options.get('out'),
        'k': options.get('k'),
        'stain': options.get('stain'),
        'n_jobs': options.get('n_jobs'),
        'model': {
            'heads': options.get('heads'),
            'num_blocks': options.get('blocks'),
            'hidden_dim': options.get('hidden'),
            'pooling_ratio': options.get('ratio'),
            'conv_kind': options.get('conv'),
            'pool_kind': options.get('pool'),
        },
        'train': {
            'epochs': options.get('epochs'),
            'lr': options.get('lr'),
            'seed': options.get('seed'),
        },
    }
    overrides.update(extra)
    return load_run_config(options.get('config_file'), overrides)


def load_dataset(cfg: RunConfig) -> Tuple[RunConfig, List[EmbeddingBag]]:
    """Load the manifest's bags and align the model's input width with the embeddings"""
    if cfg.manifest is None:
        raise ConfigError("no dataset given: pass --manifest or set MUSTANG_MANIFEST")
    feature_dim = read_manifest(cfg.manifest).feature_dim
    if feature_dim != cfg.model.input_dim:
        logger.info(f"Using input_dim={feature_dim} from {cfg.manifest}")
        cfg = cfg.model_copy(update={'model': cfg.model.model_copy(update={'input_dim': feature_dim})})
    bags = load_bags(cfg.manifest, stain=cfg.stain, n_jobs=cfg.n_jobs)
    return cfg, bags


def write_curves(out: Path, report: MetricsReport, prefix: str = '') -> None:
    """ROC and PR points as CSV plus SVG line charts"""
    if not report.roc_points:
        logger.warning("Curves undefined for a one-class test set; skipping ROC/PR exports")
        return
    roc = pd.DataFrame(report.roc_points, columns=['fpr', 'tpr'])
    pr = pd.DataFrame(report.pr_points, columns=['recall', 'precision'])
    write_csv(out / f"{prefix}roc.csv", roc)
    write_csv(out / f"{prefix}pr.csv", pr)
    write_line_plot_svg(out / f"{prefix}roc.svg", {'ROC': (roc['fpr'], roc['tpr'])},
                        title=f"ROC (AUC {report.auc:.3f})", xlabel='False positive rate',
                        ylabel='True positive rate', diagonal=True)
    write_line_plot_svg(out / f"{prefix}pr.svg", {'PR': (pr['recall'], pr['precision'])},
                        title=f"Precision-recall (AP {report.average_precision:.3f})",
                        xlabel='Recall', ylabel='Precision')


@click.group()
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              default=None, help='Override MUSTANG_LOG_LEVEL')
def cli(log_level: Optional[str]) -> None:
    """Graph-attention patient classifier over patch embedding bags"""
    if log_level:
        set_level(log_level)


@cli.command()
@click.option('--out', type=click.Path(path_type=Path), default=Path('data/synthetic'), show_default=True,
              help='Dataset directory (manifest.json + patients/)')
@click.option('--patients', type=int, default=40, show_default=True, help='Number of patients')
@click.option('--feature-dim', type=int, default=64, show_default=True, help='Embedding width')
@click.option('--patches', type=(int, int), default=(16, 32), show_default=True, help='Patches per slide range')
@click.option('--slides', type=(int, int), default=(1, 3), show_default=True, help='Slides per patient range')
@click.option('--separation', type=float, default=4.0, show_default=True,
              help='Shift of signal patches along a fixed unit direction, in feature units (not scaled by --noise)')
@click.option('--noise', type=float, default=1.0, show_default=True, help='Patch noise standard deviation')
@click.option('--signal-fraction', type=float, default=0.2, show_default=True,
              help='Fraction of a positive bag that carries the signal')
@click.option('--slide-spread', type=float, default=0.0, show_default=True,
              help='Standard deviation of per-slide centre offsets')
@click.option('--seed', type=int, default=0, show_default=True, help='Generator seed')
@handle_errors
def generate(out: Path, patients: int, feature_dim: int, patches, slides, separation: float, noise: float,
             signal_fraction: float, slide_spread: float, seed: int) -> None:
    """Write a synthetic multiple-instance dataset"""
    gen_cfg = SyntheticConfig(
        num_patients=patients, feature_dim=feature_dim, patches_per_slide=patches,
        slides_per_patient=slides, class_separation=separation, noise=noise,
        signal_fraction=signal_fraction, slide_spread=slide_spread, seed=seed,
    )
    manifest = generate_synthetic(out, gen_cfg)
    write_json(out / 'generator_config.json', gen_cfg.model_dump())
    click.echo(f"Wrote {patients} patients to {manifest}")


@cli.command('build-graph')
@run_options
@click.option('--plot', is_flag=True, help='Also write a spring-layout SVG per patient, coloured by slide')
@handle_errors
def build_graph(plot: bool, **options) -> None:
    """Build every patient's k-NN graph and report its connectivity"""
    cfg = resolve_config(options)
    cfg, bags = load_dataset(cfg)
    write_json(cfg.out / 'run_config.json', cfg.dump())

    rows = []
    disconnected = []
    for bag in tqdm(bags, desc='graphs', disable=not _progress()):
        g = build_knn_graph(bag.features, cfg.k, bag.slide_ids)
        stats = graph_stats(g)
        components = component_labels(g)
        positions = spring_layout(g, seed=cfg.train.seed) if plot else None

        write_edge_list(cfg.out / 'graphs' / f"{bag.patient_id}.edges", g.edges)
        write_node_table(cfg.out / 'graphs' / f"{bag.patient_id}.nodes.csv", g.slide_tag, components, positions)
        if plot:
            write_layout_svg(cfg.out / 'graphs' / f"{bag.patient_id}.svg", positions, g.edges, g.slide_tag,
                             title=f"{bag.patient_id} (k={cfg.k})")

        rows.append({'patient': bag.patient_id, 'N': stats.num_nodes, 'E': stats.num_edges,
                     'components': stats.components, 'mixing': stats.mixing_fraction})
        if not stats.weakly_connected:
            disconnected.append(f"{bag.patient_id} ({stats.components} components)")

    write_csv(cfg.out / 'graph_summary.csv', pd.DataFrame(rows, columns=['patient', 'N', 'E', 'components', 'mixing']))
    click.echo(f"{len(bags) - len(disconnected)}/{len(bags)} graphs weakly connected at k={cfg.k}")
    for entry in disconnected:
        click.echo(f"not weakly connected: {entry}")


@cli.command('train')
@run_options
@handle_errors
def train_command(**options) -> None:
    """Train on a stratified split and keep the best test-F1 epoch"""
    cfg = resolve_config(options)
    cfg, bags = load_dataset(cfg)
    out = cfg.out
    write_json(out / 'run_config.json', cfg.dump())

    result = train(bags, cfg.model, cfg.train, k=cfg.k, n_jobs=cfg.n_jobs, progress=_progress())

    meta = {
        'best_epoch': result.best_epoch,
        'best_f1': result.best_metrics.f1,
        'k': cfg.k,
        'stain': cfg.stain,
        'seed': cfg.train.seed,
        'split_hash': result.split_hash,
        'train_ids': result.train_ids,
        'test_ids': result.test_ids,
    }
    save_checkpoint(result.best_params, cfg.model, out / 'best.ckpt', meta=meta)
    save_checkpoint(result.final_params, cfg.model, out / 'final.ckpt',
                    meta={**meta, 'epoch': cfg.train.epochs})

    history = pd.DataFrame(result.history_rows(), columns=['epoch', 'loss', 'f1', 'auc', 'sens', 'spec'])
    write_csv(out / 'history.csv', history)
    write_line_plot_svg(out / 'history.svg',
                        {'loss': (history['epoch'], history['loss']), 'test F1': (history['epoch'], history['f1'])},
                        title='Training history', xlabel='Epoch', ylabel='Value')
    write_curves(out, result.best_metrics)

    write_json(out / 'metrics.json', {
        'selection': 'best test F1 across epochs (earlier epoch on ties)',
        'best_epoch': result.best_epoch,
        'best': result.best_metrics.metrics_scores(),
        'final': result.final_metrics.metrics_scores(),
        'split_hash': result.split_hash,
        'runtime_seconds': result.runtime_seconds,
    })
    click.echo(f"best epoch {result.best_epoch}: f1={result.best_metrics.f1:.4f} auc={result.best_metrics.auc:.4f}; "
               f"final epoch: f1={result.final_metrics.f1:.4f}")


def _test_bags(bags: Sequence[EmbeddingBag], meta: Dict[str, Any], cfg: RunConfig) -> List[EmbeddingBag]:
    test_ids = meta.get('test_ids')
    if test_ids is None:
        _, test = stratified_split(bags, cfg.train.split_ratio, meta.get('seed', cfg.train.seed))
        return test
    by_id = {bag.patient_id: bag for bag in bags}
    missing = [pid for pid in test_ids if pid not in by_id]
    if missing:
        raise ConfigError(f"checkpoint test patients missing from the dataset: {', '.join(missing)}")
    return [by_id[pid] for pid in test_ids]


@cli.command('evaluate')
@run_options
@click.option('--checkpoint', type=click.Path(path_type=Path), default=None,
              help='Checkpoint to evaluate [default: <out>/best.ckpt]')
@handle_errors
def evaluate_command(checkpoint: Optional[Path], **options) -> None:
    """Score the checkpoint's test split and export per-block graph statistics"""
    cfg = resolve_config(options, checkpoint=checkpoint)
    path = cfg.checkpoint or cfg.out / 'best.ckpt'
    params, model_cfg, meta = load_checkpoint(path)

    # Replay the graphs the checkpoint was trained on unless flags say otherwise
    update = {'model': model_cfg}
    if options.get('k') is None and 'k' in meta:
        update['k'] = meta['k']
    if options.get('stain') is None and meta.get('stain'):
        update['stain'] = meta['stain']
    cfg = cfg.model_copy(update=update)
    if cfg.manifest is None:
        raise ConfigError("no dataset given: pass --manifest or set MUSTANG_MANIFEST")
    bags = load_bags(cfg.manifest, stain=cfg.stain, n_jobs=cfg.n_jobs)
    write_json(cfg.out / 'run_config.json', cfg.dump())

    test_set = prepare_graphs(_test_bags(bags, meta, cfg), cfg.k)
    report, scores = evaluate_params(params, model_cfg, test_set, cfg.n_jobs)

    block_rows = []
    for patient in test_set:
        _, block_graphs = mustang_forward(patient.graph, params, model_cfg)
        for index, g in enumerate(block_graphs):
            stats = graph_stats(g)
            block_rows.append({'patient': patient.patient_id, 'block': index, 'N': stats.num_nodes,
                               'E': stats.num_edges, 'components': stats.components})

    write_csv(cfg.out / 'block_stats.csv', pd.DataFrame(block_rows, columns=['patient', 'block', 'N', 'E', 'components']))
    write_csv(cfg.out / 'scores.csv', pd.DataFrame({
        'patient': [p.patient_id for p in test_set],
        'label': [p.label for p in test_set],
        'score': scores,
    }))
    write_curves(cfg.out, report, prefix='eval_')
    write_json(cfg.out / 'eval_metrics.json', {'checkpoint': str(path), **report.metrics_scores()})
    click.echo(f"f1={report.f1:.4f} auc={report.auc:.4f} sens={report.sensitivity:.4f} "
               f"spec={report.specificity:.4f} on {len(test_set)} test patients")


@cli.command('ablate')
@run_options
@click.option('--grid', type=click.Choice(['gnn', 'k', 'layers', 'heads', 'stain']), default='gnn',
              show_default=True, help='Ablated variable')
@click.option('--k-list', default=None, help='Comma-separated k values [default: 1,2,3,4,5,10,20,50,100]')
@click.option('--layers-list', default=None, help='Comma-separated block counts [default: 1,2,3,4,5]')
@click.option('--heads-list', default=None, help='Comma-separated head counts [default: 1,2,4,8]')
@click.option('--stain-list', default=None, help='Comma-separated stains [default: every stain in the dataset]')
@handle_errors
def ablate(grid: str, k_list: Optional[str], layers_list: Optional[str], heads_list: Optional[str],
           stain_list: Optional[str], **options) -> None:
    """Train every cell of an ablation grid on one shared split"""
    cfg = resolve_config(options)
    if grid == 'stain' and cfg.stain:
        raise ConfigError("--stain restricts every cell to one stain; drop it for the stain grid")
    cfg, bags = load_dataset(cfg)
    write_json(cfg.out / 'run_config.json', cfg.dump())

    if grid == 'stain':
        grid_values = parse_str_list(stain_list)
    else:
        grid_values = parse_int_list({'k': k_list, 'layers': layers_list, 'heads': heads_list}.get(grid))
    evaluator = create_ablation(grid, bags, cfg.model, cfg.train, k=cfg.k, n_jobs=cfg.n_jobs,
                                progress=_progress(), grid_values=grid_values)
    table = evaluator.run_evaluation()
    path = write_csv(cfg.out / f"ablation_{grid}.csv", table)

    failed = int((table['status'] != 'ok').sum())
    click.echo(f"Wrote {len(table)} rows to {path} (split {evaluator.split_hash}, {failed} failed)")


def linear_fit_r2(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Coefficient of determination of a least-squares line through (xs, ys)"""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size < 2:
        return float('nan')
    slope, intercept = np.polyfit(xs, ys, 1)
    residual = np.sum((ys - (slope * xs + intercept)) ** 2)
    spread = np.sum((ys - ys.mean()) ** 2)
    return 1.0 if spread == 0 else float(1.0 - residual / spread)


@cli.command('estimate')
@run_options
@click.option('--nodes', type=int, default=2000, show_default=True, help='Nodes in the estimated bag')
@click.option('--k-list', default=DEFAULT_ESTIMATE_K, show_default=True, help='Comma-separated k sweep')
@click.option('--input-dim', type=int, default=None, help='Embedding width [default: 1024]')
@handle_errors
def estimate(nodes: int, k_list: str, input_dim: Optional[int], **options) -> None:
    """Analytic FLOP and memory estimate of one forward pass over a k sweep"""
    cfg = resolve_config(options)
    if input_dim is not None:
        cfg = cfg.model_copy(update={'model': cfg.model.model_copy(update={'input_dim': input_dim})})
    write_json(cfg.out / 'run_config.json', cfg.dump())

    rows = []
    for k in parse_int_list(k_list):
        rows.append({'k': k, **resource_estimate(nodes, k, cfg.model).as_dict()})
    table = pd.DataFrame(rows, columns=['k', 'flops', 'edge_flops', 'dense_flops', 'peak_bytes'])
    write_csv(cfg.out / 'estimate.csv', table)
    write_line_plot_svg(cfg.out / 'estimate.svg',
                        {'edge FLOPs': (table['k'], table['edge_flops']), 'total FLOPs': (table['k'], table['flops'])},
                        title=f"Forward cost at N={nodes}", xlabel='k', ylabel='FLOPs')

    r2 = linear_fit_r2(table['k'], table['edge_flops'])
    for row in rows:
        click.echo(f"k={row['k']}: flops={row['flops']} peak_bytes={row['peak_bytes']}")
    click.echo(f"edge FLOPs linear fit R^2={r2:.6f}")


if __name__ == "__main__":
    cli()
