import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

# Stable element ids so identical inputs give identical SVG bytes
matplotlib.rcParams['svg.hashsalt'] = 'mustang'
matplotlib.rcParams['svg.fonttype'] = 'none'

FLOAT_FORMAT = '%.10g'


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    """Write to a temporary sibling and rename it over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode('utf-8'))


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=str) + '\n')


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator='\n'))


def write_edge_list(path: Path, edges: np.ndarray) -> Path:
    """One `src dst` line per directed edge"""
    lines = [f"{int(src)} {int(dst)}" for src, dst in edges]
    return atomic_write_text(path, '\n'.join(lines) + ('\n' if lines else ''))


def write_node_table(path: Path, slide_tag: Sequence[str], component: Sequence[int],
                     positions: Optional[np.ndarray] = None) -> Path:
    """Per-node slide of origin and weak component; layout coordinates when given"""
    frame = pd.DataFrame({
        'node_id': np.arange(len(slide_tag)),
        'slide_tag': list(slide_tag),
        'component': list(component),
    })
    if positions is not None:
        frame['x'] = positions[:, 0]
        frame['y'] = positions[:, 1]
    return write_csv(path, frame)


def _save_svg(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    fig.savefig(tmp, format='svg', metadata={'Date': None})
    plt.close(fig)
    os.replace(tmp, path)
    return path


def write_line_plot_svg(path: Path,
                        series: Dict[str, Tuple[Iterable[float], Iterable[float]]],
                        title: str,
                        xlabel: str,
                        ylabel: str,
                        diagonal: bool = False) -> Path:
    """Line chart of one or more (x, y) series"""
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, (xs, ys) in series.items():
        ax.plot(list(xs), list(ys), label=name)
    if diagonal:
        ax.plot([0, 1], [0, 1], linestyle='--', color='grey', linewidth=0.8)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    return _save_svg(fig, path)


def write_layout_svg(path: Path, positions: np.ndarray, edges: np.ndarray,
                     slide_tag: Sequence[str], title: Optional[str] = None) -> Path:
    """Graph drawing with nodes coloured by slide of origin"""
    fig, ax = plt.subplots(figsize=(5, 5))
    for src, dst in edges:
        if src != dst:
            ax.plot(positions[[src, dst], 0], positions[[src, dst], 1], color='lightgrey', linewidth=0.5, zorder=1)
    slides = sorted(set(slide_tag))
    colours = plt.get_cmap('tab10')
    tags = np.asarray(slide_tag, dtype=object)
    for index, slide in enumerate(slides):
        mask = tags == slide
        ax.scatter(positions[mask, 0], positions[mask, 1], s=12, color=colours(index % 10), label=slide, zorder=2)
    if title:
        ax.set_title(title)
    ax.set_axis_off()
    if 1 < len(slides) <= 10:
        ax.legend(fontsize='small')
    fig.tight_layout()
    return _save_svg(fig, path)
