"""
Accuracy and loss curves of a training history, rendered with matplotlib
(Agg canvas) and saved as SVG.

Accuracy sits on the left axis (0..1), loss on a twin right axis. A history
with a single epoch is drawn as markers only. The hash salt and the
metadata date are pinned, so the same history always renders to the same
bytes.
"""
from __future__ import annotations
import io
import logging
import pathlib
from typing import Sequence, Tuple

import matplotlib
import numpy as np
import pandas as pd
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .exceptions import MalformedCsvError
from .writer import read_frame, write_bytes

logger = logging.getLogger(__name__)

ACCURACY_COLUMNS = ("accuracy", "test_acc", "train_acc")
LOSS_COLUMNS = ("loss", "test_loss", "train_loss")
ACCURACY_COLOR = "#1f77b4"
LOSS_COLOR = "#d62728"
FIGSIZE = (6.4, 4.0)

_SVG_RC = {
    "svg.hashsalt": "mri-slice-bench",
    "svg.fonttype": "none",
    "path.simplify": False,
}


def _pick(df: pd.DataFrame, candidates: Sequence[str], what: str) -> Tuple[str, np.ndarray]:
    for col in candidates:
        if col not in df.columns:
            continue
        values = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=np.float64)
        if np.isfinite(values).all():
            return col, values
    raise MalformedCsvError(f"history needs a finite {what} column (one of {', '.join(candidates)})")


def _style(n_points: int) -> dict:
    # one epoch: a marker, no segment
    if n_points == 1:
        return {"linestyle": "none", "marker": "o"}
    return {"linestyle": "-", "linewidth": 1.5}


def history_figure(df: pd.DataFrame, title: str = "Accuracy and loss") -> Figure:
    """Figure with the accuracy series (gid "accuracy") and the loss series (gid "loss")."""
    if "epoch" not in df.columns:
        raise MalformedCsvError("history needs an 'epoch' column")
    if df.empty:
        raise MalformedCsvError("history has no rows")
    epochs = pd.to_numeric(df["epoch"], errors="coerce").to_numpy(dtype=np.float64)
    if not np.isfinite(epochs).all():
        raise MalformedCsvError("epoch column must be numeric")
    acc_col, acc = _pick(df, ACCURACY_COLUMNS, "accuracy")
    loss_col, loss = _pick(df, LOSS_COLUMNS, "loss")

    fig = Figure(figsize=FIGSIZE)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    ax_loss = ax.twinx()
    style = _style(len(epochs))
    (acc_line,) = ax.plot(epochs, acc, color=ACCURACY_COLOR, label=acc_col, gid="accuracy", **style)
    (loss_line,) = ax_loss.plot(epochs, loss, color=LOSS_COLOR, label=loss_col, gid="loss", **style)

    ax.set_ylim(0.0, 1.05)
    ax_loss.set_ylim(0.0, max(float(loss.max()), 1e-12) * 1.05)
    ax.set_xlabel("epoch")
    ax.set_ylabel(acc_col)
    ax_loss.set_ylabel(loss_col)
    ax.set_title(title)
    ax.legend(handles=[acc_line, loss_line], loc="center right")
    fig.tight_layout()
    return fig


def render_history_svg(df: pd.DataFrame, title: str = "Accuracy and loss") -> str:
    with matplotlib.rc_context(_SVG_RC):
        fig = history_figure(df, title)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def plot_history(csv_path: pathlib.Path, out_path: pathlib.Path) -> pathlib.Path:
    df = read_frame(csv_path, required=("epoch",))
    svg = render_history_svg(df, title=f"Accuracy and loss: {pathlib.Path(csv_path).stem}")
    path = write_bytes(pathlib.Path(out_path), svg.encode("utf-8"))
    logger.info("Plotted %d epochs from %s to %s", len(df), csv_path, path)
    return path
