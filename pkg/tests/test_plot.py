import re

import pandas as pd
import pytest

from mri_slice_bench.exceptions import MalformedCsvError
from mri_slice_bench.plot import history_figure, plot_history, render_history_svg


def _history(n):
    return pd.DataFrame({
        "epoch": range(1, n + 1),
        "train_loss": [1.0 / (k + 1) for k in range(n)],
        "train_acc": [min(1.0, 0.5 + 0.02 * k) for k in range(n)],
        "test_loss": [1.2 / (k + 1) for k in range(n)],
        "test_acc": [min(1.0, 0.45 + 0.02 * k) for k in range(n)],
    })


def _series_path(svg, gid):
    m = re.search(r'<g id="%s">\s*<path d="([^"]*)"' % gid, svg)
    return m.group(1) if m else None


def test_two_series_with_one_point_per_epoch():
    fig = history_figure(_history(40))
    lines = {line.get_gid(): line for ax in fig.axes for line in ax.get_lines()}
    assert set(lines) == {"accuracy", "loss"}
    assert all(len(line.get_xdata()) == 40 for line in lines.values())
    assert lines["accuracy"].get_label() == "test_acc"
    assert lines["loss"].get_label() == "test_loss"


def test_svg_lines_keep_every_epoch():
    svg = render_history_svg(_history(40))
    for gid in ("accuracy", "loss"):
        d = _series_path(svg, gid)
        assert d is not None
        assert len(re.findall(r"[ML] ", d)) == 40
    assert ">epoch<" in svg and ">test_acc<" in svg and ">test_loss<" in svg


def test_single_row_draws_points_only():
    fig = history_figure(_history(1))
    for line in fig.axes[0].get_lines() + fig.axes[1].get_lines():
        assert line.get_linestyle() == "None"
        assert line.get_marker() == "o"
    svg = render_history_svg(_history(1))
    assert svg.rstrip().endswith("</svg>")
    assert "<use " in svg


def test_accuracy_and_loss_column_names_are_accepted():
    df = pd.DataFrame({"epoch": [1, 2, 3], "loss": [0.9, 0.5, 0.4], "accuracy": [0.5, 0.7, 0.8]})
    fig = history_figure(df)
    assert fig.axes[0].get_ylabel() == "accuracy"
    assert fig.axes[1].get_ylabel() == "loss"
    assert fig.axes[0].get_xlabel() == "epoch"


def test_missing_columns():
    with pytest.raises(MalformedCsvError):
        render_history_svg(pd.DataFrame({"epoch": [1], "loss": [0.3]}))
    with pytest.raises(MalformedCsvError):
        render_history_svg(pd.DataFrame({"loss": [0.3], "accuracy": [0.1]}))


def test_same_input_same_bytes(tmp_path):
    csv = tmp_path / "history.csv"
    _history(40).to_csv(csv, index=False)
    a = plot_history(csv, tmp_path / "a.svg").read_bytes()
    b = plot_history(csv, tmp_path / "b.svg").read_bytes()
    assert a == b
    assert b"<dc:date>" not in a


def test_missing_file(tmp_path):
    with pytest.raises(MalformedCsvError):
        plot_history(tmp_path / "nope.csv", tmp_path / "x.svg")
