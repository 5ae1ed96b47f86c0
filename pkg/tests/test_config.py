import pytest

from mri_slice_bench.config import load_config
from mri_slice_bench.exceptions import ValidationError
from mri_slice_bench.preprocess import ClipKind


def _write(tmp_path, text):
    path = tmp_path / "bench.toml"
    path.write_text(text)
    return path


def test_defaults_without_file():
    pipeline, train = load_config(None, seed=7)
    assert pipeline.do_gray and pipeline.do_equalize
    assert pipeline.clip.kind is ClipKind.FOREGROUND and pipeline.clip.tau == 0.10
    assert (train.epochs, train.learning_rate, train.batch_size, train.seed) == (40, 0.01, 32, 7)
    assert train.rf.n_trees == 100 and train.gbt.reg_lambda == 1.0
    assert train.feature_target == (16, 16)


def test_file_values(tmp_path):
    path = _write(tmp_path, """
do_equalize = false

[clip]
kind = "central"
keep_lo = 0.25

[train]
epochs = 5

[train.gbt]
lambda = 2.5
n_rounds = 10

[features]
width = 8
height = 4
""")
    pipeline, train = load_config(path)
    assert not pipeline.do_equalize
    assert pipeline.clip.kind is ClipKind.CENTRAL and pipeline.clip.keep_lo == 0.25
    assert train.epochs == 5
    assert train.gbt.reg_lambda == 2.5 and train.gbt.n_rounds == 10
    assert train.feature_target == (8, 4)


def test_clip_off(tmp_path):
    pipeline, _ = load_config(_write(tmp_path, '[clip]\nkind = "off"\n'))
    assert pipeline.clip is None


@pytest.mark.parametrize("text", [
    "colour = 1\n",
    "[clip]\ntau = 2.0\n",
    "[train]\nepochs = 0\n",
    "[train.rf]\nfeature_subsample = \"log2\"\n",
    "[train.rf]\ndepth = 3\n",
    "not toml [",
])
def test_invalid_files(tmp_path, text):
    with pytest.raises(ValidationError):
        load_config(_write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError):
        load_config(tmp_path / "absent.toml")
