import dataclasses

import numpy as np
import pytest

from lip2tongue.config import load_config
from lip2tongue.errors import ConfigError, DimensionError, TrainingDivergedError
from lip2tongue.metrics import evaluate_pairs
from lip2tongue.model import init_params
from lip2tongue.synth import SynthSpec, gen_dataset
from lip2tongue.training import ablate, evaluate, format_ablation, load_params, open_dataset, split_dataset, train

SMALL = [
    ("max_epochs", 2), ("patience", 2), ("batch_size", 4), ("lr", 1e-3),
    ("model.H", 24), ("model.W", 24), ("model.N", 3), ("model.T", 2),
    ("model.tower", [[4, 3, 2], [4, 3, 2]]), ("model.embed_dim", 8), ("model.lstm_hidden", 8),
    ("model.decoder_hidden", 16), ("model.out_h", 32), ("model.out_w", 32), ("flow.iterations", 20),
]


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    gen_dataset(SynthSpec(n_sequences=10, frames_per_sequence=10), root)
    cfg = load_config(None, SMALL + [("dataset", str(root))])
    return cfg, open_dataset(cfg)


def test_split_sizes():
    tr, va, te = split_dataset(100, (0.6, 0.2, 0.2), 0)
    assert (len(tr), len(va), len(te)) == (60, 20, 20)
    assert sorted(tr + va + te) == list(range(100))
    tr, va, te = split_dataset(10, (1.0, 0.0, 0.0), 0)
    assert sorted(tr) == list(range(10)) and va == [] and te == []


def test_split_seeding():
    assert split_dataset(1000, seed=3) == split_dataset(1000, seed=3)
    assert split_dataset(1000, seed=3)[0] != split_dataset(1000, seed=4)[0]


def test_split_errors():
    with pytest.raises(ConfigError):
        split_dataset([], (0.6, 0.2, 0.2))
    with pytest.raises(ConfigError):
        split_dataset(10, (0.5, 0.2, 0.2))


def test_single_epoch(small):
    cfg, ds = small
    _, rep = train(dataclasses.replace(cfg, max_epochs=1, patience=1, eval_test=False), None, ds)
    assert rep.stopped_epoch == 1 and len(rep.val_loss) == 1 and len(rep.train_loss) == 1


def test_lr_zero_leaves_weights_and_val_loss(small):
    cfg, ds = small
    cfg0 = dataclasses.replace(cfg, lr=0.0, max_epochs=3, patience=5, eval_test=False)
    params, rep = train(cfg0, None, ds)
    init = init_params(cfg0.model_config(), cfg0.seed)
    assert all(np.array_equal(params[k].data, init[k].data) for k in init.tensors)
    # with frozen running statistics the whole network is frozen
    frozen = dataclasses.replace(cfg0, model=dataclasses.replace(cfg0.model, bn_momentum=0.0))
    _, rep = train(frozen, None, ds)
    assert np.ptp(rep.val_loss) < 1e-6


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_diagnostics(small):
    cfg, ds = small
    with pytest.raises(TrainingDivergedError, match=r"epoch 1.*norm"):
        train(dataclasses.replace(cfg, lr=1e30, max_epochs=3, eval_test=False), None, ds)


def test_train_writes_artifacts_and_evaluates(small, tmp_path):
    cfg, ds = small
    params, rep = train(cfg, tmp_path / "run", ds)
    for name in ("model.ckpt", "config.toml", "report.txt", "report.kv"):
        assert (tmp_path / "run" / name).exists()
    assert rep.baseline_val_mse > 0 and rep.test.n_frames > 0
    _, _, test_rec = split_dataset(ds.n_recordings, cfg.split, cfg.seed)
    # 10-frame recordings, N=3, T=2, stride 2 -> 4 windows of 2 frames each
    expect = len(test_rec) * 4 * 2
    m = evaluate(tmp_path / "run" / "model.ckpt", "test", cfg, ds, dump_dir=tmp_path / "dump")
    assert m.n_frames == expect
    assert m.ssim == pytest.approx(rep.test.ssim)
    pred, target = np.load(tmp_path / "dump" / "pred.npy"), np.load(tmp_path / "dump" / "target.npy")
    again = evaluate_pairs(pred, target)
    assert again.ssim == m.ssim and again.cw_ssim == m.cw_ssim and again.msd == m.msd
    ident = evaluate_pairs(target, target)
    assert ident.ssim[0] == pytest.approx(1.0) and ident.msd[0] == 0.0
    val = evaluate(params, "val", cfg, ds)
    assert val.mse == pytest.approx(rep.best_val_loss, rel=1e-5)


def test_incompatible_checkpoint(small, tmp_path):
    cfg, ds = small
    train(dataclasses.replace(cfg, max_epochs=1), tmp_path / "r", ds)
    other = load_config(None, SMALL + [("dataset", cfg.dataset), ("model.embed_dim", 6)])
    with pytest.raises(DimensionError, match="fuse"):
        load_params(tmp_path / "r" / "model.ckpt", other)


def test_deterministic_runs_identical(small, tmp_path):
    cfg, ds = small
    train(cfg, tmp_path / "a", ds)
    train(cfg, tmp_path / "b", ds)
    for name in ("model.ckpt", "report.kv", "report.txt", "config.toml"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_ablation_table(small, tmp_path):
    cfg, ds = small
    rows = ablate(dataclasses.replace(cfg, max_epochs=1), tmp_path / "abl", ds)
    assert [r.name for r in rows] == ["Raw images only", "w/o OF", "w/o AT", "Full"]
    table = format_ablation(rows).splitlines()
    assert len(table) == 6 and table[0].split()[-2:] == ["SSIM", "CW-SSIM"]
    assert all(len(line.split()) >= 3 for line in table[2:])
    assert rows[2].attention_mean == 1.0
    assert 0 < rows[3].attention_mean < 1
    assert (tmp_path / "abl" / "report.kv").exists()
