"""Dataset splitting, MSE training with early stopping, evaluation and ablations."""

from __future__ import annotations

import dataclasses
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import functional as fn
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, save_config
from .data import PairedDataset, gather, load_dataset, windows_for
from .errors import ConfigError, NonFiniteError, TrainingDivergedError
from .metrics import MetricsReport, evaluate_pairs
from .model import ModelParams, forward_sequence, init_params
from .optim import AdamState, adam_step
from .tensor import no_grad

log = logging.getLogger(__name__)


def split_dataset(items, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Seeded shuffle, then cut into train / val / test.

    ``items`` is a count or a sequence. Val and test sizes are floored; the
    remainder goes to train. Returns three lists of indices.
    """
    n = items if isinstance(items, int) else len(items)
    if n < 1:
        raise ConfigError("cannot split an empty dataset")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError(f"split fractions must be 3 non-negative values summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(np.floor(n * fractions[1]))
    n_test = int(np.floor(n * fractions[2]))
    n_train = n - n_val - n_test
    return (perm[:n_train].tolist(), perm[n_train : n_train + n_val].tolist(), perm[n_train + n_val :].tolist())


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    baseline_val_mse: float = float("nan")
    test: MetricsReport | None = None
    wall_clock: float = 0.0
    attention_mean: float = float("nan")

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1] if self.val_loss else float("nan")

    def as_kv(self) -> dict:
        kv = {
            "epochs": self.stopped_epoch,
            "best_epoch": self.best_epoch,
            "best_val_mse": self.best_val_loss,
            "baseline_val_mse": self.baseline_val_mse,
            "val_mse_ratio": self.best_val_loss / self.baseline_val_mse if self.baseline_val_mse else float("nan"),
            "attention_mean": self.attention_mean,
            "wall_clock_s": self.wall_clock,
        }
        for i, (a, b) in enumerate(zip(self.train_loss, self.val_loss), 1):
            kv[f"epoch{i:03d}.train_mse"] = a
            kv[f"epoch{i:03d}.val_mse"] = b
        if self.test is not None:
            kv.update(self.test.as_kv("test."))
        return kv


@contextmanager
def thread_limit(n: int):
    if n and n > 0:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=n):
            yield
    else:
        yield


def open_dataset(config: RunConfig) -> PairedDataset:
    if not config.dataset:
        raise ConfigError("config has no dataset path")
    m = config.model
    return load_dataset(config.dataset, m.H, m.W, m.out_h, m.out_w,
                        config.flow.as_dict() if config.needs_flow else None)


def _batches(windows, size):
    for i in range(0, len(windows), size):
        yield windows[i : i + size]


def predict_windows(params: ModelParams, ds: PairedDataset, windows, config: RunConfig, batch_size: int = 64):
    """Inference over windows; returns ``(pred [n,T,oh,ow], target [n,T,oh,ow], attention [n,T])``."""
    mcfg = config.model_config()
    preds, targets, atts = [], [], []
    with no_grad():
        for batch in _batches(windows, batch_size):
            gray, flow, target = gather(ds, batch, mcfg.N, mcfg.T, with_flow=config.needs_flow)
            out = forward_sequence(gray, flow, params, mcfg, "infer")
            preds.append(out.images.data)
            targets.append(target)
            atts.append(out.attention)
    if not preds:
        shape = (0, mcfg.T, mcfg.out_h, mcfg.out_w)
        return np.zeros(shape, np.float32), np.zeros(shape, np.float32), np.zeros((0, mcfg.T), np.float32)
    return np.concatenate(preds), np.concatenate(targets), np.concatenate(atts)


def _mse(params, ds, windows, config) -> float:
    pred, target, _ = predict_windows(params, ds, windows, config)
    return float(np.mean((pred.astype(np.float64) - target) ** 2))


def _param_norms(params: ModelParams) -> str:
    norms = {k: float(np.linalg.norm(t.data)) if np.all(np.isfinite(t.data)) else float("nan")
             for k, t in params.tensors.items()}
    worst = max(norms, key=lambda k: (np.isnan(norms[k]), norms[k]))
    return f"largest/offending parameter {worst} norm={norms[worst]:.4g}"


def train(config: RunConfig, out_dir=None, dataset: PairedDataset | None = None):
    """Train with Adam on MSE, early-stopping on validation loss.

    Returns ``(params, report)``; when ``out_dir`` is given the checkpoint,
    resolved config and reports are written there too.
    """
    config.validate()
    t0 = time.perf_counter()
    with thread_limit(1 if config.deterministic and not config.threads else config.threads):
        ds = dataset if dataset is not None else open_dataset(config)
        mcfg = config.model_config()
        train_rec, val_rec, test_rec = split_dataset(ds.n_recordings, config.split, config.seed)
        stride = config.stride()
        train_windows = windows_for(ds, train_rec, mcfg.N, mcfg.T, stride)
        val_windows = windows_for(ds, val_rec, mcfg.N, mcfg.T, stride)
        if not train_windows:
            raise ConfigError("no training windows: recordings are too short for N and T")

        params = init_params(mcfg, config.seed)
        adam = AdamState.for_params(params.tensors, lr=config.lr)
        report = TrainReport()

        _, _, tr_targets = gather(ds, train_windows, mcfg.N, mcfg.T, with_flow=False)
        mean_img = tr_targets.astype(np.float64).mean(axis=(0, 1))
        del tr_targets
        if val_windows:
            _, _, val_targets = gather(ds, val_windows, mcfg.N, mcfg.T, with_flow=False)
            report.baseline_val_mse = float(np.mean((val_targets - mean_img) ** 2))
            del val_targets

        by_rec: dict = {}
        for w in train_windows:
            by_rec.setdefault(w[0], []).append(w)

        best = None
        wait = 0
        for epoch in range(1, config.max_epochs + 1):
            rng = np.random.default_rng(config.seed + epoch)
            if config.train_windows_per_recording > 0:
                k = config.train_windows_per_recording
                epoch_windows = []
                for r in sorted(by_rec):
                    ws = by_rec[r]
                    pick = rng.permutation(len(ws))[:k]
                    epoch_windows.extend(ws[i] for i in sorted(pick))
            else:
                epoch_windows = list(train_windows)
            order = rng.permutation(len(epoch_windows))
            epoch_windows = [epoch_windows[i] for i in order]

            losses = []
            for b, batch in enumerate(_batches(epoch_windows, config.batch_size), 1):
                gray, flow, target = gather(ds, batch, mcfg.N, mcfg.T, with_flow=config.needs_flow)
                try:
                    out = forward_sequence(gray, flow, params, mcfg, "train", rng)
                    loss = fn.mse_loss(out.images, target)
                    loss.backward()
                    adam_step(params.tensors, params.grads(), adam)
                except NonFiniteError as e:
                    raise TrainingDivergedError(
                        f"non-finite values at epoch {epoch}, batch {b}: {e}; {_param_norms(params)}"
                    ) from e
                for t in params.tensors.values():
                    t.grad = None
                if not np.isfinite(loss.item()):
                    raise TrainingDivergedError(f"loss is NaN at epoch {epoch}, batch {b}; {_param_norms(params)}")
                losses.append(loss.item() * len(batch))
            report.train_loss.append(float(np.sum(losses) / len(epoch_windows)))
            val = _mse(params, ds, val_windows, config) if val_windows else report.train_loss[-1]
            report.val_loss.append(val)
            report.stopped_epoch = epoch
            log.info("epoch %d train %.5f val %.5f", epoch, report.train_loss[-1], val)
            if best is None or val < best[0]:
                best = (val, {k: np.array(v) for k, v in params.to_arrays().items()})
                report.best_epoch = epoch
                wait = 0
            else:
                wait += 1
                if wait >= config.patience:
                    break

        params.load_arrays(best[1])
        if config.eval_test:
            report.test, att = _evaluate_windows(params, ds, windows_for(ds, test_rec, mcfg.N, mcfg.T, stride), config)
            report.attention_mean = float(att.mean()) if att.size else float("nan")
    report.wall_clock = time.perf_counter() - t0

    if out_dir is not None:
        write_run(out_dir, params, config, report, adam)
    return params, report


def _evaluate_windows(params, ds, windows, config, dump_dir=None):
    pred, target, att = predict_windows(params, ds, windows, config)
    mcfg = config.model_config()
    p = pred.reshape(-1, mcfg.out_h, mcfg.out_w)
    t = target.reshape(-1, mcfg.out_h, mcfg.out_w)
    rep = evaluate_pairs(p, t)
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
        np.save(dump_dir / "pred.npy", p)
        np.save(dump_dir / "target.npy", t)
    return rep, att


def write_run(out_dir, params: ModelParams, config: RunConfig, report: TrainReport, adam: AdamState | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"format": "lip2tongue", "best_epoch": report.best_epoch}
    if adam is not None:
        meta["adam_t"] = adam.t
    save_checkpoint(out / "model.ckpt", params.to_arrays(), meta)
    save_config(config, out / "config.toml")
    kv = report.as_kv()
    kv.pop("wall_clock_s", None)  # keep report.kv reproducible across runs
    write_kv(out / "report.kv", kv)
    (out / "report.txt").write_text(format_train_report(report))
    (out / "timing.kv").write_text(f"wall_clock_s={report.wall_clock:.3f}\n")


def load_params(ckpt_path, config: RunConfig) -> ModelParams:
    arrays, _meta = load_checkpoint(ckpt_path)
    params = init_params(config.model_config(), config.seed)
    params.load_arrays(arrays)
    return params


def resolve_run_config(ckpt_path, config_path=None, overrides=()) -> RunConfig:
    if config_path is None:
        config_path = Path(ckpt_path).parent / "config.toml"
    return load_config(config_path, overrides)


def evaluate(checkpoint, split: str = "test", config: RunConfig | None = None, dataset=None, dump_dir=None):
    """Metrics for a trained model over the val or test split.

    ``checkpoint`` is a path or an in-memory :class:`ModelParams`.
    """
    if split not in ("val", "test"):
        raise ConfigError(f"split must be 'val' or 'test', got {split!r}")
    if config is None:
        config = resolve_run_config(checkpoint)
    ds = dataset if dataset is not None else open_dataset(config)
    params = checkpoint if isinstance(checkpoint, ModelParams) else load_params(checkpoint, config)
    mcfg = config.model_config()
    _, val_rec, test_rec = split_dataset(ds.n_recordings, config.split, config.seed)
    recs = val_rec if split == "val" else test_rec
    with thread_limit(config.threads):
        rep, _ = _evaluate_windows(params, ds, windows_for(ds, recs, mcfg.N, mcfg.T, config.stride()), config, dump_dir)
    return rep


ABLATIONS = (
    ("Raw images only", {"raw_only": True, "use_flow": False, "use_attention": False}),
    ("w/o OF", {"raw_only": False, "use_flow": False, "use_attention": True}),
    ("w/o AT", {"raw_only": False, "use_flow": True, "use_attention": False}),
    ("Full", {"raw_only": False, "use_flow": True, "use_attention": True}),
)


@dataclass
class AblationRow:
    name: str
    ssim: float
    cw_ssim: float
    msd: float
    val_mse: float
    attention_mean: float
    epochs: int


def ablate(config: RunConfig, out_dir=None, dataset: PairedDataset | None = None, variants=ABLATIONS):
    """Train and test the four variants on the same seed and split."""
    rows = []
    if dataset is None:
        flow_cfg = dataclasses.replace(config, use_flow=True, raw_only=False)
        dataset = open_dataset(flow_cfg)
    for name, flags in variants:
        cfg = dataclasses.replace(config, eval_test=True, **flags)
        sub = None if out_dir is None else Path(out_dir) / name.lower().replace("/", "").replace(" ", "_")
        _, rep = train(cfg, sub, dataset)
        rows.append(AblationRow(name, rep.test.ssim[0], rep.test.cw_ssim[0], rep.test.msd[0],
                                rep.best_val_loss, rep.attention_mean, rep.stopped_epoch))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(format_ablation(rows))
        kv = {}
        for r in rows:
            key = r.name.lower().replace("/", "").replace(" ", "_")
            kv[f"{key}.ssim"] = r.ssim
            kv[f"{key}.cw_ssim"] = r.cw_ssim
            kv[f"{key}.msd"] = r.msd
            kv[f"{key}.attention_mean"] = r.attention_mean
        write_kv(out / "report.kv", kv)
    return rows


# -- report formatting ----------------------------------------------------------


def write_kv(path, kv: dict) -> None:
    lines = []
    for k, v in kv.items():
        lines.append(f"{k}={v:.9g}" if isinstance(v, float) else f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def format_metrics(rep: MetricsReport) -> str:
    return "\n".join([
        f"frames   {rep.n_frames}",
        f"SSIM     {rep.ssim[0]:.4f} +- {rep.ssim[1]:.4f}",
        f"CW-SSIM  {rep.cw_ssim[0]:.4f} +- {rep.cw_ssim[1]:.4f}",
        f"MSD      {rep.msd[0]:.3f} +- {rep.msd[1]:.3f} px ({rep.msd_source})",
        f"MSE      {rep.mse:.6f}",
    ])


def format_train_report(rep: TrainReport) -> str:
    lines = ["epoch  train_mse   val_mse"]
    for i, (a, b) in enumerate(zip(rep.train_loss, rep.val_loss), 1):
        mark = "  *" if i == rep.best_epoch else ""
        lines.append(f"{i:5d}  {a:.6f}  {b:.6f}{mark}")
    lines.append(f"best epoch {rep.best_epoch}, stopped after {rep.stopped_epoch}")
    lines.append(f"constant-mean baseline val MSE {rep.baseline_val_mse:.6f}")
    if rep.test is not None:
        lines.append("")
        lines.append("test metrics")
        lines.append(format_metrics(rep.test))
    return "\n".join(lines) + "\n"


def format_ablation(rows) -> str:
    lines = [f"{'Input':<18} {'SSIM':>7} {'CW-SSIM':>8}", "-" * 35]
    for r in rows:
        lines.append(f"{r.name:<18} {r.ssim:7.4f} {r.cw_ssim:8.4f}")
    return "\n".join(lines) + "\n"
