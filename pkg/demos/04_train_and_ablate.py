"""Train the two-stream model on a small synthetic corpus, then ablate it.

The synthetic generator drives lip aperture and tongue height from one
latent signal, so a model that reads lips can learn to draw the tongue.
This demo uses a reduced model and dataset so it finishes in a few minutes
on one core. The full-size run is ``lip2tongue synth`` then
``lip2tongue train`` with the desk preset.

Run: python demos/04_train_and_ablate.py [work_dir]
"""

import sys
import tempfile
from pathlib import Path

from lip2tongue.config import load_config
from lip2tongue.synth import SynthSpec, gen_dataset
from lip2tongue.training import ablate, evaluate, format_ablation, format_train_report, open_dataset, train

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="lip2tongue-"))
data = work / "synth"
if not (data / "manifest.txt").exists():
    gen_dataset(SynthSpec(n_sequences=200, frames_per_sequence=12, lip_h=48, lip_w=48, us_h=32, us_w=32), data)

cfg = load_config(None, [
    ("dataset", str(data)), ("max_epochs", 20), ("patience", 4), ("batch_size", 8), ("lr", 1e-3),
    ("model.H", 48), ("model.W", 48), ("model.N", 5), ("model.T", 3),
    ("model.tower", [[8, 3, 2], [8, 3, 2]]), ("model.embed_dim", 32), ("model.lstm_hidden", 32),
    ("model.decoder_hidden", 64), ("model.out_h", 32), ("model.out_w", 32), ("flow.iterations", 50),
])
ds = open_dataset(cfg)

params, report = train(cfg, work / "run", ds)
print(format_train_report(report))

metrics = evaluate(work / "run" / "model.ckpt", "test", cfg, ds)
print(f"reloaded checkpoint, test SSIM {metrics.ssim[0]:.4f}")

print()
print(format_ablation(ablate(cfg, work / "ablate", ds)))
print("artifacts in", work)
