"""Evaluation machinery: accuracy matrices, forgetting, intransigence, CKA,
and the CSV-driven report pipeline used by the command-line driver."""
import tempfile
from pathlib import Path

import numpy as np

from cssl.cli import main as cssl_main
from cssl.evaluation import (AccuracyMatrix, cka_linear, forgetting,
                             intransigence)

# --- the continual-learning measures on a hand-made task-aware matrix -------
aware = np.array([
    [0.80, np.nan, np.nan],
    [0.70, 0.85, np.nan],
    [0.60, 0.75, 0.90],
])
m = AccuracyMatrix(aware, agnostic=np.array([0.80, 0.74, 0.72]))
print("forgetting after session 2:", round(forgetting(m, 2), 3))   # 0.10
print("forgetting after session 3:", round(forgetting(m, 3), 3))   # mean(.2, .1)
print("intransigence at session 3 vs referential 0.93:",
      round(intransigence(m, 3, 0.93), 3))

# --- linear centered-kernel alignment ----------------------------------------
rng = np.random.default_rng(0)
x = rng.standard_normal((64, 16))
q, _ = np.linalg.qr(rng.standard_normal((16, 16)))
print("CKA(x, x):", cka_linear(x, x))
print("CKA(x, rotated x):", round(cka_linear(x, x @ q), 12))
print("CKA(x, unrelated):", round(cka_linear(x, rng.standard_normal((64, 16))), 3))

# --- the CLI: train a tiny run, then emit curve reports ----------------------
CONFIG = """
data.n_classes=4
data.dim=16
data.per_class=30
data.per_class_test=20
data.n_tasks=2
data.sigma=0.3
data.val_fraction=0.15
arch.hidden=32
arch.feature_dim=16
arch.proj_hidden=32
arch.proj_dim=16
arch.temporal_hidden=32
train.method=ft
train.epochs_per_task=8
train.anneal_epochs=6
train.batch_size=16
probe.epochs=25
probe.lr=0.05
eval.aware=true
"""

with tempfile.TemporaryDirectory() as td:
    cfg_path = Path(td) / "demo.cfg"
    cfg_path.write_text(CONFIG)
    run_dir = Path(td) / "run"
    assert cssl_main(["train", "--config", str(cfg_path), "--out", str(run_dir)]) == 0
    assert cssl_main(["report", "--run", str(run_dir), "--kind", "curves"]) == 0
    print("\nrun artifacts:", sorted(p.name for p in run_dir.iterdir()))
    print("curves.csv head:")
    print("\n".join((run_dir / "curves.csv").read_text().splitlines()[:4]))
