"""The retrieval-vs-retention trade-off across teacher epochs.

More teacher training sharpens the distillation target but pulls the student
further from its frozen starting point. The sweep trains both models side by
side and reports text-to-image R@1 next to the retention proxy (mean cosine
between student and base image embeddings on heldout data).
"""

import tempfile
import warnings
from pathlib import Path

from dclip.data import SyntheticSpec, gen_synthetic
from dclip.training import TrainConfig, epoch_sweep

warnings.simplefilter("ignore", RuntimeWarning)

with tempfile.TemporaryDirectory() as workdir:
    data_dir = Path(workdir) / "data"
    gen_synthetic(SyntheticSpec(train_size=128, heldout_size=48, seed=7), data_dir)

    config = TrainConfig.preset("b", seed=7, student_epochs=1, anchor_enabled=True)
    rows = epoch_sweep(data_dir, config, max_epochs=4)

    print(f"{'teacher epochs':>14} | {'T2I R@1':>8} | retention")
    print("-" * 40)
    for epoch, r1, retention in rows:
        print(f"{epoch:>14} | {r1:>8.4f} | {retention:.8f}")
    print("\nrow 0 is the undistilled baseline; retention always starts at exactly 1")
    print("and declines as the student follows an increasingly specialized teacher.")
