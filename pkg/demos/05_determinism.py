"""Reproducibility: the same seed gives the same bytes.

Trains the same miniature network twice with one seed and once with
another, writing traces and checkpoints to a scratch directory.  Equal
seeds must agree byte for byte - shuffling, initialization, and every
arithmetic step are drawn from explicit generators, so nothing is left
to chance or platform.
"""

import filecmp
import tempfile
from pathlib import Path

import numpy as np

from pcnn.model import ModelConfig, PCNNModel
from pcnn.synth import generate
from pcnn.training import TrainConfig, train

data = generate(["sphere", "pyramid"], per_class=6, num_views=4, res=16,
                seed=19, split="train")


def run(tag: str, init_seed: int, shuffle_seed: int, outdir: Path):
    net = PCNNModel(
        ModelConfig(num_classes=2, backbone_levels=3, backbone_dim=16, k=4),
        np.random.default_rng(init_seed),
    )
    trace_path = outdir / f"{tag}.trace.csv"
    ckpt_path = outdir / f"{tag}.ckpt"
    train(data.views, data.labels, net,
          TrainConfig(epochs=4, batch_size=4, seed=shuffle_seed),
          trace_path=trace_path, final_path=ckpt_path)
    return trace_path, ckpt_path


with tempfile.TemporaryDirectory() as scratch:
    outdir = Path(scratch)
    trace_a, ckpt_a = run("a", init_seed=77, shuffle_seed=5, outdir=outdir)
    trace_b, ckpt_b = run("b", init_seed=77, shuffle_seed=5, outdir=outdir)
    trace_c, ckpt_c = run("c", init_seed=77, shuffle_seed=6, outdir=outdir)

    same_trace = filecmp.cmp(trace_a, trace_b, shallow=False)
    same_ckpt = filecmp.cmp(ckpt_a, ckpt_b, shallow=False)
    print(f"same seeds:      trace bytes equal = {same_trace}, "
          f"checkpoint bytes equal = {same_ckpt}")

    diff_trace = filecmp.cmp(trace_a, trace_c, shallow=False)
    diff_ckpt = filecmp.cmp(ckpt_a, ckpt_c, shallow=False)
    print(f"different seeds: trace bytes equal = {diff_trace}, "
          f"checkpoint bytes equal = {diff_ckpt}")

    first = open(trace_a).readlines()[1].strip()
    print(f"first trace row (full precision survives the round trip):")
    print(f"  {first}")
