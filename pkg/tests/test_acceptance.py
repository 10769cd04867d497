"""End-to-end acceptance checks for the package's headline claims.

One test per claim, each printing a single summary line (visible with
``pytest -s``).  The heavyweight fixture trains the full ablation
matrix through the command-line interface exactly as a user would:
4 configurations x 5 seeds on the standard synthetic dataset.
"""

import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pytest

from pcnn import cli, gradcheck
from pcnn import tensor as T
from pcnn.awv import attention_weights
from pcnn.losses import LossConfig, discrimination_loss
from pcnn.retrieval import average_precision
from pcnn.tensor import Tensor

from test_patchconv import brute_force_patchconv, make_instance
from test_retrieval import brute_force_ap

GRAD_TOL = 1e-5
GRAD_SECONDS = 120.0
RUN_SECONDS = 900.0
MAP_FLOOR = 0.90
MEDIAN_SLACK = 0.005
LOSS_RATIO = 0.40

SEEDS = range(5)
CELLS = {
    "full-dis": ("full", "discrimination"),
    "full-ml": ("full", "ml"),
    "mvcnn-ml": ("mvcnn-baseline", "ml"),
    "edge-ml": ("edgeconv-awv", "ml"),
}


def _verdict(tag: str, ok: bool, detail: str):
    print(f"{tag}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{tag}: {detail}"


@pytest.fixture(scope="session")
def matrix(tmp_path_factory):
    """Dataset plus one training run per (configuration, seed) cell."""
    root = tmp_path_factory.mktemp("acceptance")
    data = root / "data"
    t0 = time.time()
    assert cli.main(["gen-data", "--out", str(data)]) == 0
    result = {
        "root": root,
        "data": data,
        "gen_seconds": time.time() - t0,
        "maps": {},
        "seconds": {},
        "dirs": {},
    }
    for cell, (ablation, loss) in CELLS.items():
        for seed in SEEDS:
            run_dir = root / f"{cell}-s{seed}"
            t0 = time.time()
            assert cli.main([
                "train", "--data", str(data / "train.mvi"),
                "--out", str(run_dir), "--ablation", ablation,
                "--loss", loss, "--seed", str(seed),
            ]) == 0
            assert cli.main([
                "embed", "--data", str(data / "test.mvi"),
                "--checkpoint", str(run_dir / "model.pck"),
                "--out", str(run_dir), "--ablation", ablation,
                "--loss", loss,
            ]) == 0
            assert cli.main(["eval", "--out", str(run_dir)]) == 0
            result["seconds"][cell, seed] = time.time() - t0
            metrics = json.loads((run_dir / "metrics.json").read_text())
            result["maps"][cell, seed] = metrics["map"]
            result["dirs"][cell, seed] = run_dir
    return result


def _cell_maps(matrix, cell):
    return [matrix["maps"][cell, seed] for seed in SEEDS]


def test_gradient_suite():
    t0 = time.time()
    rows = gradcheck.run_suite(n_seeds=100)
    elapsed = time.time() - t0
    worst = max(rows, key=lambda r: r.max_rel_err)
    ok = worst.max_rel_err < GRAD_TOL and elapsed < GRAD_SECONDS
    _verdict(
        "[1] gradients", ok,
        f"{len(rows)} ops x 100 seeds, worst {worst.name} "
        f"rel_err {worst.max_rel_err:.2e} < {GRAD_TOL}, "
        f"{elapsed:.0f}s < {GRAD_SECONDS:.0f}s",
    )


def test_patchconv_oracle():
    worst = 0.0
    for seed in range(200):
        patches, layer, train = make_instance(seed)
        with T.no_grad():
            out = layer.forward(patches, train)
        want = brute_force_patchconv(
            patches.features.data, patches.coords, layer, train
        )
        worst = max(worst, float(np.abs(out.features.data - want).max()))
        assert worst <= 1e-9

    exact = True
    for seed in range(20):
        patches, layer, _ = make_instance(seed)
        rng = np.random.default_rng([seed, 7907])
        perm = rng.permutation(patches.num_patches)
        shuffled = type(patches)(
            Tensor(patches.features.data[perm]),
            patches.coords[perm],
            patches.layout,
        )
        with T.no_grad():
            base = layer.forward(patches, train=False).features.data
            moved = layer.forward(shuffled, train=False).features.data
        exact = exact and np.array_equal(moved, base[perm])
    _verdict(
        "[2] patch convolution", worst <= 1e-9 and exact,
        f"200 instances within {worst:.1e} of brute force; "
        f"permutation equivariance exact on 20 instances",
    )


def test_view_weight_algebra():
    worst_sum = worst_rescale = worst_wsum = worst_match = 0.0
    for seed in range(50):
        rng = np.random.default_rng([seed, 6571])
        num_views = int(rng.integers(3, 9))
        dim = int(rng.integers(2, 17))
        feats = rng.normal(size=(num_views, dim))
        state = attention_weights(Tensor(feats))
        worst_sum = max(worst_sum,
                        abs(float(state.alpha.data.sum()) - 1.0))

        scaled = attention_weights(Tensor(float(rng.uniform(0.1, 9.0)) * feats))
        worst_rescale = max(
            worst_rescale,
            float(np.abs(scaled.alpha.data - state.alpha.data).max()),
        )

        label = int(rng.integers(3))
        fusion_logits = Tensor(rng.normal(size=(1, 3)))
        view_logits = Tensor(rng.normal(size=(num_views, 3)))
        weighted = discrimination_loss(
            fusion_logits, view_logits, state.alpha, label,
            LossConfig(view_mode="wvl"),
        )
        worst_wsum = max(worst_wsum,
                         abs(float(weighted.view_weights.sum()) - 1.0))

        flat = attention_weights(Tensor(np.tile(feats[0], (num_views, 1))))
        avl = discrimination_loss(fusion_logits, view_logits, flat.alpha,
                                  label, LossConfig(view_mode="avl"))
        wvl = discrimination_loss(fusion_logits, view_logits, flat.alpha,
                                  label, LossConfig(view_mode="wvl"))
        worst_match = max(worst_match,
                          abs(float(avl.total.data) - float(wvl.total.data)))
    ok = (worst_sum <= 1e-10 and worst_rescale <= 1e-10
          and worst_wsum <= 1e-10 and worst_match <= 1e-12)
    _verdict(
        "[3] view weighting", ok,
        f"sum-1 {worst_sum:.1e}, rescale drift {worst_rescale:.1e}, "
        f"weight-sum {worst_wsum:.1e}, uniform avl/wvl gap {worst_match:.1e}",
    )


def test_average_precision_oracle():
    assert average_precision([1, 0, 1]) == 5 / 6
    mismatches = 0
    rng = np.random.default_rng(9173)
    for _ in range(1000):
        length = int(rng.integers(1, 40))
        bits = rng.integers(0, 2, size=length)
        if not bits.any():
            bits[rng.integers(length)] = 1
        mismatches += average_precision(bits) != brute_force_ap(list(bits))
    _verdict(
        "[4] average precision", mismatches == 0,
        f"1000 random rankings, {mismatches} mismatches; [1,0,1] -> 5/6",
    )


def test_desk_retrieval_quality(matrix):
    maps = _cell_maps(matrix, "full-dis")
    runtimes = [matrix["seconds"]["full-dis", seed] for seed in SEEDS]
    budget = matrix["gen_seconds"] + max(runtimes)
    reached = sum(value >= MAP_FLOOR for value in maps)
    ok = reached >= 4 and budget < RUN_SECONDS
    _verdict(
        "[5] retrieval quality", ok,
        f"mAP {['%.4f' % v for v in maps]}, {reached}/5 >= {MAP_FLOOR}, "
        f"slowest run incl. data {budget:.0f}s < {RUN_SECONDS:.0f}s",
    )


def test_ablation_ordering(matrix):
    med = {cell: float(np.median(_cell_maps(matrix, cell))) for cell in CELLS}
    checks = [
        ("full-dis", "full-ml"),
        ("full-ml", "mvcnn-ml"),
        ("full-ml", "edge-ml"),
    ]
    gaps = {f"{a}>={b}": med[a] - med[b] for a, b in checks}
    ok = all(med[a] >= med[b] - MEDIAN_SLACK for a, b in checks)
    detail = ", ".join(f"{name} {gap:+.4f}" for name, gap in gaps.items())
    _verdict(
        "[6] ablation ordering", ok,
        f"medians {({c: round(m, 4) for c, m in med.items()})}; {detail}; "
        f"slack {MEDIAN_SLACK}",
    )


def test_training_determinism(matrix):
    first = matrix["dirs"]["full-dis", 0]
    rerun = matrix["root"] / "determinism-rerun"
    assert cli.main([
        "train", "--data", str(matrix["data"] / "train.mvi"),
        "--out", str(rerun), "--ablation", "full",
        "--loss", "discrimination", "--seed", "0",
    ]) == 0
    trace_a = (first / "trace.csv").read_text().splitlines()
    trace_b = (rerun / "trace.csv").read_text().splitlines()
    ten_steps = trace_a[:11] == trace_b[:11]
    full_trace = trace_a == trace_b
    checkpoint = filecmp.cmp(first / "model.pck", rerun / "model.pck",
                             shallow=False)
    ok = ten_steps and full_trace and checkpoint
    _verdict(
        "[7] determinism", ok,
        f"10-step trace identical: {ten_steps}, full trace: {full_trace}, "
        f"checkpoint bytes identical: {checkpoint}",
    )


def test_convergence(matrix):
    trace = (matrix["dirs"]["full-dis", 0] / "trace.csv").read_text()
    rows = [line.split(",") for line in trace.splitlines()[1:]]
    by_epoch = {}
    for row in rows:
        by_epoch.setdefault(int(row[1]), []).append(float(row[4]))
    ratio = np.mean(by_epoch[20]) / np.mean(by_epoch[1])
    ok = ratio <= LOSS_RATIO
    _verdict(
        "[8] convergence", ok,
        f"epoch-20 / epoch-1 mean loss = {ratio:.3f} <= {LOSS_RATIO}",
    )
