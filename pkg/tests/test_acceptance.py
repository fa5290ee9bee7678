"""Acceptance suite: one PASS/FAIL line per criterion.

Each line is printed as its test runs (visible with ``-s``) and again in the
pytest terminal summary. Training experiments use the default 2000/500 scene
split, oracle boxes, T=10 and a 5-epoch budget (625 iterations of batch 16),
seeds 0, 1, 2.
"""

import dataclasses
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import spearmanr

from contextcnn.analysis import significance, timestep_degradation
from contextcnn.checkpoint import load_checkpoint
from contextcnn.cli import main
from contextcnn.data import SceneSpec, generate_dataset, quantize, read_dataset, single_object_ceiling, write_dataset
from contextcnn.gradsuite import EPS, TOLERANCE, run_suite
from contextcnn.model import Model
from contextcnn.optim import TrainConfig, lr_at
from contextcnn.train import derive_seed, fit, make_proposals, model_config_for

from oracles import exhaustive_roi_mismatches

SEEDS = (0, 1, 2)
TRAIN, VAL = 2000, 500
EPOCHS = 5


VERDICTS = []  # echoed in the terminal summary by conftest


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    VERDICTS.append(line)
    print("\n" + line)
    assert ok, detail


@pytest.fixture(scope="module")
def scenes():
    spec = dataclasses.replace(SceneSpec(), seed=derive_seed(0, "data")).validate()
    return spec, generate_dataset(spec, TRAIN), generate_dataset(spec, VAL, offset=TRAIN)


@pytest.fixture(scope="module")
def runs(scenes):
    """Lazily trained runs keyed by (variant, proposal_mode, seed), with wall time."""
    spec, train, val = scenes
    cache = {}

    def get(variant, mode, seed):
        key = (variant, mode, seed)
        if key not in cache:
            cfg = TrainConfig(seed=seed, variant=variant, proposal_mode=mode,
                              iterations=EPOCHS * TRAIN // 16, batch_size=16)
            start = time.perf_counter()
            result = fit(train, val, cfg, model_config_for(spec, variant))
            cache[key] = (result, time.perf_counter() - start)
        return cache[key]

    return get


def median_accuracy(runs, variant, mode):
    accs = [runs(variant, mode, s)[0].val.accuracy for s in SEEDS]
    minutes = sum(runs(variant, mode, s)[1] for s in SEEDS) / 60
    return float(np.median(accs)), accs, minutes


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    results = run_suite(seed=0, repeats=10)
    elapsed = time.perf_counter() - start
    worst = max(results.values())
    names = ("conv2d", "dense", "softmax_cross_entropy", "roi_pool", "lstm_step", "lstm_sequence", "base_model")
    detail = ", ".join(f"{k}={v:.1e}" for k, v in results.items())
    verdict(1, set(results) == set(names) and worst < TOLERANCE and EPS == 1e-5 and elapsed < 120,
            f"worst rel err {worst:.2e} < {TOLERANCE:g} over 10 seeds in {elapsed:.1f}s ({detail})")


def test_criterion_2_roi_oracle_exhaustive():
    mismatches, cases = exhaustive_roi_mismatches(max_side=8, pooled_sizes=(1, 2, 3))
    verdict(2, mismatches == 0 and cases > 0, f"{mismatches} mismatches over {cases} (map, RoI, pooled) cases")


@pytest.mark.slow
def test_criterion_3_variant_ordering(runs):
    base, base_all, t_base = median_accuracy(runs, "base", "oracle")
    dense, dense_all, t_dense = median_accuracy(runs, "dense_replace", "oracle")
    plain, plain_all, t_plain = median_accuracy(runs, "plain_cnn", "oracle")
    minutes = t_base + t_dense + t_plain
    ok = base >= dense >= plain and base - plain >= 0.10 and base >= 0.85 and minutes < 40
    verdict(3, ok, f"median val acc base {base:.3f} {base_all} >= dense_replace {dense:.3f} {dense_all} "
                   f">= plain_cnn {plain:.3f} {plain_all}; gap {100 * (base - plain):.1f} pts; "
                   f"{minutes:.1f} min")


@pytest.mark.slow
def test_criterion_4_random_box_gap(runs):
    oracle, oracle_all, t_oracle = median_accuracy(runs, "base", "oracle")
    rand, rand_all, t_rand = median_accuracy(runs, "base", "random")
    minutes = t_oracle + t_rand
    ok = oracle - rand >= 0.15 and minutes < 30
    verdict(4, ok, f"median val acc oracle boxes {oracle:.3f} {oracle_all} vs adversarial random boxes "
                   f"{rand:.3f} {rand_all}; gap {100 * (oracle - rand):.1f} pts; {minutes:.1f} min")


@pytest.mark.slow
def test_criterion_5_first_box_matters_most(runs, scenes):
    _, _, val = scenes
    lines, ok = [], True
    for seed in SEEDS:
        result, _ = runs("base", "oracle", seed)
        boxes = make_proposals(val, "oracle", 10, result.seeds["proposals/val"])
        report = timestep_degradation(result.model, val, boxes)
        drop = report.accuracy_drop
        rho = spearmanr(np.arange(1, 11), drop).statistic
        ok &= bool(drop[0] > drop[-1] and rho <= 0)
        lines.append(f"seed {seed}: drop t=1 {drop[0]:.3f} vs t=T {drop[-1]:.3f}, spearman {rho:.2f}")
    verdict(5, ok, "; ".join(lines))


def test_criterion_6_lr_decay_exact():
    expected = {0: Fraction(1, 1000), 10000: Fraction(1, 2000), 20000: Fraction(1, 3000)}
    got = {i: lr_at(1e-3, 1e-4, i) for i in expected}
    ok = all(got[i] == float(r) for i, r in expected.items())
    verdict(6, ok, ", ".join(f"lr_at(i={i})={v!r}" for i, v in got.items()))


@pytest.mark.slow
def test_criterion_7_beats_single_object_ceiling(runs, scenes):
    spec, _, val = scenes
    ceiling = single_object_ceiling(SceneSpec())
    empirical = single_object_ceiling(spec, val)
    base, base_all, _ = median_accuracy(runs, "base", "oracle")
    ok = ceiling == 0.5 and base - ceiling >= 0.30
    verdict(7, ok, f"presence-oracle ceiling {ceiling} (on val scenes {empirical:.3f}); "
                   f"base median {base:.3f} {base_all} exceeds it by {100 * (base - ceiling):.1f} pts")


def test_criterion_8_cli_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["scenegen", "--out", str(data), "--train", "64", "--val", "16", "--seed", "5"]) == 0
    cfg = tmp_path / "train.cfg"
    cfg.write_text(TrainConfig(iterations=12, seed=7).dumps())
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main(["train", "--dataset", str(data), "--out", str(out), "--config", str(cfg),
                     "--variant", "base", "--proposal", "oracle", "--threads", "1"])
        assert code == 0
        outs.append(out)
    same = {f: (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
            for f in ("model.ckpt", "model.ckpt.meta", "train_log.csv")}
    verdict(8, all(same.values()), ", ".join(f"{f} identical={v}" for f, v in same.items()))


@pytest.mark.slow
def test_criterion_9_round_trips(tmp_path, scenes, runs):
    spec, train, val = scenes
    samples = train + val
    write_dataset(samples, tmp_path / "ds", spec)
    back = read_dataset(tmp_path / "ds")
    pixels = all(quantize(a.image).tobytes() == quantize(b.image).tobytes() for a, b in zip(samples, back))
    labels = [s.class_id for s in back] == [s.class_id for s in samples]
    boxes = all(a.gt_boxes == b.gt_boxes for a, b in zip(samples, back))
    model = runs("base", "oracle", 0)[0].model
    model.save(tmp_path / "m.ckpt")
    tensors, _ = load_checkpoint(tmp_path / "m.ckpt")
    loaded = Model.load(tmp_path / "m.ckpt")
    bits = all(tensors[k].tobytes() == t.data.tobytes() and loaded.params[k].data.tobytes() == t.data.tobytes()
               for k, t in model.params.items())
    ok = pixels and labels and boxes and bits and len(back) == len(samples)
    verdict(9, ok, f"{len(back)} scenes: 8-bit pixels exact={pixels}, labels={labels}, boxes={boxes}; "
                   f"{len(tensors)} checkpoint tensors bit-exact={bits}")


@pytest.mark.slow
def test_negative_significance_exists(runs, scenes):
    """Occlusion can help: some validation box raises the correct-class score when blacked out."""
    _, _, val = scenes
    result, _ = runs("base", "oracle", 0)
    boxes = make_proposals(val, "oracle", 10, result.seeds["proposals/val"])
    found = next(((i, t) for i in range(len(val)) for t in range(10)
                  if significance(result.model, val[i], boxes[i], t) < 0), None)
    assert found is not None
