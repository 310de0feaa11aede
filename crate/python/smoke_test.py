#!/usr/bin/env python3
"""Smoke test for the restrec_py extension module.

Builds the cdylib if needed, imports it, and drives a miniature end-to-end
flow: SCM oracle checks, synthetic generation, dataset/graph queries, metric
hand values, and a short config-driven train/eval cycle.

Usage: python3 python/smoke_test.py [--release]
"""

import json
import math
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build_extension(release: bool) -> str:
    profile = "release" if release else "debug"
    cmd = ["cargo", "build", "-p", "restrec-py"]
    if release:
        cmd.append("--release")
    subprocess.run(cmd, cwd=ROOT, check=True)
    src = os.path.join(ROOT, "target", profile, "librestrec_py.so")
    stage = tempfile.mkdtemp(prefix="restrec_py_")
    dst = os.path.join(stage, "restrec_py.so")
    shutil.copyfile(src, dst)
    return stage


def main() -> int:
    release = "--release" in sys.argv
    sys.path.insert(0, build_extension(release))
    import restrec_py as rp

    # --- SCM oracles ------------------------------------------------------
    spec = rp.ScmSpec.demo()
    worst = 0.0
    for g in range(3):
        for v in range(3):
            _, _, skipped, disc = spec.exact_interventional(g, v)
            assert not skipped
            worst = max(worst, disc)
    assert worst <= 1e-9, worst
    bias = max(spec.measure_selection_bias(g, v) for g in range(3) for v in range(3))
    assert bias > 0.05, bias
    inert = rp.ScmSpec.inert()
    assert inert.measure_selection_bias(0, 0) == 0.0
    print(f"scm oracles ok (max discrepancy {worst:.2e}, demo bias {bias:.3f})")

    # --- generation + graph queries ---------------------------------------
    small = json.loads(spec.to_json())
    small.update(num_users=150, num_items=45, num_samples=6000, seed=3)
    spec_small = rp.ScmSpec.from_json(json.dumps(small))
    dataset, ledger = spec_small.generate()
    assert dataset.num_interactions == len(ledger)
    assert dataset.num_users == 150
    train_ds, val_ds, test_ds = dataset.split(seed=1)
    total = (
        train_ds.num_interactions + val_ds.num_interactions + test_ds.num_interactions
    )
    assert total == dataset.num_interactions
    graph = rp.GraphStore.build(train_ds)
    pool = graph.counterfactual_pool(beta=2, seed=7)
    for user, item, _rating, exposed in pool[:50]:
        assert not exposed
        assert item not in [i for i, _ in graph.items_of(user)]
        raters = sum(
            1 for nb in graph.neighbors_of(user) if item in [i for i, _ in graph.items_of(nb)]
        )
        assert raters >= 2
    print(f"generation ok ({dataset.num_interactions} interactions, pool {len(pool)})")

    # --- metrics ------------------------------------------------------------
    assert abs(rp.mae([1.0, 2.0], [1.0, 4.0]) - 1.0) < 1e-12
    assert abs(rp.rmse([1.0, 2.0], [1.0, 4.0]) - math.sqrt(2.0)) < 1e-12
    scored = [(i, -float(rank)) for i, rank in [(0, 4), (1, 1), (2, 2), (3, 3), (4, 5), (5, 6)]]
    assert rp.hr_at_k(scored, 0, 5) == 1.0
    assert abs(rp.ndcg_at_k(scored, 0, 5) - 1.0 / math.log2(5.0)) < 1e-9
    print("metric hand values ok")

    # --- config-driven pipeline --------------------------------------------
    with tempfile.TemporaryDirectory(prefix="restrec_run_") as work:
        ratings = os.path.join(work, "ratings.tsv")
        social = os.path.join(work, "social.tsv")
        with open(ratings, "w") as f:
            for u in range(8):
                for j in range(5):
                    item = (u * 5 // 2 + j) % 20
                    f.write(f"u{u}\ti{item}\t{1 + (u + j) % 5}\t{u * 10 + j}\n")
        with open(social, "w") as f:
            for u in range(7):
                f.write(f"u{u}\tu{u + 1}\n")
        conf = os.path.join(work, "run.conf")
        with open(conf, "w") as f:
            f.write(
                "\n".join(
                    [
                        f"data.ratings = {ratings}",
                        f"data.social = {social}",
                        f"out_dir = {os.path.join(work, 'run')}",
                        "pool.beta = 1",
                        "model.embed_dim = 8",
                        "model.rating_dim = 4",
                        "model.hidden_dim = 16",
                        "model.strategy_blocks = 2",
                        "model.strategy_cats = 3",
                        "train.batch_size = 16",
                        "train.fanout_items = 4",
                        "train.fanout_social = 4",
                        "train.max_steps = 60",
                        "train.eval_every = 30",
                        "train.patience_steps = 60",
                    ]
                )
                + "\n"
            )
        print(rp.prepare(conf))
        ckpt, best_val, best_step = rp.train(conf)
        assert os.path.exists(ckpt)
        metrics = rp.evaluate(conf, ckpt)
        assert "rmse" in metrics and "mae" in metrics
        print(f"train/eval ok (best val {best_val:.4f} at step {best_step}, "
              f"test rmse {metrics['rmse']:.4f})")

        # Hard strategy codes for a few train pairs (deterministic inference).
        loaded = rp.Dataset.load(ratings, social)
        run_train, _, _ = loaded.split()  # same default seed as the run config
        pairs = [(u, i) for u, i, _, _, _ in run_train.interactions()[:5]]
        codes = rp.hard_codes(ckpt, run_train, pairs)
        assert len(codes) == len(pairs) and all(len(c) == 2 for c in codes)
        assert codes == rp.hard_codes(ckpt, run_train, pairs)
        print(f"hard codes ok ({codes[0]} ...)")

        logged, disc, bias = rp.simulate(os.path.join(work, "sim"))
        assert disc <= 1e-9 and bias > 0.05 and logged > 0
        print(f"simulate ok ({logged} logged, discrepancy {disc:.2e})")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
