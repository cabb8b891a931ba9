"""End-to-end checks of the gprune command line."""

import json
import os
import subprocess
import sys
import tempfile

GPRUNE = os.environ["GPRUNE_BIN"]
MODELS = os.environ.get("GPRUNE_MODELS_DIR", "models")

MINIMAL_CONV = {
    "input_shape": [3, 8, 8],
    "layers": [
        {
            "id": "c",
            "kind": "conv2d",
            "out_channels": 16,
            "kernel": [3, 3],
            "stride": [1, 1],
            "padding": [1, 1],
        }
    ],
    "edges": [],
}


def run(*args, expect=0):
    proc = subprocess.run([GPRUNE, *args], capture_output=True, text=True)
    assert proc.returncode == expect, (
        f"{' '.join(args)} -> exit {proc.returncode} (want {expect})\n"
        f"stdout: {proc.stdout}\nstderr: {proc.stderr}"
    )
    return proc


def test_analyze(tmp):
    model = os.path.join(tmp, "mini.json")
    with open(model, "w") as f:
        json.dump(MINIMAL_CONV, f)
    report = os.path.join(tmp, "report.json")
    proc = run("analyze", "--model", model, "--json", report)
    assert "55296" in proc.stdout
    data = json.load(open(report))
    assert data["total_flops"] == 55296
    assert data["per_layer"]["c"] == 55296


def test_analyze_bad_model(tmp):
    bad = os.path.join(tmp, "bad.json")
    with open(bad, "w") as f:
        f.write("{broken")
    run("analyze", "--model", bad, expect=2)
    run("analyze", "--model", os.path.join(tmp, "missing.json"), expect=2)


def test_train_baseline_and_weights(tmp):
    out = os.path.join(tmp, "base")
    proc = run(
        "train-baseline",
        "--model", os.path.join(MODELS, "plain_toy.json"),
        "--dataset", "synthetic:blobs:40",
        "--epochs", "15", "--batch-size", "16", "--lr", "0.003",
        "--seed", "7", "--out", out,
    )
    report = json.loads(proc.stdout)
    assert report["val_accuracy"] >= 0.95
    assert os.path.exists(os.path.join(out, "baseline.bin"))
    assert os.path.exists(os.path.join(out, "baseline.bin.manifest.json"))

    # 0 epochs still persists the initializer weights
    out0 = os.path.join(tmp, "base0")
    run(
        "train-baseline",
        "--model", os.path.join(MODELS, "plain_toy.json"),
        "--dataset", "synthetic:blobs:10",
        "--epochs", "0", "--seed", "7", "--out", out0,
    )
    assert os.path.getsize(os.path.join(out0, "baseline.bin")) > 0

    # a fixed seed reproduces the weights byte-for-byte
    out_rep = os.path.join(tmp, "base_rep")
    run(
        "train-baseline",
        "--model", os.path.join(MODELS, "plain_toy.json"),
        "--dataset", "synthetic:blobs:40",
        "--epochs", "15", "--batch-size", "16", "--lr", "0.003",
        "--seed", "7", "--out", out_rep,
    )
    a = open(os.path.join(out, "baseline.bin"), "rb").read()
    b = open(os.path.join(out_rep, "baseline.bin"), "rb").read()
    assert a == b


def test_train_baseline_bad_dataset(tmp):
    run(
        "train-baseline",
        "--model", os.path.join(MODELS, "plain_toy.json"),
        "--dataset", os.path.join(tmp, "nope.csv"),
        "--out", os.path.join(tmp, "x"),
        expect=2,
    )


def test_search_and_artifacts(tmp):
    base = os.path.join(tmp, "base", "baseline.bin")
    out = os.path.join(tmp, "run")
    proc = run(
        "search",
        "--model", os.path.join(MODELS, "plain_toy.json"),
        "--weights", base,
        "--dataset", "synthetic:blobs:40",
        "--flops-target", "0.6",
        "--episodes-warmup", "5", "--episodes-exploit", "5",
        "--fine-tune-epochs", "2", "--hidden-dim", "8",
        "--seed", "9", "--out", out,
    )
    summary = json.loads(proc.stdout)
    assert summary["found"]
    assert summary["best_flops_ratio"] <= 0.6
    for name in ("history.csv", "episodes.jsonl", "pruned_model.json",
                 "pruned_weights.bin", "policy.json", "policy.csv"):
        assert os.path.exists(os.path.join(out, name)), name
    # the pruned IR re-analyzes to exactly the reported preserved ratio
    reanalysis = os.path.join(tmp, "re.json")
    run("analyze", "--model", os.path.join(out, "pruned_model.json"),
        "--json", reanalysis)
    baseline_report = os.path.join(tmp, "baseline_flops.json")
    run("analyze", "--model", os.path.join(MODELS, "plain_toy.json"),
        "--json", baseline_report)
    pruned_flops = json.load(open(reanalysis))["total_flops"]
    base_flops = json.load(open(baseline_report))["total_flops"]
    assert abs(pruned_flops / base_flops - summary["best_flops_ratio"]) < 1e-12
    # the policy CSV carries one row per prunable layer
    policy_rows = open(os.path.join(out, "policy.csv")).read().strip().splitlines()
    assert len(policy_rows) == 1 + 2  # header + conv1, conv2
    lines = open(os.path.join(out, "history.csv")).read().strip().splitlines()
    assert len(lines) == 11  # header + 10 episodes


def test_search_loose_target_single_steps(tmp):
    base = os.path.join(tmp, "base", "baseline.bin")
    out = os.path.join(tmp, "loose")
    run(
        "search",
        "--model", os.path.join(MODELS, "plain_toy.json"),
        "--weights", base,
        "--dataset", "synthetic:blobs:40",
        "--flops-target", "0.99",
        "--episodes-warmup", "4", "--episodes-exploit", "0",
        "--fine-tune-epochs", "0", "--hidden-dim", "8",
        "--seed", "9", "--out", out,
    )
    episodes = [json.loads(l) for l in open(os.path.join(out, "episodes.jsonl"))]
    assert all(len(e["steps"]) == 1 for e in episodes)


def test_search_missing_weights(tmp):
    run(
        "search",
        "--model", os.path.join(MODELS, "plain_toy.json"),
        "--dataset", "synthetic:blobs:10",
        "--out", os.path.join(tmp, "now"),
        expect=2,
    )


def test_search_unreachable_target(tmp):
    base = os.path.join(tmp, "base", "baseline.bin")
    run(
        "search",
        "--model", os.path.join(MODELS, "plain_toy.json"),
        "--weights", base,
        "--dataset", "synthetic:blobs:20",
        "--flops-target", "0.05", "--a-max", "0.1", "--max-steps", "1",
        "--episodes-warmup", "2", "--episodes-exploit", "0",
        "--fine-tune-epochs", "0", "--hidden-dim", "8",
        "--out", os.path.join(tmp, "fail"),
        expect=3,
    )


def test_finetune(tmp):
    pruned_model = os.path.join(tmp, "run", "pruned_model.json")
    pruned_weights = os.path.join(tmp, "run", "pruned_weights.bin")
    out = os.path.join(tmp, "ft")
    proc = run(
        "finetune",
        "--model", pruned_model,
        "--weights", pruned_weights,
        "--dataset", "synthetic:blobs:40",
        "--epochs", "0", "--seed", "5", "--out", out,
    )
    rep = json.loads(proc.stdout)
    assert rep["val_accuracy_before"] == rep["val_accuracy_after"]
    proc = run(
        "finetune",
        "--model", pruned_model,
        "--weights", pruned_weights,
        "--dataset", "synthetic:blobs:40",
        "--epochs", "4", "--lr", "0.003", "--seed", "5", "--out", out,
    )
    rep = json.loads(proc.stdout)
    assert rep["freeze_unpruned"] is True
    assert os.path.exists(os.path.join(out, "finetuned.bin"))


def test_make_data_deterministic(tmp):
    d1 = os.path.join(tmp, "d1")
    d2 = os.path.join(tmp, "d2")
    for d in (d1, d2):
        run("make-data", "--kind", "digits", "--n", "5", "--seed", "3",
            "--out", d)
    a = open(os.path.join(d1, "digits-images.idx3-ubyte"), "rb").read()
    b = open(os.path.join(d2, "digits-images.idx3-ubyte"), "rb").read()
    assert a == b and len(a) > 16


def test_config_file_precedence(tmp):
    cfgfile = os.path.join(tmp, "cfg.json")
    with open(cfgfile, "w") as f:
        json.dump(
            {
                "model": os.path.join(MODELS, "plain_toy.json"),
                "dataset": "synthetic:blobs:20",
                "epochs": 1,
                "seed": 11,
                "out": os.path.join(tmp, "cfg_out_file"),
            },
            f,
        )
    flag_out = os.path.join(tmp, "cfg_out_flag")
    run("train-baseline", "--config", cfgfile, "--out", flag_out)
    assert os.path.exists(os.path.join(flag_out, "baseline.bin"))
    assert not os.path.exists(os.path.join(tmp, "cfg_out_file"))


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tests = [
            test_analyze,
            test_analyze_bad_model,
            test_train_baseline_and_weights,
            test_train_baseline_bad_dataset,
            test_search_and_artifacts,
            test_search_loose_target_single_steps,
            test_search_missing_weights,
            test_search_unreachable_target,
            test_finetune,
            test_make_data_deterministic,
            test_config_file_precedence,
        ]
        for t in tests:
            t(tmp)
            print(f"ok   {t.__name__}")
        print(f"{len(tests)} CLI tests passed")


if __name__ == "__main__":
    sys.exit(main())
