"""Python smoke tests for the gprune extension module."""

import json
import os
import sys
import tempfile

import gprune

MODELS = os.environ.get("GPRUNE_MODELS_DIR", "models")

MINIMAL = json.dumps(
    {
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
)


def test_parse_and_flops():
    m = gprune.parse_model(MINIMAL)
    assert m.num_layers == 1
    rep = gprune.count_flops(m)
    assert rep["total"] == 55296
    assert rep["per_layer"]["c"] == 55296


def test_policy_roundtrip():
    m = gprune.load_model(os.path.join(MODELS, "resnet_toy.json"))
    slots = gprune.action_slots(m)
    assert len(slots) == 4
    ratios = gprune.strategy_ratios(m, [0.3, 0.3, 0.3, 0.3])
    pruned = gprune.apply_policy(m, ratios)
    assert pruned.out_channels("stem") == 21
    before = gprune.count_flops(m)["total"]
    after = gprune.count_flops(pruned)["total"]
    assert after < before
    # share group stayed aligned
    groups = pruned.share_groups()
    assert any(set(g) == {"stem", "b1c2", "b2c2", "b3c2"} for g in groups)


def test_policy_errors():
    m = gprune.load_model(os.path.join(MODELS, "resnet_toy.json"))
    try:
        gprune.apply_policy(m, {"fc": 0.5})
    except gprune.PolicyError:
        pass
    else:
        raise AssertionError("expected PolicyError for non-prunable layer")


def test_lowering():
    m = gprune.load_model(os.path.join(MODELS, "resnet_toy.json"))
    doc = json.loads(gprune.lower_to_json(m))
    assert doc["top"]["num_nodes"] > 0
    labels = [mo["label"] for mo in doc["motifs"]]
    assert labels.count("residual") == 1  # three blocks, one motif


def test_fit_and_search():
    data = gprune.make_blobs(24, seed=3)
    assert data.num_classes == 2
    m = gprune.load_model(os.path.join(MODELS, "plain_toy.json"))
    gprune.init_weights(m, seed=4)
    trained, _ = gprune.fit(m, data, epochs=15, batch_size=16, lr=3e-3, seed=5)
    acc = gprune.evaluate(trained, data, "train")
    assert acc >= 0.9, f"blobs should be learnable, got {acc}"

    with tempfile.TemporaryDirectory() as tmp:
        weights = os.path.join(tmp, "baseline.bin")
        gprune.save_weights(trained, weights)
        result = gprune.search(
            {
                "model": os.path.join(MODELS, "plain_toy.json"),
                "weights": weights,
                "dataset": "synthetic:blobs:24",
                "out": os.path.join(tmp, "run"),
                "flops_target": 0.6,
                "episodes_warmup": 4,
                "episodes_exploit": 4,
                "fine_tune_epochs": 2,
                "hidden_dim": 8,
                "seed": 6,
            }
        )
        assert result["found"]
        assert result["best_flops_ratio"] <= 0.6
        for name in ("history.csv", "episodes.jsonl", "pruned_model.json",
                     "policy.csv"):
            assert os.path.exists(os.path.join(tmp, "run", name)), name


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for t in tests:
        t()
        print(f"ok   {t.__name__}")
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    sys.exit(main())
