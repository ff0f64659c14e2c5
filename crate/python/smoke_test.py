"""Smoke test for the `agse` extension module.

Build and install first, for example:

    cd crates/python && maturin build --release -o dist && pip install dist/agse-*.whl
"""

import math
import tempfile
from pathlib import Path

import agse


def main():
    cfg = agse.TrainConfig(
        "base_width = 2\npatch = 16,16,16\nse_reduction = 2\n"
        "max_steps = 6\ndecay_step = 3\ncheckpoint_interval = 3\nlr = 1e-3\nlr_decayed = 3e-4\n"
    )
    assert cfg.patch == [16, 16, 16]
    assert cfg.lr_at(2) == 1e-3 and cfg.lr_at(3) == 3e-4
    assert agse.TrainConfig(cfg.to_text()).hash() == cfg.hash()

    net = agse.Network(cfg, seed=1)
    x = agse.Tensor.normal([1, 16, 16, 16, 4], seed=2)
    probs = net.forward(x)
    assert probs.shape == [1, 16, 16, 16, 4]
    values = probs.tolist()
    for v in range(0, len(values), 4):
        assert abs(sum(values[v : v + 4]) - 1.0) < 1e-12
    labels = agse.Network.predict_labels(probs)
    assert set(labels) <= {0, 1, 2, 4}

    onehot = [0.0] * len(values)
    for v in range(0, len(values), 4):
        onehot[v] = 1.0
    target = agse.Tensor([1, 16, 16, 16, 4], onehot)
    loss, grad = agse.dice_loss(probs, target)
    assert -1.0 <= loss <= 0.0 and grad.shape == probs.shape

    rows = agse.score(labels, labels, [16, 16, 16])
    assert [r["region"] for r in rows] == ["ET", "WT", "TC"]
    assert all(r["dice"] == 1.0 for r in rows)

    checks = agse.gradcheck("loss", 0)
    assert checks and all(passed for *_, passed in checks), checks

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cases = agse.phantom_gen(2, tmp / "data", shape=[16, 16, 16], seed=3)
        assert len(cases) == 2
        report = agse.train(cfg, tmp / "data", tmp / "run")
        section = report.split("step,lr,loss\n")[1].split("\n\n")[0]
        losses = [float(l.split(",")[2]) for l in section.splitlines()]
        assert len(losses) == 6 and all(math.isfinite(v) for v in losses)
        preds = agse.predict(tmp / "run", tmp / "data", tmp / "pred")
        assert len(preds) == 2
        table = agse.evaluate(tmp / "pred", tmp / "data", tmp / "eval")
        assert table.startswith("case_id,region,dice")
        reloaded = agse.Network.from_checkpoint(tmp / "run")
        assert reloaded.param_count() == net.param_count()
        x.save(tmp / "x.npy")
        assert agse.Tensor.load(tmp / "x.npy").tolist() == x.tolist()

    try:
        agse.TrainConfig("lr = -1")
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
