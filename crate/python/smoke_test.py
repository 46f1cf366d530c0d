"""Quick end-to-end check of the Python bindings.

Build and install first:  maturin develop -m crates/py/Cargo.toml --release
"""

import math
import sys

import byzsim


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    msgs = [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]
    assert byzsim.aggregate(msgs, "mean") == [1 / 3, 0.0]
    assert byzsim.aggregate(msgs, "cm") == [0.0, 0.0]
    rfa = byzsim.aggregate(msgs, "rfa", iters=50)
    assert abs(rfa[0]) < 1e-6, rfa

    krum_in = [[0.0], [0.1], [0.2], [0.15], [10.0]]
    assert byzsim.aggregate(krum_in, "krum", q=1) in ([0.1], [0.15])

    clipped = byzsim.aggregate([[3.0, 4.0]], "cclip", center=[0.0, 0.0], clip_radius=1.0)
    assert close(math.hypot(*clipped), 1.0), clipped

    plan = byzsim.bucket_plan(7, 2, seed=3)
    assert sorted(i for b in plan for i in b) == list(range(7))
    assert max(len(b) for b in plan) == 2
    assert byzsim.choose_s(0.05, 0.25) == 5

    z = byzsim.alie_z(25, 5)
    assert 0.0 < z < 2.0, z
    good = [[1.0, -1.0], [3.0, 1.0]]
    assert byzsim.attack("bit_flip", good, 2) == [[-2.0, 0.0], [-2.0, 0.0]]
    assert byzsim.attack("mimic", good, 1, target=1) == [[3.0, 1.0]]
    alie = byzsim.attack("alie", good, 1, z=1.0)
    assert alie == [[1.0, -1.0]], alie

    rep = byzsim.lemma1(24, 2, trials=200, seed=1)
    assert abs(rep["variance_ratio"] - 0.5) < 0.1, rep
    cert = byzsim.certify("rfa", s=2, trials=200)
    assert cert["passed"], cert

    cfg = byzsim.Config.from_toml(
        """
name = "smoke"
seeds = [7]

[task]
kind = "quadratic"
dim = 5

[trainer]
steps = 50
step_size = 0.1
workers = 10
byzantine = 2
bucketing_s = 2

[trainer.aggregator]
kind = "rfa"
q = 2

[trainer.attack]
kind = "ipm"
"""
    )
    cfg = cfg.with_overrides(["attack.epsilon=0.5"])
    assert "epsilon = 0.5" in cfg.to_toml()
    out = cfg.run()
    assert len(out["metrics"]) == 50
    first, last = out["metrics"][0]["loss"], out["metrics"][-1]["loss"]
    assert last < first, (first, last)
    assert out == cfg.run(), "same seed must reproduce"
    assert "lowerbound" in byzsim.preset_names()

    try:
        byzsim.aggregate([], "mean")
    except ValueError:
        pass
    else:
        raise AssertionError("empty input must raise")

    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
