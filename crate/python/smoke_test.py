"""End-to-end check of the Python bindings on a small synthetic dataset.

Build first:  pip install --no-build-isolation ./crates/python
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import cstgnn_py as cs

CONFIG = """
seeds = [0]
t_obs = 5
t_pre = 3
max_epochs_per_horizon = 3
patience = 2
hidden = 8
embed_dim = 4
tcn_dim = 4
"""


def main() -> int:
    ds = cs.Dataset.synthetic(regions=3, days=60, seed=4)
    assert len(ds) == 60 and ds.regions == ["R00", "R01", "R02"], ds
    for day in ds.sir():
        for (s, i, r), n in zip(day, ds.population):
            assert abs(s + i + r - n) <= 1e-9 * n

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        ds.save(root / "ds.bin")
        again = cs.Dataset.load(root / "ds.bin")
        assert again.sir() == ds.sir()

        model, report = cs.train(ds, CONFIG)
        report = json.loads(report)
        print("trained:", {m["metric"]: round(m["mean"], 3) for m in report["summary"]})

        model.save(root / "model.ckpt")
        reloaded = cs.Model.load(root / "model.ckpt")
        scores = reloaded.evaluate(ds)
        assert scores == model.evaluate(ds)
        assert all(math.isfinite(v) for v in scores.values()), scores

        persistence = cs.baseline(ds, "persistence", t_pre=3)
        print("model MAE %.3f, persistence MAE %.3f" % (scores["mae"], persistence["mae"]))

    rows = model.forecast(ds, "2020-02-20")
    assert len(rows) == 9 and rows[0][0] == "2020-02-21", rows[:2]

    days = model.rates(ds, ["2020-02-20"])
    day = days[0]
    assert len(day["contact"]) == 3
    assert all(0.0 < c < 1.0 for row in day["contact"] for c in row)
    assert abs(cs.r0(day["beta"], day["gamma"], day["contact"]) - day["r0"]) < 1e-12
    assert abs(cs.r0([0.3], [0.1], [[1.0]]) - 3.0) < 1e-12

    try:
        model.forecast(ds, "1999-01-01")
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range date accepted")
    try:
        cs.Dataset.load(Path("/nonexistent/ds.bin"))
    except cs.CstgnnError:
        pass
    else:
        raise AssertionError("missing file accepted")

    print("smoke test ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
