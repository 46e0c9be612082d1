"""Smoke test for the Python bindings.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import math
import os
import tempfile

import contsurv


def main():
    data = contsurv.Dataset.simulate_competing(400, seed=7)
    assert len(data) == 400 and data.risks == 2
    assert len(data.feature_names) == 20

    cfg = contsurv.TrainConfig(max_epochs=3, m=5, hidden=[16, 16], embed_dim=4, batch_size=64)
    assert cfg.to_dict()["m"] == 5
    try:
        contsurv.TrainConfig(epochs=3)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    model = contsurv.fit(data, cfg)
    assert model.risks == 2
    assert 1 <= len(model.training_log) <= 3

    mesh = [0.0, 0.5, 1.0, 2.0]
    curves = model.predict(data.subset([0, 1, 2]), mesh)
    for c in curves:
        assert c["survival"][0] == 1.0
        for j in range(len(mesh)):
            total = c["survival"][j] + sum(f[j] for f in c["incidence"])
            assert math.isclose(total, 1.0, abs_tol=1e-9)

    h = model.hazards(data.subset([0, 1]), [0.5, 1.0])
    assert len(h) == 2 and all(v > 0 for row in h for v in row)

    entries = model.evaluate(data)
    assert len(entries) == 12
    assert all(e["ctd"] is None or 0.0 <= e["ctd"] <= 1.0 for e in entries)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.json")
        model.save(path)
        again = contsurv.Model.load(path)
        assert again.predict(data.subset([0]), mesh) == curves[:1]

        csv, schema = os.path.join(d, "d.csv"), os.path.join(d, "d.schema.toml")
        data.save(csv, schema)
        assert contsurv.Dataset.load(csv, schema).times == data.times

    report = contsurv.cross_validate(data, cfg, max_folds=1)
    assert len(report["folds"]) == 1
    assert len(report["summary"]) > 0

    t, s = contsurv.kaplan_meier([1.0, 2.0, 3.0], [True, False, True])
    assert s[-1] == 0.0
    assert contsurv.ctd([0.9, 0.5, 0.1], [1.0, 2.0, 3.0], [1, 1, 1], 1, 3.0) == 1.0

    toy = contsurv.Dataset.from_arrays([[0.0], [1.0], [2.0]], [1.0, 2.0, 3.0], [1, 0, 1])
    assert toy.risks == 1

    print("python smoke test passed")


if __name__ == "__main__":
    main()
