"""Smoke test for the trimatch Python extension.

Run with ``python python/smoke_test.py`` or ``pytest python/smoke_test.py``
after installing the extension (``pip install ./crates/py``).
"""

import math
import os
import tempfile

import trimatch


def test_scalar_functions():
    assert trimatch.k_for_interval(30.0) == 6
    assert trimatch.k_for_interval(120.0) == 18
    assert trimatch.k_for_interval(1e6) == 200
    assert math.isclose(trimatch.bearing_weight(90.0, 90.0), 1.0)
    assert math.isclose(trimatch.bearing_weight(0.0, 180.0), 0.0, abs_tol=1e-12)
    assert 0.0 < trimatch.speed_weight(10.0, 10.0, 300.0, 30.0) <= 1.0
    s = trimatch.final_score((0.5, 0.2, 0.1), (0.2, 0.5, 0.3))
    assert math.isclose(s, 0.5 * 0.2 + 0.2 * 0.5 + 0.1 * 0.3)


def test_fleet_round_trip():
    net, trajectories, truth = trimatch.synthetic_fleet(rows=5, cols=5, vehicles=8, days=1, seed=3)
    assert net.link_count > 0 and net.edge_count >= net.link_count
    assert len(trajectories) == len(truth) > 0

    sparse = [t.downsample(30.0) for t in trajectories]
    assert all(len(s) <= len(t) for s, t in zip(sparse, trajectories))

    matcher = trimatch.Matcher(net, config={"scores": "P", "radius": 150.0})
    results = matcher.match_trajectories(sparse)
    assert [r.trajectory_id for r in results] == [t.id for t in sparse]
    for r, t in zip(results, sparse):
        assert len(r.edges) == len(t)
        assert r.matched_count <= len(t)
    assert matcher.history_size == len(results)

    report = trimatch.evaluate(results, truth)
    assert 0.0 <= report["accuracy"] <= 100.0
    assert 0.0 <= report["recall"] <= 100.0

    self_report = trimatch.evaluate(truth, truth)
    assert self_report["accuracy"] == 100.0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "matches.csv")
        trimatch.write_matches(net, results, path)
        again = trimatch.read_matches(net, path)
        assert [r.edges for r in again] == [r.edges for r in results]


def test_bad_input_raises():
    net, _, _ = trimatch.synthetic_fleet(rows=4, cols=4, vehicles=1)
    try:
        trimatch.Matcher(net, config={"no_such_key": 1})
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config key accepted")
    try:
        trimatch.RoadNetwork.from_csv("/nonexistent/nodes.csv", "/nonexistent/links.csv")
    except (IOError, ValueError):
        pass
    else:
        raise AssertionError("missing files accepted")


def test_fit_weights():
    samples = []
    for i in range(200):
        p, c, a = (i % 7) / 7, (i % 5) / 5, (i % 3) / 3
        score = 0.2 * p + 0.5 * c + 0.3 * a
        samples.append((p, c, a, 1.0 if score > 0.45 else 0.0))
    fit = trimatch.fit_weights(samples)
    assert math.isclose(sum(fit["weights"]), 1.0, abs_tol=1e-9)
    assert all(w >= 0 for w in fit["weights"])


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok  {name}")
    print("python smoke test passed")
