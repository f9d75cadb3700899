"""Smoke test for the compiled extension: python python/smoke_test.py"""

import json
import math

import spikenas


def main():
    assert spikenas.search_space_size("5O") == 15625
    assert spikenas.search_space_size("5O-Zeroize") == 4096
    assert spikenas.search_space_size("2O") == 64

    edges = spikenas.decode_cell(7, "5O")
    assert edges[:2] == ["Conv1x1", "SkipCon"], edges
    assert spikenas.encode_cell(edges, "5O") == 7

    assert spikenas.memory_footprint(448, 8) == (448, 3584, 448)
    skip_only = spikenas.count_params("2O", [0])
    assert skip_only == 27 * 64 + 64 + 64 * 10 + 10, skip_only

    v, s = spikenas.lif_step([0.0, 0.0], [2.0, 1.0])
    assert s == [1, 0] and v[0] == 0.0 and math.isclose(v[1], 0.5)

    k = spikenas.hamming_kernel([[False, True, False, True], [False, True, True, False]])
    assert k == [[4.0, 2.0], [2.0, 4.0]], k
    score = spikenas.network_score([[[False, True, False, True], [False, True, True, False]]])
    assert math.isclose(score, math.log(12.0))
    assert spikenas.network_score([[[True, False]] * 3]) is None

    sc = spikenas.Scenario("2C3O_M")
    assert (sc.cells, sc.ops, sc.constrained, sc.opset) == (2, 3, True, "3O")
    assert sc.budget("cifar100") == 2_000_000

    small = {"stem_channels": 4, "resolution": 8, "timesteps": 2, "batch_size": 4,
             "synthetic_records": 32, "seed": 42, "rate_coding": True}
    report = json.loads(spikenas.search("1C2O_M", "synthetic", small))
    assert report["evaluations_total"] + report["evaluations_skipped"] == 64
    assert report["n_param"] <= report["budget"]["max_params"]
    again = json.loads(spikenas.search("1C2O_M", "synthetic", dict(small, jobs=2)))
    assert again["best_arch"] == report["best_arch"]

    best = report["best_arch"]["cell_indices"]
    assert spikenas.score_architecture("2O", best, "synthetic", small) == report["best_score"]

    try:
        spikenas.search("1C2O_M", "synthetic", dict(small, budget=10))
    except spikenas.NoFeasibleArchitecture:
        pass
    else:
        raise AssertionError("expected NoFeasibleArchitecture")

    try:
        spikenas.search("1C2O", "cifar10", dict(small, data_dir="/nonexistent"))
    except spikenas.DatasetUnavailable:
        pass
    else:
        raise AssertionError("expected DatasetUnavailable")

    print("spikenas", spikenas.__version__, "smoke test ok")


if __name__ == "__main__":
    main()
