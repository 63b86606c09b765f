"""Smoke test for the gapbench extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import json
import math

import gapbench


def main():
    median, mean, std, p99 = gapbench.latency_stats([0.003, 0.001, 0.002, 0.004])
    assert median == 0.002 and p99 == 0.004
    assert math.isclose(mean, 0.0025) and std > 0

    assert gapbench.pareto_front([(0.01, 100.0), (0.02, 50.0), (0.03, 300.0)]) == [0, 2]
    assert gapbench.round_half_up(gapbench.speedup(8837, 670), 2) == 13.19
    assert math.isclose(gapbench.performance_per_watt(1000.0, 50.0), 20.0)
    try:
        gapbench.performance_per_watt(1000.0, 0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("zero power accepted")

    assert gapbench.golden_check() == (12, 12)
    assert len(json.loads(gapbench.golden_table())["rows"]) == 20

    t4 = gapbench.sim_latency("t4.sim", "resnet50", "FP16", 32)
    l4 = gapbench.sim_latency("l4.sim", "resnet50", "FP16", 32)
    assert 0 < l4 < t4
    assert gapbench.sim_memory("t4.sim", "resnet50", "INT8", 64) > 0

    plan = json.loads(gapbench.resolve_plan())
    plan.update(models=["resnet18"], batch_sizes=[1, 16], sweeps=1, repeats=1, timed_iters=20)
    plan["devices"] = ["t4.sim", "l4.sim"]
    report = json.loads(gapbench.run_sweep(json.dumps(plan)))
    assert len(report["summaries"]) == 2 * 3 * 2
    print("smoke test ok:", len(report["summaries"]), "summaries")


if __name__ == "__main__":
    main()
