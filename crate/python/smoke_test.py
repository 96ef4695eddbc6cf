"""Quick end-to-end check of the Python bindings."""

import math
import random

import ipwsgd

BETA0 = [-2.8226, 0.2, 0.4, -3.1735, 0.8, 0.3]


def check_primitives():
    pi = ipwsgd.propensity("logistic", BETA0, [1.0, 0.5, 0.5], 0.2)
    assert pi in (0.1, 0.9), pi
    assert abs(ipwsgd.learning_rate(16, alpha=0.5, gamma=0.75) - 0.0625) < 1e-12
    assert ipwsgd.exploration_rate(10) == 1.0
    assert ipwsgd.exploration_rate(51) == 0.2
    mu = ipwsgd.mean_reward("linear", 1, [1.0, 0.0, 0.0], BETA0)
    assert abs(mu + 3.1735) < 1e-12
    row = ipwsgd.wald(1.0, 0.5)
    assert abs(row["ci_lo"] - (1.0 - 1.959963984540054 * 0.5)) < 1e-9
    v, se = ipwsgd.oracle_value("logistic", BETA0, draws=100_000, seed=3)
    assert 0.0 < v < 1.0 and se < 1e-3


def check_learner():
    rng = random.Random(1)
    learner = ipwsgd.Learner("logistic", 3, seed=7)
    held = []
    for _ in range(5000):
        x = [1.0, rng.random(), rng.random()]
        step, a, _ = learner.decide(x)
        b = BETA0[3 * a : 3 * a + 3]
        mu = 1.0 / (1.0 + math.exp(-sum(xi * bi for xi, bi in zip(x, b))))
        held.append((step, float(rng.random() < mu)))
        if len(held) > 3:
            learner.update(*held.pop(0))
    assert learner.t == 4997 and learner.pending == 3
    report = learner.report()
    names = [r["name"] for r in report["rows"]]
    assert names[-1] == "V_opt" and len(names) == 7
    try:
        learner.update(held[-1][0], 1.0)
    except RuntimeError as e:
        assert "protocol" in str(e)
    else:
        raise AssertionError("out-of-order reward accepted")


def check_drivers():
    run = ipwsgd.run(model="linear", horizon=2000, checkpoints=[1000])
    assert [r["t"] for r in run["reports"]] == [1000, 2000]
    assert run["summary"]["steps"] == 2000
    mc = ipwsgd.monte_carlo(horizon=500, reps=4, oracle_draws=2000)
    assert mc["replications"] == 4 and len(mc["rows"]) == 7
    tune = ipwsgd.tune_alpha(horizon=500, reps=2, alpha_grid=[0.5, 1.0], loss_bin=100)
    assert tune["best_alpha"] in (0.5, 1.0)
    try:
        ipwsgd.run(reps=0)
    except ValueError as e:
        assert "reps" in str(e)
    else:
        raise AssertionError("invalid reps accepted")


if __name__ == "__main__":
    check_primitives()
    check_learner()
    check_drivers()
    print("smoke test ok")
