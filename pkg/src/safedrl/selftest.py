"""Fast invariant checks shipped with the package (run by ``safedrl selftest``)."""
from __future__ import annotations

import itertools
import math
import os
import tempfile

import numpy as np

from .agents.core import cvar_value
from .agents.rule_based import RuleBasedPolicy
from .evaluation import EpisodeLog, StepLog, j_interference, run_episode
from .kinematics import advance, stop_distance
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.deepsets import SetBatch, StateFeatures
from .nn.network import ValueNetwork
from .safety import pss
from .scenario import sample_scenario
from .traffic import idm_acceleration


def _check_kinematics():
    s, v, a = 0.0, 5.0, 0.0
    for _ in range(6):
        s, v, a = advance(s, v, a, 1.5, 0.05)
    assert abs(v - 5.0675) < 1e-12
    assert abs(stop_distance(10.0, 0.0, 1e9, 10.0) - 5.0) < 1e-3


def _check_idm():
    assert idm_acceleration(0.0, 10.0) == 1.0
    assert idm_acceleration(10.0, 10.0) == 0.0


def _check_pss():
    for bits in itertools.product([0.4, 0.6], repeat=4):
        stops, leaves = bits[:2], bits[2:]
        assert pss(stops, leaves) == (all(x > 0.5 for x in stops) or all(x > 0.5 for x in leaves))


def _check_cvar():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = rng.normal(size=32)
        vals = [cvar_value(q, a) for a in np.linspace(0.05, 1.0, 20)]
        assert all(x <= y for x, y in zip(vals, vals[1:]))
        assert cvar_value(q, 1.0) == math.fsum(q) / len(q)


def _check_permutation():
    rng = np.random.default_rng(1)
    net = ValueNetwork("iqn", width=16, embed_order=8, seed=2)
    real = rng.normal(size=(5, 15))
    ghost = rng.normal(size=(3, 15))
    ego = rng.normal(size=15)
    taus = np.array([[0.2, 0.7]])

    def out(r, g):
        order_r = np.lexsort(r.T[::-1])
        order_g = np.lexsort(g.T[::-1])
        return net.quantiles(SetBatch.from_features([StateFeatures(ego, r[order_r], g[order_g])]), taus)

    ref = out(real, ghost)
    for _ in range(10):
        assert np.array_equal(out(real[rng.permutation(5)], ghost[rng.permutation(3)]), ref)


def _check_checkpoint():
    net = ValueNetwork("dqn", width=8, seed=3)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "ck.npz")
        save_checkpoint(path, net.params(), {"a": 1})
        params, meta = load_checkpoint(path)
    assert meta == {"a": 1}
    assert all(np.array_equal(params[k], v) for k, v in net.params().items())


def _check_j_interference():
    def log(jerks):
        return EpisodeLog(0, 0, "x", None, [StepLog(0.0, 0.0, j, True, j) for j in jerks])

    assert j_interference([log([5.0]), log([-5.0])]) == 25.0
    assert j_interference([log([3.0, 4.0])]) == 25.0


def _check_shield():
    policy = RuleBasedPolicy()
    for i in range(10):
        spec = sample_scenario(1000 + i)
        result = run_episode(policy, spec, seed=i)
        assert not result.collision, f"collision in scenario {i}"


CHECKS = {
    "kinematics": _check_kinematics,
    "idm": _check_idm,
    "pss_truth_table": _check_pss,
    "cvar": _check_cvar,
    "deepsets_permutation": _check_permutation,
    "checkpoint_roundtrip": _check_checkpoint,
    "j_interference": _check_j_interference,
    "shield_no_collision": _check_shield,
}


def run_selftest():
    """Run every check; returns a list of (name, passed, message)."""
    results = []
    for name, fn in CHECKS.items():
        try:
            fn()
            results.append((name, True, ""))
        except AssertionError as exc:
            results.append((name, False, str(exc) or "assertion failed"))
    return results
