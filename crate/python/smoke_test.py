"""Smoke test for the Python bindings. Run after building the extension:

    pip install --no-build-isolation -e crates/py
    python python/smoke_test.py
"""

import json
import math
import os
import tempfile

import async_credit_py as ac

QUICK = [
    ("env.name", "matrix"),
    ("train.total_timesteps", "200"),
    ("train.test_interval", "100"),
    ("train.test_episodes", "2"),
    ("train.batch_size", "4"),
    ("train.agent_hidden", "8"),
    ("mixer.hypernet_hidden", "8"),
]


def test_mixers():
    assert ac.additive(["deciding", "deciding", "masked", "masked"], [2.0, 3.0, 0.0, 0.0], 0.0, [1.0] * 4) == 5.0
    q = ac.mvd(
        ["deciding", "executing", "masked", "executing"],
        [2.0, 9.0, 0.0, 3.0],
        0.0,
        [0.0] * 4,
        [[0.0, 1.0], [0.0, 0.0]],
    )
    assert q == 6.0


def test_fits():
    add, mul = ac.fit_residuals([[1.0, 2.0], [2.0, 4.0]])
    assert abs(add - 0.25) < 1e-12
    assert mul < 1e-10


def test_tracker():
    t = ac.QminTracker()
    assert t.update([1.0, 2.0]) == 0.0
    assert t.update([-2.0]) == 2.0
    assert t.offset == 2.0


def test_trainer_roundtrip():
    tr = ac.Trainer(QUICK)
    assert tr.n_agents == 2
    rows = tr.run()
    assert rows[0].startswith("0,0,")
    assert tr.t_env >= 200
    mean, std, _ = tr.evaluate(3)
    assert std == 0.0 and math.isfinite(mean)
    trace = tr.trace(0)
    assert len(trace) == 2 * 4
    assert all(len(r[4]) == 2 for r in trace)
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "m.ckpt")
        tr.save(p)
        back = ac.Trainer.load(p)
        assert json.loads(back.config_json()) == json.loads(tr.config_json())
        assert back.evaluate(3) == tr.evaluate(3)
        obs = [[1.0, 0.0, 0.0, 2.0], [1.0, 0.0, 0.0, 1.0]]
        assert back.initial_utilities(obs) == tr.initial_utilities(obs)


def test_bad_config():
    try:
        ac.Trainer([("train.batchsize", "3")])
    except ValueError as e:
        assert "train.batchsize" in str(e)
    else:
        raise AssertionError("unknown key accepted")


def test_verify_with_fault():
    ok, groups = ac.verify(inject_fault="proxy_decouple", instances=2)
    assert not ok
    failed = [g[0] for g in groups if not g[1]]
    assert failed == ["vsp_pair_coherence"], failed


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print("ok", name)
