import importlib.resources as ir

import numpy as np
import pytest

from smp.morphology import graph_from_dict, load_morphology

DATA = ir.files("smp") / "data"


def bundled(name):
    return load_morphology(str(DATA / f"{name}.json"))


def chain(n, name="chain", gear=10.0):
    """Root torso with an (n-1)-link chain hanging below it."""
    limbs = [{"name": "l0", "parent": None, "length": 0.4, "mass": 2.0, "is_actuated": False,
              "joint_low": -1.0, "joint_high": 1.0, "gear": 1.0, "child_order_index": 0}]
    for i in range(1, n):
        limbs.append({"name": f"l{i}", "parent": f"l{i-1}", "length": 0.3, "mass": 1.0,
                      "is_actuated": True, "joint_low": -1.0, "joint_high": 1.0, "gear": gear,
                      "child_order_index": 0})
    return graph_from_dict({"name": name, "root": "l0", "limbs": limbs})


def random_tree(rng, n, name="tree", max_children=None):
    """Random rooted tree on n nodes; node i>0 attaches to a random earlier node."""
    limbs = [{"name": "n0", "parent": None, "length": 0.4, "mass": 2.0, "is_actuated": False,
              "joint_low": -1.0, "joint_high": 1.0, "gear": 1.0, "child_order_index": 0}]
    counts = {0: 0}
    for i in range(1, n):
        options = [j for j in range(i) if max_children is None or counts[j] < max_children]
        p = int(rng.choice(options))
        counts[p] += 1
        counts[i] = 0
        limbs.append({"name": f"n{i}", "parent": f"n{p}", "length": 0.3, "mass": 1.0,
                      "is_actuated": True, "joint_low": -1.0, "joint_high": 1.0, "gear": 10.0,
                      "child_order_index": counts[p]})
    return graph_from_dict({"name": name, "root": "n0", "limbs": limbs})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
