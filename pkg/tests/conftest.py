import numpy as np
import pytest

from micrlb.deployment import Deployment, RadioConfig, ScenarioConfig, anchor_positions, build_measurement_graph

# fixed two-thing / three-anchor scene under the default channel and coils
REFERENCE_THINGS = np.array([[1.2, -0.7, 1800.4], [-0.9, 1.6, 1799.3]])


def reference_scene(link_mode="anchor_only"):
    cfg = ScenarioConfig(thing_count=2, link_mode=link_mode)
    dep = Deployment(anchor_positions(cfg), REFERENCE_THINGS, seed=0)
    return dep, build_measurement_graph(dep, cfg, RadioConfig())


# six anchors around a small volume; no three collinear with its centre
EFFICIENCY_ANCHORS = (
    (2.5, 0.0, 1800.0), (-2.5, 0.0, 1800.0), (0.0, 2.5, 1800.0), (0.0, -2.5, 1800.0),
    (0.3, 0.2, 1802.5), (-0.2, -0.3, 1797.5),
)


def efficiency_config(thing_count=4):
    return ScenarioConfig(width=2, length=2, thickness=1, thing_count=thing_count,
                          anchor_placement="explicit", anchors=EFFICIENCY_ANCHORS)


@pytest.fixture
def reference():
    return reference_scene()


@pytest.fixture
def reference_coop():
    return reference_scene("cooperative")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
