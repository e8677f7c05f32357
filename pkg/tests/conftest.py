import numpy as np
import pytest
from hypothesis import settings

from frustum3d.data import SyntheticConfig, generate_dataset
from frustum3d.networks import NetConfig, build_params
from frustum3d.pipeline import templates_from_samples
from frustum3d.pointops import SAConfig

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def tiny_net() -> NetConfig:
    """Narrow widths so network tests run in milliseconds."""
    return NetConfig(sa1=SAConfig(16, 0.4, 8, [8, 8]), sa2=SAConfig(8, 0.8, 8, [16]),
                     pointsift_widths=[8], global_sa=[16], fp_widths=[16, 8, 8], seg_head=[8, 2],
                     tnet_sa=[8, 16], tnet_fc=[8, 3], senet_convs=[8, 16, 16], senet_lift=16,
                     senet_fc=[16], num_size=2, num_heading=4)


@pytest.fixture
def net():
    return tiny_net()


@pytest.fixture
def params(net):
    return build_params(net, seed=3)


@pytest.fixture
def samples():
    return generate_dataset(SyntheticConfig(num_points=48), 6, base_seed=11)


@pytest.fixture
def templates(samples, net):
    return templates_from_samples(samples, net)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import acceptance_report

    if acceptance_report.LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(acceptance_report.LINES):
            terminalreporter.write_line(acceptance_report.LINES[n])
