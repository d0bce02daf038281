import numpy as np
import pytest

from momentalign import autodiff as ad
from momentalign.gradcheck import (MICRO_PYRAMID, TOLERANCE, KinkMonitor, check_names,
                                   micro_config, run_suite)


def test_every_check_passes_for_one_seed():
    errors = run_suite(seed=1)
    assert list(errors) == check_names()
    assert max(errors.values()) <= TOLERANCE


def test_subset_is_independent_of_selection():
    full = run_suite(seed=2, only=["tanh", "igan_cell"])
    single = run_suite(seed=2, only=["igan_cell"])
    assert single["igan_cell"] == full["igan_cell"]


def test_unknown_check_rejected():
    with pytest.raises(KeyError):
        run_suite(only=["nope"])


def test_micro_instance_shape():
    config = micro_config()
    assert config.pyramid is MICRO_PYRAMID and config.pyramid.clips == 4 and config.dim == 8
    assert config.cells == 3


def test_monitor_flags_a_kink_crossing():
    x = ad.Tensor(np.array([1e-5, 0.5, -0.7]))
    monitor = KinkMonitor()
    ad.finite_difference_check(lambda t: ad.sum(ad.relu(t)), x, h=1e-4, observe=monitor)
    assert monitor.clearance() < 1.0


def test_monitor_passes_smooth_instance():
    x = ad.Tensor(np.array([0.3, 0.5, -0.7]))
    monitor = KinkMonitor()
    ad.finite_difference_check(lambda t: ad.sum(ad.relu(t)), x, h=1e-4, observe=monitor)
    assert monitor.clearance() > 1.0
