import numpy as np
import pytest

from models import TrainConfig
from services.optimizers import SGD, AdamW, build_optimizer


class TestSGD:

    def test_update(self):
        params = {"w": np.array([1.0, 2.0])}
        SGD(0.5).step(params, {"w": np.array([2.0, -2.0])})
        np.testing.assert_array_equal(params["w"], [0.0, 3.0])

    def test_updates_in_place(self):
        w = np.ones(3)
        SGD(0.1).step({"w": w}, {"w": np.ones(3)})
        np.testing.assert_allclose(w, 0.9)


class TestAdamW:

    def test_first_step_is_sign_times_lr(self):
        params = {"w": np.array([1.0, 1.0])}
        AdamW(0.01).step(params, {"w": np.array([3.0, -0.5])})
        np.testing.assert_allclose(params["w"], [0.99, 1.01], atol=1e-8)

    def test_decoupled_weight_decay(self):
        params = {"w": np.array([2.0])}
        AdamW(0.1, weight_decay=0.5).step(params, {"w": np.array([0.0])})
        # zero gradient: only the decay moves the weight
        np.testing.assert_allclose(params["w"], [2.0 - 0.1 * 0.5 * 2.0])

    def test_minimises_quadratic(self):
        params = {"w": np.array([5.0, -3.0])}
        opt = AdamW(0.1)
        for _ in range(1000):
            opt.step(params, {"w": 2.0 * params["w"]})
        assert np.all(np.abs(params["w"]) < 0.1)


@pytest.mark.parametrize("name,cls", [("sgd", SGD), ("adamw", AdamW)])
def test_build_optimizer(name, cls):
    optimizer = build_optimizer(TrainConfig(optimizer=name, learning_rate=0.2))
    assert isinstance(optimizer, cls)
    assert optimizer.learning_rate == 0.2
