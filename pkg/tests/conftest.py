import numpy as np
import pytest

from quantflow.flow import FlowModel


def randomize_model(model: FlowModel, rng: np.random.Generator, scale: float = 0.4) -> FlowModel:
    """Random non-identity model with sane conditioning.

    Weights are fan-in scaled (as plausible trained weights are); mixing
    matrices stay orthogonal.
    """
    for net_a, net_b, wmix in model._blocks:
        for net in (net_a, net_b):
            for w, b in zip(net.weights, net.biases):
                w[:] = rng.normal(0.0, scale / np.sqrt(w.shape[0]), size=w.shape)
                b[:] = rng.normal(0.0, 0.1 * scale, size=b.shape)
        q, r = np.linalg.qr(rng.normal(size=wmix.shape))
        wmix[:] = q * np.sign(np.diag(r))
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
