import os

import numpy as np
import pytest

from qnnbench import datasets, model, trainer
from qnnbench.numerics import Rng

REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))


@pytest.fixture(scope="session")
def data_dir():
    return os.environ.get("QNN_DATA_DIR", os.path.join(REPO_ROOT, "data"))


@pytest.fixture(scope="session")
def mnist(data_dir):
    return datasets.load_dataset("mnist", data_dir)


def toy_net(a_bits=2, w_bits=2, in_features=4, hidden=(3,), out_classes=2, seed=0, dropout_p=0.0):
    return model.build_mlp(
        a_bits,
        w_bits,
        hidden=hidden,
        in_features=in_features,
        out_classes=out_classes,
        dropout_p=dropout_p,
        seed=seed,
    )


def train_toy_steps(net, n_steps=25, batch=16, seed=1, lr=0.05):
    """A few raw Adam steps on random data; enough to move BN stats around."""
    rng = Rng(seed)
    state = trainer.adam_init(net.params)
    in_f = next(l for l in net.layers if l.kind == model.FC).in_features
    n_cls = [l for l in net.layers if l.kind == model.FC][-1].out_features
    for _ in range(n_steps):
        x = rng.uniform_like(0.0, 1.0, (batch, in_f))
        y = np.array([rng.randint_below(n_cls) for _ in range(batch)], dtype=np.int64)
        logits, caches, _ = model.run_forward(net, x, mode="train", rng=rng, want_cache=True)
        loss, grad = trainer.cross_entropy(logits, y)
        grads = model.run_backward(net, caches, grad)
        trainer.adam_step(net.params, grads, state, lr)
    return net
