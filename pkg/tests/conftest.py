from types import SimpleNamespace

import numpy as np
import pytest

from uniunc import EuMethod, ModelSpec, TrainConfig, init_model, toy_regression, train, two_moons
from uniunc.rng import RngStream, derive_seed

ALL_EU = (
    EuMethod.none(),
    EuMethod.mc_dropout(0.2),
    EuMethod.mc_dropconnect(0.05),
    EuMethod.ensemble(3),
    EuMethod.flipout(),
)


def make_spec(eu=None, widths=(2, 8, 8, 8, 2), task="classification"):
    return ModelSpec(layer_widths=widths, task=task, eu=eu or EuMethod.none())


def make_model(eu=None, widths=(2, 8, 8, 8, 2), task="classification", seed=0):
    spec = make_spec(eu, widths, task)
    return spec, init_model(spec, RngStream(seed).child("init"))


@pytest.fixture
def stream():
    return RngStream(1234)


@pytest.fixture(params=[m.kind for m in ALL_EU])
def any_eu(request):
    return next(m for m in ALL_EU if m.kind == request.param)


EU_BY_KIND = {
    "none": EuMethod.none(),
    "mc-dropout": EuMethod.mc_dropout(0.2),
    "mc-dropconnect": EuMethod.mc_dropconnect(0.05),
    "ensemble": EuMethod.ensemble(5),
    "flipout": EuMethod.flipout(),
}

MOONS_SEED = 2024


@pytest.fixture(scope="session")
def moons_models():
    """Desk-scale two-moons models for every EU method.

    Trained once per session; shared by the training, trend and acceptance
    tests.  Training noise is 0.1 and the architecture is the default
    4-dense-layer 64-wide ReLU MLP.
    """
    train_ds = two_moons(1000, 0.1, seed=derive_seed(MOONS_SEED, "train-data"))
    test_ds = two_moons(500, 0.1, seed=derive_seed(MOONS_SEED, "test-data"))
    models = {}
    for kind, eu in EU_BY_KIND.items():
        spec = ModelSpec(layer_widths=(2, 64, 64, 64, 2), task="classification", eu=eu)
        cfg = TrainConfig(epochs=200, seed=derive_seed(MOONS_SEED, "train", kind))
        models[kind] = (spec, train(spec, train_ds, cfg))
    return SimpleNamespace(train_ds=train_ds, test_ds=test_ds, models=models)


@pytest.fixture(scope="session")
def regression_models():
    """Desk-scale toy-regression models for the OOD growth checks."""
    train_ds, ood_ds = toy_regression(1000, 200, seed=derive_seed(MOONS_SEED, "train-data"))
    models = {}
    for kind in ("ensemble", "mc-dropout"):
        spec = ModelSpec(layer_widths=(1, 64, 64, 64, 2), task="regression", eu=EU_BY_KIND[kind])
        cfg = TrainConfig(epochs=300, seed=derive_seed(MOONS_SEED, "train-reg", kind))
        models[kind] = (spec, train(spec, train_ds, cfg))
    return SimpleNamespace(train_ds=train_ds, ood_ds=ood_ds, models=models)


def away_from_kinks(spec, params, real, rng, margin=1e-3, tries=200):
    """Random input whose pre-activations all clear the ReLU kinks."""
    from uniunc.network import forward_with_cache

    for _ in range(tries):
        x = rng.standard_normal(spec.input_dim) * 2.0
        _, cache = forward_with_cache(spec, params, real, x[None, :])
        if all(np.abs(z).min() > margin for _, z, _, _, relu in cache if relu):
            return x
    raise RuntimeError("could not find an input away from ReLU kinks")
