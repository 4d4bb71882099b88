import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from protoalign.errors import InvalidArgumentError, InvalidStateError
from protoalign.gradcheck import numeric_gradient, relative_error
from protoalign.linalg import SeededRng
from protoalign.model import (CHECKPOINT_HEADER, MlpExtractor, Model, dumps_checkpoint,
                              load_checkpoint, loads_checkpoint, save_checkpoint)
from protoalign.optim import AdamState, adam_step
from protoalign.pfa import pfa_loss
from protoalign.prototypes import PrototypeSet


def tiny_model(seed=0, sizes=(3, 5, 4)):
    rng = SeededRng(seed)
    net = MlpExtractor.initialize(list(sizes), rng)
    prior = np.array([0.2, 0.3, 0.5])
    return Model(net, PrototypeSet(rng.normal(size=(3, sizes[-1])), prior, 0.1))


# extractor --------------------------------------------------------------------

def test_zero_output_gradient_gives_zero_parameter_gradients():
    net = tiny_model().extractor
    feats, cache = net.forward(np.random.default_rng(0).normal(size=(4, 3)))
    grads = net.backward(cache, np.zeros_like(feats))
    assert all(np.all(g == 0) for g in grads.values())


def test_single_linear_layer_closed_form():
    net = MlpExtractor.initialize([3, 2], SeededRng(1))
    x = np.random.default_rng(1).normal(size=(5, 3))
    g = np.random.default_rng(2).normal(size=(5, 2))
    feats, cache = net.forward(x)
    assert np.allclose(feats, x @ net.params["extractor.W0"])
    grads = net.backward(cache, g)
    assert np.allclose(grads["extractor.W0"], x.T @ g)
    assert np.allclose(grads["extractor.b0"], g.sum(axis=0))


def test_leaky_relu_hidden_layer():
    net = MlpExtractor([1, 1, 1], {"extractor.W0": np.array([[1.0]]), "extractor.b0": np.zeros(1),
                                   "extractor.W1": np.array([[1.0]]), "extractor.b1": np.zeros(1)})
    assert net.features(np.array([[2.0], [-2.0]])).ravel().tolist() == [2.0, -0.02]


@pytest.mark.parametrize("seed", range(5))
def test_pfa_through_extractor_matches_finite_differences(seed):
    m = tiny_model(seed)
    x = np.random.default_rng(seed).normal(size=(6, 3))
    feats, cache = m.extractor.forward(x)
    grads = m.extractor.backward(cache, pfa_loss(feats, m.protos).grad_features)
    for key in m.extractor.param_names():
        num = numeric_gradient(lambda: pfa_loss(m.extractor.features(x), m.protos).value,
                               m.extractor.params[key])
        assert relative_error(grads[key], num) < 1e-4


def test_stale_cache_rejected():
    net = tiny_model().extractor
    feats, cache = net.forward(np.ones((2, 3)))
    net.params["extractor.b0"] += 1.0
    net.mark_updated()
    with pytest.raises(InvalidStateError):
        net.backward(cache, np.ones_like(feats))


def test_gradient_shape_checked():
    net = tiny_model().extractor
    _, cache = net.forward(np.ones((2, 3)))
    with pytest.raises(InvalidArgumentError):
        net.backward(cache, np.ones((2, 3)))


def test_snapshot_is_frozen_copy():
    net = tiny_model().extractor
    snap = net.snapshot()
    assert snap.fingerprint() == net.fingerprint()
    with pytest.raises(ValueError):
        snap.params["extractor.W0"][0, 0] = 1.0
    with pytest.raises(InvalidStateError):
        snap.mark_updated()
    net.params["extractor.W0"][0, 0] += 1.0
    assert snap.fingerprint() != net.fingerprint()


def test_invalid_sizes_and_params():
    with pytest.raises(InvalidArgumentError):
        MlpExtractor([3])
    with pytest.raises(InvalidArgumentError):
        MlpExtractor([3, 2], {"extractor.W0": np.zeros((2, 2)), "extractor.b0": np.zeros(2)})
    with pytest.raises(InvalidArgumentError):
        tiny_model().extractor.forward(np.ones((2, 4)))


# checkpoint -------------------------------------------------------------------

def test_checkpoint_round_trip_is_lossless(tmp_path):
    m = tiny_model(3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.extractor.fingerprint() == m.extractor.fingerprint()
    assert back.protos.weights.tobytes() == m.protos.weights.tobytes()
    assert back.protos.prior.tobytes() == m.protos.prior.tobytes()
    assert back.protos.temperature == m.protos.temperature
    assert dumps_checkpoint(back) == path.read_text()


def test_checkpoint_layout():
    text = dumps_checkpoint(tiny_model())
    lines = text.splitlines()
    assert lines[0] == CHECKPOINT_HEADER
    assert lines[1] == "layers 3 5 4"
    names = [ln.split()[0] for ln in lines[2:]]
    assert names == ["extractor.W0", "extractor.b0", "extractor.W1", "extractor.b1",
                     "classifier.weights", "classifier.prior", "classifier.temperature"]
    assert lines[2].split()[1] == "3x5"


@pytest.mark.parametrize("mutate", [
    lambda t: t.replace(CHECKPOINT_HEADER, "something else"),
    lambda t: "\n".join(ln for ln in t.splitlines() if not ln.startswith("classifier.prior")),
    lambda t: t.replace("extractor.b1 4 ", "extractor.b1 5 "),
    lambda t: t + "mystery 1 0\n",
])
def test_malformed_checkpoints_rejected(mutate):
    with pytest.raises(InvalidArgumentError):
        loads_checkpoint(mutate(dumps_checkpoint(tiny_model())))


# Adam ------------------------------------------------------------------------

def test_adam_zero_gradient_no_decay_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(AdamState(lr=0.1), p, {"w": np.zeros(2)})
    assert p["w"].tolist() == [1.0, -2.0]


@settings(max_examples=30)
@given(st.floats(-1e3, 1e3).filter(lambda g: abs(g) >= 1e-2), st.floats(1e-5, 1e-1))
def test_adam_first_step_moves_by_lr(g, lr):
    # the step is lr*|g|/(|g|+eps), so the relative gap is eps/|g| <= 1e-6 here
    p = {"w": np.array([0.5])}
    adam_step(AdamState(lr=lr), p, {"w": np.array([g])})
    assert abs(0.5 - p["w"][0]) == pytest.approx(lr, rel=1e-6)


@pytest.mark.parametrize("wd", [0.0, 0.05])
def test_adam_matches_scalar_oracle(wd):
    state = AdamState(lr=0.1, weight_decay=wd)
    p = {"x": np.array([1.0])}
    got = []
    for _ in range(3):
        adam_step(state, p, {"x": 2.0 * p["x"]})
        got.append(float(p["x"][0]))
    assert np.allclose(got, oracles.adam_scalar(1.0, lambda x: 2 * x, 0.1, 3, wd=wd), atol=1e-15)


def test_adam_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})
    with pytest.raises(InvalidArgumentError):
        adam_step(AdamState(), {"w": np.zeros(2)}, {"v": np.zeros(2)})
