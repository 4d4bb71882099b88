import math

import numpy as np
import pytest

from protoalign.engine import (AdaptationConfig, BatchSampler, TrainReport, adapt, run_cl_stage,
                               run_pfa_stage, series_csv)
from protoalign.errors import InvalidArgumentError
from protoalign.linalg import SeededRng
from protoalign.model import MlpExtractor, Model
from protoalign.prototypes import PrototypeSet


def small_setup(seed=0, n=64, C=3, D=6, d_in=5):
    rng = SeededRng(seed)
    net = MlpExtractor.initialize([d_in, 12, D], rng)
    protos = PrototypeSet(rng.normal(size=(C, D)))
    x = rng.normal(size=(n, d_in))
    return Model(net, protos), x


def fast_config(**kw):
    base = dict(pfa_iters=15, cl_iters=15, batch_size=16, K=4, N=8, lr=1e-3, seed=3)
    base.update(kw)
    return AdaptationConfig(**base)


# config -----------------------------------------------------------------------

@pytest.mark.parametrize("field,value", [
    ("tau", 0.0), ("batch_size", 0), ("cl_batch_size", 0), ("K", 0), ("N", 0), ("pfa_iters", -1),
    ("lr", 0.0), ("weight_decay", -1.0), ("alpha", 0.0), ("alpha", 100.5), ("em_momentum", 1.5),
    ("negatives_threshold_mode", "nope"), ("pfa_mode", "nope"),
])
def test_config_validation(field, value):
    with pytest.raises(InvalidArgumentError):
        AdaptationConfig(**{field: value}).validate(4)


def test_config_class_dependent_validation():
    with pytest.raises(InvalidArgumentError):
        AdaptationConfig(rank_threshold=5).validate(4)
    with pytest.raises(InvalidArgumentError):
        AdaptationConfig(alpha=(80.0, 80.0)).validate(4)
    AdaptationConfig(alpha=(60.0, 70.0, 80.0, 90.0)).validate(4)


# sampler --------------------------------------------------------------------

def test_batch_sampler_epochs_cover_every_index():
    s = BatchSampler(10, 4, SeededRng(0))
    seen = np.concatenate([s.next() for _ in range(5)])
    assert sorted(seen[:10].tolist()) == list(range(10))
    assert sorted(seen[10:20].tolist()) == list(range(10))


def test_batch_sampler_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        BatchSampler(0, 4, SeededRng(0))


# alignment stage ---------------------------------------------------------------

def test_pfa_zero_iterations_is_identity():
    model, x = small_setup()
    snap, protos, rep = run_pfa_stage(model.extractor, model.protos, x, fast_config(pfa_iters=0))
    assert snap.fingerprint() == model.extractor.fingerprint()
    assert rep.iterations == 0 and rep.losses == {} and rep.prior_trajectory == []


def test_pfa_stage_freezes_classifier_and_returns_snapshot():
    model, x = small_setup()
    before = model.protos.weights.tobytes()
    src = model.extractor.fingerprint()
    snap, protos, rep = run_pfa_stage(model.extractor, model.protos, x, fast_config())
    assert model.protos.weights.tobytes() == before == protos.weights.tobytes()
    assert model.extractor.fingerprint() == src
    assert snap.frozen and snap.fingerprint() != src
    assert rep.iterations == 15 and len(rep.losses["pfa"]) == 15
    for t2p, p2t, total in zip(rep.losses["t2p"], rep.losses["p2t"], rep.losses["pfa"]):
        assert total == t2p + p2t


def test_prior_trajectory_on_simplex():
    model, x = small_setup(1)
    _, _, rep = run_pfa_stage(model.extractor, model.protos, x, fast_config(pfa_iters=30))
    for p in rep.prior_trajectory:
        assert min(p) >= 0 and abs(sum(p) - 1) < 1e-12


def test_pfa_empty_target_rejected():
    model, _ = small_setup()
    with pytest.raises(InvalidArgumentError):
        run_pfa_stage(model.extractor, model.protos, np.empty((0, 5)), fast_config())


@pytest.mark.parametrize("mode", ["t2p", "p2t"])
def test_single_term_modes_run(mode):
    model, x = small_setup(2)
    snap, _, rep = run_pfa_stage(model.extractor, model.protos, x, fast_config(pfa_mode=mode))
    assert rep.iterations == 15 and snap.fingerprint() != model.extractor.fingerprint()


# contrastive stage ---------------------------------------------------------------

def test_cl_stage_leaves_snapshot_and_protos_untouched():
    model, x = small_setup(3)
    snap = model.extractor.snapshot()
    fp, pw = snap.fingerprint(), model.protos.weights.tobytes()
    net, rep = run_cl_stage(model.extractor, snap, model.protos, x, fast_config(alpha=60.0))
    assert snap.fingerprint() == fp and model.protos.weights.tobytes() == pw
    assert rep.iterations == 15 and rep.noop_iterations < 15
    assert net.fingerprint() != fp


def test_one_hot_snapshot_makes_every_iteration_a_noop():
    # identity extractor on one-hot inputs with a tiny temperature: exact one-hot predictions
    eye = np.eye(3)
    net = MlpExtractor([3, 3], {"extractor.W0": eye.copy(), "extractor.b0": np.zeros(3)})
    protos = PrototypeSet(eye, None, 1e-3)
    x = eye[np.arange(30) % 3]
    out, rep = run_cl_stage(net, net.snapshot(), protos, x, fast_config(tau=1e-3))
    assert rep.noop_iterations == rep.iterations == 15
    assert rep.status.startswith("warning")
    assert out.fingerprint() == net.fingerprint()
    assert all(math.isnan(v) for v in rep.losses["cl"])


def test_cl_keep_pfa_loss_records_alignment_terms():
    model, x = small_setup(4)
    _, rep = run_cl_stage(model.extractor, model.extractor.snapshot(), model.protos, x,
                          fast_config(cl_keep_pfa_loss=True, alpha=60.0))
    assert len(rep.losses["pfa"]) == rep.iterations == len(rep.prior_trajectory)


def test_cl_batch_size_used():
    model, x = small_setup(5, n=40)
    _, rep = run_cl_stage(model.extractor, model.extractor.snapshot(), model.protos, x,
                          fast_config(cl_batch_size=40, alpha=60.0, K=100))
    # with the whole set in each batch every reliable sample becomes a query
    assert max(rep.losses["queries"]) > 16


# end to end ---------------------------------------------------------------------

def test_zero_iterations_returns_source_model():
    model, x = small_setup(6)
    out, reports = adapt(model, x, fast_config(pfa_iters=0, cl_iters=0))
    assert out.extractor.fingerprint() == model.extractor.fingerprint()
    assert out.protos.weights.tobytes() == model.protos.weights.tobytes()
    assert [r.stage for r in reports] == ["pfa", "cl"]


def test_adapt_deterministic_and_freezes_classifier():
    model, x = small_setup(7)
    a, ra = adapt(model, x, fast_config(alpha=60.0))
    b, rb = adapt(model, x, fast_config(alpha=60.0))
    assert a.extractor.fingerprint() == b.extractor.fingerprint()
    assert a.protos.weights.tobytes() == model.protos.weights.tobytes()
    assert series_csv(ra) == series_csv(rb)
    c, _ = adapt(model, x, fast_config(alpha=60.0, seed=4))
    assert c.extractor.fingerprint() != a.extractor.fingerprint()


@pytest.mark.parametrize("stage,names", [("pfa", ["pfa"]), ("cl", ["cl"]), ("both", ["pfa", "cl"])])
def test_stage_selection(stage, names):
    model, x = small_setup(8)
    out, reports = adapt(model, x, fast_config(alpha=60.0), stage)
    assert [r.stage for r in reports] == names
    assert not out.extractor.frozen
    assert all(r.final_metrics["n"] == x.shape[0] for r in reports)


def test_adapt_rejects_unknown_stage():
    model, x = small_setup()
    with pytest.raises(InvalidArgumentError):
        adapt(model, x, fast_config(), "all")


def test_series_csv_union_columns():
    a = TrainReport("pfa", 2, {"pfa": [1.0, 0.5]}, [[0.5, 0.5], [0.4, 0.6]])
    b = TrainReport("cl", 1, {"cl": [math.nan]})
    lines = series_csv([a, b]).splitlines()
    assert lines[0] == "stage,iteration,cl,pfa,prior0,prior1"
    assert lines[1] == "pfa,0,,1,0.5,0.5"
    assert lines[3] == "cl,0,nan,,,"
