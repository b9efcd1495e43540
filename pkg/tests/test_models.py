"""Model-level contracts: shapes, purity, gradient flow, projections, and the
checkpoint round trip."""
import numpy as np
import pytest

from flitext import autodiff as ad
from flitext.checkpoint import load_checkpoint, params_from_arrays, save_checkpoint
from flitext.errors import ConfigError, DataError, PreconditionError
from flitext.models import (CLS_ID, InspirerConfig, TargetConfig, clone_store,
                            init_inspirer, init_target, inspirer_forward,
                            param_count, project_features, stores_equal,
                            target_forward)

I_CFG = InspirerConfig(vocab_size=30, classes=3, layers=2, d=8, heads=2, ff_dim=12,
                       max_len=10, mlp_hidden=6, projection_dim=5, dropout=0.1)
T_CFG = TargetConfig(vocab_size=30, classes=3, filter_sizes=(2, 3), channels=4,
                     emb_dim=6, projection_dim=5, dropout=0.2)


def make_models(seed=0):
    rng = np.random.default_rng(seed)
    return init_inspirer(I_CFG, rng), init_target(T_CFG, rng)


def toks(*ids):
    return [CLS_ID] + list(ids)


def test_config_validation():
    with pytest.raises(ConfigError):
        InspirerConfig(vocab_size=30, classes=2, d=10, heads=4)
    with pytest.raises(ConfigError):
        InspirerConfig(vocab_size=30, classes=2, layers=0)
    with pytest.raises(ConfigError):
        TargetConfig(vocab_size=30, classes=2, filter_sizes=(3, 2))
    with pytest.raises(ConfigError):
        TargetConfig(vocab_size=30, classes=2, filter_sizes=(2, 2))
    with pytest.raises(ConfigError):
        TargetConfig(vocab_size=30, classes=2, projection_activation="gelu")


def test_inspirer_forward_shapes_and_layers():
    params, _ = make_models()
    trace = inspirer_forward(toks(5, 6, 7), I_CFG, params, "eval")
    assert trace.logits.data.shape == (3,)
    assert len(trace.layer_states) == I_CFG.layers
    for state in trace.layer_states:
        assert state.data.shape == (4, I_CFG.d)


def test_inspirer_eval_is_pure():
    params, _ = make_models()
    a = inspirer_forward(toks(4, 9), I_CFG, params, "eval").logits.data
    b = inspirer_forward(toks(4, 9), I_CFG, params, "eval").logits.data
    assert np.array_equal(a, b)


def test_inspirer_preconditions():
    params, _ = make_models()
    with pytest.raises(PreconditionError):
        inspirer_forward(toks(*range(3, 14)), I_CFG, params, "eval")  # over max_len
    with pytest.raises(PreconditionError):
        inspirer_forward([5, 6], I_CFG, params, "eval")  # no classification token
    with pytest.raises(ConfigError):
        inspirer_forward(toks(5), I_CFG, params, "train")  # dropout needs an rng


def test_target_forward_shapes():
    _, params = make_models()
    trace = target_forward(toks(3, 4, 5, 6), T_CFG, params, "eval")
    assert trace.logits.data.shape == (3,)
    assert trace.pooled.data.shape == (T_CFG.channels * len(T_CFG.filter_sizes),)
    assert set(trace.pooled_by_size) == {2, 3}


def test_target_pad_tail_invariance():
    """With a zero pad embedding and zero conv biases, extra pad-only tail
    tokens beyond the real content cannot change the pooled vector."""
    _, params = make_models(3)
    for k in T_CFG.filter_sizes:
        params[f"conv{k}.b"].data[:] = 0.0
    base = toks(7)  # 2 real tokens: [cls, 7]
    short = target_forward(base + [0] * 2, T_CFG, params, "eval").pooled.data
    longer = target_forward(base + [0] * 6, T_CFG, params, "eval").pooled.data
    assert np.allclose(short, longer, atol=1e-6)


def test_target_too_short_rejected():
    _, params = make_models()
    with pytest.raises(PreconditionError):
        target_forward([CLS_ID], T_CFG, params, "eval")


def test_projection_identity_case():
    """Square identity projection with no activation returns its input."""
    cfg = TargetConfig(vocab_size=30, classes=3, filter_sizes=(2, 3), channels=4,
                       emb_dim=6, projection_dim=4, projection_activation="none")
    params = init_target(cfg, np.random.default_rng(0))
    params["proj.w"].data[:] = np.eye(4)
    params["proj.b"].data[:] = 0.0
    trace = target_forward(toks(3, 4, 5), cfg, params, "eval")
    out = project_features(trace, [(0, 2), (1, 3)], params, "none")
    for k in (2, 3):
        assert np.allclose(out[k].data, trace.pooled_by_size[k].data)


def test_projection_tanh_bounds_and_count():
    params, t_params = make_models(1)
    trace = inspirer_forward(toks(5, 6), I_CFG, params, "eval")
    out = project_features(trace, [(0, 2), (1, 3)], params, "tanh")
    assert len(out) == 2
    for v in out.values():
        assert np.all(np.abs(v.data) < 1.0)


def test_projection_missing_layer_is_config_error():
    params, _ = make_models()
    trace = inspirer_forward(toks(5), I_CFG, params, "eval")
    with pytest.raises(ConfigError):
        project_features(trace, [(7, 2)], params, "relu")
    _, t_params = make_models()
    t_trace = target_forward(toks(3, 4, 5), T_CFG, t_params, "eval")
    with pytest.raises(ConfigError):
        project_features(t_trace, [(0, 9)], t_params, "relu")


def test_gradient_reaches_every_encoder_and_classifier_param():
    i_params, t_params = make_models(7)
    trace = inspirer_forward(toks(5, 6, 7, 8), I_CFG, i_params, "eval")
    ad.backward(trace.logits.sum())
    for name, p in i_params.items():
        if name.startswith("proj."):
            continue
        assert p.grad is not None and np.any(p.grad != 0), name

    trace = target_forward(toks(5, 6, 7, 8, 9, 10), T_CFG, t_params, "eval")
    ad.backward(trace.logits.sum())
    for name, p in t_params.items():
        if name.startswith("proj."):
            continue
        assert p.grad is not None and np.any(p.grad != 0), name


def test_param_count_matches_shape_walk_against_stores():
    i_params, t_params = make_models()
    assert param_count(i_params) == sum(t.data.size for t in i_params.values())
    assert param_count(t_params) == sum(t.data.size for t in t_params.values())


def test_clone_store_is_independent():
    i_params, _ = make_models()
    copy = clone_store(i_params)
    assert stores_equal(i_params, copy)
    copy["cls.b2"].data[:] += 1.0
    assert not stores_equal(i_params, copy)


def test_checkpoint_round_trip_bitwise(tmp_path):
    i_params, _ = make_models(11)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, i_params)
    loaded = params_from_arrays(load_checkpoint(path))
    assert stores_equal(i_params, loaded)
    probe = toks(4, 5, 6)
    before = inspirer_forward(probe, I_CFG, i_params, "eval").logits.data
    after = inspirer_forward(probe, I_CFG, loaded, "eval").logits.data
    assert np.array_equal(before, after)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_checkpoint_magic_and_layout(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"w": ad.Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))})
    blob = path.read_bytes()
    assert blob[:8] == b"FLITCKPT"
    assert int.from_bytes(blob[8:12], "little") == 1   # version
    assert int.from_bytes(blob[12:16], "little") == 1  # tensor count
    assert int.from_bytes(blob[16:20], "little") == 1  # name length
    assert blob[20:21] == b"w"
    assert int.from_bytes(blob[21:25], "little") == 2  # rank
