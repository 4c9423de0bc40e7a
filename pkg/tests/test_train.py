import io
import math

import numpy as np
import pytest

from oracles import TINY, tiny_problem
from radiopit.errors import (BadMagicError, FormatError, InvalidValueError, NumericError,
                             SizeMismatchError, TruncatedError)
from radiopit.pit import (OptimState, PiTConfig, TtaConfig, adam_update, adapt_stream, cosine_rate,
                          forward, grad, init_weights, load_weights, pretrain, rmse_loss,
                          save_weights, sgd_update, tta_step)
from radiopit.pit.checkpoint import weights_from_bytes, weights_to_bytes
from radiopit.pit.masking import grid_candidates, mask_generate
from radiopit.pit.model import cast_params

SMALL = PiTConfig(d_model=16, n_heads=2, d_ff=32, n_fourier=4)


def maps(n=3, shape=(10, 10), seed=0):
    rng = np.random.default_rng(seed)
    return [rng.random(shape) for _ in range(n)]


def stream(n, shape=(10, 10), seed=0, n_points=12):
    out = []
    for i, m in enumerate(maps(n, shape, seed)):
        coords, values = grid_candidates(m)
        pick = np.random.default_rng(seed + i).choice(len(coords), n_points, replace=False)
        out.append(mask_generate(coords[pick], values[pick], shape, seed=i))
    return out


# ---------------------------------------------------------------- optimizers

def test_cosine_rate():
    assert cosine_rate(1e-4, 0, 10) == 1e-4
    assert cosine_rate(1e-4, 5, 10) == pytest.approx(5e-5)
    assert cosine_rate(1e-4, 10, 10) == pytest.approx(0.0, abs=1e-20)
    assert cosine_rate(2.0, 3, 7) == pytest.approx(2.0 * 0.5 * (1 + math.cos(math.pi * 3 / 7)))


def test_first_adam_step_closed_form():
    rng = np.random.default_rng(0)
    p = {"a": rng.standard_normal(20)}
    g = {"a": rng.standard_normal(20)}
    eta = 5e-6
    new, state = adam_update(p, g, OptimState.zeros_like(p), eta)
    # bias-corrected first step: m_hat = g, v_hat = g^2
    expected = p["a"] - eta * g["a"] / (np.abs(g["a"]) + 1e-8)
    assert np.allclose(new["a"], expected, rtol=0, atol=1e-18)
    assert np.allclose(np.abs(new["a"] - p["a"]), eta, rtol=1e-6)
    assert state.step == 1


def test_adam_zero_rate_is_bit_identical_and_functional():
    p = {"a": np.linspace(-1, 1, 7, dtype=np.float32)}
    g = {"a": np.ones(7, dtype=np.float32)}
    before = p["a"].copy()
    new, _ = adam_update(p, g, OptimState.zeros_like(p), 0.0, weight_decay=1e-4)
    assert new["a"].tobytes() == before.tobytes()
    adam_update(p, g, OptimState.zeros_like(p), 0.1)
    assert p["a"].tobytes() == before.tobytes()


def test_adamw_decay_is_decoupled():
    p = {"a": np.array([2.0])}
    g = {"a": np.array([0.0])}
    new, _ = adam_update(p, g, OptimState.zeros_like(p), 0.1, weight_decay=0.5)
    assert new["a"][0] == pytest.approx(2.0 * (1 - 0.05))


def test_sgd_update():
    p = {"a": np.array([1.0, -1.0])}
    assert np.array_equal(sgd_update(p, {"a": np.array([2.0, 4.0])}, 0.25)["a"], [0.5, -2.0])


# ---------------------------------------------------------------- pretraining

def test_pretrain_zero_epochs_and_zero_rate():
    params = init_weights(SMALL, 0)
    same, hist = pretrain(params, SMALL, maps(), 0)
    assert hist == [] and all(np.array_equal(same[k], params[k]) for k in params)
    frozen, hist = pretrain(params, SMALL, maps(), 2, batch_size=2, lr=0.0, n_known=5, n_query=10)
    assert len(hist) == 2
    assert all(frozen[k].tobytes() == params[k].tobytes() for k in params)


def test_pretrain_deterministic_and_changes_weights():
    params = init_weights(SMALL, 0)
    a, ha = pretrain(params, SMALL, maps(), 3, batch_size=2, n_known=5, n_query=20, seed=4)
    b, hb = pretrain(params, SMALL, maps(), 3, batch_size=2, n_known=5, n_query=20, seed=4)
    assert ha == hb
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(not np.array_equal(a[k], params[k]) for k in a)
    _, hc = pretrain(params, SMALL, maps(), 3, batch_size=2, n_known=5, n_query=20, seed=5)
    assert hc != ha


def test_pretrain_empty_dataset():
    with pytest.raises(InvalidValueError):
        pretrain(init_weights(SMALL, 0), SMALL, [], 1)


def test_pretrain_overflowing_update_reports_step():
    with pytest.raises(NumericError) as ei:
        pretrain(init_weights(SMALL, 0), SMALL, maps(), 2, batch_size=3, lr=1e300,
                 n_known=5, n_query=10)
    assert ei.value.step == 0 and ei.value.groups


def test_pretrain_divergence_reports_step():
    params = init_weights(SMALL, 0)
    params["head.b2"] = np.array([np.nan], dtype=np.float32)
    with pytest.raises(NumericError) as ei:
        pretrain(params, SMALL, maps(), 1, batch_size=2, n_known=5, n_query=10)
    assert ei.value.step == 0


# ---------------------------------------------------------------- test-time adaptation

def test_tta_zero_rate_bit_identical():
    params = init_weights(SMALL, 0)
    (s,) = stream(1)
    new, _, ok = tta_step(params, OptimState.zeros_like(params), TtaConfig(lr=0.0), SMALL, s)
    assert ok and all(new[k].tobytes() == params[k].tobytes() for k in params)


def test_tta_sgd_matches_update_rule():
    params, sample = tiny_problem()
    eta = 1e-3
    g = grad(params, TINY, [sample])
    new, _, _ = tta_step(params, None, TtaConfig(lr=eta, optimizer="sgd"), TINY, sample)
    for k in params:
        scale = max(1.0, float(np.abs(params[k]).max()))
        assert np.max(np.abs(new[k] - params[k] + eta * g[k])) <= 1e-12 * scale


def test_tta_first_adam_step_magnitude():
    params = cast_params(init_weights(SMALL, 0), np.float64)
    (s,) = stream(1)
    eta = 5e-6
    g = grad(params, SMALL, [s])
    new, state, _ = tta_step(params, OptimState.zeros_like(params), TtaConfig(lr=eta), SMALL, s)
    for k in params:
        expected = -eta * g[k] / (np.abs(g[k]) + 1e-8)
        assert np.allclose(new[k] - params[k], expected, rtol=1e-6, atol=1e-17)
    assert state.step == 1


def test_tta_nonfinite_gradient_is_flagged():
    params = init_weights(SMALL, 0)
    params["head.b2"] = np.array([np.inf], dtype=np.float32)
    samples = stream(2)
    result = adapt_stream(params, SMALL, TtaConfig(), samples)
    assert result.flagged == [0, 1]
    assert result.params["head.b2"][0] == np.inf


def test_tta_config_validation():
    with pytest.raises(InvalidValueError):
        TtaConfig(lr=-1.0)
    with pytest.raises(InvalidValueError):
        TtaConfig(optimizer="rmsprop")
    assert TtaConfig().lr == 5e-6


def test_single_sample_stream_equals_forward():
    params = init_weights(SMALL, 0)
    (s,) = stream(1)
    result = adapt_stream(params, SMALL, TtaConfig(lr=1e-2), [s])
    assert np.array_equal(result.predictions[0], forward(params, SMALL, s))


def test_zero_rate_stream_equals_frozen():
    params = init_weights(SMALL, 0)
    samples = stream(4)
    result = adapt_stream(params, SMALL, TtaConfig(lr=0.0), samples)
    for s, pred, r in zip(samples, result.predictions, result.rmses):
        frozen = forward(params, SMALL, s)
        assert pred.tobytes() == frozen.tobytes()
        assert r == rmse_loss(frozen, s.query_truth)


def test_predict_then_adapt_ordering():
    params = init_weights(SMALL, 0)
    samples = stream(3)
    result = adapt_stream(params, SMALL, TtaConfig(lr=1e-3), samples)
    # sample 1 is scored with weights adapted on sample 0 only
    after0, state, _ = tta_step(params, OptimState.zeros_like(params), TtaConfig(lr=1e-3), SMALL,
                                samples[0])
    assert np.array_equal(result.predictions[1], forward(after0, SMALL, samples[1]))


@pytest.mark.parametrize("seed", range(5))
def test_repeated_sample_does_not_get_worse(seed):
    params = cast_params(init_weights(SMALL, seed), np.float64)
    (s,) = stream(1, seed=seed)
    result = adapt_stream(params, SMALL, TtaConfig(lr=5e-6), [s, s])
    assert result.rmses[1] <= result.rmses[0] + 1e-6


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip(tmp_path):
    params = init_weights(SMALL, 3)
    path = tmp_path / "w.rptw"
    save_weights(params, SMALL, path)
    blob = path.read_bytes()
    back, cfg = load_weights(path)
    assert cfg == SMALL
    assert all(back[k].tobytes() == params[k].tobytes() for k in params)
    assert weights_to_bytes(back, cfg) == blob
    buf = io.BytesIO()
    save_weights(params, SMALL, buf)
    assert buf.getvalue() == blob


def test_checkpoint_errors():
    blob = weights_to_bytes(init_weights(SMALL, 0), SMALL)
    with pytest.raises(BadMagicError):
        weights_from_bytes(b"XXXXXX" + blob[6:])
    with pytest.raises(TruncatedError):
        weights_from_bytes(blob[:-4])
    with pytest.raises(SizeMismatchError):
        weights_from_bytes(blob + b"\0" * 4)
    bad = blob.replace(b'"d_model":16', b'"d_model":15', 1)
    with pytest.raises(FormatError):
        weights_from_bytes(bad)
    params = init_weights(SMALL, 0)
    del params["head.b2"]
    with pytest.raises(InvalidValueError):
        weights_to_bytes(params, SMALL)
