import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import numeric_grad, rel_error
from surgformer.errors import ConfigurationError, ContractError
from surgformer.features import TcnEncoder, canonical_selection, fuse, tcn_encode
from surgformer.nn.optim import AdamState, adam_step
from surgformer.prediction import (
    LossWeights,
    Predictor,
    build_memory,
    end_to_end_infer,
    multitask_loss,
    predict,
)
from surgformer.recognition import Recognizer, encoder_forward, recognition_loss, recognize


def small_recognizer(rng, d_in=3, window=8, channels=(4, 6), d_model=4, n_classes=3):
    return Recognizer(d_in, window=window, d_model=d_model, n_layers=2, heads=2, d_ff=5,
                      n_classes=n_classes, tcn_channels=channels, kernel_size=3, dropout=0.0, rng=rng)


def small_predictor(rng, d_in=3, d_model=4, traj_mode="delta", n_classes=3):
    return Predictor(d_in, w_obs=6, w_pred=3, factor=3, d_model=d_model, n_layers=2, heads=2, d_ff=5,
                     n_classes=n_classes, d_emb=3, dropout=0.0, traj_mode=traj_mode, rng=rng)


def _model_grad_error(model, loss):
    """Relative error over the concatenated parameter gradient. Per-tensor ratios are meaningless
    for tensors whose exact gradient is zero (attention key biases cancel in the softmax)."""
    names = [n for n, _ in model.named_params()]
    analytic = np.concatenate([p.grad.ravel() for _, p in model.named_params()])
    numeric = np.concatenate([numeric_grad(loss, p.value).ravel() for _, p in model.named_params()])
    assert len(names) == len(set(names))
    return rel_error(analytic, numeric)


def _perturb(model, rng):
    for _, p in model.named_params():
        p.value[...] = p.value + 0.1 * rng.normal(size=p.value.shape)


# -- features --

def test_canonical_selection_and_fuse():
    assert canonical_selection(["V_Spatial", "C", "K14"]) == ("K14", "C", "V_Spatial")
    for bad in ([], ["K14", "K38"], ["K14", "K14"], ["X"]):
        with pytest.raises(ConfigurationError):
            canonical_selection(bad)
    v = fuse({"C": np.arange(3.0), "K14": np.zeros(14)})
    assert v.shape == (17,)
    np.testing.assert_array_equal(v[14:], [0, 1, 2])
    a = fuse({"K14": np.ones(14), "V_Res": np.full(4, 2.0)})
    b = fuse({"V_Res": np.full(4, 2.0), "K14": np.ones(14)})
    assert a.tobytes() == b.tobytes()


def test_tcn_default_shapes(rng):
    enc = TcnEncoder(14, (32, 64, 60), 5, 30, rng)
    assert tcn_encode(rng.normal(size=(30, 14)), enc).shape == (30, 60)
    assert enc.pooled(rng.normal(size=(30, 14))).shape == (4, 60)


def test_tcn_zero_in_zero_out(rng):
    enc = TcnEncoder(14, (32, 64, 60), 5, 30, rng)
    np.testing.assert_array_equal(enc.forward(np.zeros((30, 14))), 0.0)


def test_tcn_window_too_short(rng):
    with pytest.raises(ConfigurationError):
        TcnEncoder(14, (32, 64, 60), 5, 7, rng)


@given(st.integers(1, 20), st.integers(8, 40))
def test_tcn_output_dimension_and_length(d_in, window):
    enc = TcnEncoder(d_in, (4, 5, 6), 3, window, np.random.default_rng(0))
    assert enc.forward(np.ones((window, d_in))).shape == (window, 6)


def test_tcn_shift_equivariance(rng):
    """Shifting the input by the total pooling stride (8) shifts the pooled features by one step
    wherever neither receptive field reaches the zero padding."""
    enc = TcnEncoder(3, (4, 5, 6), 5, 128, rng)
    for conv in enc.convs:
        conv.bias.value[...] = 0.1 * rng.normal(size=conv.bias.value.shape)
    x = rng.normal(size=(136, 3))
    a = enc.pooled(x[:128])
    b = enc.pooled(x[8:136])
    np.testing.assert_allclose(b[3:12], a[4:13], atol=1e-12)


def test_tcn_gradient(rng):
    enc = TcnEncoder(2, (3, 4), 3, 8, rng)
    _perturb(enc, rng)
    x = rng.normal(size=(8, 2))
    r = rng.normal(size=(8, 4))
    enc.forward(x)
    enc.zero_grad()
    dx = enc.backward(r)
    loss = lambda: float(np.sum(enc.forward(x) * r))
    assert rel_error(dx, numeric_grad(loss, x)) < 1e-4
    grads = {n: p.grad.copy() for n, p in enc.named_params()}
    for n, p in enc.named_params():
        assert rel_error(grads[n], numeric_grad(loss, p.value)) < 1e-4, n


# -- recognition --

def test_recognizer_default_shapes(rng):
    rec = Recognizer(14, rng=rng)
    hidden, logits = encoder_forward(rng.normal(size=(30, 14)), rec)
    assert hidden.shape == (30, 60) and logits.shape == (30, 10)
    assert recognize(rng.normal(size=(4, 30, 14)), rec).shape == (4, 30)


def test_recognizer_positional_and_deterministic(rng):
    rec = Recognizer(14, rng=rng)
    x = rng.normal(size=(30, 14))
    _, a = rec.forward(x)
    _, b = rec.forward(x)
    np.testing.assert_array_equal(a, b)
    perm = rng.permutation(30)
    _, c = rec.forward(x[perm])
    assert not np.allclose(c, a[perm])


def test_recognize_tie_rule(rng):
    rec = Recognizer(14, rng=rng)
    rec.head.weight.value[...] = 0
    rec.head.bias.value[...] = 0
    np.testing.assert_array_equal(recognize(rng.normal(size=(30, 14)), rec), 0)


def test_recognition_loss_examples():
    with pytest.raises(ContractError):
        recognition_loss(np.zeros((4, 10)), np.full(4, -1))
    assert recognition_loss(np.zeros((4, 10)), [0, 1, 2, -1])[0] == pytest.approx(np.log(10))
    sat = np.full((2, 10), -300.0)
    sat[[0, 1], [3, 4]] = 300.0
    assert recognition_loss(sat, [3, 4])[0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("window,channels", [(6, (4,)), (8, (4, 6))])
def test_recognizer_end_to_end_gradient(window, channels):
    """TCN + encoder + head. A 6-frame window fits two conv/pool layers; three need 8 frames."""
    rng = np.random.default_rng(3)
    rec = small_recognizer(rng, window=window, channels=channels)
    _perturb(rec, rng)
    x = rng.normal(size=(2, window, 3))
    labels = rng.integers(0, 3, size=(2, window))
    labels[0, 1] = -1

    def loss():
        return recognition_loss(rec.forward(x)[1], labels)[0]

    rec.zero_grad()
    _, logits = rec.forward(x)
    _, dlogits = recognition_loss(logits, labels)
    dx = rec.backward(dlogits)
    assert rel_error(dx, numeric_grad(loss, x)) < 1e-3
    assert _model_grad_error(rec, loss) < 1e-3


@pytest.mark.parametrize("lr", [1e-4, 1e-5])
def test_recognizer_small_step_decreases_batch_loss(lr):
    rng = np.random.default_rng(5)
    rec = small_recognizer(rng)
    x = rng.normal(size=(4, 8, 3))
    labels = rng.integers(0, 3, size=(4, 8))
    before, dlogits = recognition_loss(rec.forward(x)[1], labels)
    rec.zero_grad()
    rec.backward(dlogits)
    for _, p in rec.named_params():
        adam_step(p, AdamState.like(p), lr)
    assert recognition_loss(rec.forward(x)[1], labels)[0] < before


# -- prediction --

def _pred_inputs(rng, b=2, d_in=3):
    return dict(
        enc_hidden=rng.normal(size=(b, 6, 4)),
        obs_g=rng.integers(0, 3, size=(b, 6)),
        raw=rng.normal(size=(b, 6, d_in)),
        last_g=rng.integers(0, 3, size=b),
        last_pos=rng.normal(size=(b, 6)) * 10,
        tg=rng.integers(0, 3, size=(b, 3)),
        tt=rng.normal(size=(b, 3, 6)) * 10,
    )


def test_predictor_default_shapes(rng):
    pred = Predictor(14, rng=rng)
    mem = build_memory(rng.normal(size=(30, 60)), rng.integers(0, 10, 30), rng.normal(size=(10, 14)), pred)
    assert mem.shape == (10, 60)
    assert pred.mem_proj.weight.shape == (60 + 16 + 14, 60)
    logits, traj = predict(mem, pred, "autoregressive", last_gesture=0, last_pos=np.zeros(6))
    assert logits.shape == (10, 10) and traj.shape == (10, 6)
    logits, traj = predict(mem, pred, "teacher_forced", last_gesture=0, last_pos=np.zeros(6),
                           targets=(np.zeros(10, dtype=int), np.zeros((10, 6))))
    assert logits.shape == (10, 10) and traj.shape == (10, 6)
    with pytest.raises(ContractError):
        predict(mem, pred, "teacher_forced", last_gesture=0, last_pos=np.zeros(6))


def test_memory_contract_and_gesture_swap(rng):
    pred = small_predictor(rng)
    i = _pred_inputs(rng, b=1)
    m1 = pred.build_memory(i["enc_hidden"], i["obs_g"], i["raw"])
    np.testing.assert_array_equal(m1, pred.build_memory(i["enc_hidden"], i["obs_g"], i["raw"][:, ::3]))
    # swapping gesture source only moves the embedding slice of the projected input
    other = (i["obs_g"] + 1) % 3
    m2 = pred.build_memory(i["enc_hidden"], other, i["raw"])
    w_emb = pred.mem_proj.weight.value[4:7]
    e = pred.embedding.value
    np.testing.assert_allclose(m2 - m1, (e[other[:, ::3]] - e[i["obs_g"][:, ::3]]) @ w_emb, atol=1e-12)
    with pytest.raises(ContractError):
        pred.build_memory(i["enc_hidden"], i["obs_g"], i["raw"][:, :4])
    with pytest.raises(ContractError):
        pred.build_memory(i["enc_hidden"][:, :5], i["obs_g"], i["raw"])


@pytest.mark.parametrize("traj_mode", ["delta", "absolute"])
def test_predictor_gradient(traj_mode):
    rng = np.random.default_rng(9)
    pred = small_predictor(rng, traj_mode=traj_mode)
    _perturb(pred, rng)
    i = _pred_inputs(rng)
    i["tg"][0, 1] = -1
    pred.fit_trajectory_scale(i["last_pos"], i["tt"])
    w = LossWeights(1.0, 0.05)

    def forward():
        mem = pred.build_memory(i["enc_hidden"], i["obs_g"], i["raw"])
        return pred.teacher_forced(mem, i["last_g"], i["last_pos"], i["tg"], i["tt"])

    def loss():
        lg, tr = forward()
        return multitask_loss(lg, i["tg"], tr, i["tt"], w)[0]

    pred.zero_grad()
    lg, tr = forward()
    _, dl, dt = multitask_loss(lg, i["tg"], tr, i["tt"], w)
    pred.backward(dl, dt)
    assert _model_grad_error(pred, loss) < 1e-4


def test_multitask_loss_examples(rng):
    lg = rng.normal(size=(3, 4))
    tg = np.array([0, 1, 2])
    tr = rng.normal(size=(3, 6))
    ce = multitask_loss(lg, tg, tr, tr + 1, LossWeights(1.0, 0.0))[0]
    from surgformer.nn import cross_entropy
    assert ce == pytest.approx(cross_entropy(lg, tg)[0])
    sat = np.full((3, 4), -400.0)
    sat[np.arange(3), tg] = 400.0
    assert multitask_loss(sat, tg, tr, tr, LossWeights())[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigurationError):
        LossWeights(0.0, 0.0)
    with pytest.raises(ConfigurationError):
        LossWeights(-1.0, 1.0)


@given(st.floats(0.01, 100.0), st.integers(0, 10**6))
def test_loss_weight_scaling_keeps_gradient_direction(c, seed):
    rng = np.random.default_rng(seed)
    lg, tg = rng.normal(size=(3, 4)), rng.integers(0, 4, size=3)
    tr, tt = rng.normal(size=(3, 6)), rng.normal(size=(3, 6))
    _, a1, b1 = multitask_loss(lg, tg, tr, tt, LossWeights(1.0, 0.01))
    _, a2, b2 = multitask_loss(lg, tg, tr, tt, LossWeights(c, 0.01 * c))
    g1, g2 = np.concatenate([a1.ravel(), b1.ravel()]), np.concatenate([a2.ravel(), b2.ravel()])
    assert g1 @ g2 / (np.linalg.norm(g1) * np.linalg.norm(g2)) == pytest.approx(1.0, abs=1e-10)


def test_predictor_causality_all_steps():
    rng = np.random.default_rng(2)
    pred = Predictor(5, w_obs=30, w_pred=10, d_model=60, n_layers=2, heads=4, dropout=0.0, rng=rng)
    mem = pred.build_memory(rng.normal(size=(30, 60)), rng.integers(0, 10, 30), rng.normal(size=(30, 5)))
    tg, tt = rng.integers(0, 10, 10), rng.normal(size=(10, 6)) * 5
    base_l, base_t = pred.teacher_forced(mem, 1, np.zeros(6), tg, tt)
    for t in range(1, 10):
        # the token fed at step t carries target t-1
        tg2, tt2 = tg.copy(), tt.copy()
        tg2[t - 1] = (tg[t - 1] + 3) % 10
        tt2[t - 1] += 50.0
        l2, t2 = pred.teacher_forced(mem, 1, np.zeros(6), tg2, tt2)
        np.testing.assert_array_equal(l2[:t], base_l[:t])
        np.testing.assert_array_equal(t2[:t], base_t[:t])
        assert not np.allclose(l2[t], base_l[t])


def test_autoregressive_feeds_back_own_outputs(rng):
    pred = small_predictor(rng)
    _perturb(pred, rng)
    i = _pred_inputs(rng, b=1)
    mem = pred.build_memory(i["enc_hidden"], i["obs_g"], i["raw"])
    logits, traj = pred.autoregressive(mem, i["last_g"], i["last_pos"])
    own_g = np.argmax(logits, axis=-1)
    tf_l, tf_t = pred.teacher_forced(mem, i["last_g"], i["last_pos"], own_g, traj)
    np.testing.assert_allclose(tf_l, logits, atol=1e-12)
    np.testing.assert_allclose(tf_t, traj, atol=1e-9)


def test_end_to_end_infer_deterministic(rng):
    rec = small_recognizer(rng, window=6, channels=(4,), d_model=4)
    pred = small_predictor(rng)
    x = rng.normal(size=(6, 3))
    a = end_to_end_infer(x, rec, pred, np.ones(6))
    b = end_to_end_infer(x, rec, pred, np.ones(6))
    assert a[0].shape == (6,) and a[1].shape == (3,) and a[2].shape == (3, 6)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
