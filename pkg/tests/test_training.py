import math

import numpy as np
import pytest

from tgcap.autodiff import (
    ParameterStore,
    Tape,
    backward,
    finite_difference_check,
    load_checkpoint,
    ops,
)
from tgcap.decoder import END, CaptionModel, ModelConfig
from tgcap.errors import ContractError, DataError, NumericError
from tgcap.optim import adam_update
from tgcap.training import Batch, CaptionData, TrainConfig, caption_loss, evaluate_nll, train

V, N_ATTR, K, D, M = 9, 4, 3, 5, 4


def make_model(variant="t-va", seed=0, **kw):
    cfg = ModelConfig.for_variant(
        variant, vocab_size=V, n_attributes=N_ATTR, topic_dim=K, feature_dim=D,
        hidden_dim=6, input_dim=8, word_dim=4, spatial_proj=5, spatial_mlp=5, semantic_proj=5, **kw,
    )
    return CaptionModel(cfg, seed=seed)


def make_data(n_images=2, seed=1, captions=None):
    rng = np.random.default_rng(seed)
    captions = captions or [[4, 5], [6, 7, 8]][:n_images]
    return CaptionData(
        image_ids=[f"i{k}" for k in range(n_images)],
        features=rng.normal(size=(n_images, M, D)),
        topics=rng.dirichlet(np.ones(K), size=n_images),
        attributes=rng.uniform(size=(n_images, N_ATTR)),
        examples=[(k, list(c)) for k, c in enumerate(captions)],
    )


def all_batch(data):
    return data.batch(range(len(data.examples)))


# ----------------------------------------------------------------- batches

def test_batch_layout():
    b = Batch(np.zeros((2, M, D)), np.ones((2, K)) / K, np.zeros((2, N_ATTR)), [[4, 5], [6]])
    assert b.inputs.tolist() == [[1, 4, 5], [1, 6, 0]]
    assert b.targets.tolist() == [[4, 5, END], [6, END, 0]]
    assert b.mask.tolist() == [[1, 1, 1], [1, 1, 0]]
    assert b.n_tokens == 5


def test_empty_batch_and_sequence_rejected():
    with pytest.raises(ContractError):
        Batch(np.zeros((0, M, D)), np.zeros((0, K)), np.zeros((0, N_ATTR)), [])
    with pytest.raises(ContractError):
        Batch(np.zeros((1, M, D)), np.ones((1, K)) / K, np.zeros((1, N_ATTR)), [[]])


# -------------------------------------------------------------- loss values

def test_certain_model_loss_is_regularizer_only():
    model = make_model()
    model.W_oh.value[:] = 0.0
    model.W_oA.value[:] = 0.0
    model.b_o.value[:] = 0.0
    model.b_o.value[END] = 1e3
    data = make_data(captions=[[END], [END, END]])
    loss, stats = caption_loss(model, all_batch(data), lam=0.0)
    assert float(loss.value) == 0.0
    lam = 0.01
    loss, stats = caption_loss(model, all_batch(data), lam=lam)
    assert float(loss.value) == pytest.approx(lam * model.store.squared_norm(), rel=1e-12)


def test_uniform_model_loss_closed_form():
    model = make_model()
    for t in (model.W_oh, model.W_oA, model.b_o):
        t.value[:] = 0.0
    data = make_data()
    loss, stats = caption_loss(model, all_batch(data))
    lengths = [2, 3]
    expected = sum((L + 1) * math.log(V) for L in lengths) / len(lengths)
    assert float(loss.value) == pytest.approx(expected, rel=1e-12)
    assert stats["tokens"] == sum(L + 1 for L in lengths)


def _np_softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def reference_loss(model, data, lam):
    """Direct numpy evaluation of the objective, one example at a time."""
    P = {name: t.value for name, t in model.store.items()}
    H = model.config.hidden_dim
    total = 0.0
    for img, seq in data.examples:
        feats, topic, attrs = data.features[img], data.topics[img], data.attributes[img]

        def lstm(x, h, c):
            z = P["lstm.W"] @ np.concatenate([x, h]) + P["lstm.b"]
            i, f, o, g = _sigmoid(z[:H]), _sigmoid(z[H:2 * H]), _sigmoid(z[2 * H:3 * H]), np.tanh(z[3 * H:])
            c = f * c + i * g
            return o * np.tanh(c), c

        h, c = lstm(P["decoder.W_xT"] @ topic + P["decoder.b_x0"], np.zeros(H), np.zeros(H))
        prev = 1
        for target in seq + [END]:
            e_T = P["spatial.W_eT"] @ topic + P["spatial.b_eT"]
            e_h = P["spatial.W_eh"] @ h + P["spatial.b_eh"]
            scores = []
            for v in feats:
                e_v = P["spatial.W_ev"] @ v + P["spatial.b_ev"]
                u = np.tanh(P["spatial.W_mlp"] @ np.concatenate([e_T, e_v, e_h]) + P["spatial.b_mlp"])
                scores.append((P["spatial.W_alpha"] @ u + P["spatial.b_alpha"])[0])
            alpha = _np_softmax(np.array(scores))
            v_hat = alpha @ feats
            b = np.tanh(np.concatenate([
                P["semantic.W_bT"] @ topic + P["semantic.b_bT"],
                P["semantic.W_bA"] @ attrs + P["semantic.b_bA"],
                P["semantic.W_bh"] @ h + P["semantic.b_bh"],
            ]))
            beta = _np_softmax(P["semantic.W_beta"] @ b + P["semantic.b_beta"])
            a_hat = beta * attrs
            word = P["decoder.W_xo"] @ P["decoder.embed"][prev] + P["decoder.b_xo"]
            visual = P["decoder.W_xv"] @ v_hat + P["decoder.b_xv"]
            h, c = lstm(np.concatenate([word, visual]), h, c)
            p = _np_softmax(P["output.W_oh"] @ h + P["output.b_o"] + P["output.W_oA"] @ a_hat)
            total -= math.log(p[target])
            prev = target
    reg = lam * sum(float(np.sum(v * v)) for v in P.values())
    return total / len(data.examples) + reg


def test_loss_matches_term_by_term_reference():
    model = make_model(seed=3)
    for name, t in model.store.items():
        if name.split(".")[-1].startswith("b"):
            t.value[:] = np.random.default_rng(len(name)).normal(scale=0.2, size=t.shape)
    data = make_data()
    loss, _ = caption_loss(model, all_batch(data), lam=1e-3)
    assert abs(float(loss.value) - reference_loss(model, data, 1e-3)) <= 1e-10


def test_loss_nonnegative_without_regularizer():
    model = make_model(seed=5)
    loss, stats = caption_loss(model, all_batch(make_data()))
    assert float(loss.value) > 0 and stats["reg"] == 0.0


@pytest.mark.parametrize("name", [
    "decoder.W_xT", "decoder.b_x0", "decoder.embed", "decoder.W_xo", "decoder.W_xv", "lstm.W", "lstm.b",
    "output.W_oh", "output.b_o", "output.W_oA", "spatial.W_eT", "spatial.W_ev", "spatial.W_eh",
    "spatial.W_mlp", "spatial.W_alpha", "semantic.W_bT", "semantic.W_bA", "semantic.W_bh",
    "semantic.W_beta", "semantic.b_beta",
])
def test_loss_gradient_every_parameter_group(name):
    model = make_model(seed=2)
    batch = all_batch(make_data())
    param = model.store[name]
    coords = None if param.value.size <= 40 else list(range(0, param.value.size, 5))

    def f(_t):
        return caption_loss(model, batch, lam=1e-2)[0]

    assert finite_difference_check(f, param, eps=1e-5, coords=coords) <= 1e-4


# ---------------------------------------------------------------- optimizer

def test_adam_zero_gradient_is_fixed_point():
    store = ParameterStore()
    p = store.add("p", [1.0, -2.0, 3.0])
    adam_update(store, lr=0.1)
    assert p.value.tolist() == [1.0, -2.0, 3.0]


def test_adam_first_step_closed_form():
    store = ParameterStore()
    p = store.add("p", [1.0, -2.0, 3.0, 0.5])
    g = np.array([0.3, -4.0, 1e-3, 0.0])
    p.grad = g.copy()
    lr, eps = 0.01, 1e-8
    adam_update(store, lr=lr, eps=eps)
    m_hat = (0.1 * g) / (1 - 0.9)
    v_hat = (0.001 * g * g) / (1 - 0.999)
    expected = np.array([1.0, -2.0, 3.0, 0.5]) - lr * m_hat / (np.sqrt(v_hat) + eps)
    np.testing.assert_allclose(p.value, expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(np.abs(p.value - [1.0, -2.0, 3.0, 0.5])[:3], lr, rtol=1e-4)
    assert p.grad.tolist() == [0.0] * 4 and store.step == 1


def test_adam_deterministic_over_ten_steps():
    def run():
        store = ParameterStore()
        rng = np.random.default_rng(0)
        p = store.add("p", rng.normal(size=(3, 3)))
        for _ in range(10):
            with Tape() as tape:
                loss = ops.sum_squares(ops.tanh(p))
            backward(tape, loss)
            adam_update(store, lr=0.05)
        return p.value.tobytes()

    assert run() == run()


# ------------------------------------------------------------------ dropout

def test_dropout_identity_cases():
    x = np.arange(5.0)
    rng = np.random.default_rng(0)
    assert ops.dropout(x, 0.0, rng, True).value.tolist() == x.tolist()
    assert ops.dropout(x, 0.9, rng, False).value.tolist() == x.tolist()


def test_dropout_statistics():
    out = ops.dropout(np.ones(100_000), 0.5, np.random.default_rng(0), True).value
    kept = out != 0
    assert abs(kept.mean() - 0.5) <= 0.01
    assert np.all(out[kept] == 2.0)


def test_dropout_rate_validated():
    with pytest.raises(ContractError):
        ops.dropout(np.ones(3), 1.0, np.random.default_rng(0), True)


# ------------------------------------------------------------ training loop

def test_train_config_validation():
    for bad in (dict(dropout=1.0), dict(reg=-1.0), dict(lr=0.0)):
        with pytest.raises(ContractError):
            TrainConfig(**bad).validate()


def test_strong_regularizer_shrinks_norm_every_epoch():
    model = make_model(seed=1)
    data = make_data()
    norms = [model.store.squared_norm()]
    train(model, data, TrainConfig(lr=1e-2, batch_size=2, dropout=0.0, reg=10.0, epochs=6),
          on_epoch=lambda e, loss: norms.append(model.store.squared_norm()))
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_single_step_descends():
    model = make_model(seed=4)
    batch = all_batch(make_data())
    before, _ = caption_loss(model, batch)
    with Tape() as tape:
        loss, _ = caption_loss(model, batch)
    backward(tape, loss)
    adam_update(model.store, lr=1e-4)
    after, _ = caption_loss(model, batch)
    assert float(after.value) < float(before.value)


def test_training_is_deterministic_and_checkpoints(tmp_path):
    def run(path):
        model = make_model(seed=0)
        result = train(model, make_data(), TrainConfig(batch_size=1, epochs=3, seed=7), checkpoint_path=path)
        return model, result

    m1, r1 = run(tmp_path / "a.tgcp")
    m2, r2 = run(tmp_path / "b.tgcp")
    assert (tmp_path / "a.tgcp").read_bytes() == (tmp_path / "b.tgcp").read_bytes()
    assert r1.loss_log == r2.loss_log and len(r1.epoch_losses) == 3

    restored = make_model(seed=99)
    restored.store.load_state_dict(load_checkpoint(tmp_path / "a.tgcp"))
    batch = all_batch(make_data())
    assert caption_loss(restored, batch)[0].value.tobytes() == caption_loss(m1, batch)[0].value.tobytes()
    assert restored.store.step == m1.store.step


def test_loss_csv(tmp_path):
    result = train(make_model(), make_data(), TrainConfig(batch_size=1, epochs=2))
    path = tmp_path / "loss.csv"
    result.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,batch,nll,reg,total"
    assert len(lines) == 1 + 4
    epoch, b, nll, reg, total = lines[1].split(",")
    assert float(total) == pytest.approx(float(nll) + float(reg))


def test_nan_loss_raises_numeric_error():
    model = make_model()
    model.b_o.value[0] = np.nan
    with pytest.raises(NumericError):
        train(model, make_data(), TrainConfig(batch_size=2, epochs=1))


def test_inconsistent_data_rejected():
    model = make_model()
    with pytest.raises(DataError):
        train(model, make_data(captions=[[4, V + 3], [5]]), TrainConfig(epochs=1))
    with pytest.raises(DataError):
        CaptionData(["a"], np.zeros((1, M, D)), np.zeros((2, K)), np.zeros((1, N_ATTR)), [(0, [4])])


def test_evaluate_nll_matches_loss():
    model = make_model(seed=6)
    data = make_data()
    _, stats = caption_loss(model, all_batch(data))
    assert evaluate_nll(model, data) == pytest.approx(stats["token_nll"], rel=1e-12)
