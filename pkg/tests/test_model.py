"""Encoder model tests, including a straight-line numpy oracle for one block."""

import numpy as np
import pytest
from scipy.special import erf

from mvcr import augment
from mvcr import tensor as T
from mvcr.augment import MvcrConfig
from mvcr.model import Batch, EncoderConfig, EncoderModel
from mvcr.tensor import Tensor


def tiny_cfg(**kw):
    base = dict(num_layers=2, hidden_dim=8, n_heads=2, ffn_dim=16,
                vocab_size=12, max_seq_len=6, task="sequence-classify",
                num_classes=2)
    base.update(kw)
    return EncoderConfig(**base)


def tiny_model(seed=0, mvcr=None, **kw):
    return EncoderModel.create(tiny_cfg(**kw), mvcr, seed=seed,
                               dtype=np.float64)


def seq_batch(seed=0, b=3, s=4, cfg=None):
    rs = np.random.RandomState(seed)
    cfg = cfg or tiny_cfg()
    return Batch(ids=rs.randint(0, cfg.vocab_size, size=(b, s)),
                 labels=rs.randint(0, cfg.num_classes, size=b))


# ---------------------------------------------------------------------------
# config validation

def test_config_rejects_bad_dims_and_task():
    with pytest.raises(ValueError):
        tiny_cfg(hidden_dim=10, n_heads=3)
    with pytest.raises(ValueError):
        tiny_cfg(num_layers=0)
    with pytest.raises(ValueError):
        tiny_cfg(task="regression")


def test_default_mini_shape():
    cfg = EncoderConfig()
    assert (cfg.num_layers, cfg.hidden_dim, cfg.n_heads,
            cfg.ffn_dim, cfg.vocab_size, cfg.max_seq_len) == \
        (4, 64, 4, 128, 256, 32)


# ---------------------------------------------------------------------------
# encode

def test_encode_rejects_long_sequences_and_bad_ids():
    model = tiny_model()
    with pytest.raises(ValueError):
        model.encode(np.zeros((1, 7), dtype=int), "eval")
    with pytest.raises(ValueError):
        model.encode(np.full((1, 3), 12), "eval")


def test_eval_encode_is_a_pure_function():
    model = tiny_model(seed=1)
    ids = np.random.RandomState(2).randint(0, 12, size=(2, 5))
    h1, _ = model.encode(ids, "eval")
    h2, _ = model.encode(ids, "eval")
    assert np.array_equal(h1.data, h2.data)


def test_no_insertion_layers_train_equals_eval():
    model = tiny_model(seed=3)
    ids = np.random.RandomState(4).randint(0, 12, size=(2, 5))
    h_train, acts = model.encode(ids, "train", seed=9, step=5)
    h_eval, _ = model.encode(ids, "eval")
    assert acts == {}
    assert np.array_equal(h_train.data, h_eval.data)


def test_eval_with_pools_equals_vanilla_forward():
    mv = MvcrConfig(insertion_layers=(1,), pool_dims=(3, 5))
    model = tiny_model(seed=5, mvcr=mv)
    assert model.pools  # pools exist yet must not touch eval
    ids = np.random.RandomState(6).randint(0, 12, size=(2, 5))
    h_eval, _ = model.encode(ids, "eval")
    h_plain, _ = model.strip_augmentation().encode(ids, "eval")
    assert np.array_equal(h_eval.data, h_plain.data)


def test_layer1_output_matches_straight_line_oracle():
    model = tiny_model(seed=7)
    ids = np.random.RandomState(8).randint(0, 12, size=(1, 3))
    b, s, d, heads = 1, 3, 8, 2

    # straight-line numpy recomputation of embedding + one block
    def ln(v, gain, bias):
        mu = v.mean(-1, keepdims=True)
        var = v.var(-1, keepdims=True)
        return (v - mu) / np.sqrt(var + 1e-5) * gain + bias

    def gelu(v):
        return v * 0.5 * (1.0 + erf(v / np.sqrt(2.0)))

    h = model.token_emb.data[ids] + model.pos_emb.data[:s]
    blk = model.blocks[0]
    x = ln(h, blk.norm1.gain.data, blk.norm1.bias.data)
    q = x @ blk.wq.weight.data.T + blk.wq.bias.data
    k = x @ blk.wk.weight.data.T + blk.wk.bias.data
    v = x @ blk.wv.weight.data.T + blk.wv.bias.data
    dh = d // heads
    out = np.zeros((b, s, d))
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        scores = q[0, :, sl] @ k[0, :, sl].T / np.sqrt(dh)
        e = np.exp(scores - scores.max(-1, keepdims=True))
        attn = e / e.sum(-1, keepdims=True)
        out[0, :, sl] = attn @ v[0, :, sl]
    h = h + out @ blk.wo.weight.data.T + blk.wo.bias.data
    f = ln(h, blk.norm2.gain.data, blk.norm2.bias.data)
    f = gelu(f @ blk.ff1.weight.data.T + blk.ff1.bias.data)
    h = h + f @ blk.ff2.weight.data.T + blk.ff2.bias.data

    got = blk.forward(T.add(
        T.embedding(model.token_emb, ids),
        T.tile_leading(T.slice_axis(model.pos_emb, 0, 0, s), b))).data
    np.testing.assert_allclose(got, h, rtol=1e-10)


# ---------------------------------------------------------------------------
# task heads

def test_uniform_logits_loss_is_log_num_classes():
    model = tiny_model(num_classes=3)
    model.head.weight.data[:] = 0.0
    model.head.bias.data[:] = 0.0
    batch = seq_batch(cfg=tiny_cfg(num_classes=3))
    batch.labels = np.array([0, 1, 2])
    loss, _, _ = model.task_forward(batch, "eval")
    np.testing.assert_allclose(loss.item(), np.log(3.0), rtol=1e-12)


def test_confident_correct_logits_loss_near_zero():
    model = tiny_model()
    model.head.weight.data[:] = 0.0
    model.head.bias.data[:] = [30.0, -30.0]
    batch = seq_batch()
    batch.labels = np.zeros(3, dtype=int)
    loss, preds, _ = model.task_forward(batch, "eval")
    assert loss.item() < 1e-12
    np.testing.assert_array_equal(preds, 0)


def test_three_class_loss_matches_hand_computation():
    model = tiny_model(num_classes=3)
    batch = seq_batch(cfg=tiny_cfg(num_classes=3), seed=9)
    batch.labels = np.array([2, 0, 1])
    h, _ = model.encode(batch.ids, "eval")
    logits = (h.data[:, 0] @ model.head.weight.data.T
              + model.head.bias.data)
    e = np.exp(logits - logits.max(-1, keepdims=True))
    p = e / e.sum(-1, keepdims=True)
    expected = -np.mean(np.log(p[np.arange(3), batch.labels]))
    loss, _, _ = model.task_forward(batch, "eval")
    np.testing.assert_allclose(loss.item(), expected, rtol=1e-10)


def test_label_out_of_range_rejected():
    model = tiny_model()
    batch = seq_batch()
    batch.labels = np.array([0, 1, 2])  # 2 classes only
    with pytest.raises(ValueError):
        model.task_forward(batch, "eval")


def test_token_task_loss_ignores_masked_positions():
    model = tiny_model(task="token-tag", num_classes=3)
    rs = np.random.RandomState(10)
    ids = rs.randint(0, 12, size=(2, 5))
    labels = rs.randint(0, 3, size=(2, 5))
    label_mask = np.array([[True, True, True, False, False],
                           [True, True, True, True, False]])
    pad_mask = label_mask.copy()
    base = Batch(ids, labels, pad_mask, label_mask)
    loss1, _, _ = model.task_forward(base, "eval")

    ids2 = ids.copy()
    labels2 = labels.copy()
    ids2[~pad_mask] = 11  # rewrite padding content
    labels2[~label_mask] = 2
    loss2, _, _ = model.task_forward(Batch(ids2, labels2, pad_mask,
                                           label_mask), "eval")
    np.testing.assert_allclose(loss1.item(), loss2.item(), rtol=1e-12)


# ---------------------------------------------------------------------------
# gradients per parameter group

def test_task_gradients_per_group_match_central_differences():
    mv = MvcrConfig(insertion_layers=(1,), pool_dims=(3,), layer_gate_prob=1.0)
    model = tiny_model(seed=11, mvcr=mv)
    batch = seq_batch(seed=12, b=2, s=3)
    batch.labels = np.array([0, 1])
    # one representative parameter per group, fixed stochastic counters
    points = [model.blocks[0].wv.weight,  # backbone
              model.head.weight,  # head
              model.pools[1][0].down.weight]  # pool

    def fn(*ps):
        loss, _, _ = model.task_forward(batch, "train", seed=13, step=2)
        return loss

    report = T.check_gradients(fn, points)
    assert report.ok(1e-4), f"max rel err {report.max_rel_error}"


# ---------------------------------------------------------------------------
# parameter groups and plug-out

def test_param_groups_partition_everything():
    mv = MvcrConfig(insertion_layers=(1, 2), pool_dims=(3, 5))
    model = tiny_model(seed=14, mvcr=mv)
    groups = model.param_groups()
    names = [g.name for g in groups]
    assert names == ["backbone", "head", "hae"]
    total = sum(len(g.params) for g in groups)
    assert total == len(model.all_params())
    assert len(groups[2].params) == 2 * 2 * (4 + 4)  # 2 layers x 2 members


def test_plug_out_drops_all_pool_parameters():
    mv = MvcrConfig(insertion_layers=(1,), pool_dims=(3, 5))
    model = tiny_model(seed=15, mvcr=mv)
    bare = augment.plug_out(model)
    vanilla = tiny_model(seed=15)
    assert len(bare.all_params()) == len(vanilla.all_params())
    assert bare.hae_params() == []
    assert not any(k.startswith("hae.") for k in bare.named_params())


def test_plug_out_forward_equals_eval_forward():
    mv = MvcrConfig(insertion_layers=(1, 2), pool_dims=(3,))
    model = tiny_model(seed=16, mvcr=mv)
    ids = np.random.RandomState(17).randint(0, 12, size=(2, 4))
    bare = augment.plug_out(model)
    h_bare, _ = bare.encode(ids, "train", seed=1, step=0)  # no gated branch
    h_eval, _ = model.encode(ids, "eval")
    assert np.array_equal(h_bare.data, h_eval.data)
    # shared parameters, not copies
    assert bare.token_emb is model.token_emb
