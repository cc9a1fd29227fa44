import numpy as np
import pytest

from helpers import max_grad_rel_err
from medrek import autodiff as ad
from medrek.autodiff import Graph, Tensor
from medrek.encoder import (
    RepEncoder,
    TokenEmbeddings,
    TokenTableEmbedding,
    pool_features,
    sinusoid_table,
)
from medrek.errors import ValidationError
from medrek.vocab import Vocab


def small_encoder(shared=True, seed=3):
    return RepEncoder(vocab_size=12, d_enc=4, d_rep=6, prototype_count=3, shared_qk=shared, seed=seed)


def test_pool_concatenation_order():
    emb = TokenEmbeddings(
        H=Tensor([[1.0, 2.0], [3.0, 0.0]]),
        cls=Tensor([[5.0], [5.0]]),
    )
    x = pool_features(emb)
    assert x.shape == (8, 1)
    assert np.array_equal(x.data[:, 0], [5.0, 5.0, 2.0, 1.0, 3.0, 2.0, 1.0, 0.0])


def test_pool_matches_numpy_oracle():
    rng = np.random.default_rng(5)
    h = rng.normal(size=(7, 4))
    cls = rng.normal(size=(4, 1))
    x = pool_features(TokenEmbeddings(H=Tensor(h), cls=Tensor(cls)))
    expected = np.concatenate([cls[:, 0], h.mean(axis=0), h.max(axis=0), h.min(axis=0)])
    assert np.allclose(x.data[:, 0], expected)


def test_embedding_deterministic_and_token_sensitive():
    rng1 = np.random.default_rng(9)
    rng2 = np.random.default_rng(9)
    e1 = TokenTableEmbedding(10, 4, rng1)
    e2 = TokenTableEmbedding(10, 4, rng2)
    a = e1([3, 4, 5])
    b = e2([3, 4, 5])
    assert np.array_equal(a.H.data, b.H.data)
    c = e1([3, 7, 5])
    assert not np.array_equal(a.H.data[1], c.H.data[1])
    assert np.array_equal(a.H.data[0], c.H.data[0])


def test_position_offsets_distinguish_order():
    rng = np.random.default_rng(9)
    emb = TokenTableEmbedding(10, 4, rng)
    ab = emb([3, 4])
    ba = emb([4, 3])
    assert not np.array_equal(ab.H.data, ba.H.data)


def test_vocab_rejects_unknown_token():
    v = Vocab.from_tokens(["what", "is"])
    with pytest.raises(ValidationError) as exc:
        v.encode("what was")
    assert "was" in str(exc.value)


def test_shared_roles_agree_and_ablation_differs():
    enc_shared = small_encoder(shared=True)
    x = pool_features(enc_shared.embedding([2, 5, 7]))
    zq = enc_shared.encode_shared(x, "query")
    zk = enc_shared.encode_shared(x, "key")
    assert np.array_equal(zq.z.data, zk.z.data)

    enc_split = small_encoder(shared=False)
    x2 = pool_features(enc_split.embedding([2, 5, 7]))
    zq2 = enc_split.encode_shared(x2, "query")
    zk2 = enc_split.encode_shared(x2, "key")
    assert not np.array_equal(zq2.z.data, zk2.z.data)


def test_ablation_does_not_disturb_shared_parameters():
    a = small_encoder(shared=True, seed=4)
    b = small_encoder(shared=False, seed=4)
    assert np.array_equal(a.qk_w1.data, b.qk_w1.data)
    assert np.array_equal(a.embedding.table.data, b.embedding.table.data)
    assert np.array_equal(a.prototype_tokens.data, b.prototype_tokens.data)
    assert b.key_w1 is not None and not np.array_equal(b.key_w1.data, b.qk_w1.data)


def test_value_path_uses_its_own_weights():
    enc = small_encoder()
    x = pool_features(enc.embedding([1, 2]))
    zq = enc.encode_shared(x, "query")
    zv = enc.encode_value(x)
    assert zv.role == "value"
    assert not np.array_equal(zq.z.data, zv.z.data)


def test_zero_prototype_tokens_give_zero_rep():
    enc = small_encoder()
    enc.prototype_tokens.data[:] = 0.0
    z = enc.prototype_rep()
    assert np.array_equal(z.z.data, np.zeros((6, 1)))
    assert z.role == "prototype"


def test_prototype_recomputed_from_live_parameters():
    enc = small_encoder()
    before = enc.prototype_rep().z.data.copy()
    enc.prototype_tokens.data[0, 0] += 0.5
    after = enc.prototype_rep().z.data
    assert not np.array_equal(before, after)


def test_residual_mlp_hand_oracle():
    # d_enc=1, d_rep=2 with hand-set weights; cls-row path included.
    enc = RepEncoder(vocab_size=4, d_enc=1, d_rep=2, prototype_count=1, shared_qk=True, seed=0)
    enc.qk_w1.data = np.array([[1.0, 0.0, 0.5, -1.0], [0.0, 2.0, 0.0, 1.0]])
    enc.qk_w2.data = np.array([[0.5, -0.5], [1.0, 1.0]])
    x = Tensor([[1.0], [2.0], [3.0], [4.0]])
    z = enc.encode_shared(x, "query").z.data[:, 0]
    h = enc.qk_w1.data @ np.array([1.0, 2.0, 3.0, 4.0])
    expected = np.maximum(enc.qk_w2.data @ h, 0.0) + h
    assert np.allclose(z, expected)


def test_sinusoid_table_shape_and_range():
    t = sinusoid_table(16, 6)
    assert t.shape == (16, 6)
    assert np.abs(t).max() <= 1.0


def test_encoder_gradients_match_fd():
    enc = small_encoder()
    ids = [2, 5, 7, 1]

    def build():
        zq = enc.rep_from_ids(ids, "query")
        zv = enc.rep_from_ids(ids, "value")
        zp = enc.prototype_rep()
        stacked = ad.concat([zq.z, zv.z, zp.z], axis=0)
        return ad.reduce_sum(ad.mul(stacked, stacked))

    def forward():
        return float(build().data)

    params = enc.trainable()
    for p in params:
        p.zero_grad()
    with Graph() as g:
        loss = build()
    g.backward(loss)
    for p in params:
        assert p.grad is not None, p.name
        worst = max_grad_rel_err(p.grad, forward, p)
        assert worst <= 1e-4, f"{p.name}: fd mismatch {worst:.2e}"
