import numpy as np
import pytest

from helpers import finite_difference, max_grad_rel_err, rel_err
from medrek import autodiff as ad
from medrek.autodiff import Adam, Graph, Tensor
from medrek.errors import DomainError, NumericError, ShapeError, ValidationError

PRIMITIVE_TOL = 1e-4


def leaf(rng, shape, away_from_zero=False):
    data = rng.uniform(-1.0, 1.0, size=shape)
    if away_from_zero:
        # keep relu/max inputs clear of kinks so finite differences are valid
        data = np.sign(data) * (np.abs(data) + 0.05)
    return Tensor(data, requires_grad=True)


def test_relu_values_and_mask():
    x = Tensor([[-1.0, 2.0]], requires_grad=True)
    with Graph() as g:
        y = ad.relu(x)
        loss = ad.reduce_sum(y)
    assert np.array_equal(y.data, [[0.0, 2.0]])
    g.backward(loss)
    assert np.array_equal(x.grad, [[0.0, 1.0]])


def test_softmax_uniform_rows():
    x = Tensor([[0.0, 0.0], [3.0, 3.0]])
    y = ad.softmax(x, axis=1)
    assert np.allclose(y.data, 0.5)
    assert np.allclose(y.data.sum(axis=1), 1.0)


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = Tensor(np.eye(2))
    assert np.array_equal(ad.matmul(a, eye).data, a.data)


def test_sum_of_squares_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as g:
        loss = ad.reduce_sum(ad.mul(x, x))
    g.backward(loss)
    assert np.allclose(x.grad, [2.0, 4.0])


def test_gradients_accumulate_until_zeroed():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as g:
        loss = ad.reduce_sum(ad.mul(x, x))
    g.backward(loss)
    g.backward(loss)
    assert np.allclose(x.grad, [4.0, 8.0])
    x.zero_grad()
    assert x.grad is None


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as g:
        y = ad.mul(x, x)
    with pytest.raises(ShapeError):
        g.backward(y)


def test_shape_mismatch_names_op_and_shapes():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError) as exc:
        ad.matmul(a, b)
    msg = str(exc.value)
    assert "matmul" in msg and "(2, 3)" in msg


def test_log_domain_error():
    with pytest.raises(DomainError):
        ad.log(Tensor([1.0, 0.0]))


def test_exp_overflow_raises():
    with pytest.raises(NumericError):
        ad.exp(Tensor([1000.0]))


def test_gather_out_of_range():
    t = Tensor(np.zeros((3, 2)))
    with pytest.raises(ValidationError):
        ad.gather(t, [0, 3])


def test_gather_repeated_rows_accumulates():
    t = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    with Graph() as g:
        picked = ad.gather(t, [1, 1, 2])
        loss = ad.reduce_sum(picked)
    g.backward(loss)
    assert np.array_equal(t.grad, [[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]])


def test_reduce_max_tie_goes_to_first():
    t = Tensor([[2.0, 2.0, 1.0]], requires_grad=True)
    with Graph() as g:
        loss = ad.reduce_sum(ad.reduce_max(t, axis=1))
    g.backward(loss)
    assert np.array_equal(t.grad, [[1.0, 0.0, 0.0]])


def test_concat_backward_partitions_upstream():
    rng = np.random.default_rng(7)
    a = leaf(rng, (2, 3))
    b = leaf(rng, (2, 2))
    c = Tensor(rng.uniform(0.5, 1.5, size=(2, 5)))
    with Graph() as g:
        joined = ad.concat([a, b], axis=1)
        loss = ad.reduce_sum(ad.mul(joined, c))
    g.backward(loss)
    upstream_sq = float((c.data**2).sum())
    split_sq = float((a.grad**2).sum() + (b.grad**2).sum())
    assert rel_err(upstream_sq, split_sq) < 1e-12


def test_cross_entropy_matches_manual():
    logits = Tensor([[1.0, 2.0, 3.0]], requires_grad=True)
    with Graph() as g:
        loss = ad.cross_entropy(logits, [2])
    row = logits.data[0]
    manual = np.log(np.exp(row).sum()) - row[2]
    assert rel_err(float(loss.data), float(manual)) < 1e-12
    g.backward(loss)
    sm = np.exp(row) / np.exp(row).sum()
    sm[2] -= 1.0
    assert np.allclose(logits.grad, sm[None, :])


def test_kl_known_value_and_self_zero():
    p = Tensor([[0.0, 0.0]])
    q = Tensor([[0.0, float(np.log(3.0))]])
    kl = ad.kl_divergence(p, q)
    assert abs(float(kl.data) - 0.1438410362258904) < 1e-12
    same = ad.kl_divergence(q, q)
    assert abs(float(same.data)) < 1e-9
    assert float(kl.data) >= 0.0


def test_adam_converges_on_quadratic():
    w = Tensor([0.0], requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        with Graph() as g:
            diff = ad.add(w, -3.0)
            loss = ad.reduce_sum(ad.mul(diff, diff))
        g.backward(loss)
        opt.step()
    assert abs(float(w.data[0]) - 3.0) < 0.1


def test_adam_zero_grad_means_no_movement():
    w = Tensor([2.0], requires_grad=True)
    w.grad = np.zeros_like(w.data)
    opt = Adam([w], lr=0.5)
    opt.step()
    assert float(w.data[0]) == 2.0


def test_adam_missing_grad_raises():
    w = Tensor([2.0], requires_grad=True)
    opt = Adam([w], lr=0.5)
    with pytest.raises(ValidationError):
        opt.step()


def test_clip_global_norm():
    a = Tensor([3.0], requires_grad=True)
    b = Tensor([4.0], requires_grad=True)
    a.grad = np.array([3.0])
    b.grad = np.array([4.0])
    norm = ad.clip_global_norm([a, b], 1.0)
    assert abs(norm - 5.0) < 1e-12
    clipped = np.sqrt(float(a.grad[0] ** 2 + b.grad[0] ** 2))
    assert abs(clipped - 1.0) < 1e-12


def test_float32_graph_runs_and_keeps_dtype():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(3, 4)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 2)).astype(np.float32), requires_grad=True)
    with Graph() as g:
        out = ad.matmul(ad.relu(x), w)
        loss = ad.reduce_mean(out)
    assert out.dtype == np.float32
    g.backward(loss)
    assert x.grad.dtype == np.float32


# ---------------------------------------------------------------------------
# Finite-difference verification of every primitive (central differences,
# h=1e-5, relative error <= 1e-4).


def run_fd_case(build, params):
    """build() -> scalar loss Tensor; checks all params against FD."""

    def forward():
        return float(build().data)

    for p in params:
        p.zero_grad()
    with Graph() as g:
        loss = build()
    g.backward(loss)
    for p in params:
        assert p.grad is not None
        worst = max_grad_rel_err(p.grad, forward, p)
        assert worst <= PRIMITIVE_TOL, f"fd mismatch {worst:.2e} on {p.name or p.shape}"


def test_fd_matmul_add_mul_scale():
    rng = np.random.default_rng(11)
    a = leaf(rng, (3, 4))
    b = leaf(rng, (4, 2))
    c = leaf(rng, (3, 2))

    def build():
        prod = ad.matmul(a, b)
        return ad.reduce_sum(ad.scale(ad.add(ad.mul(prod, c), 0.7), 1.3))

    run_fd_case(build, [a, b, c])


def test_fd_relu_softmax_log_exp():
    rng = np.random.default_rng(12)
    x = leaf(rng, (2, 5), away_from_zero=True)
    w = Tensor(rng.uniform(0.5, 1.5, size=(2, 5)))

    def build():
        s = ad.softmax(ad.relu(x), axis=1)
        return ad.reduce_sum(ad.mul(ad.log(ad.add(ad.exp(s), 0.5)), w))

    run_fd_case(build, [x])


def test_fd_concat_reshape_transpose_gather():
    rng = np.random.default_rng(13)
    a = leaf(rng, (3, 2))
    b = leaf(rng, (2, 2))

    def build():
        joined = ad.concat([a, b], axis=0)
        picked = ad.gather(joined, [0, 2, 3, 2])
        flat = ad.reshape(ad.transpose(picked), (8, 1))
        return ad.reduce_sum(ad.mul(flat, flat))

    run_fd_case(build, [a, b])


def test_fd_reductions():
    rng = np.random.default_rng(14)
    x = leaf(rng, (3, 4), away_from_zero=True)

    def build():
        parts = [
            ad.reduce_sum(x, axis=0),
            ad.reduce_mean(x, axis=0),
            ad.reduce_max(x, axis=0),
            ad.reduce_min(x, axis=0),
        ]
        total = ad.reduce_sum(ad.concat(parts, axis=0))
        return ad.add(total, ad.reduce_mean(x))

    run_fd_case(build, [x])


def test_fd_cross_entropy_and_kl():
    rng = np.random.default_rng(15)
    p = leaf(rng, (3, 6))
    q = leaf(rng, (3, 6))

    def build():
        ce = ad.cross_entropy(p, [1, 4, 0])
        kl = ad.kl_divergence(p, q)
        return ad.add(ce, kl)

    run_fd_case(build, [p, q])


def test_fd_composed_residual_block():
    # A shape like the representation encoder: relu(W2 @ (W1 @ x)) + W1 @ x
    rng = np.random.default_rng(16)
    w1 = leaf(rng, (4, 6))
    w2 = leaf(rng, (4, 4))
    x = leaf(rng, (6, 1))

    def build():
        h = ad.matmul(w1, x)
        z = ad.add(ad.relu(ad.matmul(w2, h)), h)
        sm = ad.softmax(ad.transpose(z), axis=1)
        return ad.cross_entropy(sm, [2])

    run_fd_case(build, [w1, w2, x])


def test_fd_uses_forward_only():
    # The oracle itself must not touch backward machinery: calling it on
    # a tensor with no graph recorded still works.
    x = Tensor([[2.0]], requires_grad=True)

    def forward():
        return float((x.data**2).sum())

    fd = finite_difference(forward, x)
    assert abs(fd[(0, 0)] - 4.0) < 1e-6
