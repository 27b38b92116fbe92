import numpy as np
import pytest

from sdfrecon import autodiff as ad
from sdfrecon.autodiff import AdamState, GradientError, ParamStore, Tape, adam_step


def fd_scalar(f, x, h=1e-6):
    """Central finite difference of scalar f at scalar x."""
    return (f(x + h) - f(x - h)) / (2 * h)


def fd_grad(f, arr, h=1e-6):
    """Central finite differences of scalar f wrt every entry of arr."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def test_square_gradient():
    store = ParamStore()
    store.add_group("network", 1e-3)
    p = store.alloc("network", np.array(3.0))
    store.freeze()
    tape = Tape()
    with ad.recording(tape):
        theta = store.node(tape, p)
        loss = ad.sumall(ad.square(theta))
    tape.backward(loss)
    assert store.grad_view(p) == pytest.approx(6.0)


def test_unused_group_gradient_zero():
    store = ParamStore()
    store.add_group("network", 1e-3)
    store.add_group("grid", 1e-2)
    p = store.alloc("network", np.array([2.0]))
    q = store.alloc("grid", np.ones(4))
    store.freeze()
    tape = Tape()
    with ad.recording(tape):
        theta = store.node(tape, p)
        store.node(tape, q)  # bound but unused
        loss = ad.sumall(ad.square(theta))
    tape.backward(loss)
    assert np.all(store.grad_view(q) == 0.0)


def test_gradient_linearity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=7)
    store = ParamStore()
    store.add_group("network", 1e-3)
    p = store.alloc("network", x)
    store.freeze()

    def run(scale):
        store.zero_grads()
        tape = Tape()
        with ad.recording(tape):
            t = store.node(tape, p)
            loss = scale * ad.sumall(ad.mul(ad.sin(t), ad.exp(t)))
        tape.backward(loss)
        return store.grad_view(p).copy()

    g1 = run(1.0)
    g3 = run(3.0)
    np.testing.assert_allclose(g3, 3.0 * g1, rtol=1e-12)


@pytest.mark.parametrize(
    "opname",
    ["exp", "log", "sqrt", "square", "absval", "sin", "cos", "sigmoid", "relu"],
)
def test_elementwise_ops_match_fd(opname):
    rng = np.random.default_rng(42)
    x = rng.uniform(0.2, 1.5, size=11)  # positive, away from kinks
    store = ParamStore()
    store.add_group("network", 1e-3)
    p = store.alloc("network", x)
    store.freeze()
    op = getattr(ad, opname)

    def forward():
        tape = Tape()
        with ad.recording(tape):
            t = store.node(tape, p)
            loss = ad.sumall(op(t))
        return loss, tape

    loss, tape = forward()
    tape.backward(loss)
    g = store.grad_view(p).copy()
    gfd = fd_grad(lambda: float(forward()[0].value), store.view(p))
    np.testing.assert_allclose(g, gfd, rtol=1e-6, atol=1e-9)


def test_composite_graph_matches_fd():
    rng = np.random.default_rng(7)
    store = ParamStore()
    store.add_group("network", 1e-3)
    W1 = store.alloc("network", rng.normal(size=(4, 5)) * 0.5)
    b1 = store.alloc("network", rng.normal(size=5) * 0.1)
    W2 = store.alloc("network", rng.normal(size=(5, 2)) * 0.5)
    store.freeze()
    x = rng.normal(size=(9, 4))

    def forward():
        tape = Tape()
        with ad.recording(tape):
            w1 = store.node(tape, W1)
            bb = store.node(tape, b1)
            w2 = store.node(tape, W2)
            h = ad.softplus(ad.add(ad.matmul(x, w1), bb), sharpness=3.0)
            y = ad.matmul(h, w2)
            loss = ad.sumall(ad.square(ad.sub(y, 0.3)))
        return loss, tape

    loss, tape = forward()
    tape.backward(loss)
    for p in (W1, b1, W2):
        g = store.grad_view(p).copy()
        gfd = fd_grad(lambda: float(forward()[0].value), store.view(p), h=1e-5)
        np.testing.assert_allclose(g, gfd, rtol=1e-5, atol=1e-8)


def test_broadcast_add_mul_unbroadcast():
    rng = np.random.default_rng(3)
    store = ParamStore()
    store.add_group("network", 1e-3)
    b = store.alloc("network", rng.normal(size=4))
    store.freeze()
    x = rng.normal(size=(6, 4))

    def forward():
        tape = Tape()
        with ad.recording(tape):
            bb = store.node(tape, b)
            loss = ad.sumall(ad.mul(ad.add(x, bb), bb))
        return loss, tape

    loss, tape = forward()
    tape.backward(loss)
    g = store.grad_view(b).copy()
    gfd = fd_grad(lambda: float(forward()[0].value), store.view(b), h=1e-6)
    np.testing.assert_allclose(g, gfd, rtol=1e-6)


def test_concat_cols_reshape_roundtrip():
    rng = np.random.default_rng(5)
    store = ParamStore()
    store.add_group("network", 1e-3)
    a = store.alloc("network", rng.normal(size=(3, 2)))
    b = store.alloc("network", rng.normal(size=(3, 3)))
    store.freeze()

    def forward():
        tape = Tape()
        with ad.recording(tape):
            na, nb = store.node(tape, a), store.node(tape, b)
            cat = ad.concat([na, nb], axis=-1)
            left = ad.cols(cat, 0, 2)
            right = ad.cols(cat, 2, 5)
            flat = ad.reshape(right, (9,))
            loss = ad.sumall(ad.square(left)) + ad.sumall(ad.sin(flat))
        return loss, tape

    loss, tape = forward()
    tape.backward(loss)
    for p in (a, b):
        gfd = fd_grad(lambda: float(forward()[0].value), store.view(p), h=1e-6)
        np.testing.assert_allclose(store.grad_view(p), gfd, rtol=1e-6, atol=1e-9)


def test_exclusive_cumsum_forward_and_backward():
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    out = ad.exclusive_cumsum(x)
    np.testing.assert_allclose(out, [[0.0, 1.0, 3.0, 6.0]])

    rng = np.random.default_rng(11)
    store = ParamStore()
    store.add_group("network", 1e-3)
    p = store.alloc("network", rng.normal(size=(2, 5)))
    store.freeze()
    coef = rng.normal(size=(2, 5))

    def forward():
        tape = Tape()
        with ad.recording(tape):
            t = store.node(tape, p)
            loss = ad.sumall(ad.mul(ad.exp(ad.exclusive_cumsum(t)), coef))
        return loss, tape

    loss, tape = forward()
    tape.backward(loss)
    gfd = fd_grad(lambda: float(forward()[0].value), store.view(p), h=1e-6)
    np.testing.assert_allclose(store.grad_view(p), gfd, rtol=1e-6)


def test_where_mask_routes_gradients():
    store = ParamStore()
    store.add_group("network", 1e-3)
    a = store.alloc("network", np.array([1.0, 2.0, 3.0]))
    b = store.alloc("network", np.array([10.0, 20.0, 30.0]))
    store.freeze()
    mask = np.array([True, False, True])
    tape = Tape()
    with ad.recording(tape):
        na, nb = store.node(tape, a), store.node(tape, b)
        loss = ad.sumall(ad.where_mask(mask, na, nb))
    tape.backward(loss)
    np.testing.assert_allclose(store.grad_view(a), [1.0, 0.0, 1.0])
    np.testing.assert_allclose(store.grad_view(b), [0.0, 1.0, 0.0])


def test_grid_blend_gradient_matches_fd():
    rng = np.random.default_rng(9)
    store = ParamStore()
    store.add_group("grid", 1e-2)
    table = store.alloc("grid", rng.normal(size=(16, 3)))
    store.freeze()
    n = 5
    idx = rng.integers(0, 16, size=(n, 8))
    w = rng.uniform(0.0, 1.0, size=(n, 8))
    wg = rng.normal(size=(n, 8, 3))
    cf = rng.normal(size=(n, 3))
    cd = rng.normal(size=(n, 3, 3))

    def forward():
        tape = Tape()
        with ad.recording(tape):
            t = store.node(tape, table)
            feat, dfeat = ad.grid_blend(t, idx, w, wg)
            loss = ad.sumall(ad.mul(feat, cf)) + ad.sumall(
                ad.square(ad.mul(dfeat, cd))
            )
        return loss, tape

    loss, tape = forward()
    tape.backward(loss)
    g = store.grad_view(table).copy()
    gfd = fd_grad(lambda: float(forward()[0].value), store.view(table), h=1e-6)
    np.testing.assert_allclose(g, gfd, rtol=1e-6, atol=1e-9)


def test_inference_mode_returns_plain_arrays():
    x = np.ones((2, 2))
    out = ad.add(ad.exp(x), 1.0)
    assert isinstance(out, np.ndarray)


def test_adam_zero_gradient_keeps_parameters():
    store = ParamStore()
    store.add_group("network", 1e-2)
    p = store.alloc("network", np.array([1.0, -2.0]))
    store.freeze()
    state = AdamState(store)
    before = store.view(p).copy()
    adam_step(store, state)
    np.testing.assert_array_equal(store.view(p), before)


def test_adam_first_step_magnitude():
    # theta=0, g=1, lr=0.01: bias correction gives mhat=vhat=1, so the
    # first update is -lr/(1+eps)
    store = ParamStore()
    store.add_group("network", 1e-2)
    p = store.alloc("network", np.array(0.0))
    store.freeze()
    store.grad_view(p)[...] = 1.0
    state = AdamState(store, beta1=0.9, beta2=0.999, eps=1e-8)
    adam_step(store, state)
    assert store.view(p) == pytest.approx(-0.01, abs=1e-9)
    assert store.grad_view(p) == 0.0  # zeroed after the step


def test_adam_group_learning_rate_ratio():
    store = ParamStore()
    store.add_group("network", 5e-4)
    store.add_group("grid", 1e-2)
    a = store.alloc("network", np.array(0.0))
    b = store.alloc("grid", np.array(0.0))
    store.freeze()
    store.grad_view(a)[...] = 1.0
    store.grad_view(b)[...] = 1.0
    adam_step(store, AdamState(store))
    ratio = store.view(b) / store.view(a)
    assert ratio == pytest.approx(20.0, rel=1e-9)


def test_nonfinite_gradient_names_group():
    store = ParamStore()
    store.add_group("grid", 1e-2)
    p = store.alloc("grid", np.zeros(3))
    store.freeze()
    store.grad_view(p)[0] = np.nan
    with pytest.raises(GradientError, match="grid"):
        adam_step(store, AdamState(store))


def test_determinism_bitwise_over_steps():
    def run():
        rng = np.random.default_rng(123)
        store = ParamStore()
        store.add_group("network", 1e-3)
        p = store.alloc("network", rng.normal(size=20))
        store.freeze()
        state = AdamState(store)
        x = rng.normal(size=20)
        for _ in range(50):
            tape = Tape()
            with ad.recording(tape):
                t = store.node(tape, p)
                loss = ad.sumall(ad.square(ad.sub(ad.sigmoid(t), x)))
            tape.backward(loss)
            adam_step(store, state)
        return store.view(p).copy()

    a = run()
    b = run()
    assert np.array_equal(a, b)
