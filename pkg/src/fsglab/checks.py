"""Self-contained property suite behind the `check` CLI subcommand.

Each check returns (ok, detail).  These are fast spot versions of the full
pytest suite, meant as a smoke test of an installed build.
"""

from __future__ import annotations

import math

import numpy as np

from .convergence import make_quadratic_problem, pk_recursion_check, run_fsg_convex
from .data import gen_synthetic
from .history import GradientHistoryBuffer
from .hypernet import FastNetParams, HyperNetBundle, fast_backward, fast_forward, slow_backward, slow_forward
from .model import Model
from .optim import momentum_expand
from .quantize import preprocess, quantize
from .rng import Rng
from .ssm import discretize_zoh, ssm_conv, ssm_scan
from .tensor import conv2d_backward, conv2d_forward, finite_diff_check
from .trainer import FsgTrainer, SteTrainer, TrainConfig, OptimizerConfig, LrDecay


def check_quantize_contract():
    rng = Rng(11)
    for i in range(200):
        w = rng.normals((4, 5)) * (10.0 ** (i % 5 - 2))
        w_hat, _ = preprocess(w)
        if w_hat.min() < 0.0 or w_hat.max() > 1.0:
            return False, f"w_hat out of [0,1] on draw {i}"
        w_b = quantize(w_hat, 1)
        if not np.all(np.isin(w_b, (-1.0, 1.0))):
            return False, f"non-binary output on draw {i}"
    w_hat, da = preprocess(np.zeros((3, 3)))
    if not (np.all(w_hat == 0.5) and np.all(da == 0.0) and np.all(np.isfinite(w_hat))):
        return False, "zero-tensor guard failed"
    return True, "200 random draws binary, degenerate guard clean"


def check_history_fifo():
    for cap in (1, 3, 6):
        buf = GradientHistoryBuffer(0, 4, cap)
        pushed = []
        for t in range(1, 13):
            g = np.full(4, float(t))
            buf.push(g)
            pushed.append(g)
            if len(buf) != min(t, cap):
                return False, f"length {len(buf)} != min({t},{cap})"
            win = buf.window()
            if not np.array_equal(win[-4:], pushed[-1]):
                return False, "window tail is not the newest gradient"
    return True, "FIFO length and window tail hold for l in {1,3,6}"


def check_zoh_scalar():
    a_bar, b_bar = discretize_zoh(np.array(-1.0), np.array(1.0), np.array(0.1))
    ok = (abs(float(a_bar) - math.exp(-0.1)) < 1e-12
          and abs(float(b_bar) - (1.0 - math.exp(-0.1))) < 1e-12)
    return ok, f"a_bar={float(a_bar):.9f} b_bar={float(b_bar):.9f}"


def check_scan_conv_duality():
    rng = Rng(7)
    worst = 0.0
    for _ in range(50):
        n = 1 + rng.integer(3)
        a = -rng.uniforms((n,)) * 0.9 - 0.05
        a_bar, b_bar = discretize_zoh(a, rng.normals((n,)), np.array(0.3))
        c = rng.normals((n,))
        x = rng.normals((32,))
        diff = np.max(np.abs(ssm_scan(a_bar, b_bar, c, x) - ssm_conv(a_bar, b_bar, c, x)))
        worst = max(worst, float(diff))
    return worst < 1e-10, f"max |scan - conv| = {worst:.2e} over 50 systems"


def check_momentum_identity():
    rng = Rng(3)
    worst = 0.0
    for _ in range(20):
        beta = rng.uniform()
        alpha = 0.1 + rng.uniform()
        grads = [rng.normals((3,)) for _ in range(20)]
        v = np.zeros(3)
        for g in grads:
            v = beta * v - alpha * g
        worst = max(worst, float(np.max(np.abs(v - momentum_expand(beta, alpha, grads)))))
    return worst < 1e-12, f"max |iterated - closed form| = {worst:.2e}"


def check_fast_linearity():
    rng = Rng(5)
    p = FastNetParams.init(rng, hidden=16)
    u = rng.normals((3, 3))
    v = rng.normals((3, 3))
    uh = rng.normals((3, 3))
    vh = rng.normals((3, 3))
    lhs = fast_forward(2.0 * u + 3.0 * v, 2.0 * uh + 3.0 * vh, p)
    rhs = 2.0 * fast_forward(u, uh, p) + 3.0 * fast_forward(v, vh, p)
    worst = float(np.max(np.abs(lhs - rhs)))
    return worst < 1e-12, f"max |f(au+bv) - af(u)-bf(v)| = {worst:.2e}"


def _scalarized_fd(f_forward, f_backward, x, rng, h=1e-6):
    """FD-check a tensor op through a fixed random scalarization."""
    out = f_forward(x)
    cot = rng.normals(out.shape)
    analytic = f_backward(x, cot)
    return finite_diff_check(lambda p: float(np.sum(cot * f_forward(p))), x, analytic, h)


def check_gradients():
    rng = Rng(21)
    worst = 0.0
    # conv2d
    for _ in range(2):
        x = rng.normals((2, 2, 4, 4))
        w = rng.normals((3, 2, 3, 3))
        err = _scalarized_fd(
            lambda p: conv2d_forward(p, w, 1, 1),
            lambda p, cot: conv2d_backward(p, w, cot, 1, 1)[0], x, rng)
        worst = max(worst, err)
    # fast net
    p = FastNetParams.init(rng, hidden=8)
    g = rng.normals((2, 3))
    wh = rng.normals((2, 3))
    cot = rng.normals((2, 3))
    grads, _, _ = fast_backward(g, wh, p, cot)
    err = finite_diff_check(
        lambda m: float(np.sum(cot * fast_forward(g, wh,
            FastNetParams(m, p.m2, p.m3, p.b1, p.b2, p.b3)))), p.m1, grads["fast.m1"])
    worst = max(worst, err)
    # slow net (tiny dims, O(1) parameter scales for FD conditioning)
    bundle = HyperNetBundle.init(Rng(9), n_layers=2, fast_kind="off",
                                 slow_kind="selective-ssm", d=3, n_state=2, expand=2)
    r2 = Rng(90)
    for name, arr in bundle.named_params():
        if name == "slow.a_log":
            arr[...] = r2.uniforms(arr.shape) - 0.7
        else:
            arr[...] = 0.8 * r2.normals(arr.shape)
    hist = rng.normals((8,)) * 0.5
    cot = rng.normals((2, 2))
    grads = slow_backward(1, hist, bundle, (2, 2), cot)
    err = finite_diff_check(
        lambda w: float(np.sum(cot * _slow_with(bundle, "w_in", w, hist))),
        bundle.slow.w_in, grads["slow.w_in"], h=1e-6)
    worst = max(worst, err)
    return worst < 1e-4, f"max FD relative error = {worst:.2e}"


def _slow_with(bundle, attr, value, hist):
    saved = getattr(bundle.slow, attr).copy()
    getattr(bundle.slow, attr)[...] = value
    try:
        return slow_forward(1, hist, bundle, (2, 2))
    finally:
        getattr(bundle.slow, attr)[...] = saved


def _toy_config(**kw):
    base = dict(
        alpha=1.0, beta=0.3, l=3,
        base_optimizer=OptimizerConfig(kind="sgd", lr=0.05),
        hyper_lr=1e-3, epochs=1, batch_size=8,
        lr_decay=LrDecay(every=0, factor=1.0), seed=99,
        slow_kind="off", fast_kind="identity",
        token_dim=4, state_dim=2, expand=2, fast_hidden=8,
    )
    base.update(kw)
    return TrainConfig(**base)


def check_degeneracy_short():
    data = gen_synthetic("blobs", 16, 0.4, Rng(17))
    layers = ["dense:2:8", "bias:8", "relu", "dense:8:2:bin", "bias:2"]
    fsg = FsgTrainer(Model.build(layers, Rng(99)), _toy_config())
    ste = SteTrainer(Model.build(layers, Rng(99)), _toy_config())
    fsg.keep_forward_trace = True
    ste.keep_forward_trace = True
    for trainer in (fsg, ste):
        for _ in range(3):
            for bx, by in trainer._batches(data.x, data.y):
                trainer.step(bx, by)
    for (it_f, loss_f, snap_f), (it_s, loss_s, snap_s) in zip(fsg.forward_trace,
                                                              ste.forward_trace):
        if loss_f != loss_s:
            return False, f"loss diverged at iteration {it_f}"
        for key in snap_s:
            if not np.array_equal(snap_f[key], snap_s[key]):
                return False, f"forward state {key} diverged at iteration {it_f}"
    return True, f"{len(ste.forward_trace)} iterations bit-identical"


def check_pk_identity():
    rng = Rng(31)
    problem = make_quadratic_problem(dim=3, n_components=16, noise=0.1, rng=rng)
    trace = run_fsg_convex(problem, C=1.0, beta=0.5, T=200, repeats=2,
                           rng=rng.derive("bench"), slow_noise=0.05)
    resid = pk_recursion_check(trace, 0.5)
    return resid < 1e-10, f"max recursion residual = {resid:.2e}"


def check_determinism():
    data = gen_synthetic("blobs", 8, 0.3, Rng(23))
    layers = ["dense:2:4", "bias:4", "relu", "dense:4:2:bin", "bias:2"]

    def run():
        cfg = _toy_config(fast_kind="mlp", slow_kind="selective-ssm", l=2,
                          base_optimizer=OptimizerConfig(kind="adam", lr=1e-3))
        tr = FsgTrainer(Model.build(layers, Rng(5)), cfg)
        recs = [tr.train_epoch(data.x, data.y) for _ in range(2)]
        return [repr(r) for r in recs]

    first, second = run(), run()
    return first == second, "two runs produced identical metric streams" if first == second \
        else "metric streams differ"


ALL_CHECKS = [
    ("quantize-contract", check_quantize_contract),
    ("history-fifo", check_history_fifo),
    ("zoh-scalar", check_zoh_scalar),
    ("scan-conv-duality", check_scan_conv_duality),
    ("momentum-identity", check_momentum_identity),
    ("fast-linearity", check_fast_linearity),
    ("gradient-checks", check_gradients),
    ("degeneracy", check_degeneracy_short),
    ("pk-recursion", check_pk_identity),
    ("determinism", check_determinism),
]


def run_all(printer=print) -> bool:
    all_ok = True
    for name, fn in ALL_CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not a stop
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        printer(f"{'PASS' if ok else 'FAIL'}  {name:<20} {detail}")
    return all_ok
