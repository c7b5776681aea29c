"""Finite-difference oracles and primitive gradient cases shared by the tests."""

import numpy as np

from mird import tensor as T
from mird.tensor import Tensor


def numeric_grad(f, arrays, h=1e-6):
    """Central differences of the scalar ``f()`` with respect to each array,
    perturbed in place."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def rel_error(analytic, numeric, floor=1e-5):
    """Max abs difference over the larger of the two max magnitudes.

    The floor keeps gradients that are exactly zero by symmetry (a key bias
    under a shift-invariant sparsemax, say) from dividing float noise by
    float noise.
    """
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def check_grads(build, params, h=1e-5):
    """``build()`` returns a scalar Tensor depending on the Tensors ``params``.
    Returns the worst relative error over all of them."""
    loss = build()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    numeric = numeric_grad(lambda: build().item(), [p.data for p in params], h)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def _pos(rng, *shape):
    return Tensor(rng.uniform(0.5, 2.0, size=shape), requires_grad=True)


def primitive_cases(rng):
    """(name, params, build) for every differentiable primitive. Inputs keep
    clear of kinks (clip bounds, minimum ties, norm at the origin)."""
    cases = []

    def add(name, params, fn):
        cases.append((name, params, fn))

    a, b = leaf(rng, 3, 4), leaf(rng, 4)
    add("add", [a, b], lambda a=a, b=b: T.sum_(T.square(a + b)))
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 1)
    add("sub", [a, b], lambda a=a, b=b: T.sum_(T.square(a - b)))
    a, b = leaf(rng, 2, 5), leaf(rng, 2, 5)
    add("hadamard", [a, b], lambda a=a, b=b: T.sum_(T.hadamard(a, b) * a))
    a, b = leaf(rng, 3, 2), _pos(rng, 3, 2)
    add("div", [a, b], lambda a=a, b=b: T.sum_(a / b))
    a = leaf(rng, 4, 3)
    bb = Tensor(a.data + np.where(rng.random((4, 3)) < 0.5, 0.3, -0.3), requires_grad=True)
    add("minimum", [a, bb], lambda a=a, b=bb: T.sum_(T.square(T.minimum(a, b))))
    a, b = leaf(rng, 3, 3), leaf(rng, 3, 3)
    cond = rng.random((3, 3)) < 0.5
    add("where", [a, b], lambda a=a, b=b: T.sum_(T.square(T.where(cond, a, b))))
    a = leaf(rng, 5)
    add("neg", [a], lambda a=a: T.sum_(T.neg(a) * a))
    a = leaf(rng, 3, 4, scale=3.0)
    add("sigmoid", [a], lambda a=a: T.sum_(T.sigmoid(a) * a))
    a = leaf(rng, 3, 4)
    add("tanh", [a], lambda a=a: T.sum_(T.tanh(a) * a))
    a = leaf(rng, 3, 4)
    add("exp", [a], lambda a=a: T.sum_(T.exp(a)))
    a = _pos(rng, 3, 4)
    add("log", [a], lambda a=a: T.sum_(T.log(a) * a))
    a = Tensor(rng.choice([-1.0, 1.0], size=(4, 4)) * rng.uniform(0.1, 3.0, size=(4, 4)), requires_grad=True)
    a.data[np.abs(np.abs(a.data) - 2.0) < 0.05] = 1.0
    add("clip", [a], lambda a=a: T.sum_(T.square(T.clip(a, -2.0, 2.0))))
    a = leaf(rng, 3, 4)
    add("sum", [a], lambda a=a: T.sum_(T.square(T.sum_(a, axis=0))))
    a = leaf(rng, 3, 4)
    add("mean", [a], lambda a=a: T.sum_(T.square(T.mean(a, axis=1, keepdims=True)) * 3.0))
    a = leaf(rng, 3, 4)
    add("l2_norm", [a], lambda a=a: T.sum_(T.l2_norm(a, axis=-1)))
    a = leaf(rng, 3, 4)
    add("frobenius_norm", [a], lambda a=a: T.frobenius_norm(a))
    a = leaf(rng, 3, 5)
    add("logsumexp", [a], lambda a=a: T.sum_(T.logsumexp(a, axis=-1)))
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 2)
    add("matmul", [a, b], lambda a=a, b=b: T.sum_(T.square(T.matmul(a, b))))
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 2)
    add("concat", [a, b], lambda a=a, b=b: T.sum_(T.square(T.concat([a, b], axis=-1)) * np.arange(5.0)))
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 3)
    add("stack", [a, b], lambda a=a, b=b: T.sum_(T.square(T.stack([a, b], axis=1)) * np.arange(3.0)))
    a = leaf(rng, 4, 3)
    add("getitem", [a], lambda a=a: T.sum_(T.square(a[np.array([0, 2, 2]), 1:])))
    a = leaf(rng, 2, 6)
    add("reshape", [a], lambda a=a: T.sum_(T.square(T.reshape(a, (3, 4))) * np.arange(4.0)))
    a = leaf(rng, 2, 3, 4)
    add("swapaxes", [a], lambda a=a: T.sum_(T.square(T.swapaxes(a, 0, 2)) * np.arange(2.0)))
    table = leaf(rng, 6, 3)
    ids = np.array([[0, 5, 5], [2, 1, 0]])
    add("embedding", [table], lambda t=table: T.sum_(T.square(T.embedding(t, ids))))
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    add("squared_error", [a, b], lambda a=a, b=b: T.sum_(T.squared_error(a, b)))
    a = leaf(rng, 2, 3, 5)
    tgt = rng.integers(0, 5, size=(2, 3))
    add("cross_entropy", [a], lambda a=a: T.sum_(T.cross_entropy_logits(a, tgt)))
    return cases


def two_layer_net(rng, n=5, d_in=4, hidden=6):
    x = rng.normal(size=(n, d_in))
    y = rng.normal(size=n)
    w1, b1 = leaf(rng, d_in, hidden, scale=0.5), leaf(rng, hidden, scale=0.1)
    w2, b2 = leaf(rng, hidden, 1, scale=0.5), leaf(rng, 1, scale=0.1)

    def build():
        h = T.tanh(T.matmul(Tensor(x), w1) + b1)
        out = T.reshape(T.matmul(h, w2) + b2, (n,))
        return T.mean(T.squared_error(out, Tensor(y)))

    return [w1, b1, w2, b2], build


def tiny_config(**overrides):
    from mird.trainer import TrainConfig
    base = dict(d=3, d_w=3, hidden=3, embed_dim=3, reg_hidden=3, batch_size=4, epochs=1,
                lr_main=1e-3, split_rate=0.0)
    base.update(overrides)
    return TrainConfig(**base)


def tiny_batch(rng, n=4, d_v=2, d_a=2, vocab=5, t_max=3, labeled=None):
    from mird.data import Sample, collate
    samples = []
    for i in range(n):
        lv, ll, la = (int(rng.integers(1, t_max + 1)) for _ in range(3))
        samples.append(Sample(f"s{i}", rng.normal(size=(lv, d_v)), rng.integers(0, vocab, size=ll),
                              rng.normal(size=(la, d_a)), float(rng.normal())))
    batch = collate(samples, d_v, d_a)
    if labeled is not None:
        batch.labeled[:] = labeled
    return batch


def composite_cases(rng):
    """Gradient cases for the composed operators: sparsemax, the fused GRU,
    CLUB, and the full model objective in every constraint mode."""
    from mird.mi import GaussianConditional, club_estimate, lld_loss, nll_loss
    from mird.nn import gru_sequence
    from mird.sparsemax import sparsemax_op
    from mird.trainer import MIRD, compute_losses

    cases = []
    s = leaf(rng, 3, 5)
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0], [1, 1, 1, 1, 0]], dtype=bool)
    w = rng.normal(size=(3, 5))
    cases.append(("sparsemax", [s], lambda s=s: T.sum_(sparsemax_op(s, mask) * w)))

    x, h0 = leaf(rng, 2, 4, 3), leaf(rng, 2, 5)
    wx, wh, b = leaf(rng, 3, 15, scale=0.5), leaf(rng, 5, 15, scale=0.5), leaf(rng, 15, scale=0.1)
    gmask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
    wt = rng.normal(size=(2, 4, 5))
    cases.append(("gru_sequence", [x, h0, wx, wh, b],
                  lambda: T.sum_(gru_sequence(x, h0, wx, wh, b, gmask) * wt)))

    q = GaussianConditional(rng, 3, 2)
    cx, cy = leaf(rng, 6, 3), leaf(rng, 6, 2)
    cases.append(("club_estimate", [cx, cy], lambda: club_estimate(q, cx, cy)))
    cases.append(("nll_loss", q.parameters(), lambda: nll_loss(q, cx, cy)))

    for mode in ("mim", "oc", "nc"):
        cfg = tiny_config(mode=mode)
        model = MIRD(cfg, 2, 2, 5)
        batch = tiny_batch(rng, labeled=[True, True, True, False])
        theta = [p for _, p in model.theta()]
        cases.append((f"mird[{mode}]", theta,
                      lambda m=model, c=cfg, b=batch: compute_losses(m, c, b)["loss"]))
    model = MIRD(tiny_config(), 2, 2, 5)
    batch = tiny_batch(rng)
    from mird.data import pooled_inputs
    lat = {k: z.detach() for k, z in model.encode(batch).as_dict().items()}
    inp = pooled_inputs(batch, 5)
    cases.append(("mird[lld]", [p for _, p in model.theta_var()],
                  lambda: lld_loss(lat, inp, model.estimators)))
    return cases


def simplex_projection_enumerate(v):
    """Exact projection onto the simplex by trying every support set and
    keeping the nearest feasible candidate. Exponential; short vectors only."""
    from itertools import combinations
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    best, best_d = None, np.inf
    for k in range(1, n + 1):
        for sup in combinations(range(n), k):
            idx = list(sup)
            p = np.zeros(n)
            p[idx] = v[idx] - (v[idx].sum() - 1.0) / k
            if p.min() < 0:
                continue
            d = np.sum((p - v) ** 2)
            if d < best_d:
                best, best_d = p, d
    return best


def simplex_projection_bisect(v, iters=200):
    """Projection via bisection on the threshold solving sum(max(v - t, 0)) = 1."""
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min() - 1.0, v.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(v - mid, 0.0).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - 0.5 * (lo + hi), 0.0)


def gaussian_pairs(rho, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1))
    y = rho * x + np.sqrt(1.0 - rho ** 2) * rng.normal(size=(n, 1))
    return x, y


def trained_club(rho, n=10000, seed=0, steps=800, lr=1e-2):
    """Fit q(y|x) by NLL on correlated Gaussian pairs, then score CLUB on them."""
    from mird.mi import GaussianConditional, club_estimate, nll_loss
    from mird.optim import Adam
    from mird.tensor import no_grad
    x, y = gaussian_pairs(rho, n, seed)
    q = GaussianConditional(np.random.default_rng(seed + 1000), 1, 1)
    opt = Adam(q.parameters(), lr=lr)
    for _ in range(steps):
        opt.zero_grad()
        nll_loss(q, x, y).backward()
        opt.step()
    with no_grad():
        return club_estimate(q, x, y).item()


def club_pairwise(q, x, y):
    """CLUB by the literal double sum over all (i, j) pairs."""
    from mird.mi import log_prob
    n = x.shape[0]
    pos = log_prob(q, x, y).data.mean()
    neg = 0.0
    for j in range(n):
        neg += log_prob(q, x, np.repeat(y[j:j + 1], n, axis=0)).data.sum()
    return pos - neg / n ** 2
