"""Brute-force reference implementations used only by tests.

Everything here is deliberately slow and direct: dense solves, exhaustive
enumeration, per-sample loops.  None of these functions share code with the
implementations they validate, and all run in float64.  Instance sizes are
guarded so a test cannot accidentally launch a large run.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

_MAX_ORACLE_POINTS = 64


def _check_size(n: int):
    if n > _MAX_ORACLE_POINTS:
        raise ValueError(f"oracle instance too large: {n} > {_MAX_ORACLE_POINTS} points")


def naive_posterior(gram, obs, sigma_sq, i, j) -> float:
    """Posterior covariance entry (i, j) after observing ``obs`` with noise sigma_sq.

    Dense evaluation of k(i,j) - k(i,obs) (K_obs + sigma^2 I)^{-1} k(obs,j).
    """
    K = np.asarray(gram, dtype=np.float64)
    _check_size(K.shape[0])
    obs = np.asarray(obs, dtype=int)
    if obs.size == 0:
        return float(K[i, j])
    A = K[np.ix_(obs, obs)] + sigma_sq * np.eye(len(obs))
    w = np.linalg.solve(A, K[obs, j])
    return float(K[i, j] - K[i, obs] @ w)


def naive_posterior_diag(gram, obs, sigma_sq) -> np.ndarray:
    """Posterior variances of all points, via repeated naive_posterior."""
    K = np.asarray(gram, dtype=np.float64)
    return np.array([naive_posterior(K, obs, sigma_sq, i, i) for i in range(K.shape[0])])


def naive_greedy_maxdet(gram, sigma_sq, n_batch) -> list:
    """Greedy determinant maximization by dense determinant evaluation.

    At each step evaluates det(K[S+{x}, S+{x}] + sigma^2 I) for every
    remaining index; ties go to the lowest index.
    """
    K = np.asarray(gram, dtype=np.float64)
    n = K.shape[0]
    _check_size(n)
    selected: list[int] = []
    for _ in range(n_batch):
        best_idx, best_det = -1, -math.inf
        for x in range(n):
            if x in selected:
                continue
            S = selected + [x]
            M = K[np.ix_(S, S)] + sigma_sq * np.eye(len(S))
            d = np.linalg.det(M)
            if d > best_det:
                best_idx, best_det = x, d
        selected.append(best_idx)
    return selected


def naive_bait_objective(features, tp_indices, sel_indices, sigma_sq) -> float:
    """Total posterior variance over train+pool after observing ``sel_indices``."""
    F = np.asarray(features, dtype=np.float64)
    _check_size(F.shape[0])
    K = F @ F.T
    tp = np.asarray(tp_indices, dtype=int)
    sel = np.asarray(sel_indices, dtype=int)
    return float(sum(naive_posterior(K, sel, sigma_sq, int(i), int(i)) for i in tp))


def kernel_distances(gram) -> np.ndarray:
    """Pairwise feature-space distances sqrt(k(x,x) + k(y,y) - 2 k(x,y))."""
    K = np.asarray(gram, dtype=np.float64)
    diag = np.diag(K)
    sq = diag[:, None] + diag[None, :] - 2 * K
    return np.sqrt(np.clip(sq, 0.0, None))


def brute_force_cover_radius(gram, n_batch, mode_indices=()) -> float:
    """Optimal covering radius over all batches of the given size.

    Pool points are all indices outside ``mode_indices``; the radius of a
    batch is the max over pool points of the distance to the nearest point
    in mode + batch.  Exhaustive enumeration.
    """
    K = np.asarray(gram, dtype=np.float64)
    n = K.shape[0]
    _check_size(n)
    mode = list(int(i) for i in mode_indices)
    pool = [i for i in range(n) if i not in mode]
    if n_batch > len(pool):
        raise ValueError("batch larger than pool")
    D = kernel_distances(K)
    best = math.inf
    for combo in itertools.combinations(pool, n_batch):
        centers = mode + list(combo)
        radius = max(min(D[x, c] for c in centers) for x in pool)
        best = min(best, radius)
    return best


def cover_radius(gram, batch, mode_indices=()) -> float:
    """Covering radius of one specific batch (same convention as above)."""
    K = np.asarray(gram, dtype=np.float64)
    D = kernel_distances(K)
    mode = list(int(i) for i in mode_indices)
    pool = [i for i in range(K.shape[0]) if i not in mode]
    centers = mode + [int(b) for b in batch]
    return max(min(D[x, c] for c in centers) for x in pool)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s


def _act_grad(name, z):
    if name == "relu":
        return (z > 0).astype(np.float64)
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def explicit_gradients(model, X) -> np.ndarray:
    """Flattened per-sample gradients of the output w.r.t. all parameters.

    Per-sample float64 chain rule; row i is the concatenation over layers of
    vec([dF/dW_l | dF/db_l]).  Only intended for tiny networks.
    """
    cfg = model.config
    widths = cfg.widths
    L = cfg.depth
    W = [w.astype(np.float64) for w in model.params.weights]
    b = [v.astype(np.float64) for v in model.params.biases]
    X = np.asarray(X, dtype=np.float64)
    _check_size(X.shape[0])
    rows = []
    for x in X:
        xs = [x]
        zs = []
        h = x
        for l in range(L):
            z = (cfg.sigma_w / math.sqrt(widths[l])) * (W[l] @ h) + cfg.sigma_b * b[l]
            zs.append(z)
            if l < L - 1:
                h = _act(cfg.activation, z)
                xs.append(h)
        # sensitivities of the scalar output with respect to each z_l
        sens = [None] * L
        g = np.ones(1)
        sens[L - 1] = g
        for l in range(L - 1, 0, -1):
            g = (g @ W[l]) * (cfg.sigma_w / math.sqrt(widths[l])) * _act_grad(
                cfg.activation, zs[l - 1]
            )
            sens[l - 1] = g
        blocks = []
        for l in range(L):
            xin = np.append((cfg.sigma_w / math.sqrt(widths[l])) * xs[l], cfg.sigma_b)
            blocks.append(np.outer(sens[l], xin).ravel())
        rows.append(np.concatenate(blocks))
    return np.array(rows)


def explicit_ntk(model, X) -> np.ndarray:
    """Gram matrix of the flattened parameter gradients."""
    G = explicit_gradients(model, X)
    return G @ G.T


def finite_difference_gradients(model, x, h=1e-6) -> list:
    """Central-difference gradients of the output w.r.t. every raw parameter.

    Returns one (d_l, d_{l-1}+1) block per layer, weights and bias column
    combined.  Uses float64 copies of the parameters.
    """
    from . import model as model_mod

    cfg = model.config
    params64 = model.params.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)[None, :]

    def f(p):
        return float(model_mod.forward(p, cfg, x)[0][0])

    blocks = []
    for l in range(cfg.depth):
        W = params64.weights[l]
        bvec = params64.biases[l]
        block = np.zeros((W.shape[0], W.shape[1] + 1))
        for a in range(W.shape[0]):
            for c in range(W.shape[1]):
                orig = W[a, c]
                W[a, c] = orig + h
                fp = f(params64)
                W[a, c] = orig - h
                fm = f(params64)
                W[a, c] = orig
                block[a, c] = (fp - fm) / (2 * h)
            orig = bvec[a]
            bvec[a] = orig + h
            fp = f(params64)
            bvec[a] = orig - h
            fm = f(params64)
            bvec[a] = orig
            block[a, -1] = (fp - fm) / (2 * h)
        blocks.append(block)
    return blocks


def mc_nngp(config, X, n_samples, seed=0) -> np.ndarray:
    """Monte Carlo estimate of the infinite-width initial-function covariance.

    Averages f(x) f(x~) over ``n_samples`` random initializations of a
    network with the configured widths (biases zero).  Weights are sampled
    in float32 for speed; products accumulate in float64.
    """
    widths = config.widths
    L = config.depth
    X = np.ascontiguousarray(X, dtype=np.float32).T  # (d, n)
    n = X.shape[1]
    _check_size(n)
    rng = np.random.default_rng(seed)
    acc = np.zeros((n, n), dtype=np.float64)
    for _ in range(n_samples):
        h = X
        for l in range(L):
            W = rng.standard_normal((widths[l + 1], widths[l]), dtype=np.float32)
            z = (config.sigma_w / math.sqrt(widths[l])) * (W @ h)
            h = _act(config.activation, z) if l < L - 1 else z
        f = h[0].astype(np.float64)
        acc += np.outer(f, f)
    return acc / n_samples
