"""Batch selection over a kernel: iterative and forward-backward templates
plus nine selection methods with incremental state updates.

Candidates are the mode points (train set in TP mode, nothing in P mode)
followed by the pool; mode points are fed to the method's ``add`` before
any pool point is picked.  Methods whose score for a chosen point drops to
exactly zero (distance-based methods, kernel-space greedy determinant) take
their argmax over the raw pool score vector: an already-chosen winner, or a
non-finite score, signals a degenerate state and the rest of the batch is
filled with random pool points drawn from a separate seed stream.  Methods
whose scores stay positive on chosen points (uncertainty-sum and mean-
embedding methods, feature-space determinant) mask re-selection instead.
Ties everywhere resolve to the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import Kernel, UnsupportedKernelError

METHOD_NAMES = (
    "random",
    "maxdiag",
    "maxdet",
    "bait-f",
    "bait-fb",
    "fw",
    "maxdist",
    "kmeanspp",
    "lcmd",
)

_BACKWARD_GUARD = 1e-12
_ZERO_MASS = 1e-30


class SelectionNumericalError(RuntimeError):
    """Incremental factorization broke down (kernel not positive enough)."""


@dataclass
class SelectionRequest:
    method: str
    mode: str  # "p" or "tp"
    kernel: Kernel
    train_indices: np.ndarray
    pool_indices: np.ndarray
    n_batch: int
    sigma_sq: float = 0.0
    n_extra: int | None = None  # bait-fb only; default min(n_batch, n_pool - n_batch)
    rng_seed: int = 0
    maxdet_backend: str = "auto"  # "auto" | "kernel" | "feature"
    fw_backend: str = "feature"  # "feature" | "kernel"


@dataclass
class SelectionResult:
    indices: np.ndarray  # ground indices in selection order
    status: str  # "ok" or "random_filled"
    n_filled: int = 0
    scores: list = field(default_factory=list)


class _KernelView:
    """Kernel restricted to the candidate rows, with cached diagonal."""

    def __init__(self, kernel: Kernel, cand: np.ndarray, n_mode: int):
        self.kernel = kernel
        self.cand = cand
        self.n_mode = n_mode
        self.n_cand = len(cand)
        self.n_pool = self.n_cand - n_mode
        self._diag = None

    def diag(self) -> np.ndarray:
        if self._diag is None:
            self._diag = np.asarray(
                self.kernel.diag(self.cand), dtype=np.float64
            )
        return self._diag

    def row(self, pos: int) -> np.ndarray:
        g = self.kernel.gram(self.cand[pos : pos + 1], self.cand)
        return np.asarray(g, dtype=np.float64)[0]

    def full_gram(self) -> np.ndarray:
        return np.asarray(self.kernel.gram(self.cand, self.cand), dtype=np.float64)

    def features(self) -> np.ndarray:
        if not self.kernel.has_features:
            raise UnsupportedKernelError(
                "selection method needs an explicit feature map"
            )
        return np.asarray(self.kernel.dense_features(), dtype=np.float64)[self.cand]


class _RandomState:
    """Prefix of a seeded permutation of the pool."""

    def __init__(self, view, req, rng):
        self._order = view.n_mode + rng.permutation(view.n_pool)
        self._i = 0

    def add(self, pos):
        pass

    def next(self, in_batch):
        pos = int(self._order[self._i])
        self._i += 1
        return pos, 0.0


class _MaxDiagState:
    """Pool points in descending kernel-diagonal order, sorted once."""

    def __init__(self, view, req, rng):
        diag = view.diag()[view.n_mode :]
        self._order = view.n_mode + np.argsort(-diag, kind="stable")
        self._scores = diag
        self._i = 0
        self._n_mode = view.n_mode

    def add(self, pos):
        pass

    def next(self, in_batch):
        pos = int(self._order[self._i])
        self._i += 1
        return pos, float(self._scores[pos - self._n_mode])


class _MaxDetKernelState:
    """Partial pivoted Cholesky of k(cand, cand) + sigma^2 I.

    c holds the residual diagonal; adding x appends the row
    (k(cand, x) + sigma^2 e_x - B^T B[:, x]) / sqrt(c[x]) and shrinks c.
    """

    def __init__(self, view, req, rng, n_sel_cap):
        self.view = view
        self.sigma_sq = req.sigma_sq
        self.c = view.diag() + req.sigma_sq
        self.B = np.empty((n_sel_cap, view.n_cand))
        self.rows = 0

    def add(self, pos):
        cx = self.c[pos]
        if cx <= 0:
            raise SelectionNumericalError(
                f"residual diagonal {cx} <= 0 at add; kernel is not positive "
                "definite enough, try a larger sigma^2"
            )
        kx = self.view.row(pos)
        kx[pos] += self.sigma_sq
        if self.rows:
            kx -= self.B[: self.rows].T @ self.B[: self.rows, pos]
        v = kx / math.sqrt(cx)
        self.B[self.rows] = v
        self.rows += 1
        self.c -= v * v

    def next(self, in_batch):
        j = int(np.argmax(self.c[self.view.n_mode :]))
        pos = self.view.n_mode + j
        return pos, float(self.c[pos])


class _MaxDetFeatureState:
    """Posterior features maintained through rank-one square-root updates."""

    def __init__(self, view, req, rng):
        if req.sigma_sq <= 0:
            raise ValueError("feature-space backend requires sigma^2 > 0")
        self.sigma_sq = req.sigma_sq
        self.sigma = math.sqrt(req.sigma_sq)
        self.view = view
        self.phi = view.features().copy()
        self.c = np.einsum("ij,ij->i", self.phi, self.phi)

    def add(self, pos):
        gamma = math.sqrt(self.sigma_sq + self.c[pos])
        beta = 1.0 / (gamma * (gamma + self.sigma))
        phix = self.phi[pos].copy()
        u = self.phi @ phix
        self.c -= (u * u) / gamma**2
        self.phi -= beta * np.outer(u, phix)

    def next(self, in_batch):
        # conditioning leaves a ~sigma^2 residual on chosen points, so
        # re-selection is masked rather than used as a failure signal
        scores = np.where(in_batch[self.view.n_mode :], -np.inf,
                          self.c[self.view.n_mode :])
        j = int(np.argmax(scores))
        if not math.isfinite(scores[j]):
            return None, math.nan
        return self.view.n_mode + j, float(scores[j])


class _BaitState(_MaxDetFeatureState):
    """Adds the train+pool second-moment matrix and the acquisition numerator.

    For the backward phase, ``remove`` inverts the rank-one update; the
    numerical guard refuses removals with sigma^2 - c[x] below 1e-12.
    """

    def __init__(self, view, req, rng, tp_features):
        super().__init__(view, req, rng)
        F_tp = np.asarray(tp_features, dtype=np.float64)
        self.Sigma = F_tp.T @ F_tp
        self.v = np.einsum("ij,ij->i", self.phi @ self.Sigma, self.phi)

    def add(self, pos):
        gamma_sq = self.sigma_sq + self.c[pos]
        gamma = math.sqrt(gamma_sq)
        beta = 1.0 / (gamma * (gamma + self.sigma))
        phix = self.phi[pos].copy()
        u = self.phi @ phix
        uu = u * u
        w = self.Sigma @ phix
        vx = self.v[pos]
        self.v += -2.0 / gamma_sq * (self.phi @ w) * u + vx / gamma_sq**2 * uu
        A = np.outer(w, phix)
        self.Sigma += -beta * (A + A.T) + beta**2 * vx * np.outer(phix, phix)
        self.c -= uu / gamma_sq
        self.phi -= beta * np.outer(u, phix)

    def remove(self, pos):
        gamma_sq = self.sigma_sq - self.c[pos]
        gamma = math.sqrt(gamma_sq)
        beta = 1.0 / (gamma * (gamma + self.sigma))
        phix = self.phi[pos].copy()
        u = self.phi @ phix
        uu = u * u
        w = self.Sigma @ phix
        vx = self.v[pos]
        self.v += 2.0 / gamma_sq * (self.phi @ w) * u + vx / gamma_sq**2 * uu
        A = np.outer(w, phix)
        self.Sigma += beta * (A + A.T) + beta**2 * vx * np.outer(phix, phix)
        self.c += uu / gamma_sq
        self.phi += beta * np.outer(u, phix)

    def next(self, in_batch):
        scores = self.v[self.view.n_mode :] / (self.sigma_sq + self.c[self.view.n_mode :])
        scores = np.where(in_batch[self.view.n_mode :], -np.inf, scores)
        j = int(np.argmax(scores))
        if not math.isfinite(scores[j]):
            return None, math.nan
        return self.view.n_mode + j, float(scores[j])

    def next_backward(self, batch_positions):
        positions = np.asarray(batch_positions)
        denom = self.sigma_sq - self.c[positions]
        scores = self.v[positions] / denom
        j = int(np.argmin(scores))
        if denom[j] <= _BACKWARD_GUARD or not math.isfinite(scores[j]):
            return None, math.nan
        return int(positions[j]), float(scores[j])


class _FWFeatureState:
    """Frank-Wolfe on the kernel mean embedding, in feature space.

    Zero-norm feature rows have no defined normalization and are excluded
    from candidacy; re-selection of a chosen point is forbidden, so the
    argmax is masked.
    """

    def __init__(self, view, req, rng):
        self.view = view
        self.phi = view.features()
        norms = np.sqrt(np.einsum("ij,ij->i", self.phi, self.phi))
        self.norms = norms
        self.valid = norms > 0
        self.r = float(norms.sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            self.phi_hat = np.where(self.valid[:, None], self.phi / norms[:, None], 0.0)
        self.u = self.phi.sum(axis=0)
        self.v = np.zeros(self.phi.shape[1])

    def add(self, pos):
        if not self.valid[pos]:
            return
        g = self.r * self.phi_hat[pos] - self.v
        denom = float(g @ g)
        gamma = float(g @ (self.u - self.v)) / denom if denom > 0 else math.nan
        self.v = (1.0 - gamma) * self.v + gamma * self.r * self.phi_hat[pos]

    def next(self, in_batch):
        scores = self.phi_hat[self.view.n_mode :] @ (self.u - self.v)
        blocked = in_batch[self.view.n_mode :] | ~self.valid[self.view.n_mode :]
        scores = np.where(blocked, -np.inf, scores)
        j = int(np.argmax(scores))
        if not math.isfinite(scores[j]):
            return None, math.nan
        return self.view.n_mode + j, float(scores[j])


class _FWKernelState:
    """Frank-Wolfe in kernel space; quadratic memory, reference path only."""

    MAX_CAND = 4096

    def __init__(self, view, req, rng):
        if view.n_cand > self.MAX_CAND:
            raise ValueError(
                f"kernel-space backend refuses {view.n_cand} candidates "
                f"(> {self.MAX_CAND}); use the feature-space backend"
            )
        self.view = view
        K = view.full_gram()
        self.K = K
        diag = np.clip(np.diag(K), 0.0, None)
        self.c = np.sqrt(diag)
        self.valid = self.c > 0
        self.r = float(self.c.sum())
        self.u = K.sum(axis=1)
        self.v = np.zeros(view.n_cand)
        self.s = 0.0
        self.t = 0.0

    def add(self, pos):
        if not self.valid[pos]:
            return
        cx_inv = 1.0 / self.c[pos]
        num = self.r * cx_inv * (self.u[pos] - self.v[pos]) + self.s - self.t
        den = self.r**2 - 2.0 * self.r * cx_inv * self.v[pos] + self.s
        gamma = num / den if den != 0 else math.nan
        self.s = (
            (1 - gamma) ** 2 * self.s
            + 2 * (1 - gamma) * gamma * self.r * cx_inv * self.v[pos]
            + gamma**2 * self.r**2
        )
        self.t = (1 - gamma) * self.t + gamma * self.r * cx_inv * self.u[pos]
        self.v = (1 - gamma) * self.v + gamma * self.r * cx_inv * self.K[pos]

    def next(self, in_batch):
        n_mode = self.view.n_mode
        with np.errstate(divide="ignore", invalid="ignore"):
            scores = (self.u[n_mode:] - self.v[n_mode:]) / self.c[n_mode:]
        blocked = in_batch[n_mode:] | ~self.valid[n_mode:]
        scores = np.where(blocked, -np.inf, scores)
        j = int(np.argmax(scores))
        if not math.isfinite(scores[j]):
            return None, math.nan
        return n_mode + j, float(scores[j])


class _MaxDistState:
    """Greedy farthest-point selection on the kernel-induced metric.

    d holds the squared distance of each pool point to its nearest
    selected point; before anything is selected the seed pick is the
    largest kernel diagonal.
    """

    def __init__(self, view, req, rng):
        self.view = view
        self.cdiag = view.diag()
        self.d = np.full(view.n_pool, np.inf)
        self.added = False

    def _sq_dists(self, pos):
        kx = self.view.row(pos)[self.view.n_mode :]
        return self.cdiag[pos] + self.cdiag[self.view.n_mode :] - 2.0 * kx

    def add(self, pos):
        self.d = np.minimum(self.d, self._sq_dists(pos))
        self.added = True

    def next(self, in_batch):
        if not self.added:
            j = int(np.argmax(self.cdiag[self.view.n_mode :]))
            return self.view.n_mode + j, float(self.cdiag[self.view.n_mode + j])
        j = int(np.argmax(self.d))
        return self.view.n_mode + j, float(self.d[j])


class _KMeansPPState(_MaxDistState):
    """Next point sampled with probability proportional to squared distance."""

    def __init__(self, view, req, rng):
        super().__init__(view, req, rng)
        self.rng = rng

    def next(self, in_batch):
        remaining = ~in_batch[self.view.n_mode :]
        if not self.added:
            options = np.flatnonzero(remaining)
            if options.size == 0:
                return None, math.nan
            j = int(options[self.rng.integers(options.size)])
            return self.view.n_mode + j, 1.0
        weights = np.where(remaining, self.d, 0.0)
        weights[~np.isfinite(weights)] = 0.0
        weights[weights < _ZERO_MASS] = 0.0
        total = weights.sum()
        if total <= 0:
            return None, math.nan
        # inverse-CDF draw over the distance masses
        cdf = np.cumsum(weights)
        j = int(np.searchsorted(cdf, self.rng.random() * total, side="right"))
        j = min(j, len(weights) - 1)
        return self.view.n_mode + j, float(self.d[j])


class _LCMDState(_MaxDistState):
    """Largest-cluster maximum distance.

    Every pool point is assigned to its closest selected point (ties keep
    the earlier center); cluster size is the sum of squared distances of
    assigned points, and the next pick is the farthest point inside the
    largest cluster.
    """

    def __init__(self, view, req, rng):
        super().__init__(view, req, rng)
        self.centers = np.full(view.n_pool, -1, dtype=np.intp)

    def add(self, pos):
        dx = self._sq_dists(pos)
        reassign = dx < self.d
        self.centers[reassign] = pos
        self.d = np.minimum(self.d, dx)
        self.added = True

    def next(self, in_batch):
        if not self.added:
            j = int(np.argmax(self.cdiag[self.view.n_mode :]))
            return self.view.n_mode + j, float(self.cdiag[self.view.n_mode + j])
        sizes = np.zeros(self.view.n_cand)
        np.add.at(sizes, self.centers, self.d)
        s_max = sizes.max()
        eligible = sizes[self.centers] == s_max
        dd = np.where(eligible, self.d, -np.inf)
        j = int(np.argmax(dd))
        return self.view.n_mode + j, float(self.d[j])


def _make_state(req, view, rng, n_sel_cap):
    method = req.method
    if method == "random":
        return _RandomState(view, req, rng)
    if method == "maxdiag":
        return _MaxDiagState(view, req, rng)
    if method == "maxdet":
        backend = req.maxdet_backend
        if backend == "auto":
            if not view.kernel.has_features:
                backend = "kernel"
            else:
                backend = "kernel" if n_sel_cap <= 3 * view.kernel.d_feat else "feature"
        if backend == "kernel":
            return _MaxDetKernelState(view, req, rng, n_sel_cap)
        return _MaxDetFeatureState(view, req, rng)
    if method in ("bait-f", "bait-fb"):
        tp = np.concatenate([np.asarray(req.train_indices), np.asarray(req.pool_indices)])
        if not view.kernel.has_features:
            raise UnsupportedKernelError(
                f"{method} needs an explicit feature map"
            )
        F_tp = np.asarray(view.kernel.dense_features(), dtype=np.float64)[tp.astype(np.intp)]
        return _BaitState(view, req, rng, F_tp)
    if method == "fw":
        if req.fw_backend == "kernel":
            return _FWKernelState(view, req, rng)
        return _FWFeatureState(view, req, rng)
    if method == "maxdist":
        return _MaxDistState(view, req, rng)
    if method == "kmeanspp":
        return _KMeansPPState(view, req, rng)
    if method == "lcmd":
        return _LCMDState(view, req, rng)
    raise ValueError(f"unknown selection method {method!r}")


def _random_fill(fill_rng, pool_positions, in_batch, n_needed):
    open_positions = [p for p in pool_positions if not in_batch[p]]
    chosen = fill_rng.choice(len(open_positions), size=n_needed, replace=False)
    return [open_positions[i] for i in chosen]


def select(req: SelectionRequest) -> SelectionResult:
    """Run the configured selection method and return pool ground indices."""
    if req.method not in METHOD_NAMES:
        raise ValueError(f"unknown selection method {req.method!r}")
    if req.mode not in ("p", "tp"):
        raise ValueError("mode must be 'p' or 'tp'")
    train = np.asarray(req.train_indices, dtype=np.intp)
    pool = np.asarray(req.pool_indices, dtype=np.intp)
    if req.n_batch > pool.size:
        raise ValueError(f"n_batch {req.n_batch} exceeds pool size {pool.size}")
    mode_idx = train if req.mode == "tp" else np.empty(0, dtype=np.intp)
    cand = np.concatenate([mode_idx, pool])
    view = _KernelView(req.kernel, cand, len(mode_idx))

    method_rng = np.random.default_rng(np.random.SeedSequence((req.rng_seed, 0)))
    fill_rng = np.random.default_rng(np.random.SeedSequence((req.rng_seed, 1)))

    if req.method == "bait-fb":
        n_extra = req.n_extra
        if n_extra is None:
            n_extra = min(req.n_batch, pool.size - req.n_batch)
        n_forward = req.n_batch + n_extra
    else:
        n_extra = 0
        n_forward = req.n_batch
    state = _make_state(req, view, method_rng, len(mode_idx) + n_forward)

    for pos in range(len(mode_idx)):
        state.add(pos)

    in_batch = np.zeros(view.n_cand, dtype=bool)
    batch: list[int] = []
    scores: list[float] = []
    pool_positions = range(view.n_mode, view.n_cand)

    def fill_up():
        n_needed = req.n_batch - len(batch)
        if n_needed > 0:
            filled = _random_fill(fill_rng, pool_positions, in_batch, n_needed)
            for p in filled:
                in_batch[p] = True
                batch.append(p)
                scores.append(math.nan)
        return n_needed

    status = "ok"
    n_filled = 0
    for _ in range(n_forward):
        pos, score = state.next(in_batch)
        if pos is None or not math.isfinite(score) or in_batch[pos]:
            del batch[req.n_batch :]
            del scores[req.n_batch :]
            n_filled = fill_up()
            status = "random_filled"
            break
        in_batch[pos] = True
        batch.append(pos)
        scores.append(score)
        state.add(pos)
    else:
        for _ in range(n_extra):
            pos, _score = state.next_backward(batch)
            if pos is None:
                del batch[req.n_batch :]
                del scores[req.n_batch :]
                status = "random_filled"
                break
            i = batch.index(pos)
            del batch[i]
            del scores[i]
            in_batch[pos] = False
            state.remove(pos)

    indices = cand[np.asarray(batch, dtype=np.intp)]
    return SelectionResult(indices, status, n_filled, scores)
