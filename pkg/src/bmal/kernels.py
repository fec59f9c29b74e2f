"""Network-derived kernels over an indexed ground set, plus a transformation
algebra: rescaling, Gaussian-process posterior conditioning, random-projection
sketching, ensembling, and expected-log-posterior random features.

A kernel is backed either by an explicit feature matrix, by a sum of product
terms of smaller feature matrices (the factored form of the full-gradient
kernel), or by a lazy pairwise evaluator (the infinite-width limit kernel).
All computations that involve the noise variance sigma^2 run in float64.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular

from .model import ModelConfig, TrainedModel, extract_grad_factors, extract_ll_features

# Dense feature matrices are only materialized up to this many entries.
MATERIALIZE_CAP = 2 * 10**8


class KernelSpecError(ValueError):
    """Malformed kernel pipeline string; carries the character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class DegenerateKernelError(ValueError):
    """Kernel collapsed (e.g. zero train diagonal under rescaling)."""


class UnsupportedKernelError(TypeError):
    """Operation requires a backing the kernel does not have."""


class NumericalKernelError(RuntimeError):
    """Factorization failure; usually fixable with a larger sigma^2."""


@dataclass(frozen=True)
class GroundSet:
    """Stacked train+pool rows; indices are stable for one selection step."""

    X: np.ndarray
    n_train: int

    @classmethod
    def from_split(cls, X_train: np.ndarray, X_pool: np.ndarray) -> "GroundSet":
        if X_train.ndim != 2 or X_pool.ndim != 2 or X_train.shape[1] != X_pool.shape[1]:
            raise ValueError("train and pool must be 2-d with matching feature count")
        return cls(np.vstack([X_train, X_pool]), X_train.shape[0])

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def train_indices(self) -> np.ndarray:
        return np.arange(self.n_train)

    @property
    def pool_indices(self) -> np.ndarray:
        return np.arange(self.n_train, self.n)


class Kernel:
    """Positive-semidefinite kernel over ground-set row indices."""

    n: int
    d_feat: float  # int for finite feature spaces, math.inf otherwise

    def gram(self, rows, cols) -> np.ndarray:
        raise NotImplementedError

    def diag(self, rows) -> np.ndarray:
        raise NotImplementedError

    @property
    def has_features(self) -> bool:
        return self.d_feat != math.inf

    def dense_features(self) -> np.ndarray:
        raise UnsupportedKernelError("kernel has no finite-dimensional feature map")


def _idx(rows) -> np.ndarray:
    return np.asarray(rows, dtype=np.intp)


class FeatureKernel(Kernel):
    """k(i, j) = <F[i], F[j]> for an explicit feature matrix F."""

    def __init__(self, features: np.ndarray):
        features = np.atleast_2d(np.asarray(features))
        self.features = features
        self.n = features.shape[0]
        self.d_feat = features.shape[1]

    def gram(self, rows, cols):
        return self.features[_idx(rows)] @ self.features[_idx(cols)].T

    def diag(self, rows):
        F = self.features[_idx(rows)]
        return np.einsum("ij,ij->i", F, F)

    def dense_features(self):
        return self.features


class ProductSumKernel(Kernel):
    """Sum over terms of elementwise products of factor Gram matrices.

    Each term is a tuple of one or two feature matrices; a two-factor term
    contributes k1(i,j) * k2(i,j).  This is the factored form of the
    full-gradient kernel: per-layer (input, sensitivity) pairs, with the
    constant last-layer sensitivity omitted.
    """

    def __init__(self, terms):
        terms = [tuple(np.atleast_2d(np.asarray(f)) for f in term) for term in terms]
        if not terms:
            raise ValueError("need at least one term")
        self.terms = terms
        self.n = terms[0][0].shape[0]
        for term in terms:
            if len(term) not in (1, 2) or any(f.shape[0] != self.n for f in term):
                raise ValueError("inconsistent term shapes")
        self.d_feat = int(sum(math.prod(f.shape[1] for f in term) for term in terms))

    def gram(self, rows, cols):
        rows, cols = _idx(rows), _idx(cols)
        out = None
        for term in self.terms:
            g = term[0][rows] @ term[0][cols].T
            if len(term) == 2:
                g = g * (term[1][rows] @ term[1][cols].T)
            out = g if out is None else out + g
        return out

    def diag(self, rows):
        rows = _idx(rows)
        out = None
        for term in self.terms:
            d = np.einsum("ij,ij->i", term[0][rows], term[0][rows])
            if len(term) == 2:
                d = d * np.einsum("ij,ij->i", term[1][rows], term[1][rows])
            out = d if out is None else out + d
        return out

    def dense_features(self):
        if self.n * self.d_feat > MATERIALIZE_CAP:
            raise UnsupportedKernelError(
                f"dense features would need {self.n * self.d_feat} entries "
                f"(cap {MATERIALIZE_CAP}); sketch the kernel first"
            )
        blocks = []
        for term in self.terms:
            if len(term) == 1:
                blocks.append(term[0])
            else:
                a, b = term
                blocks.append(
                    np.einsum("ni,nj->nij", b, a).reshape(self.n, -1)
                )
        return np.hstack(blocks)


class NNGPKernel(Kernel):
    """Analytic infinite-width initial-function covariance for ReLU networks.

    Layer one is sigma_w^2/d <x, x~>; deeper layers apply the ReLU arc-cosine
    recursion.  The bias terms are absent because biases start at zero.
    """

    def __init__(self, config: ModelConfig, ground: GroundSet):
        if config.activation != "relu":
            raise UnsupportedKernelError(
                "analytic recursion only available for relu networks"
            )
        self.X = np.asarray(ground.X, dtype=np.float64)
        self.n = ground.n
        self.d_feat = math.inf
        self.sigma_w2 = config.sigma_w**2
        self.depth = config.depth

    def _layer1_diag(self, rows):
        Xr = self.X[_idx(rows)]
        return (self.sigma_w2 / self.X.shape[1]) * np.einsum("ij,ij->i", Xr, Xr)

    def gram(self, rows, cols):
        rows, cols = _idx(rows), _idx(cols)
        a = self._layer1_diag(rows)
        c = self._layer1_diag(cols)
        b = (self.sigma_w2 / self.X.shape[1]) * (self.X[rows] @ self.X[cols].T)
        for _ in range(self.depth - 1):
            sqrt_ac = np.sqrt(np.outer(a, c))
            with np.errstate(divide="ignore", invalid="ignore"):
                u = np.where(sqrt_ac > 0, b / sqrt_ac, 0.0)
            u = np.clip(u, -1.0, 1.0)  # rounding can push |u| past 1
            b = (
                self.sigma_w2
                * sqrt_ac
                / (2 * np.pi)
                * (np.sqrt(1.0 - u * u) + u * (np.pi - np.arccos(u)))
            )
            a = a * (self.sigma_w2 / 2)
            c = c * (self.sigma_w2 / 2)
        return b

    def diag(self, rows):
        a = self._layer1_diag(rows)
        return a * (self.sigma_w2 / 2) ** (self.depth - 1)


class ScaledKernel(Kernel):
    """Lazy wrapper multiplying another kernel by a constant factor."""

    def __init__(self, base: Kernel, factor: float):
        self.base = base
        self.factor = float(factor)
        self.n = base.n
        self.d_feat = base.d_feat

    def gram(self, rows, cols):
        return self.factor * self.base.gram(rows, cols)

    def diag(self, rows):
        return self.factor * self.base.diag(rows)


class PosteriorKernel(Kernel):
    """Posterior covariance via the kernel-space formula.

    Stores a Cholesky factor of k(obs, obs) + sigma^2 I and evaluates
    k(i,j) - k(i,obs) (k(obs,obs) + sigma^2 I)^{-1} k(obs,j) on demand.
    """

    def __init__(self, base: Kernel, obs, sigma_sq: float):
        self.base = base
        self.obs = _idx(obs)
        self.n = base.n
        self.d_feat = base.d_feat
        K_obs = np.asarray(base.gram(self.obs, self.obs), dtype=np.float64)
        K_obs = K_obs + sigma_sq * np.eye(len(self.obs))
        try:
            self._cho = cho_factor(K_obs, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalKernelError(
                "Cholesky of the observed block failed; try a larger sigma^2"
            ) from exc

    def gram(self, rows, cols):
        rows, cols = _idx(rows), _idx(cols)
        K_rc = np.asarray(self.base.gram(rows, cols), dtype=np.float64)
        K_ro = np.asarray(self.base.gram(rows, self.obs), dtype=np.float64)
        K_oc = np.asarray(self.base.gram(self.obs, cols), dtype=np.float64)
        return K_rc - K_ro @ cho_solve(self._cho, K_oc)

    def diag(self, rows):
        rows = _idx(rows)
        d = np.asarray(self.base.diag(rows), dtype=np.float64)
        K_or = np.asarray(self.base.gram(self.obs, rows), dtype=np.float64)
        return d - np.einsum("or,or->r", K_or, cho_solve(self._cho, K_or))

    def dense_features(self):
        raise UnsupportedKernelError("posterior kernel in evaluator form has no features")


class SumKernel(Kernel):
    """Lazy sum of kernels over the same ground set."""

    def __init__(self, kernels):
        self.kernels = list(kernels)
        self.n = self.kernels[0].n
        self.d_feat = math.inf

    def gram(self, rows, cols):
        return sum(k.gram(rows, cols) for k in self.kernels)

    def diag(self, rows):
        return sum(k.diag(rows) for k in self.kernels)


# ---------------------------------------------------------------------------
# Pipeline grammar:  spec := base ("->" transform)*
# ---------------------------------------------------------------------------

BASE_NAMES = ("lin", "ll", "grad", "nngp")

_TRANSFORM_ARITY = {
    "scale": (),
    "post": ("float",),
    "train": ("float",),
    "rp": ("int",),
    "ens": ("int",),
    "acs-rf": ("int", "float"),
    "acs-grad": ("float",),
}

_TOKEN_RE = re.compile(r"^([a-z][a-z-]*)(?:\((.*)\))?$")


@dataclass(frozen=True)
class TransformSpec:
    name: str
    args: tuple = ()


@dataclass(frozen=True)
class KernelSpec:
    base: str
    transforms: tuple = ()


def parse_kernel_spec(text: str) -> KernelSpec:
    """Parse a pipeline string like ``grad->rp(512)->train(1e-6)``.

    ``train(s)`` is shorthand for ``scale->post(s)`` and expands accordingly.
    Whitespace is forbidden; errors report the character position.
    """
    if not text:
        raise KernelSpecError("empty kernel spec", 0)
    for pos, ch in enumerate(text):
        if ch.isspace():
            raise KernelSpecError("whitespace is not allowed", pos)
    segments = []
    start = 0
    for part in text.split("->"):
        segments.append((part, start))
        start += len(part) + 2
    base, base_pos = segments[0]
    if base not in BASE_NAMES:
        raise KernelSpecError(f"unknown base kernel {base!r}", base_pos)
    transforms = []
    for token, pos in segments[1:]:
        m = _TOKEN_RE.match(token)
        if not m:
            raise KernelSpecError(f"malformed transform {token!r}", pos)
        name, argtext = m.group(1), m.group(2)
        if name not in _TRANSFORM_ARITY:
            raise KernelSpecError(f"unknown transform {name!r}", pos)
        kinds = _TRANSFORM_ARITY[name]
        raw_args = [] if argtext is None else argtext.split(",")
        if argtext is None and kinds:
            raise KernelSpecError(f"transform {name!r} needs {len(kinds)} argument(s)", pos)
        if len(raw_args) != len(kinds):
            raise KernelSpecError(
                f"transform {name!r} takes {len(kinds)} argument(s), got {len(raw_args)}", pos
            )
        args = []
        for raw, kind in zip(raw_args, kinds):
            if kind == "int":
                if not raw.isdigit():
                    raise KernelSpecError(f"expected integer, got {raw!r}", pos)
                args.append(int(raw))
            else:
                try:
                    args.append(float(raw))
                except ValueError:
                    raise KernelSpecError(f"expected float, got {raw!r}", pos) from None
        _validate_transform_args(name, args, pos)
        if name == "train":
            transforms.append(TransformSpec("scale"))
            transforms.append(TransformSpec("post", (args[0],)))
        else:
            transforms.append(TransformSpec(name, tuple(args)))
    return KernelSpec(base, tuple(transforms))


def _validate_transform_args(name, args, pos):
    if name in ("post", "train", "acs-grad") and args[-1] <= 0:
        raise KernelSpecError(f"{name} requires sigma^2 > 0", pos)
    if name == "acs-rf" and (args[0] < 1 or args[1] <= 0):
        raise KernelSpecError("acs-rf requires p >= 1 and sigma^2 > 0", pos)
    if name in ("rp", "ens") and args[0] < 1:
        raise KernelSpecError(f"{name} requires a count >= 1", pos)


# ---------------------------------------------------------------------------
# Base kernels
# ---------------------------------------------------------------------------


def base_linear(ground: GroundSet) -> Kernel:
    """Identity feature map on the (preprocessed) inputs."""
    return FeatureKernel(ground.X)


def base_last_layer(model: TrainedModel, ground: GroundSet) -> Kernel:
    """Gradient w.r.t. the combined last-layer weights = scaled last-hidden input."""
    return FeatureKernel(extract_ll_features(model, ground.X))


def base_grad(model: TrainedModel, ground: GroundSet) -> Kernel:
    """Full parameter-gradient kernel in factored sum-of-products form."""
    factors = extract_grad_factors(model, ground.X)
    L = len(factors.in_factors)
    terms = [(factors.in_factors[l], factors.out_factors[l]) for l in range(L - 1)]
    terms.append((factors.in_factors[L - 1],))  # last-layer sensitivity is constant 1
    return ProductSumKernel(terms)


def base_nngp(config: ModelConfig, ground: GroundSet) -> Kernel:
    return NNGPKernel(config, ground)


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------


def transform_scale(kernel: Kernel, train_indices) -> Kernel:
    """Rescale so the mean kernel diagonal over the train set becomes one."""
    train_indices = _idx(train_indices)
    mean_diag = float(np.mean(np.asarray(kernel.diag(train_indices), dtype=np.float64)))
    if mean_diag <= 0:
        raise DegenerateKernelError(
            f"mean train diagonal is {mean_diag}; cannot rescale"
        )
    lam_sq = 1.0 / mean_diag
    lam = math.sqrt(lam_sq)
    if isinstance(kernel, FeatureKernel):
        return FeatureKernel(kernel.features * kernel.features.dtype.type(lam))
    if isinstance(kernel, ProductSumKernel):
        terms = [(term[0] * term[0].dtype.type(lam),) + term[1:] for term in kernel.terms]
        return ProductSumKernel(terms)
    return ScaledKernel(kernel, lam_sq)


def _posterior_feature_path(features: np.ndarray, obs, sigma_sq: float) -> FeatureKernel:
    F = np.asarray(features, dtype=np.float64)
    Phi = F[_idx(obs)]
    A = Phi.T @ Phi + sigma_sq * np.eye(F.shape[1])
    try:
        L = cholesky(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalKernelError(
            "Cholesky of the regularized second-moment matrix failed; "
            "try a larger sigma^2"
        ) from exc
    # F_post rows realize sigma * (Phi^T Phi + sigma^2 I)^{-1/2}-style factors;
    # only inner products matter, so the triangular factor is sufficient.
    F_post = math.sqrt(sigma_sq) * solve_triangular(L, F.T, lower=True).T
    return FeatureKernel(F_post)


def transform_posterior(kernel: Kernel, obs_indices, sigma_sq: float, path=None) -> Kernel:
    """Condition the associated Gaussian process on the observed indices.

    Uses the explicit feature-map route whenever the feature dimension is at
    most max(1024, 3 * n_obs), otherwise the kernel-space route with a stored
    Cholesky factor.  ``path`` forces "feature" or "kernel" (used in tests).
    """
    obs = _idx(obs_indices)
    if obs.size == 0:
        return kernel
    if sigma_sq <= 0:
        raise ValueError("posterior transformation requires sigma^2 > 0")
    if path is None:
        use_features = kernel.has_features and kernel.d_feat <= max(1024, 3 * obs.size)
    else:
        if path not in ("feature", "kernel"):
            raise ValueError("path must be 'feature' or 'kernel'")
        use_features = path == "feature"
    if use_features:
        if not kernel.has_features:
            raise UnsupportedKernelError("feature path requires a finite feature map")
        return _posterior_feature_path(kernel.dense_features(), obs, sigma_sq)
    return PosteriorKernel(kernel, obs, sigma_sq)


def _draw_sketch(rng, p, d, matrix_fn):
    if matrix_fn is not None:
        return np.asarray(matrix_fn(rng, p, d), dtype=np.float64)
    return rng.standard_normal((p, d))


def transform_rp(kernel: Kernel, p: int, seed: int, matrix_fn=None) -> Kernel:
    """Gaussian random projection to p features (unbiased in expectation).

    Plain feature maps are sketched directly; sum structure sketches each
    term and adds the results; a two-factor product term sketches each
    factor and takes sqrt(p) times the elementwise product.  ``matrix_fn``
    is a test hook replacing the Gaussian draw.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    rng = np.random.default_rng(seed)
    inv_sqrt_p = 1.0 / math.sqrt(p)

    def sketch(F):
        U = _draw_sketch(rng, p, F.shape[1], matrix_fn)
        return inv_sqrt_p * (F @ U.T)

    if isinstance(kernel, FeatureKernel):
        return FeatureKernel(sketch(kernel.features))
    if isinstance(kernel, ProductSumKernel):
        total = np.zeros((kernel.n, p))
        for term in kernel.terms:
            if len(term) == 1:
                total += sketch(term[0])
            else:
                total += math.sqrt(p) * sketch(term[0]) * sketch(term[1])
        return FeatureKernel(total)
    raise UnsupportedKernelError("random projections need a finite feature map")


def transform_ensemble(kernels) -> Kernel:
    """Sum of kernels from independently trained models."""
    kernels = list(kernels)
    if not kernels:
        raise ValueError("need at least one kernel")
    n = kernels[0].n
    if any(k.n != n for k in kernels):
        raise ValueError("kernels cover mismatched ground sets")
    if len(kernels) == 1:
        return kernels[0]
    if all(isinstance(k, FeatureKernel) for k in kernels):
        return FeatureKernel(np.hstack([k.features for k in kernels]))
    if all(isinstance(k, (FeatureKernel, ProductSumKernel)) for k in kernels):
        terms = []
        for k in kernels:
            if isinstance(k, FeatureKernel):
                terms.append((k.features,))
            else:
                terms.extend(k.terms)
        return ProductSumKernel(terms)
    return SumKernel(kernels)


def transform_acs_rf(
    kernel: Kernel,
    train_indices,
    p: int,
    sigma_sq: float,
    labels,
    predictions,
    seed: int,
) -> Kernel:
    """Random-feature approximation of the expected-log-posterior kernel.

    Internally rescales the kernel on the train set, conditions it on the
    train set, and draws p parameter vectors from the exact Gaussian
    posterior of the Bayesian linear model over the training residuals
    labels - predictions.  Feature i of a point x is the expected
    log-likelihood gain evaluated at the i-th parameter sample, times
    p^{-1/2}.
    """
    if sigma_sq <= 0:
        raise ValueError("acs-rf requires sigma^2 > 0")
    if not kernel.has_features:
        raise UnsupportedKernelError("acs-rf needs a finite feature map")
    train = _idx(train_indices)
    scaled = transform_scale(kernel, train)
    Fs = np.asarray(scaled.dense_features(), dtype=np.float64)
    Phi = Fs[train]
    d = Fs.shape[1]
    A = Phi.T @ Phi + sigma_sq * np.eye(d)
    try:
        L = cholesky(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalKernelError("posterior factorization failed; increase sigma^2") from exc
    # posterior variance of the rescaled-kernel GP at every ground point
    T = solve_triangular(L, Fs.T, lower=True)
    post_var = sigma_sq * np.einsum("dn,dn->n", T, T)

    resid = np.asarray(labels, dtype=np.float64) - np.asarray(predictions, dtype=np.float64)
    mean = cho_solve((L, True), Phi.T @ resid)
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((d, p))
    # theta ~ N(mean, sigma^2 A^{-1}) via the transposed triangular factor
    thetas = mean[:, None] + math.sqrt(sigma_sq) * solve_triangular(L.T, Z, lower=False)
    proj = Fs @ thetas  # (n, p), theta^T phi_scale(x)
    gain = 0.5 * np.log1p(post_var / sigma_sq)[:, None] - (
        proj**2 + post_var[:, None]
    ) / (2 * sigma_sq)
    return FeatureKernel(gain / math.sqrt(p))


def transform_acs_grad(kernel: Kernel, train_indices, sigma_sq: float) -> Kernel:
    """Parameter-gradient form of the expected-log-posterior kernel.

    Equals sigma^{-4} * k_scaled * k_conditioned, kept in factored product
    form so it can be sketched per factor.
    """
    if sigma_sq <= 0:
        raise ValueError("acs-grad requires sigma^2 > 0")
    if not kernel.has_features:
        raise UnsupportedKernelError("acs-grad needs a finite feature map")
    train = _idx(train_indices)
    scaled = transform_scale(kernel, train)
    Fs = np.asarray(scaled.dense_features(), dtype=np.float64)
    post = _posterior_feature_path(Fs, train, sigma_sq)
    return ProductSumKernel([(Fs / sigma_sq, post.features)])


def effective_dim(kernel: Kernel, pool_indices) -> float:
    """Trace over spectral norm of the pool feature second-moment matrix.

    The top eigenvalue comes from power iteration with a deterministic
    all-ones start (relative tolerance 1e-6, at most 1000 iterations).
    """
    if not kernel.has_features:
        raise UnsupportedKernelError("effective dimension needs a finite feature map")
    F = np.asarray(kernel.dense_features(), dtype=np.float64)[_idx(pool_indices)]
    M = F.T @ F
    trace = float(np.trace(M))
    if trace == 0.0:
        return 0.0
    d = M.shape[0]
    v = np.ones(d) / math.sqrt(d)
    lam_prev = 0.0
    lam = 0.0
    for _ in range(1000):
        w = M @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            # all-ones start happened to be a null vector; restart off-axis
            v = np.zeros(d)
            v[0] = 1.0
            continue
        v = w / norm
        lam = float(v @ (M @ v))
        if abs(lam - lam_prev) <= 1e-6 * abs(lam):
            break
        lam_prev = lam
    return trace / lam


# ---------------------------------------------------------------------------
# Pipeline assembly
# ---------------------------------------------------------------------------


def _derived_seed(seed, *key) -> int:
    return int(np.random.SeedSequence((seed,) + key).generate_state(1)[0])


def build_kernel(
    spec: KernelSpec,
    ground: GroundSet,
    models,
    train_indices,
    labels=None,
    predictions=None,
    seed: int = 0,
) -> Kernel:
    """Assemble a kernel pipeline: base kernel, then transforms in order.

    ``models`` is a list of trained models; an ``ens(N)`` transform builds
    the preceding pipeline once per model and sums the results, so N models
    are required.  ``labels``/``predictions`` (aligned with train_indices)
    are needed only by acs-rf.  Seeds for rp/acs-rf draws are derived from
    ``seed`` and the transform position.
    """
    if isinstance(spec, str):
        spec = parse_kernel_spec(spec)
    models = list(models)
    if not models:
        raise ValueError("need at least one trained model")
    train_indices = _idx(train_indices)

    ens_positions = [i for i, t in enumerate(spec.transforms) if t.name == "ens"]
    if len(ens_positions) > 1:
        raise KernelSpecError("multiple ens transforms are not supported", 0)

    def apply_transform(kernel, t, ti, mi):
        if t.name == "scale":
            return transform_scale(kernel, train_indices)
        if t.name == "post":
            return transform_posterior(kernel, train_indices, t.args[0])
        if t.name == "rp":
            return transform_rp(kernel, t.args[0], _derived_seed(seed, ti, mi))
        if t.name == "acs-rf":
            if labels is None or predictions is None:
                raise ValueError("acs-rf needs labels and predictions")
            return transform_acs_rf(
                kernel,
                train_indices,
                t.args[0],
                t.args[1],
                labels,
                predictions,
                _derived_seed(seed, ti, mi),
            )
        if t.name == "acs-grad":
            return transform_acs_grad(kernel, train_indices, t.args[0])
        raise KernelSpecError(f"unexpected transform {t.name!r}", 0)

    def build_base(model):
        if spec.base == "lin":
            return base_linear(ground)
        if spec.base == "ll":
            return base_last_layer(model, ground)
        if spec.base == "grad":
            return base_grad(model, ground)
        return base_nngp(model.config, ground)

    if ens_positions:
        cut = ens_positions[0]
        n_ens = spec.transforms[cut].args[0]
        if len(models) < n_ens:
            raise ValueError(f"ens({n_ens}) needs {n_ens} models, got {len(models)}")
        members = []
        for mi in range(n_ens):
            k = build_base(models[mi])
            for ti, t in enumerate(spec.transforms[:cut]):
                k = apply_transform(k, t, ti, mi)
            members.append(k)
        kernel = transform_ensemble(members)
        rest = list(enumerate(spec.transforms))[cut + 1 :]
    else:
        kernel = build_base(models[0])
        rest = list(enumerate(spec.transforms))
    for ti, t in rest:
        kernel = apply_transform(kernel, t, ti, 0)
    return kernel
