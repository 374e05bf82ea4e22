"""Data distributions with exact posterior means, scores and forward sampling.

Every oracle describes one data law mu on R^D and answers three queries about
the noised variable X_t = c(t) X_0 + sigma(t) Z:

* ``posterior_mean(t, x)``: E[X_0 | X_t = x],
* ``score(t, x)``: gradient of log density of X_t at x,
* ``log_marginal(t, x)``: log density of X_t (optional capability).

Score and posterior mean are tied together by the identity
``score = (c * posterior_mean - x) / sigma2``, which concrete oracles use in
whichever direction is numerically natural for them.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScoreOracle",
    "PointCloudMeasure",
    "GaussianLaw",
    "ManifoldSpec",
    "PointMassOracle",
    "PointCloudOracle",
    "GaussianOracle",
    "ProductOracle",
    "point_mass_oracle",
    "point_cloud_oracle",
    "gaussian_oracle",
    "product_oracle",
    "forward_sample",
    "forward_bridge",
    "make_manifold_cloud",
    "save_cloud",
    "load_cloud",
    "spawn_rng",
]

# Queries below this time are rejected: sigma2 -> 0 makes the posterior-mean /
# score conversion ill conditioned.  Early-stopped schedules never get here.
T_MIN = 1e-8

# Log-weights this far below the maximum underflow to subnormals; flush to 0.
_LOG_FLUSH = -745.0


def spawn_rng(master_seed: int, stream: int) -> np.random.Generator:
    """Derive an independent generator for one worker or chunk.

    Stream-splitting contract used across the package: stream ``i`` of master
    seed ``s`` is ``default_rng(SeedSequence(s, spawn_key=(i,)))``.  Values
    drawn from distinct streams are independent and reproducible regardless
    of how many workers consume them.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(stream,)))


def _check_time(t: float) -> float:
    t = float(t)
    if not math.isfinite(t) or t < T_MIN:
        raise ValueError(f"oracle queries require t >= {T_MIN}, got {t!r}")
    return t


class ScoreOracle:
    """Contract for one data distribution; concrete laws subclass this.

    All point arguments accept shape (D,) or a batch (..., D) and return
    matching shapes.  Oracles are immutable after construction and safe for
    concurrent read-only use; all sampling goes through an explicit rng.
    """

    dim: int

    def sample0(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n data points, shape (n, dim)."""
        raise NotImplementedError

    def posterior_mean(self, t: float, x: np.ndarray) -> np.ndarray:
        """E[X_0 | X_t = x]."""
        raise NotImplementedError

    def score(self, t: float, x: np.ndarray) -> np.ndarray:
        t = _check_time(t)
        x = self._check_point(x)
        c = math.exp(-t)
        s2 = -math.expm1(-2.0 * t)
        return (c * self.posterior_mean(t, x) - x) / s2

    @property
    def has_log_marginal(self) -> bool:
        return False

    def log_marginal(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} does not expose log_marginal")

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points in R^{self.dim}, got shape {x.shape}")
        if not np.isfinite(x).all():
            raise ValueError("non-finite point passed to oracle")
        return x


# ---------------------------------------------------------------------------
# Data-law containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointCloudMeasure:
    """Finitely supported measure: points (n, D) with probability weights (n,)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pts.ndim != 2 or len(w) != len(pts):
            raise ValueError("points must be (n, D) with one weight per point")
        if not np.isfinite(pts).all():
            raise ValueError("non-finite cloud point")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1 within 1e-12")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        pts.setflags(write=False)
        w.setflags(write=False)

    @classmethod
    def uniform(cls, points) -> "PointCloudMeasure":
        points = np.asarray(points, dtype=float)
        n = len(points)
        return cls(points, np.full(n, 1.0 / n))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def diameter(self) -> float:
        """Largest pairwise distance, O(n^2) but chunked."""
        pts = self.points
        best = 0.0
        for i in range(0, len(pts), 1024):
            blk = pts[i : i + 1024]
            d2 = ((blk[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
            best = max(best, float(d2.max()))
        return math.sqrt(best)

    def normalized(self, scale: float | None = None) -> "PointCloudMeasure":
        """Rescale to diameter <= 1 and translate the first point to the origin.

        With the default scale the cloud diameter becomes exactly 1 (no-op
        for diameter 0); pass an analytic manifold diameter to normalize by
        the continuum geometry instead of the sampled cloud.
        """
        if scale is None:
            scale = self.diameter()
        if scale <= 0.0:
            scaled = self.points.copy()
        else:
            scaled = self.points / scale
        return PointCloudMeasure(scaled - scaled[0], self.weights.copy())


@dataclass(frozen=True)
class GaussianLaw:
    """Gaussian with covariance factor @ factor.T + diag_floor * I.

    ``factor`` has shape (D, d) with d <= D; ``diag_floor`` >= 0 may be zero,
    in which case the law is supported on an affine subspace of dimension
    rank(factor).
    """

    mean: np.ndarray
    factor: np.ndarray
    diag_floor: float = 0.0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        fac = np.asarray(self.factor, dtype=float)
        if fac.ndim == 1:
            fac = fac[:, None]
        if fac.shape[0] != mean.shape[0]:
            raise ValueError(f"factor rows {fac.shape[0]} != dim {mean.shape[0]}")
        if fac.shape[1] > fac.shape[0]:
            raise ValueError("factor must have at most D columns")
        if self.diag_floor < 0:
            raise ValueError("diag_floor must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "factor", fac)
        mean.setflags(write=False)
        fac.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def covariance(self) -> np.ndarray:
        """Dense D x D covariance; for cross-checks at small D."""
        return self.factor @ self.factor.T + self.diag_floor * np.eye(self.dim)

    @classmethod
    def isotropic(cls, dim: int, variance: float = 1.0, mean=None) -> "GaussianLaw":
        mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=float)
        return cls(mean=mean, factor=np.zeros((dim, 0)), diag_floor=float(variance))

    @classmethod
    def point_mass(cls, point) -> "GaussianLaw":
        point = np.atleast_1d(np.asarray(point, dtype=float))
        return cls(mean=point, factor=np.zeros((point.shape[0], 0)), diag_floor=0.0)


@dataclass(frozen=True)
class ManifoldSpec:
    """Analytic regularity metadata carried by generated manifold measures.

    ``regularity`` is the single constant bundling volume, flatness scale and
    density bounds: max(log volume, log 1/r, |log density|) with
    r = min(reach, 1/curvature_bound) / 8.
    """

    intrinsic_dim: int
    reach: float
    volume: float
    density_lower: float
    density_upper: float
    curvature_bound: float
    regularity: float = 0.0

    def __post_init__(self):
        vals = (self.reach, self.volume, self.density_lower, self.density_upper, self.curvature_bound)
        if any(not math.isfinite(v) or v <= 0 for v in vals):
            raise ValueError("manifold metadata entries must be positive and finite")
        if self.regularity == 0.0:
            r = min(self.reach, 1.0 / self.curvature_bound) / 8.0
            c = max(
                math.log(self.volume),
                math.log(1.0 / r),
                abs(math.log(self.density_lower)),
                abs(math.log(self.density_upper)),
                1e-3,  # keep the constant strictly positive for flat cases
            )
            object.__setattr__(self, "regularity", c)

    def rescaled(self, s: float) -> "ManifoldSpec":
        """Metadata after scaling the embedding by factor s."""
        return ManifoldSpec(
            intrinsic_dim=self.intrinsic_dim,
            reach=self.reach * s,
            volume=self.volume * s**self.intrinsic_dim,
            density_lower=self.density_lower / s**self.intrinsic_dim,
            density_upper=self.density_upper / s**self.intrinsic_dim,
            curvature_bound=self.curvature_bound / s,
        )


# ---------------------------------------------------------------------------
# Concrete oracles
# ---------------------------------------------------------------------------


class PointMassOracle(ScoreOracle):
    """Dirac data at a single point: constant posterior mean, Gaussian marginal."""

    def __init__(self, point):
        point = np.atleast_1d(np.asarray(point, dtype=float))
        if not np.isfinite(point).all():
            raise ValueError("point must be finite")
        self.point = point
        self.point.setflags(write=False)
        self.dim = point.shape[0]

    def sample0(self, rng, n):
        return np.broadcast_to(self.point, (n, self.dim)).copy()

    def posterior_mean(self, t, x):
        _check_time(t)
        x = self._check_point(x)
        return np.broadcast_to(self.point, x.shape).copy()

    @property
    def has_log_marginal(self) -> bool:
        return True

    def log_marginal(self, t, x):
        t = _check_time(t)
        x = self._check_point(x)
        c = math.exp(-t)
        s2 = -math.expm1(-2.0 * t)
        d2 = ((x - c * self.point) ** 2).sum(axis=-1)
        return -0.5 * d2 / s2 - 0.5 * self.dim * math.log(2.0 * math.pi * s2)


class PointCloudOracle(ScoreOracle):
    """Finitely supported data; the noised marginal is a Gaussian mixture.

    Posterior weights are evaluated in log space with max subtraction;
    contributions more than 745 nats below the leading component are flushed
    to zero before normalization.  Batch queries are chunked so memory stays
    at ``chunk * n_points`` floats.
    """

    def __init__(self, cloud: PointCloudMeasure, chunk: int = 2048):
        self.cloud = cloud
        self.dim = cloud.dim
        self.chunk = int(chunk)
        self._log_w = np.where(cloud.weights > 0, np.log(np.maximum(cloud.weights, 1e-300)), -np.inf)
        self.manifold: ManifoldSpec | None = None

    def with_manifold(self, spec: ManifoldSpec) -> "PointCloudOracle":
        out = PointCloudOracle(self.cloud, self.chunk)
        out.manifold = spec
        return out

    def sample0(self, rng, n):
        idx = rng.choice(len(self.cloud.points), size=n, p=self.cloud.weights)
        return self.cloud.points[idx]

    def _log_weights(self, t, xb):
        # xb: (m, D) -> (m, n_points) unnormalized posterior log-weights
        c = math.exp(-t)
        s2 = -math.expm1(-2.0 * t)
        diff = xb[:, None, :] - c * self.cloud.points[None, :, :]
        return self._log_w[None, :] - 0.5 * (diff * diff).sum(-1) / s2

    def posterior_mean(self, t, x):
        t = _check_time(t)
        x = self._check_point(x)
        flat = np.atleast_2d(x.reshape(-1, self.dim))
        out = np.empty_like(flat)
        for i in range(0, len(flat), self.chunk):
            lw = self._log_weights(t, flat[i : i + self.chunk])
            lw -= lw.max(axis=1, keepdims=True)
            w = np.exp(lw, where=lw > _LOG_FLUSH, out=np.zeros_like(lw))
            w /= w.sum(axis=1, keepdims=True)
            out[i : i + self.chunk] = w @ self.cloud.points
        return out.reshape(x.shape)

    @property
    def has_log_marginal(self) -> bool:
        return True

    def log_marginal(self, t, x):
        t = _check_time(t)
        x = self._check_point(x)
        s2 = -math.expm1(-2.0 * t)
        flat = np.atleast_2d(x.reshape(-1, self.dim))
        out = np.empty(len(flat))
        for i in range(0, len(flat), self.chunk):
            lw = self._log_weights(t, flat[i : i + self.chunk])
            m = lw.max(axis=1)
            out[i : i + self.chunk] = m + np.log(np.exp(lw - m[:, None]).sum(axis=1))
        out -= 0.5 * self.dim * math.log(2.0 * math.pi * s2)
        return out.reshape(x.shape[:-1])


class GaussianOracle(ScoreOracle):
    """Gaussian data; scores come from a rank-d Woodbury solve.

    The noised covariance is c^2 (A A^T + lam I) + sigma2 I, whose inverse is
    applied through the d x d Gram system so one query costs O(D d^2) rather
    than O(D^3).  The posterior mean is recovered from the score identity.
    """

    def __init__(self, law: GaussianLaw):
        self.law = law
        self.dim = law.dim

    def sample0(self, rng, n):
        law = self.law
        z = rng.standard_normal((n, law.factor.shape[1]))
        x = law.mean + z @ law.factor.T
        if law.diag_floor > 0:
            x = x + math.sqrt(law.diag_floor) * rng.standard_normal((n, self.dim))
        return x

    def _solve_cov(self, t, v):
        """Apply inverse of Cov[X_t] to rows of v."""
        law = self.law
        c2 = math.exp(-2.0 * t)
        nu = c2 * law.diag_floor - math.expm1(-2.0 * t)  # isotropic part of Cov[X_t]
        b = math.sqrt(c2) * law.factor
        if b.shape[1] == 0:
            return v / nu
        gram = b.T @ b + nu * np.eye(b.shape[1])
        inner = np.linalg.solve(gram, (v @ b).T).T
        return (v - inner @ b.T) / nu

    def score(self, t, x):
        t = _check_time(t)
        x = self._check_point(x)
        flat = np.atleast_2d(x.reshape(-1, self.dim))
        c = math.exp(-t)
        out = -self._solve_cov(t, flat - c * self.law.mean)
        return out.reshape(x.shape)

    def posterior_mean(self, t, x):
        t = _check_time(t)
        x = self._check_point(x)
        s2 = -math.expm1(-2.0 * t)
        return (x + s2 * self.score(t, x)) / math.exp(-t)

    @property
    def has_log_marginal(self) -> bool:
        return True

    def log_marginal(self, t, x):
        t = _check_time(t)
        x = self._check_point(x)
        law = self.law
        flat = np.atleast_2d(x.reshape(-1, self.dim))
        c = math.exp(-t)
        c2 = c * c
        nu = c2 * law.diag_floor - math.expm1(-2.0 * t)
        b = c * law.factor
        d = b.shape[1]
        gram = b.T @ b + nu * np.eye(d)
        sign, logdet_gram = np.linalg.slogdet(gram)
        if sign <= 0:
            raise np.linalg.LinAlgError("noised covariance is not positive definite")
        logdet = (self.dim - d) * math.log(nu) + logdet_gram
        v = flat - c * law.mean
        quad = (v * self._solve_cov(t, v)).sum(axis=-1)
        out = -0.5 * (quad + logdet + self.dim * math.log(2.0 * math.pi))
        return out.reshape(x.shape[:-1])


class ProductOracle(ScoreOracle):
    """Independent product across coordinate blocks.

    Each factor owns one block of coordinates; scores and posterior means are
    assembled blockwise, so cross-block structure is exactly zero.
    """

    def __init__(self, factors):
        blocks = []
        oracles = []
        for oracle, idx in factors:
            idx = np.asarray(idx, dtype=int)
            if idx.ndim != 1 or len(idx) != oracle.dim:
                raise ValueError(
                    f"block of size {len(idx)} does not match factor dim {oracle.dim}"
                )
            oracles.append(oracle)
            blocks.append(idx)
        if not blocks:
            raise ValueError("need at least one factor")
        allidx = np.concatenate(blocks)
        dim = allidx.size
        cover = np.sort(allidx)
        if not np.array_equal(cover, np.arange(dim)):
            raise ValueError("blocks must partition the coordinate range without overlap")
        self.oracles = tuple(oracles)
        self.blocks = tuple(blocks)
        self.dim = dim

    def sample0(self, rng, n):
        out = np.empty((n, self.dim))
        for oracle, idx in zip(self.oracles, self.blocks):
            out[:, idx] = oracle.sample0(rng, n)
        return out

    def _apply(self, method, t, x):
        x = self._check_point(x)
        out = np.empty_like(x)
        for oracle, idx in zip(self.oracles, self.blocks):
            out[..., idx] = getattr(oracle, method)(t, x[..., idx])
        return out

    def posterior_mean(self, t, x):
        return self._apply("posterior_mean", t, x)

    def score(self, t, x):
        return self._apply("score", t, x)

    @property
    def has_log_marginal(self) -> bool:
        return all(o.has_log_marginal for o in self.oracles)

    def log_marginal(self, t, x):
        x = self._check_point(x)
        out = 0.0
        for oracle, idx in zip(self.oracles, self.blocks):
            out = out + oracle.log_marginal(t, x[..., idx])
        return out


def point_mass_oracle(point) -> PointMassOracle:
    """Oracle for a Dirac mass at ``point``."""
    return PointMassOracle(point)


def point_cloud_oracle(cloud: PointCloudMeasure) -> PointCloudOracle:
    """Oracle for a weighted point cloud."""
    return PointCloudOracle(cloud)


def gaussian_oracle(law: GaussianLaw) -> GaussianOracle:
    """Oracle for a (possibly degenerate) Gaussian law."""
    return GaussianOracle(law)


def product_oracle(factors) -> ProductOracle:
    """Oracle for a product law given (oracle, coordinate block) pairs."""
    return ProductOracle(factors)


# ---------------------------------------------------------------------------
# Forward process
# ---------------------------------------------------------------------------


def forward_sample(oracle: ScoreOracle, t: float, rng: np.random.Generator, n: int = 1):
    """Sample (X_0, X_t) jointly: X_t = c(t) X_0 + sigma(t) Z."""
    t = float(t)
    if t < 0 or not math.isfinite(t):
        raise ValueError(f"forward time must be nonnegative, got {t!r}")
    x0 = oracle.sample0(rng, n)
    if t == 0.0:
        return x0, x0.copy()
    c = math.exp(-t)
    sig = math.sqrt(-math.expm1(-2.0 * t))
    return x0, c * x0 + sig * rng.standard_normal(x0.shape)


def forward_bridge(xt: np.ndarray, t: float, t2: float, rng: np.random.Generator):
    """Advance forward samples from time t to t2 > t via the Markov kernel.

    Composing forward_sample to t with this bridge gives the same law as
    forward_sample straight to t2, because c(t2 - t) * c(t) = c(t2).
    """
    t, t2 = float(t), float(t2)
    if t2 <= t:
        raise ValueError(f"bridge requires t2 > t, got t={t!r}, t2={t2!r}")
    xt = np.asarray(xt, dtype=float)
    gap = t2 - t
    c = math.exp(-gap)
    sig = math.sqrt(-math.expm1(-2.0 * gap))
    return c * xt + sig * rng.standard_normal(xt.shape)


# ---------------------------------------------------------------------------
# Synthetic manifolds
# ---------------------------------------------------------------------------


def _random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _hilbert_vertices(order: int) -> np.ndarray:
    """Vertices of the order-n Hilbert polyline over the unit square."""
    n = 1 << order
    idx = np.arange(n * n)
    x = np.zeros_like(idx)
    y = np.zeros_like(idx)
    t = idx.copy()
    s = 1
    while s < n:
        rx = (t // 2) & 1
        ry = (t ^ rx) & 1
        # rotate quadrant contents
        flip = ry == 0
        swap_mask = flip & (rx == 1)
        x_f = np.where(swap_mask, s - 1 - x, x)
        y_f = np.where(swap_mask, s - 1 - y, y)
        x, y = np.where(flip, y_f, x_f), np.where(flip, x_f, y_f)
        x = x + s * rx
        y = y + s * ry
        t //= 4
        s *= 2
    return (np.stack([x, y], axis=1) + 0.5) / n


def _sample_polyline(vertices: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    segs = np.diff(vertices, axis=0)
    lens = np.linalg.norm(segs, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    s = rng.uniform(0.0, cum[-1], size=n)
    j = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(segs) - 1)
    frac = (s - cum[j]) / lens[j]
    return vertices[j] + frac[:, None] * segs[j]


def make_manifold_cloud(
    kind: str,
    D: int,
    n: int,
    rng: np.random.Generator,
    *,
    intrinsic_dim: int = 1,
    radii=None,
    order: int = 2,
    rotate: bool = True,
):
    """Sample n points uniformly from a synthetic manifold embedded in R^D.

    Kinds:
        circle: radius-1 circle (intrinsic dim 1), needs D >= 2.
        torus: product of ``intrinsic_dim`` circles with the given radii
            (default all 1), needs D >= 2 * intrinsic_dim.
        hilbert: order-n plane-filling polyline, a stress case whose reach
            metadata shrinks with the order; needs D >= 2.

    The manifold is optionally rotated by a seeded random orthogonal map,
    then rescaled so its analytic diameter is 1 and translated so the first
    sampled point sits at the origin.  Returns (PointCloudMeasure,
    ManifoldSpec) with the spec rescaled to the embedded geometry.
    """
    if n < 1:
        raise ValueError("need n >= 1 points")
    if kind == "circle":
        if D < 2:
            raise ValueError("circle embedding needs D >= 2")
        theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
        pts2 = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        raw = np.zeros((n, D))
        raw[:, :2] = pts2
        spec = ManifoldSpec(
            intrinsic_dim=1,
            reach=1.0,
            volume=2.0 * math.pi,
            density_lower=1.0 / (2.0 * math.pi),
            density_upper=1.0 / (2.0 * math.pi),
            curvature_bound=1.0,
        )
        diam = 2.0
    elif kind == "torus":
        d = int(intrinsic_dim)
        if d < 1:
            raise ValueError("torus needs intrinsic_dim >= 1")
        if D < 2 * d:
            raise ValueError(f"torus of intrinsic dim {d} needs D >= {2 * d}")
        radii = np.full(d, 1.0) if radii is None else np.asarray(radii, dtype=float)
        if radii.shape != (d,) or (radii <= 0).any():
            raise ValueError("radii must be positive, one per intrinsic dimension")
        theta = rng.uniform(0.0, 2.0 * math.pi, size=(n, d))
        raw = np.zeros((n, D))
        for i in range(d):
            raw[:, 2 * i] = radii[i] * np.cos(theta[:, i])
            raw[:, 2 * i + 1] = radii[i] * np.sin(theta[:, i])
        vol = float(np.prod(2.0 * math.pi * radii))
        spec = ManifoldSpec(
            intrinsic_dim=d,
            reach=float(radii.min()),
            volume=vol,
            density_lower=1.0 / vol,
            density_upper=1.0 / vol,
            curvature_bound=1.0 / float(radii.min()),
        )
        diam = 2.0 * math.sqrt(float((radii**2).sum()))
    elif kind == "hilbert":
        if D < 2:
            raise ValueError("hilbert embedding needs D >= 2")
        order = int(order)
        if not (1 <= order <= 8):
            raise ValueError("hilbert order must be in [1, 8]")
        verts = _hilbert_vertices(order)
        pts2 = _sample_polyline(verts, n, rng)
        raw = np.zeros((n, D))
        raw[:, :2] = pts2
        cell = 2.0**-order
        length = float(np.linalg.norm(np.diff(verts, axis=0), axis=1).sum())
        # Right-angle corners make the true reach zero; record half the cell
        # size, the scale at which distinct strands of the curve collide.
        spec = ManifoldSpec(
            intrinsic_dim=1,
            reach=cell / 2.0,
            volume=length,
            density_lower=1.0 / length,
            density_upper=1.0 / length,
            curvature_bound=2.0 / cell,
        )
        lo = verts.min(axis=0)
        hi = verts.max(axis=0)
        diam = float(np.linalg.norm(hi - lo))
    else:
        raise ValueError(f"unknown manifold kind {kind!r}")

    if rotate:
        raw = raw @ _random_rotation(D, rng).T
    cloud = PointCloudMeasure.uniform(raw).normalized(scale=diam)
    return cloud, spec.rescaled(1.0 / diam)


# ---------------------------------------------------------------------------
# Columnar serialization
# ---------------------------------------------------------------------------


def save_cloud(path, cloud: PointCloudMeasure, spec: ManifoldSpec | None = None) -> None:
    """Write one point per row (weight last) with a key-value header block."""
    lines = [f"# dim = {cloud.dim}", f"# n = {len(cloud.points)}"]
    if spec is not None:
        for key in (
            "intrinsic_dim",
            "reach",
            "volume",
            "density_lower",
            "density_upper",
            "curvature_bound",
            "regularity",
        ):
            val = getattr(spec, key)
            txt = f"{val:.17g}" if isinstance(val, float) else str(val)
            lines.append(f"# {key} = {txt}")
    rows = np.concatenate([cloud.points, cloud.weights[:, None]], axis=1)
    buf = io.StringIO()
    for row in rows:
        buf.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        fh.write(buf.getvalue())


def load_cloud(path):
    """Inverse of save_cloud; returns (PointCloudMeasure, ManifoldSpec | None)."""
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                header[key.strip()] = value.strip()
            else:
                rows.append([float(v) for v in line.split()])
    data = np.asarray(rows, dtype=float)
    cloud = PointCloudMeasure(points=data[:, :-1], weights=data[:, -1])
    spec = None
    if "reach" in header:
        spec = ManifoldSpec(
            intrinsic_dim=int(header["intrinsic_dim"]),
            reach=float(header["reach"]),
            volume=float(header["volume"]),
            density_lower=float(header["density_lower"]),
            density_upper=float(header["density_upper"]),
            curvature_bound=float(header["curvature_bound"]),
            regularity=float(header["regularity"]),
        )
    return cloud, spec
