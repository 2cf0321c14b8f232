"""
Sampling of SDEs driven by Brownian motion and truncated symmetric alpha-stable noise.

The jump noise has Levy measure ``C_alpha 1{|y|<c} dy / |y|^(1+alpha)`` and no
Gaussian part. Increments are drawn with an Asmussen-Rosinski split: jumps with
magnitude in ``[eps, c)`` form a compound Poisson sum, jumps below ``eps`` are
replaced by a centred Gaussian with the matching variance.

Random streams are attached to fixed-size chunks of sample indices, so a
snapshot set only depends on ``(model, domain, M, dt, seed)`` and not on the
number of worker threads.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
from math import ceil, gamma, pi, sqrt
from pathlib import Path

import numpy as np

from ._io import save_npz
from .polydict import aligned_indices

logger = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 16


def _check_alpha(alpha):
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"stability index must lie in (0, 2), got {alpha}")


def c_alpha(alpha):
    """Normalising constant of the symmetric alpha-stable jump measure."""
    _check_alpha(alpha)
    return alpha * gamma((1.0 + alpha) / 2.0) / (2.0 ** (1.0 - alpha) * sqrt(pi) * gamma(1.0 - alpha / 2.0))


def levy_second_moment(alpha, c):
    """``C_alpha * int_{|y|<c} y^2 / |y|^(1+alpha) dy = 2 C_alpha c^(2-alpha) / (2-alpha)``.

    This is the variance rate of one noise component, i.e. the factor that
    multiplies ``sigma2**2`` in the generator applied to ``x_i**2``.
    """
    _check_alpha(alpha)
    if c < 0:
        raise ValueError("jump bound must be non-negative")
    return 2.0 * c_alpha(alpha) * c ** (2.0 - alpha) / (2.0 - alpha)


@dataclass(frozen=True)
class LevySpec:
    """Truncated symmetric alpha-stable noise: index ``alpha``, jump bound ``c``.

    ``small_jump_cutoff`` defaults to ``c / 100``.
    """
    alpha: float = 1.0
    c: float = 1.0
    seed: int = 0
    small_jump_cutoff: float | None = None

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not self.c > 0:
            raise ValueError(f"jump bound c must be positive, got {self.c}")
        if self.small_jump_cutoff is None:
            object.__setattr__(self, "small_jump_cutoff", self.c / 100.0)
        if not 0.0 < self.small_jump_cutoff < self.c:
            raise ValueError("small_jump_cutoff must lie in (0, c)")

    @property
    def eps(self):
        return self.small_jump_cutoff

    @property
    def jump_rate(self):
        """Intensity of jumps with magnitude in ``[eps, c)``."""
        a, eps, c = self.alpha, self.eps, self.c
        return 2.0 * c_alpha(a) * (eps ** -a - c ** -a) / a

    @property
    def small_jump_variance_rate(self):
        a = self.alpha
        return 2.0 * c_alpha(a) * self.eps ** (2.0 - a) / (2.0 - a)

    @property
    def variance_rate(self):
        return levy_second_moment(self.alpha, self.c)


def _levy_parts(spec, dt, size, rng):
    """Return ``(increments, jumps)``; ``jumps`` is the flat array of large jumps drawn."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(shape))
    a, eps, c = spec.alpha, spec.eps, spec.c
    counts = rng.poisson(spec.jump_rate * dt, n)
    total_jumps = int(counts.sum())
    u = rng.random(total_jumps)
    lo, hi = eps ** -a, c ** -a
    mags = (lo - u * (lo - hi)) ** (-1.0 / a)
    mags = np.minimum(mags, np.nextafter(c, 0.0))
    signs = np.where(rng.random(total_jumps) < 0.5, -1.0, 1.0)
    jumps = signs * mags
    owner = np.repeat(np.arange(n), counts)
    big = np.bincount(owner, weights=jumps, minlength=n)
    small = sqrt(spec.small_jump_variance_rate * dt) * rng.standard_normal(n)
    return (big + small).reshape(shape), jumps


def sample_levy_increments(spec, dt, size, rng=None):
    """Array of independent increments ``L_{t+dt} - L_t`` of the truncated stable motion."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    return _levy_parts(spec, dt, size, rng)[0]


def sample_levy_increment(spec, dt, rng=None):
    """One scalar increment."""
    return float(sample_levy_increments(spec, dt, 1, rng)[0])


@dataclass
class SdeModel:
    """``dX = b(X) dt + sigma1(X) dW + sigma2 dL`` with diagonal noise.

    ``drift[i]`` and ``sigma1[i]`` are polynomials; ``sigma1[i]`` may only
    involve ``x_i``. ``sigma2`` holds the constant non-negative jump amplitudes.
    ``levy`` is ``None`` for Brownian-only models.
    """
    drift: list
    sigma1: list
    sigma2: np.ndarray = None
    levy: LevySpec | None = None

    def __post_init__(self):
        self.drift = list(self.drift)
        self.sigma1 = list(self.sigma1)
        d = len(self.drift)
        if len(self.sigma1) != d:
            raise ValueError("drift and sigma1 must have one entry per coordinate")
        if self.sigma2 is None:
            self.sigma2 = np.zeros(d)
        self.sigma2 = np.asarray(self.sigma2, dtype=float).reshape(-1)
        if self.sigma2.shape[0] != d:
            raise ValueError("sigma2 must have one entry per coordinate")
        if np.any(self.sigma2 < 0):
            raise ValueError("sigma2 entries must be non-negative")
        for i, s in enumerate(self.sigma1):
            others = np.ones(len(s.basis), dtype=bool)
            others[aligned_indices(s.basis, i)] = False
            if np.any(s.values[others] != 0):
                raise ValueError(f"sigma1[{i}] must be a polynomial in x_{i + 1} alone")

    @property
    def dim(self):
        return len(self.drift)

    @property
    def mode(self):
        return "brownian" if self.levy is None else "levy"

    @property
    def alpha(self):
        return None if self.levy is None else self.levy.alpha

    @property
    def c(self):
        return None if self.levy is None else self.levy.c

    def drift_at(self, points):
        return np.column_stack([b(points) for b in self.drift])

    def sigma1_at(self, points):
        return np.column_stack([s(points) for s in self.sigma1])

    def diffusion_at(self, points):
        """Diagonal entries ``a_ii = sigma1_ii**2``."""
        return self.sigma1_at(points) ** 2


def _as_columns(a):
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, 1) if a.ndim == 1 else a


@dataclass
class SnapshotSet:
    """Pairs ``(x_m, y_m)`` with ``y_m`` the state reached from ``x_m`` after ``dt``."""
    X: np.ndarray
    Y: np.ndarray
    dt: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = _as_columns(self.X)
        self.Y = _as_columns(self.Y)
        if self.X.shape != self.Y.shape:
            raise ValueError(f"X and Y shapes differ: {self.X.shape} vs {self.Y.shape}")

    @property
    def M(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    def save(self, path):
        """Write to ``.npz`` (binary) or ``.csv`` (header ``# d M dt`` then rows ``x | y``)."""
        path = Path(path)
        if path.suffix == ".npz":
            save_npz(path, X=self.X, Y=self.Y, dt=np.float64(self.dt))
        elif path.suffix == ".csv":
            cols = [f"x{i + 1}" for i in range(self.dim)] + [f"y{i + 1}" for i in range(self.dim)]
            header = f"d={self.dim} M={self.M} dt={self.dt!r}\n" + ",".join(cols)
            np.savetxt(path, np.hstack([self.X, self.Y]), delimiter=",", header=header, fmt="%.17g")
        else:
            raise ValueError(f"unsupported snapshot format {path.suffix!r}")

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path) as f:
                return cls(f["X"], f["Y"], float(f["dt"]))
        if path.suffix == ".csv":
            with open(path) as fh:
                first = fh.readline().lstrip("# ").split()
            info = dict(tok.split("=") for tok in first)
            d = int(info["d"])
            data = np.loadtxt(path, delimiter=",", ndmin=2)
            if data.shape[1] != 2 * d:
                raise ValueError(f"expected {2 * d} columns, found {data.shape[1]}")
            return cls(data[:, :d], data[:, d:], float(info["dt"]))
        raise ValueError(f"unsupported snapshot format {path.suffix!r}")


def _bounds_of(domain):
    bounds = getattr(domain, "bounds", domain)
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ValueError(f"empty domain {bounds.tolist()}")
    return bounds


def grid_points(bounds, M):
    """``M`` cell-centred grid points in the box; in ``d`` dims a ``ceil(M^(1/d))``-per-axis
    tensor grid truncated to its first ``M`` points."""
    bounds = _bounds_of(bounds)
    d = bounds.shape[0]
    n = int(ceil(round(M ** (1.0 / d), 9)))
    axes = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    return pts[:M]


def _stream(seed, purpose, chunk):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(purpose, chunk))))


def euler_maruyama_step(model, x, dt, rng):
    """One Euler-Maruyama step from each row of ``x``."""
    n, d = x.shape
    y = x + model.drift_at(x) * dt
    z = rng.standard_normal((n, d))
    y += model.sigma1_at(x) * sqrt(dt) * z
    if model.levy is not None and np.any(model.sigma2 > 0):
        y += model.sigma2 * sample_levy_increments(model.levy, dt, (n, d), rng)
    return y


def generate_snapshots(model, domain, M, dt, scheme="grid", seed=0, threads=1, chunk_size=CHUNK_SIZE):
    """Sample ``M`` one-step snapshot pairs of ``model`` over the box ``domain``.

    Parameters
    ----------
    model : SdeModel
    domain : sequence of (lo, hi) pairs or object with ``bounds``
    M : int
        Number of pairs.
    dt : float
        Time step.
    scheme : {'grid', 'uniform'}
        Cell-centred tensor grid or independent uniform draws.
    seed : int
    threads : int
        Worker threads; output does not depend on it.

    Returns
    -------
    SnapshotSet
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    bounds = _bounds_of(domain)
    if bounds.shape[0] != model.dim:
        raise ValueError("domain dimension does not match the model")
    if scheme == "grid":
        X = grid_points(bounds, M)
    elif scheme == "uniform":
        X = np.empty((M, model.dim))
    else:
        raise ValueError(f"unknown initial-condition scheme {scheme!r}")
    Y = np.empty_like(X)
    starts = range(0, M, chunk_size)

    def work(k):
        sl = slice(k * chunk_size, min((k + 1) * chunk_size, M))
        if scheme == "uniform":
            u = _stream(seed, 0, k).random((sl.stop - sl.start, model.dim))
            X[sl] = bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0])
        Y[sl] = euler_maruyama_step(model, X[sl], dt, _stream(seed, 1, k))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, range(len(starts))))
    else:
        for k in range(len(starts)):
            work(k)
    return SnapshotSet(X, Y, float(dt), {"seed": int(seed), "scheme": scheme})


def increment_summary(snapshots):
    """Per-coordinate mean and variance of ``y - x`` (logged by the CLI as a sanity check)."""
    inc = snapshots.Y - snapshots.X
    return {"mean": inc.mean(axis=0).tolist(), "var": inc.var(axis=0).tolist()}
