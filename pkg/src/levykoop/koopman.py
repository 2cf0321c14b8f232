"""
EDMD estimate of the stochastic Koopman operator and its generator.

With dictionary rows ``Psi(x)``, the Gram matrices are

    G = mean_m Psi(x_m)^T Psi(x_m),    A = mean_m Psi(x_m)^T Psi(y_m),

and ``K = pinv(G) A`` maps the coefficient vector ``B`` of an observable
``f = Psi B`` to that of its one-step expectation. ``L = (K - I) / dt``.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import save_npz
from .polydict import MonomialBasis

CHUNK_SIZE = 1 << 16
DEFAULT_SVD_CUTOFF = 1e-10


def _batched_sums(snapshots, basis, n_batches, chunk_size):
    if basis.dim != snapshots.dim:
        raise ValueError(f"basis has dim {basis.dim}, snapshots have dim {snapshots.dim}")
    if snapshots.M < 1:
        raise ValueError("need at least one snapshot pair")
    N = len(basis)
    SG = np.zeros((n_batches, N, N))
    SA = np.zeros((n_batches, N, N))
    counts = np.zeros(n_batches, dtype=np.int64)
    for start in range(0, snapshots.M, chunk_size):
        stop = min(start + chunk_size, snapshots.M)
        PX = basis.evaluate(snapshots.X[start:stop])
        PY = basis.evaluate(snapshots.Y[start:stop])
        if n_batches == 1:
            SG[0] += PX.T @ PX
            SA[0] += PX.T @ PY
            counts[0] += stop - start
            continue
        labels = np.arange(start, stop) % n_batches
        for b in range(n_batches):
            sel = labels == b
            SG[b] += PX[sel].T @ PX[sel]
            SA[b] += PX[sel].T @ PY[sel]
            counts[b] += int(sel.sum())
    return SG, SA, counts


def gram_matrices(snapshots, basis, chunk_size=CHUNK_SIZE):
    """Return ``(G, A)``; rows are accumulated in fixed-size chunks in index order."""
    SG, SA, counts = _batched_sums(snapshots, basis, 1, chunk_size)
    return SG[0] / counts[0], SA[0] / counts[0]


def pinv_svd(G, svd_cutoff=DEFAULT_SVD_CUTOFF):
    """Pseudoinverse dropping singular values below ``svd_cutoff * s_max``."""
    U, s, Vt = np.linalg.svd(G)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros_like(G.T)
    keep = s > svd_cutoff * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def koopman_matrix(G, A, svd_cutoff=DEFAULT_SVD_CUTOFF):
    G = np.asarray(G, dtype=float)
    A = np.asarray(A, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1] or G.shape != A.shape:
        raise ValueError(f"G and A must be square and equal-sized, got {G.shape} and {A.shape}")
    return pinv_svd(G, svd_cutoff) @ A


def generator_matrix(K, dt):
    """First-order difference quotient ``(K - I) / dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    K = np.asarray(K, dtype=float)
    return (K - np.eye(K.shape[0])) / dt


@dataclass
class GeneratorEstimate:
    """EDMD matrices for one snapshot set.

    ``L_batches`` (optional, shape ``(B, N, N)``) holds generator estimates from
    ``B`` interleaved subsets of the data; their spread gives standard errors.
    """
    basis: MonomialBasis
    G: np.ndarray
    A: np.ndarray
    K: np.ndarray
    L: np.ndarray
    dt: float
    svd_cutoff: float = DEFAULT_SVD_CUTOFF
    M: int = 0
    L_batches: np.ndarray | None = None

    def residual(self):
        """Relative Frobenius residual ``|G K - A| / |A|`` of the normal equations."""
        return float(np.linalg.norm(self.G @ self.K - self.A) / max(np.linalg.norm(self.A), 1e-300))

    def standard_error(self):
        """Entrywise standard error of ``L`` from the batch estimates (``None`` without batches)."""
        if self.L_batches is None or len(self.L_batches) < 2:
            return None
        B = len(self.L_batches)
        return self.L_batches.std(axis=0, ddof=1) / np.sqrt(B)

    def save(self, path):
        extra = {} if self.L_batches is None else {"L_batches": self.L_batches}
        save_npz(
            Path(path),
            dim=np.int64(self.basis.dim),
            max_degree=np.int64(self.basis.max_degree),
            dt=np.float64(self.dt),
            svd_cutoff=np.float64(self.svd_cutoff),
            M=np.int64(self.M),
            G=self.G, A=self.A, K=self.K, L=self.L,
            **extra,
        )

    @classmethod
    def load(cls, path):
        with np.load(Path(path)) as f:
            basis = MonomialBasis(int(f["dim"]), int(f["max_degree"]))
            return cls(
                basis=basis, G=f["G"], A=f["A"], K=f["K"], L=f["L"],
                dt=float(f["dt"]), svd_cutoff=float(f["svd_cutoff"]), M=int(f["M"]),
                L_batches=f["L_batches"] if "L_batches" in f.files else None,
            )


def estimate_generator(snapshots, basis, svd_cutoff=DEFAULT_SVD_CUTOFF, n_batches=10,
                       chunk_size=CHUNK_SIZE):
    """Full EDMD pass: Gram matrices, Koopman matrix and generator, plus batch estimates.

    Parameters
    ----------
    snapshots : SnapshotSet
    basis : MonomialBasis
    svd_cutoff : float
        Relative singular-value threshold for the pseudoinverse of ``G``.
    n_batches : int
        Number of interleaved subsets (sample index modulo ``n_batches``) used for
        standard errors. ``1`` disables them.
    """
    if snapshots.M < len(basis):
        raise ValueError(
            f"under-determined EDMD: {snapshots.M} snapshot pairs for {len(basis)} basis functions")
    n_batches = max(1, min(int(n_batches), snapshots.M // len(basis)))
    SG, SA, counts = _batched_sums(snapshots, basis, n_batches, chunk_size)
    G = SG.sum(axis=0) / counts.sum()
    A = SA.sum(axis=0) / counts.sum()
    K = koopman_matrix(G, A, svd_cutoff)
    L = generator_matrix(K, snapshots.dt)
    L_batches = None
    if n_batches > 1:
        L_batches = np.stack([
            generator_matrix(koopman_matrix(SG[b] / counts[b], SA[b] / counts[b], svd_cutoff), snapshots.dt)
            for b in range(n_batches)
        ])
    return GeneratorEstimate(basis, G, A, K, L, float(snapshots.dt), float(svd_cutoff),
                             int(snapshots.M), L_batches)
