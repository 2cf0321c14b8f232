"""
System identification from an EDMD generator matrix.

Drift: ``L`` applied to the selector of ``x_i``.

Diffusion: ``rho_i = L e_{x_i^2} - 2 (x_i * b_i)`` collects ``a_ii(x)`` plus the
constant ``sigma2_i^2 * Ctilde`` contributed by the jump noise. With
``sigma1_ii = eta_0 + eta_1 x_i + ... + eta_p x_i^p`` (``p >= 1``) the pure
``x_i`` powers of ``rho_i`` are matched against ``conv(eta, eta)`` from the top
degree down; the constant entry left over is the jump part.
"""
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path

import numpy as np

from .polydict import (MonomialBasis, PolyCoeffs, aligned_indices, coordinate_selector,
                       multiply_by_coordinate)
from .stoch_sim import LevySpec, levy_second_moment

logger = logging.getLogger(__name__)

__all__ = [
    "IdentifiedModel", "SeparationError", "identify_drift", "levy_second_moment",
    "separate_diffusions", "backward_iteration", "assemble_model", "identify",
    "rho_vectors", "render_table",
]


class SeparationError(ValueError):
    """Gaussian and jump diffusion could not be separated from the generator estimate."""


def identify_drift(L, basis):
    """Drift coefficient vectors ``L @ e_{x_i}``, one :class:`PolyCoeffs` per coordinate."""
    L = np.asarray(L, dtype=float)
    return [PolyCoeffs(basis, L @ coordinate_selector(basis, i, 1).values) for i in range(basis.dim)]


def rho_vectors(L, basis, drift):
    """``rho_i = L e_{x_i^2} - 2 x_i b_i`` for every coordinate.

    Returns ``(rhos, truncated)``; ``truncated[i]`` flags that ``x_i b_i`` left
    the basis, i.e. ``max_degree`` is too small for the drift.
    """
    L = np.asarray(L, dtype=float)
    rhos, truncated = [], []
    for i in range(basis.dim):
        shifted = multiply_by_coordinate(basis, drift[i], i)
        rhos.append(L @ coordinate_selector(basis, i, 2).values - 2.0 * shifted.values)
        truncated.append(shifted.truncated)
    return rhos, truncated


def backward_iteration(rho, p):
    """Recover ``eta`` (coefficients of ``sigma1``, leading one positive) from
    ``rho[1:2p+1]`` assuming ``rho[k] = conv(eta, eta)[k]`` for ``k >= p``.

    ``rho[2p]`` must be positive.
    """
    rho = np.asarray(rho, dtype=float)
    eta = np.zeros(p + 1)
    eta[p] = np.sqrt(rho[2 * p])
    for k in range(2 * p - 1, p - 1, -1):
        lo = k - p
        # eta_i eta_j with i + j = k and both indices already known (> lo)
        known = sum(eta[i] * eta[k - i] for i in range(lo + 1, p + 1) if lo < k - i <= p)
        eta[lo] = (rho[k] - known) / (2.0 * eta[p])
    return eta


@dataclass
class IdentifiedModel:
    """Learned coefficients in the dictionary basis.

    ``a_diag[i]`` holds the coefficients of ``sigma1_ii**2``; ``sigma2_sq[i]`` the
    squared jump amplitude. ``alpha`` is given, not estimated.
    """
    basis: MonomialBasis
    drift: list
    a_diag: list
    sigma2_sq: np.ndarray
    alpha: float | None = None
    c: float | None = None
    mode: str = "brownian"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sigma2_sq = np.asarray(self.sigma2_sq, dtype=float).reshape(-1)
        if self.mode not in ("brownian", "levy"):
            raise ValueError(f"mode must be 'brownian' or 'levy', got {self.mode!r}")

    @property
    def dim(self):
        return self.basis.dim

    @property
    def sigma2(self):
        return np.sqrt(np.maximum(self.sigma2_sq, 0.0))

    @property
    def levy(self):
        if self.mode != "levy":
            return None
        return LevySpec(self.alpha, self.c)

    def drift_at(self, points):
        return np.column_stack([b(points) for b in self.drift])

    def diffusion_at(self, points):
        return np.column_stack([a(points) for a in self.a_diag])

    def to_record(self):
        return {
            "dim": self.basis.dim,
            "max_degree": self.basis.max_degree,
            "labels": self.basis.labels(),
            "mode": self.mode,
            "alpha": self.alpha,
            "c": self.c,
            "drift": [p.values.tolist() for p in self.drift],
            "a_diag": [p.values.tolist() for p in self.a_diag],
            "sigma2_sq": self.sigma2_sq.tolist(),
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_record(cls, rec):
        basis = MonomialBasis(int(rec["dim"]), int(rec["max_degree"]))
        return cls(
            basis=basis,
            drift=[PolyCoeffs(basis, v) for v in rec["drift"]],
            a_diag=[PolyCoeffs(basis, v) for v in rec["a_diag"]],
            sigma2_sq=rec["sigma2_sq"],
            alpha=rec.get("alpha"),
            c=rec.get("c"),
            mode=rec.get("mode", "brownian"),
            diagnostics=rec.get("diagnostics", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_record(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_record(json.loads(Path(path).read_text()))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _per_coord(value, d, name):
    if value is None or np.isscalar(value):
        return [value] * d
    value = list(value)
    if len(value) != d:
        raise ValueError(f"{name} needs one entry per coordinate")
    return value


def detect_p2(rho_aligned, tol):
    """Smallest ``p`` with ``|rho_k| <= tol_k`` for all ``k > 2p``."""
    r = np.abs(np.asarray(rho_aligned, dtype=float))
    tol = np.broadcast_to(np.asarray(tol, dtype=float), r.shape)
    above = np.flatnonzero(r[1:] > tol[1:]) + 1
    return 0 if above.size == 0 else int(np.ceil(above.max() / 2))


def separate_diffusions(L, basis, drift, alpha=None, c=1.0, mode="levy", p2=None, tol=1e-8,
                        auto_p2=False, drift_tol=0.0):
    """Split ``rho`` into Gaussian diffusion coefficients and jump amplitudes.

    Parameters
    ----------
    L : ndarray (N_K, N_K)
        Generator matrix.
    basis : MonomialBasis
    drift : list of PolyCoeffs
        Output of :func:`identify_drift`.
    alpha, c : float
        Stability index and jump bound (levy mode only).
    mode : {'levy', 'brownian'}
    p2 : int or list of int
        Declared degree of each ``sigma1_ii``. Required in levy mode unless
        ``auto_p2`` is set.
    tol : float or list of arrays
        Noise tolerance on ``rho``. Either a scalar or, per coordinate, an array
        over the basis (typically 10x the standard error of ``rho``). Slightly
        negative leading coefficients and jump variances within ``tol`` are
        clamped to zero with a warning; larger violations raise.
    drift_tol : float or array (d, N_K)
        Noise level of the drift coefficients. ``x_i b_i`` leaving the basis is
        only reported as a warning when a dropped coefficient exceeds it.

    Returns
    -------
    a_diag : list of PolyCoeffs
    sigma2_sq : ndarray (d,)
    diagnostics : dict
    """
    d = basis.dim
    rhos, truncated = rho_vectors(L, basis, drift)
    tols = [np.broadcast_to(np.asarray(t, dtype=float), (len(basis),))
            for t in _per_coord(tol, d, "tol")]
    diag = {"truncated_drift_shift": truncated, "rho": [r.tolist() for r in rhos]}
    top = basis.exponent_array.sum(axis=1) == basis.max_degree
    dtol = np.broadcast_to(np.asarray(drift_tol, dtype=float), (d, len(basis)))
    for i, t in enumerate(truncated):
        if not t:
            continue
        if np.any(np.abs(drift[i].values[top]) > dtol[i][top]):
            logger.warning("x_%d * b_%d exceeds degree %d; raise max_degree", i + 1, i + 1, basis.max_degree)
        else:
            logger.info("x_%d * b_%d truncated at degree %d (dropped terms within noise)",
                        i + 1, i + 1, basis.max_degree)
    if mode == "brownian":
        return [PolyCoeffs(basis, r) for r in rhos], np.zeros(d), diag
    if mode != "levy":
        raise ValueError(f"unknown mode {mode!r}")
    if alpha is None:
        raise ValueError("levy mode needs the stability index alpha")
    ctilde = levy_second_moment(alpha, c)
    p2s = _per_coord(p2, d, "p2")
    a_diag, sigma2_sq = [], np.zeros(d)
    diag.update(p2=[], eta=[], cross_terms=[], unused_residual=[], clamped=[])
    for i in range(d):
        idx = aligned_indices(basis, i)
        r, t = rhos[i][idx], tols[i][idx]
        p = p2s[i]
        if p is None:
            if not auto_p2:
                raise ValueError("declare p2 (degree of sigma1) or enable auto_p2")
            p = detect_p2(r, t)
        p = int(p)
        if 2 * p > basis.max_degree:
            raise SeparationError(f"coordinate {i + 1}: 2*p2 = {2 * p} exceeds max_degree {basis.max_degree}")
        clamped = []
        if p == 0:
            raise SeparationError(
                f"coordinate {i + 1}: sigma1 declared constant; a constant Gaussian diffusion cannot be "
                "separated from the jump noise. Use brownian mode or a non-constant sigma1 model.")
        lead = r[2 * p]
        if lead < -t[2 * p]:
            raise SeparationError(
                f"coordinate {i + 1}: leading coefficient of sigma1^2 is {lead:.4g} < 0 beyond the "
                f"noise tolerance {t[2 * p]:.3g}; the generator estimate is inconsistent")
        if lead <= 0.0:
            if np.all(np.abs(r) <= t):
                # no diffusion of either kind
                eta = np.zeros(p + 1)
                eta_tilde = np.zeros(2 * p + 1)
                clamped.append("all")
                a_diag.append(PolyCoeffs(basis, np.zeros(len(basis))))
                sigma2_sq[i] = 0.0
                _record(diag, i, p, eta, rhos[i], idx, r, eta_tilde, clamped)
                continue
            raise SeparationError(
                f"coordinate {i + 1}: leading coefficient of sigma1^2 ({lead:.3g}) is not positive "
                f"with p2={p}, so eta_p2 would vanish; sigma1 looks constant. Declare a smaller p2 "
                "or rerun in brownian mode")
        eta = backward_iteration(r, p)
        eta_tilde = np.convolve(eta, eta)
        s2 = (r[0] - eta_tilde[0]) / ctilde
        if s2 < 0:
            if -s2 * ctilde <= t[0]:
                logger.warning("coordinate %d: sigma2^2 = %.3g clamped to 0", i + 1, s2)
                clamped.append("sigma2_sq")
                s2 = 0.0
            else:
                raise SeparationError(
                    f"coordinate {i + 1}: estimated sigma2^2 = {s2:.4g} is negative beyond tolerance")
        vals = np.zeros(len(basis))
        vals[idx[:2 * p + 1]] = eta_tilde
        a_diag.append(PolyCoeffs(basis, vals))
        sigma2_sq[i] = s2
        _record(diag, i, p, eta, rhos[i], idx, r, eta_tilde, clamped)
    return a_diag, sigma2_sq, diag


def _record(diag, i, p, eta, rho_full, idx, r, eta_tilde, clamped):
    cross = np.ones(rho_full.shape[0], dtype=bool)
    cross[idx] = False
    # equations k = 1..p-1 are not used by the iteration; degrees above 2p should vanish
    unused = [float(eta_tilde[k] - r[k]) for k in range(1, p)] + [float(v) for v in r[2 * p + 1:]]
    diag["p2"].append(p)
    diag["eta"].append(eta.tolist())
    diag["cross_terms"].append(rho_full[cross].tolist())
    diag["unused_residual"].append(unused)
    diag["clamped"].append(clamped)


def assemble_model(drift, a_diag, sigma2_sq, alpha=None, c=None, mode=None, diagnostics=None):
    """Bundle identified coefficients into an :class:`IdentifiedModel`."""
    if len(drift) != len(a_diag) or len(drift) != len(np.atleast_1d(sigma2_sq)):
        raise ValueError("inconsistent numbers of coordinates")
    basis = drift[0].basis
    sigma2_sq = np.maximum(np.asarray(sigma2_sq, dtype=float), 0.0)
    if mode is None:
        mode = "levy" if alpha is not None else "brownian"
    return IdentifiedModel(basis, list(drift), list(a_diag), sigma2_sq, alpha, c, mode,
                           dict(diagnostics or {}))


def rho_standard_error(estimate, drift):
    """Standard error of each ``rho_i`` from the estimate's batch generators."""
    if estimate.L_batches is None or len(estimate.L_batches) < 2:
        return None
    per_batch = []
    for Lb in estimate.L_batches:
        rb, _ = rho_vectors(Lb, estimate.basis, identify_drift(Lb, estimate.basis))
        per_batch.append(np.stack(rb))
    per_batch = np.stack(per_batch)
    B = per_batch.shape[0]
    return per_batch.std(axis=0, ddof=1) / np.sqrt(B)


def identify(estimate, mode="levy", alpha=None, c=1.0, p2=None, clamp_factor=10.0,
             min_tol=1e-8, auto_p2=False, bounds=None):
    """Drift and diffusion identification from a :class:`GeneratorEstimate`.

    The separation tolerance is ``clamp_factor`` times the batch standard error
    of ``rho`` (floored at ``min_tol``). ``bounds`` is the data box on which the
    learned ``sigma1**2`` is checked for negativity (default ``[-1, 1]^d``).
    """
    basis = estimate.basis
    drift = identify_drift(estimate.L, basis)
    se = rho_standard_error(estimate, drift)
    if se is None:
        tol = min_tol
    else:
        tol = [np.maximum(clamp_factor * s, min_tol) for s in se]
    drift_se = None
    if estimate.L_batches is not None and len(estimate.L_batches) > 1:
        drift_b = np.stack([[p.values for p in identify_drift(Lb, basis)] for Lb in estimate.L_batches])
        drift_se = drift_b.std(axis=0, ddof=1) / np.sqrt(drift_b.shape[0])
    drift_tol = 0.0 if drift_se is None else clamp_factor * drift_se
    a_diag, s2, diag = separate_diffusions(estimate.L, basis, drift, alpha, c, mode, p2, tol, auto_p2,
                                           drift_tol)
    if se is not None:
        diag["rho_stderr"] = se.tolist()
    if drift_se is not None:
        diag["drift_stderr"] = drift_se.tolist()
    _check_nonnegative(a_diag, diag, bounds)
    return assemble_model(drift, a_diag, s2, alpha if mode == "levy" else None,
                          c if mode == "levy" else None, mode, diag)


def _check_nonnegative(a_diag, diag, bounds=None, n=41):
    basis = a_diag[0].basis
    if bounds is None:
        bounds = [(-1.0, 1.0)] * basis.dim
    axes = [np.linspace(lo, hi, n) for lo, hi in bounds]
    pts = np.column_stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")])
    mins = []
    for i, a in enumerate(a_diag):
        m = float(a(pts).min())
        mins.append(m)
        if m < 0:
            logger.warning("sigma1^2 for coordinate %d dips to %.3g on the check grid", i + 1, m)
    diag["a_diag_min"] = mins


def render_table(model, true_model=None, threshold=0.05):
    """Plain-text tables: basis label, true value (if given), learned value.

    Learned entries with magnitude below ``threshold`` are displayed as 0.
    """
    basis = model.basis
    labels = basis.labels()
    names = _coord_names(basis.dim)

    def fmt(v):
        return "0" if abs(v) < threshold else f"{v:.4f}"

    def tfmt(v):
        return "0" if v == 0 else f"{v:g}"

    lines = []
    sections = [(f"Drift b_{names[i]}", model.drift[i].values,
                 None if true_model is None else true_model.drift[i].values) for i in range(basis.dim)]
    true_a = None if true_model is None else _true_a_diag(true_model, basis)
    sections += [(f"Diffusion sigma1_{names[i]}^2", model.a_diag[i].values,
                  None if true_a is None else true_a[i]) for i in range(basis.dim)]
    for title, learned, truth in sections:
        lines.append(title)
        header = f"{'basis':>8} {'true':>10} {'learning':>10}" if truth is not None else f"{'basis':>8} {'learning':>10}"
        lines.append(header)
        for k, lab in enumerate(labels):
            if truth is not None:
                lines.append(f"{lab:>8} {tfmt(truth[k]):>10} {fmt(learned[k]):>10}")
            else:
                lines.append(f"{lab:>8} {fmt(learned[k]):>10}")
        lines.append("")
    if model.mode == "levy":
        lines.append("Jump noise sigma2^2 (diagonal)")
        truth = None
        if true_model is not None:
            truth = np.asarray(true_model.sigma2, dtype=float) ** 2
        for i in range(basis.dim):
            t = "" if truth is None else f" true {truth[i]:g}"
            lines.append(f"{names[i]:>8}{t} learning {model.sigma2_sq[i]:.4f}")
        lines.append("")
    return "\n".join(lines)


def _coord_names(d):
    from .polydict import variable_name
    return [variable_name(i, d) for i in range(d)]


def _true_a_diag(true_model, basis):
    out = []
    for i, s in enumerate(true_model.sigma1):
        idx = aligned_indices(s.basis, i)
        sq = np.convolve(s.values[idx], s.values[idx])
        vals = np.zeros(len(basis))
        aligned = aligned_indices(basis, i)
        n = min(len(sq), len(aligned))
        vals[aligned[:n]] = sq[:n]
        out.append(vals)
    return out
