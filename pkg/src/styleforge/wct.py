"""Whitening and coloring transforms on encoder features.

Features are handled as C x N matrices (one column per spatial position).
Whitening removes channel correlation via an eigendecomposition of the
(N-1)-normalized covariance; coloring is its inverse built from the style
covariance.  Eigendecompositions use cyclic Jacobi rotations, iterated until
the off-diagonal Frobenius norm falls below 1e-10 of the input norm.

Rank handling: eigenvalues below 1e-5 of the largest are dropped from the
retained rank, so D^(-1/2) stays bounded on the rank-deficient covariances
that deep layers produce (C up to 512 with few spatial positions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ShapeError, ValidationError

_OFF_TOL = 1e-10
_RANK_TOL = 1e-5
_MAX_SWEEPS = 60


@njit(cache=True)
def _jacobi_sweeps(a, w, tol_off, max_sweeps):  # pragma: no cover - jitted
    """Cyclic-by-rows Jacobi on symmetric ``a``; ``w`` accumulates V^T rows.

    Rotations update full rows (contiguous) and mirror them into the columns
    through symmetry; pivot diagonals use the exact closed-form update.
    """
    n = a.shape[0]
    sweeps = 0
    for sweep in range(max_sweeps):
        off2 = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off2 += a[p, q] * a[p, q]
        if np.sqrt(2.0 * off2) < tol_off:
            return sweeps
        thresh = np.sqrt(2.0 * off2) / (n * n) if sweep < 3 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0 or abs(apq) <= thresh:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                # far past convergence for this pivot: flush to zero
                if sweep > 4 and abs(apq) <= 1e-300 * (abs(app) + abs(aqq)):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[p, k]
                    akq = a[q, k]
                    a[p, k] = c * akp - s * akq
                    a[q, k] = s * akp + c * akq
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    if k != p and k != q:
                        a[k, p] = a[p, k]
                        a[k, q] = a[q, k]
                for k in range(n):
                    wkp = w[p, k]
                    wkq = w[q, k]
                    w[p, k] = c * wkp - s * wkq
                    w[q, k] = s * wkp + c * wkq
        sweeps += 1
    return -1


@dataclass(frozen=True)
class EigenDecomp:
    """Eigenvalues sorted descending with orthonormal eigenvector columns.

    ``rank`` counts the eigenvalues retained by the relative floor
    (>= 1e-5 * largest); values/vectors are kept in full so indefinite
    matrices still reconstruct exactly.
    """

    values: np.ndarray   # (C,)
    vectors: np.ndarray  # (C, C), eigenvectors in columns
    rank: int


def eig_sym(m: np.ndarray) -> EigenDecomp:
    """Jacobi eigendecomposition of a symmetric matrix."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    if float(np.abs(m - m.T).max()) > 1e-8 * scale:
        raise ValidationError("matrix is not symmetric to 1e-8")

    n = m.shape[0]
    a = np.array((m + m.T) / 2.0, dtype=np.float64, order="C")
    w = np.eye(n)
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        return EigenDecomp(values=np.zeros(n), vectors=np.eye(n), rank=0)
    sweeps = _jacobi_sweeps(a, w, _OFF_TOL * norm, _MAX_SWEEPS)
    if sweeps < 0:
        raise RuntimeError(f"Jacobi iteration did not converge in {_MAX_SWEEPS} sweeps")

    values = np.diag(a).copy()
    order = np.argsort(values)[::-1]
    values = values[order]
    vectors = np.ascontiguousarray(w[order].T)
    lam_max = values[0]
    rank = int(np.sum(values >= _RANK_TOL * lam_max)) if lam_max > 0.0 else 0
    return EigenDecomp(values=values, vectors=vectors, rank=rank)


# ---------------------------------------------------------------------------
# feature flattening
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlatFeatures:
    """Vectorized feature map: C x N matrix plus channel means and shape."""

    mat: np.ndarray          # (C, N)
    mean: np.ndarray         # (C,)
    shape: tuple[int, int, int]

    @classmethod
    def from_tensor(cls, t: np.ndarray) -> "FlatFeatures":
        t = np.asarray(t, dtype=np.float64)
        if t.ndim != 3:
            raise ShapeError(f"expected (C, H, W) features, got {t.shape}")
        c, h, w = t.shape
        mat = t.reshape(c, h * w).copy()
        return cls(mat=mat, mean=mat.mean(axis=1), shape=(c, h, w))

    def to_tensor(self) -> np.ndarray:
        return self.mat.reshape(self.shape).copy()

    def with_mat(self, mat: np.ndarray) -> "FlatFeatures":
        return FlatFeatures(mat=mat, mean=mat.mean(axis=1), shape=self.shape)


def _covariance_eig(centered: np.ndarray) -> EigenDecomp:
    """Eigendecomposition of centered @ centered.T / (N-1).

    When there are fewer positions than channels the spectrum is computed
    from the N x N Gram side (same nonzero eigenvalues, far smaller Jacobi
    problem) and mapped back to channel space.
    """
    c, n = centered.shape
    denom = max(n - 1, 1)
    if n >= c:
        return eig_sym((centered @ centered.T) / denom)
    small = eig_sym((centered.T @ centered) / denom)
    k = small.rank
    values = np.zeros(c)
    values[:n] = small.values
    vectors = np.zeros((c, c))
    if k > 0:
        u = centered @ small.vectors[:, :k]
        u /= np.sqrt(small.values[:k] * denom)
        vectors[:, :k] = u
    # pad the null space with arbitrary orthonormal completion (unused:
    # consumers only touch the retained-rank leading block)
    return EigenDecomp(values=values, vectors=vectors, rank=k)


# ---------------------------------------------------------------------------
# whitening / coloring / blending
# ---------------------------------------------------------------------------

def whiten(f: FlatFeatures) -> FlatFeatures:
    """Center the features and map their covariance to the identity.

    Output covariance (N-1 normalization) equals the identity on the
    retained rank; truncated directions map to zero.
    """
    centered = f.mat - f.mean[:, None]
    eig = _covariance_eig(centered)
    if eig.rank == 0:
        return f.with_mat(np.zeros_like(f.mat))
    e = eig.vectors[:, : eig.rank]
    d = eig.values[: eig.rank]
    white = e @ ((e.T @ centered) / np.sqrt(d)[:, None])
    return f.with_mat(white)


def color(f_hat_c: FlatFeatures, f_s: FlatFeatures) -> FlatFeatures:
    """Impose the style features' covariance, then re-center on the style mean."""
    if f_hat_c.mat.shape[0] != f_s.mat.shape[0]:
        raise ShapeError(
            f"channel mismatch: {f_hat_c.mat.shape[0]} vs {f_s.mat.shape[0]}"
        )
    centered_s = f_s.mat - f_s.mean[:, None]
    eig = _covariance_eig(centered_s)
    if eig.rank == 0:
        colored = np.zeros_like(f_hat_c.mat)
    else:
        e = eig.vectors[:, : eig.rank]
        d = eig.values[: eig.rank]
        colored = e @ ((e.T @ f_hat_c.mat) * np.sqrt(d)[:, None])
    return f_hat_c.with_mat(colored + f_s.mean[:, None])


def blend(f_cs: FlatFeatures, f_c: FlatFeatures, alpha: float) -> FlatFeatures:
    """Convex combination alpha * stylized + (1 - alpha) * content."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if f_cs.mat.shape != f_c.mat.shape:
        raise ShapeError(f"shape mismatch: {f_cs.mat.shape} vs {f_c.mat.shape}")
    return f_cs.with_mat(alpha * f_cs.mat + (1.0 - alpha) * f_c.mat)


def transfer_features(content_feat: np.ndarray, style_feat: np.ndarray, alpha: float) -> np.ndarray:
    """Whiten content features, color with style statistics, blend by alpha."""
    f_c = FlatFeatures.from_tensor(content_feat)
    f_s = FlatFeatures.from_tensor(style_feat)
    f_cs = color(whiten(f_c), f_s)
    return blend(f_cs, f_c, alpha).to_tensor()


# ---------------------------------------------------------------------------
# single- and multi-level stylization
# ---------------------------------------------------------------------------

def stylize_level(
    content_img: np.ndarray,
    style_img: np.ndarray,
    level: int,
    alpha: float,
    weights,
) -> np.ndarray:
    """Encode both images at Relu_<level>_1, run WCT, decode back to an image.

    Images must already be preprocessed and padded to multiples of 32.
    """
    from . import vgg

    feat_name = f"relu{level}_1"
    enc = vgg.vgg19_encoder(level)
    f_c = vgg.forward_collect(enc, weights, content_img, {feat_name}).activations[feat_name]
    f_s = vgg.forward_collect(enc, weights, style_img, {feat_name}).activations[feat_name]
    stylized = transfer_features(f_c, f_s, alpha)
    return vgg.decode(level, weights, stylized)


def stylize_multilevel(
    content_img: np.ndarray,
    style_img: np.ndarray,
    alpha: float,
    weights,
    levels: tuple[int, ...] = (5, 4, 3, 2, 1),
) -> np.ndarray:
    """Coarse-to-fine stylization: each level's output becomes the next content.

    Levels must be strictly descending; running fine-to-coarse would destroy
    the detail lower levels contribute, so ascending orders are rejected.
    """
    from . import vgg

    levels = tuple(int(l) for l in levels)
    if not levels:
        raise ValueError("need at least one level")
    if any(not 1 <= l <= 5 for l in levels):
        raise ValueError(f"levels must be within 1..5, got {levels}")
    if any(b >= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be strictly descending, got {levels}")

    # the style image is fixed: one encoder pass collects every level's target
    deepest = max(levels)
    capture = {f"relu{l}_1" for l in levels}
    enc_all = vgg.vgg19_encoder(deepest)
    style_feats = vgg.forward_collect(enc_all, weights, style_img, capture).activations

    out = np.asarray(content_img, dtype=np.float64)
    for level in levels:
        name = f"relu{level}_1"
        enc = vgg.vgg19_encoder(level)
        f_c = vgg.forward_collect(enc, weights, out, {name}).activations[name]
        stylized = transfer_features(f_c, style_feats[name], alpha)
        out = vgg.decode(level, weights, stylized)
    return out
