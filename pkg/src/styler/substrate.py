"""Numeric and I/O foundation.

Images and feature maps are channel-major torch tensors: an image is a
float32 (3, h, w) tensor with values in [0, 1], a feature map is a float32
(c, h, w) tensor. Conversion to/from PIL happens only at the I/O boundary.

The symmetric eigensolver is a cyclic Jacobi iteration (round-robin pair
ordering so each sweep is a sequence of vectorized disjoint-plane rotation
rounds). WCT only ever feeds it covariance matrices, so unconditional
convergence on symmetric input is all that is required.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .errors import ImageIOError, InvalidInputError

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # slow numpy fallback below stays correct
    _HAVE_NUMBA = False

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def _round_robin_rounds(n):
    """Round-robin schedule: n-1 rounds of disjoint index pairs covering all
    (i, j) pairs exactly once per sweep, padded with -1 for odd n. Returned
    as two (rounds, pairs) int64 arrays."""
    players = list(range(n)) if n % 2 == 0 else list(range(n)) + [-1]
    m = len(players)
    ps, qs = [], []
    for _ in range(m - 1):
        prow, qrow = [], []
        for k in range(m // 2):
            a, b = players[k], players[m - 1 - k]
            if a >= 0 and b >= 0:
                prow.append(min(a, b))
                qrow.append(max(a, b))
            else:
                prow.append(-1)
                qrow.append(-1)
        ps.append(prow)
        qs.append(qrow)
        players = [players[0]] + [players[-1]] + players[1:-1]
    return np.array(ps, dtype=np.int64), np.array(qs, dtype=np.int64)


def _jacobi_rounds_python(a, vt, rounds_p, rounds_q, tol_off, max_sweeps):
    """Vectorized numpy twin of the jitted kernel; used when numba is not
    installed."""
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off2 = np.sum(a * a) - np.sum(np.diag(a) ** 2)
        if np.sqrt(max(off2, 0.0)) <= tol_off:
            return sweep
        for p_all, q_all in zip(rounds_p, rounds_q):
            keep = p_all >= 0
            p, q = p_all[keep], q_all[keep]
            apq = a[p, q]
            act = apq != 0.0
            if not np.any(act):
                continue
            p, q, apq = p[act], q[act], apq[act]
            tau = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(tau) / (np.abs(tau) + np.hypot(1.0, tau))
            t = np.where(tau == 0.0, 1.0, t)
            c = 1.0 / np.hypot(1.0, t)
            s = t * c
            cp, sp = c[:, None], s[:, None]
            rp, rq = a[p, :], a[q, :]
            a[p, :], a[q, :] = cp * rp - sp * rq, sp * rp + cp * rq
            colp, colq = a[:, p], a[:, q]
            a[:, p], a[:, q] = c * colp - s * colq, s * colp + c * colq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = vt[p, :], vt[q, :]
            vt[p, :], vt[q, :] = cp * vp - sp * vq, sp * vp + cp * vq
    return max_sweeps


def _jacobi_rounds_impl(a, vt, rounds_p, rounds_q, tol_off, max_sweeps):
    n = a.shape[0]
    nrounds = rounds_p.shape[0]
    m = rounds_p.shape[1]
    c = np.empty(m)
    s = np.empty(m)
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        if (2.0 * off) ** 0.5 <= tol_off:
            return sweep
        for r in range(nrounds):
            # angles from the matrix state at round start; the round's pairs
            # are disjoint so applying them together equals one-by-one
            for k in range(m):
                p = rounds_p[r, k]
                q = rounds_q[r, k]
                if p < 0:
                    s[k] = 0.0
                    continue
                apq = a[p, q]
                if apq == 0.0:
                    s[k] = 0.0
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + (1.0 + tau * tau) ** 0.5)
                else:
                    t = -1.0 / (-tau + (1.0 + tau * tau) ** 0.5)
                c[k] = 1.0 / (1.0 + t * t) ** 0.5
                s[k] = t * c[k]
            for k in range(m):
                if s[k] == 0.0:
                    continue
                p = rounds_p[r, k]
                q = rounds_q[r, k]
                ck, sk = c[k], s[k]
                for j in range(n):
                    apj = a[p, j]
                    aqj = a[q, j]
                    a[p, j] = ck * apj - sk * aqj
                    a[q, j] = sk * apj + ck * aqj
                for j in range(n):
                    vpj = vt[p, j]
                    vqj = vt[q, j]
                    vt[p, j] = ck * vpj - sk * vqj
                    vt[q, j] = sk * vpj + ck * vqj
            for i in range(n):
                for k in range(m):
                    if s[k] == 0.0:
                        continue
                    p = rounds_p[r, k]
                    q = rounds_q[r, k]
                    aip = a[i, p]
                    aiq = a[i, q]
                    a[i, p] = c[k] * aip - s[k] * aiq
                    a[i, q] = s[k] * aip + c[k] * aiq
            for k in range(m):
                if s[k] == 0.0:
                    continue
                a[rounds_p[r, k], rounds_q[r, k]] = 0.0
                a[rounds_q[r, k], rounds_p[r, k]] = 0.0
    return max_sweeps


if _HAVE_NUMBA:
    _jacobi_rounds = _njit(cache=True)(_jacobi_rounds_impl)
else:
    _jacobi_rounds = _jacobi_rounds_python


def sym_eig(a, tol=1e-10, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvalues sorted descending
    and eigenvectors as orthonormal columns, so a = E diag(w) E^T.

    Sweeps stop when the off-diagonal Frobenius norm falls below
    tol * ||a||_F, or after max_sweeps sweeps.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"sym_eig expects a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("sym_eig: input contains non-finite entries")
    scale = np.abs(a).max()
    if scale > 0 and np.abs(a - a.T).max() > 1e-6 * scale:
        raise InvalidInputError("sym_eig: input matrix is not symmetric")

    n = a.shape[0]
    if n == 1:
        return a.reshape(1).copy(), np.ones((1, 1))

    # work on the symmetrized copy so tiny asymmetries cannot accumulate;
    # eigenvectors are accumulated transposed so every kernel update is a
    # cache-friendly row operation
    work = np.ascontiguousarray(0.5 * (a + a.T))
    vecs_t = np.eye(n)
    norm_a = np.linalg.norm(work)
    if norm_a == 0.0:
        return np.zeros(n), vecs_t

    rounds_p, rounds_q = _round_robin_rounds(n)
    _jacobi_rounds(work, vecs_t, rounds_p, rounds_q, tol * norm_a, max_sweeps)

    vals = np.diag(work).copy()
    order = np.argsort(vals)[::-1]
    return vals[order], np.ascontiguousarray(vecs_t.T[:, order])


def covariance(feat):
    """Per-channel mean and spatial covariance of a (c, h, w) feature map.

    Returns float64 numpy (mean[c], cov[c, c]) with the population
    normalizer 1/(h*w).
    """
    x = _as_numpy_feature(feat)
    c = x.shape[0]
    flat = x.reshape(c, -1)
    if flat.shape[1] < 1:
        raise InvalidInputError("covariance: feature map has no spatial positions")
    if not np.all(np.isfinite(flat)):
        raise InvalidInputError("covariance: non-finite feature values")
    mean = flat.mean(axis=1)
    centered = flat - mean[:, None]
    cov = centered @ centered.T / flat.shape[1]
    return mean, cov


def _as_numpy_feature(feat):
    if isinstance(feat, torch.Tensor):
        x = feat.detach().cpu().numpy()
    else:
        x = np.asarray(feat)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x
    if x.ndim != 3:
        raise InvalidInputError(f"expected a (c, h, w) feature map, got shape {x.shape}")
    return x


def finite_diff_grad(scalar_fn, x, eps=1e-4):
    """Central-difference gradient of scalar_fn at x, one coordinate at a
    time. The independent oracle for every analytic gradient in the test
    suite; deliberately knows nothing about autograd."""
    if eps <= 0:
        raise InvalidInputError("finite_diff_grad: eps must be positive")
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        f_plus = float(scalar_fn(x))
        flat[i] = orig - eps
        f_minus = float(scalar_fn(x))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise InvalidInputError("finite_diff_grad: function value is non-finite")
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def validate_image(img, name="image"):
    if not isinstance(img, torch.Tensor) or img.ndim != 3 or img.shape[0] != 3:
        raise InvalidInputError(f"{name}: expected a (3, h, w) tensor")
    if img.shape[1] < 8 or img.shape[2] < 8:
        raise InvalidInputError(f"{name}: height and width must be >= 8, got {tuple(img.shape[1:])}")
    if not torch.isfinite(img).all():
        raise InvalidInputError(f"{name}: non-finite pixel values")


def load_image(path):
    """Load a PNG/JPEG as a float32 (3, h, w) tensor in [0, 1]. Grayscale
    sources are replicated to 3 channels."""
    path = Path(path)
    if not path.exists():
        raise ImageIOError(f"image file not found: {path}")
    try:
        with PILImage.open(path) as pil:
            pil = pil.convert("RGB")
            arr = np.asarray(pil, dtype=np.float32) / 255.0
    except ImageIOError:
        raise
    except Exception as exc:
        raise ImageIOError(f"failed to decode image {path}: {exc}") from exc
    img = torch.from_numpy(arr).permute(2, 0, 1).contiguous()
    validate_image(img, str(path))
    return img


def save_image(img, path):
    """Write a (3, h, w) tensor in [0, 1] as PNG (8-bit round-trip within
    1/255 per channel)."""
    validate_image(img, "save_image input")
    arr = img.detach().clamp(0.0, 1.0).mul(255.0).round().to(torch.uint8)
    arr = arr.permute(1, 2, 0).cpu().numpy()
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        PILImage.fromarray(arr, mode="RGB").save(path)
    except Exception as exc:
        raise ImageIOError(f"failed to write image {path}: {exc}") from exc


def resize(img, target_h, target_w):
    """Bilinear resize of a (3, h, w) image tensor."""
    if target_h < 1 or target_w < 1:
        raise InvalidInputError(f"resize: target dims must be >= 1, got {(target_h, target_w)}")
    if img.shape[1] == target_h and img.shape[2] == target_w:
        return img.clone()
    out = torch.nn.functional.interpolate(
        img.unsqueeze(0), size=(target_h, target_w), mode="bilinear", align_corners=False
    ).squeeze(0)
    return out.clamp(0.0, 1.0)


def downsample2(img):
    """Exact halving by non-overlapping 2x2 average pooling."""
    h, w = img.shape[-2], img.shape[-1]
    if h % 2 != 0 or w % 2 != 0:
        raise InvalidInputError(f"downsample2: dims must be even, got {(h, w)}")
    return torch.nn.functional.avg_pool2d(img.unsqueeze(0), kernel_size=2).squeeze(0)


# ---------------------------------------------------------------------------
# dataset iteration
# ---------------------------------------------------------------------------

def scan_image_files(root):
    """Recursively collect *.png/*.jpg/*.jpeg under root, sorted for
    reproducibility."""
    root = Path(root)
    if not root.is_dir():
        raise InvalidInputError(f"dataset root is not a directory: {root}")
    files = [
        Path(dirpath) / name
        for dirpath, _, names in os.walk(root)
        for name in names
        if name.lower().endswith(IMAGE_EXTENSIONS)
    ]
    return sorted(files)


class DatasetCursor:
    """Single-consumer iterator over the images below a root directory.

    Iteration order is a pure function of (sorted file list, seed): each
    epoch e uses the permutation drawn from seed + e. Files that fail to
    decode are skipped with a warning instead of killing a training run.
    """

    def __init__(self, root, seed=0):
        self.root = Path(root)
        self.seed = int(seed)
        self.files = scan_image_files(root)
        self.position = 0
        self._epoch = 0
        self._order = self._permutation(0)

    def _permutation(self, epoch):
        rng = np.random.default_rng(self.seed + epoch)
        return rng.permutation(len(self.files))

    def __iter__(self):
        return self

    def __next__(self):
        if not self.files:
            raise StopIteration
        attempts = 0
        while attempts < len(self.files) + 1:
            if self.position >= len(self._order):
                self._epoch += 1
                self._order = self._permutation(self._epoch)
                self.position = 0
            path = self.files[self._order[self.position]]
            self.position += 1
            attempts += 1
            try:
                return load_image(path)
            except (ImageIOError, InvalidInputError) as exc:
                logger.warning("skipping undecodable image %s: %s", path, exc)
        raise StopIteration
