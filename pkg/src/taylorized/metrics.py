"""Agreement metrics between Taylorized and full training trajectories.

Undefined cosines (a zero displacement, e.g. at step 0) are reported as NaN
and never imputed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

ZERO_NORM = 1e-30


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < ZERO_NORM or nv < ZERO_NORM:
        return float("nan")
    return float(np.clip(np.dot(u / nu, v / nv), -1.0, 1.0))


def cos_param(theta_k, theta, theta0) -> float:
    """Cosine between the displacements ``theta_k - theta0`` and ``theta - theta0``."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    return _cosine(np.asarray(theta_k, dtype=np.float64) - theta0,
                   np.asarray(theta, dtype=np.float64) - theta0)


def demean_logits(logits) -> np.ndarray:
    """Subtract each row's mean.

    Re-centres until every row mean is zero to rounding accuracy, and leaves
    such rows untouched, so the operation is exactly idempotent.
    """
    out = np.asarray(logits, dtype=np.float64)
    c = out.shape[-1]
    if c < 2:
        raise ValueError("need at least two classes to demean")
    eps = np.finfo(np.float64).eps
    for _ in range(8):
        mean = out.mean(axis=-1, keepdims=True)
        off = np.abs(mean) > 4 * c * eps * np.max(np.abs(out), axis=-1, keepdims=True)
        if not off.any():
            break
        out = out - np.where(off, mean, 0.0)
    return out


def cos_func(f_k, f, f0) -> float:
    """Cosine between demeaned test-logit displacements, flattened."""
    f0 = np.asarray(f0, dtype=np.float64)
    if np.shape(f_k) != f0.shape or np.shape(f) != f0.shape:
        raise ValueError("logit matrices must share one shape")
    return _cosine(np.asarray(f_k) - f0, np.asarray(f) - f0)


@dataclass
class SimilaritySeries:
    tag: str
    steps: list
    cos_param: np.ndarray
    cos_func: np.ndarray

    def mean_cos_func(self) -> float:
        return float(np.nanmean(self.cos_func))

    def mean_cos_param(self) -> float:
        return float(np.nanmean(self.cos_param))


def similarity_series(full, taylor) -> SimilaritySeries:
    """Per-checkpoint cosines of a Taylorized record against the full one."""
    if list(full.steps) != list(taylor.steps):
        raise ValueError("records have different checkpoint steps")
    f0 = full.test_logits[0]
    cp = [cos_param(tk, t, full.theta0) for tk, t in zip(taylor.thetas, full.thetas)]
    cf = [cos_func(fk, f, f0) for fk, f in zip(taylor.test_logits, full.test_logits)]
    return SimilaritySeries(taylor.tag, list(full.steps), np.array(cp), np.array(cf))


@dataclass
class LayerMovementProfile:
    layers: list
    distance: np.ndarray
    normalized: np.ndarray
    step: int = 0


def layer_movement(params, step: int = 0) -> LayerMovementProfile:
    """Frobenius distance travelled by each layer (weights and biases together)."""
    names, dist, norm = [], [], []
    for layer, members in params.layers().items():
        d = np.sqrt(sum(np.sum((params.theta[m] - params.theta0[m]) ** 2) for m in members))
        n0 = np.sqrt(sum(np.sum(params.theta0[m] ** 2) for m in members))
        names.append(layer)
        dist.append(float(d))
        norm.append(float(d / n0) if n0 > 0 else float("nan"))
    return LayerMovementProfile(names, np.array(dist), np.array(norm), step)


def profile_shape_distance(a: LayerMovementProfile, b: LayerMovementProfile, normalized=True) -> float:
    """L2 distance between profiles rescaled to unit norm (compares shape only)."""
    u = a.normalized if normalized else a.distance
    v = b.normalized if normalized else b.distance
    return float(np.linalg.norm(u / np.linalg.norm(u) - v / np.linalg.norm(v)))


@dataclass
class PcaEmbedding:
    coords: np.ndarray          # (n_snapshots, 2)
    explained: np.ndarray       # (2,)
    components: np.ndarray      # (2, n_features)
    mean: np.ndarray
    labels: list                # (tag, step) per row


def pca_embed(snapshots, labels=None) -> PcaEmbedding:
    """Joint 2-d PCA of flattened logit snapshots via SVD of the centred rows."""
    X = np.array([np.asarray(s, dtype=np.float64).ravel() for s in snapshots])
    if X.shape[0] < 3:
        raise ValueError("need at least 3 snapshots")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    total = float(np.sum(s ** 2))
    comps = np.zeros((2, X.shape[1]))
    explained = np.zeros(2)
    for i in range(min(2, len(s))):
        if s[i] > 1e-12 * max(s[0], 1e-300):
            comps[i] = vt[i]
            explained[i] = s[i] ** 2 / total if total > 0 else 0.0
    coords = Xc @ comps.T
    return PcaEmbedding(coords, explained, comps, mean, list(labels) if labels is not None else [])


def pca_of_records(records: dict) -> PcaEmbedding:
    snaps, labels = [], []
    for tag, rec in records.items():
        for step, logits in zip(rec.steps, rec.test_logits):
            snaps.append(logits)
            labels.append((tag, step))
    return pca_embed(snaps, labels)


# ------------------------------------------------------------------- CSV

def _fmt(v: float) -> str:
    return "" if v is None or not np.isfinite(v) else repr(float(v))


def write_similarity_csv(series: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "model_tag", "cos_param", "cos_func"])
        for s in series:
            for step, cp, cf in zip(s.steps, s.cos_param, s.cos_func):
                w.writerow([step, s.tag, _fmt(cp), _fmt(cf)])


def write_layer_movement_csv(records: dict, path, scheme: str = "standard") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "model_tag", "layer_name", "distance", "normalized_distance"])
        for tag, rec in records.items():
            for i, step in enumerate(rec.steps):
                prof = layer_movement(rec.params_at(i, scheme), step)
                for name, d, nd in zip(prof.layers, prof.distance, prof.normalized):
                    w.writerow([step, tag, name, _fmt(d), _fmt(nd)])


def write_pca_csv(emb: PcaEmbedding, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_tag", "step", "pc1", "pc2"])
        for (tag, step), (a, b) in zip(emb.labels, emb.coords):
            w.writerow([tag, step, _fmt(a), _fmt(b)])
