"""Cluster-Classify-Regress mixture of experts.

Pipeline: K-means on standardized joint (x, y) pairs picks the partition, a
softmax-gated multiclass GBT learns cluster membership from x alone, and one
sparse Gaussian-process expert (FITC inducing-point approximation, isotropic
squared-exponential kernel, constant mean) is fit per gate partition.  The
expert count can be fixed or chosen by BIC over diagonal Gaussian mixtures of
the standardized pairs.

Expert blob format (little-endian): magic ``SGPE``, uint32 version, uint32 M,
uint32 d, then float64 values in order: mean, signal variance, length scale,
noise variance, inducing inputs (M*d row-major), prediction weights c1 (M),
Cholesky factor of K_M (M*M row-major), Cholesky factor of B (M*M row-major).
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import gbt

__all__ = [
    "CcrConfig",
    "ClusterModel",
    "GatingModel",
    "SparseGpExpert",
    "CCRModel",
    "kmeans_cluster",
    "select_num_experts",
    "fit_gating",
    "fit_expert",
    "gp_predict",
    "fit_ccr",
    "predict_ccr",
    "fitc_loglik_and_grad",
    "save_ccr",
    "load_ccr",
]

HARD_GATE = "hard-gate"
SOFT_MIXTURE = "soft-mixture"

_BLOB_MAGIC = b"SGPE"
_BLOB_VERSION = 1
_JITTER_REL = 1e-10


class CcrError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Cluster
# ---------------------------------------------------------------------------


@dataclass
class ClusterModel:
    n_clusters: int
    centers: np.ndarray  # (L, d+1) in standardized joint space
    mean_: np.ndarray
    scale_: np.ndarray

    def standardize(self, Z: np.ndarray) -> np.ndarray:
        return (Z - self.mean_) / self.scale_

    def assign(self, Z: np.ndarray) -> np.ndarray:
        zs = self.standardize(Z)
        d2 = ((zs[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)


def _joint(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 1 and np.asarray(y).size != 1:
        X = X.T
    return np.column_stack([X, np.asarray(y, dtype=np.float64)])


def _standardize(Z: np.ndarray):
    mean = Z.mean(axis=0)
    scale = Z.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return (Z - mean) / scale, mean, scale


def _kmeans_pp_seeds(Z: np.ndarray, k: int, rng) -> np.ndarray:
    n = Z.shape[0]
    centers = np.empty((k, Z.shape[1]))
    centers[0] = Z[rng.integers(n)]
    d2 = ((Z - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = Z[rng.integers(n)]
        else:
            centers[i] = Z[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((Z - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(Z: np.ndarray, centers: np.ndarray, max_iter=300):
    """Lloyd iterations to an assignment fixpoint; empty clusters are reseeded
    at the point farthest from its current center."""
    k = centers.shape[0]
    labels = np.full(Z.shape[0], -1)
    for _ in range(max_iter):
        d2 = ((Z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        for l in range(k):
            if not (new_labels == l).any():
                worst = d2[np.arange(Z.shape[0]), new_labels].argmax()
                centers[l] = Z[worst]
                new_labels[worst] = l
        if (new_labels == labels).all():
            break
        labels = new_labels
        for l in range(k):
            centers[l] = Z[labels == l].mean(axis=0)
    return centers, labels


def kmeans_objective(Z: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    return float(((Z - centers[labels]) ** 2).sum())


def kmeans_cluster(X, y, n_clusters: int, seed):
    """K-means on standardized (x, y) pairs; returns (ClusterModel, labels)."""
    Z = _joint(X, y)
    n = Z.shape[0]
    if not 1 <= n_clusters <= n:
        raise CcrError(f"need 1 <= L <= N, got L={n_clusters}, N={n}")
    zs, mean, scale = _standardize(Z)
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_seeds(zs, n_clusters, rng)
    centers, labels = _lloyd(zs, centers)
    return ClusterModel(n_clusters, centers, mean, scale), labels


# ---------------------------------------------------------------------------
# Expert-count selection: diagonal-covariance GMM + BIC
# ---------------------------------------------------------------------------


def _gmm_em(Z: np.ndarray, k: int, rng, max_iter=200, tol=1e-7):
    n, d = Z.shape
    centers = _kmeans_pp_seeds(Z, k, rng)
    centers, labels = _lloyd(Z, centers)
    weights = np.array([(labels == l).mean() for l in range(k)])
    weights = np.maximum(weights, 1e-10)
    weights /= weights.sum()
    means = centers.copy()
    variances = np.empty((k, d))
    for l in range(k):
        pts = Z[labels == l]
        variances[l] = pts.var(axis=0) + 1e-6 if len(pts) else 1.0

    loglik = -np.inf
    for _ in range(max_iter):
        log_p = np.empty((n, k))
        for l in range(k):
            diff2 = (Z - means[l]) ** 2 / variances[l]
            log_p[:, l] = (
                math.log(weights[l])
                - 0.5 * (np.log(2 * np.pi * variances[l]).sum() + diff2.sum(axis=1))
            )
        m = log_p.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(log_p - m).sum(axis=1))
        new_loglik = float(lse.sum())
        resp = np.exp(log_p - lse[:, None])
        nk = resp.sum(axis=0) + 1e-12
        weights = nk / n
        means = resp.T @ Z / nk[:, None]
        for l in range(k):
            variances[l] = resp[:, l] @ (Z - means[l]) ** 2 / nk[l] + 1e-6
        if abs(new_loglik - loglik) < tol * (1 + abs(new_loglik)):
            loglik = new_loglik
            break
        loglik = new_loglik
    return loglik


def select_num_experts(X, y, max_experts: int, seed=0) -> int:
    """Expert count with minimal BIC over diagonal-GMM fits of rescaled (x, y)."""
    if max_experts < 1:
        raise CcrError("max_experts must be >= 1")
    Z = _joint(X, y)
    n, d = Z.shape
    if n < 2:
        raise CcrError("need at least 2 pairs")
    if max_experts == 1:
        return 1
    zs, _, _ = _standardize(Z)
    best_l, best_bic = 1, np.inf
    for l in range(1, min(max_experts, n) + 1):
        rng = np.random.default_rng((seed, l))
        loglik = _gmm_em(zs, l, rng)
        n_params = (l - 1) + 2 * l * d
        bic = -2.0 * loglik + n_params * math.log(n)
        if bic < best_bic - 1e-12:
            best_l, best_bic = l, bic
    return best_l


# ---------------------------------------------------------------------------
# Classify
# ---------------------------------------------------------------------------


@dataclass
class GatingModel:
    n_classes: int
    model: gbt.GbtModel | None  # None for the degenerate single-class gate

    def scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.model is None:
            return np.zeros((X.shape[0], self.n_classes))
        return np.atleast_2d(gbt.predict_gbt(self.model, X))

    def probs(self, X) -> np.ndarray:
        s = self.scores(X)
        z = s - s.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def fit_gating(X, labels, params: gbt.GbtParams | None = None, n_classes=None) -> GatingModel:
    """Multiclass softmax GBT over inputs; constant gate for one class."""
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(n_classes if n_classes is not None else labels.max() + 1)
    if n_classes == 1:
        return GatingModel(1, None)
    params = params or gbt.GbtParams(n_rounds=60, max_depth=3, learning_rate=0.3, lam=1.0)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 1 and labels.size != 1:
        X = X.T
    # pad so the GBT sees all classes even if some labels are rare
    model = gbt.fit_gbt(X, labels, gbt.SOFTMAX, params)
    if model.n_outputs < n_classes:
        model.n_outputs = n_classes
        for round_trees in model.trees:
            while len(round_trees) < n_classes:
                round_trees.append({"weight": 0.0})
    return GatingModel(n_classes, model)


# ---------------------------------------------------------------------------
# Regress: FITC sparse Gaussian-process expert
# ---------------------------------------------------------------------------


@dataclass
class SparseGpExpert:
    mean: float
    signal_var: float
    length_scale: float
    noise_var: float
    inducing: np.ndarray  # (M, d)
    c1: np.ndarray  # prediction weights, (M,)
    chol_km: np.ndarray  # (M, M) lower
    chol_b: np.ndarray  # (M, M) lower
    train_loglik: float = 0.0


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    a2 = (A**2).sum(axis=1)[:, None]
    b2 = (B**2).sum(axis=1)[None, :]
    return np.maximum(a2 + b2 - 2.0 * A @ B.T, 0.0)


def _kernel(A, B, signal_var, length_scale):
    return signal_var * np.exp(-_sq_dists(A, B) / (2.0 * length_scale**2))


def _fitc_factors(x, inducing, signal_var, length_scale, noise_var):
    """Shared FITC factorizations; escalates K_M jitter on Cholesky failure."""
    M = inducing.shape[0]
    d2_mm = _sq_dists(inducing, inducing)
    d2_mn = _sq_dists(inducing, x)
    for jitter in (0.0, _JITTER_REL, 1e-8, 1e-6, 1e-4):
        km = signal_var * (np.exp(-d2_mm / (2.0 * length_scale**2)) + jitter * np.eye(M))
        try:
            lm = np.linalg.cholesky(km)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise CcrError("inducing kernel matrix is not positive definite")
    kmn = signal_var * np.exp(-d2_mn / (2.0 * length_scale**2))
    v = sla.solve_triangular(lm, kmn, lower=True)
    q_nn = (v**2).sum(axis=0)
    lam = signal_var - q_nn  # FITC diagonal correction, >= 0 up to roundoff
    dvec = lam + noise_var
    if (dvec <= 0).any():
        raise CcrError("non-positive FITC diagonal; increase noise variance")
    v2 = v / np.sqrt(dvec)[None, :]
    b = np.eye(M) + v2 @ v2.T
    lb = np.linalg.cholesky(b)
    return d2_mm, d2_mn, km, kmn, lm, v, q_nn, dvec, v2, lb


def fitc_loglik_and_grad(params: np.ndarray, x: np.ndarray, y: np.ndarray,
                         inducing: np.ndarray):
    """Log marginal likelihood of the FITC model and its analytic gradient.

    ``params`` is (mean, log signal variance, log length scale, log noise
    variance).  The likelihood is N(y; mean, Q + diag(k_nn - q_nn) + noise*I)
    with Q the Nystrom approximation through the inducing inputs; all algebra
    stays O(N M^2).
    """
    mu, log_s, log_l, log_n = params
    s, ell, noise = math.exp(log_s), math.exp(log_l), math.exp(log_n)
    n = x.shape[0]
    (d2_mm, d2_mn, km, kmn, lm, v, q_nn, dvec, v2, lb) = _fitc_factors(
        x, inducing, s, ell, noise
    )

    r = y - mu
    rt = r / np.sqrt(dvec)
    gamma = sla.solve_triangular(lb, v2 @ rt, lower=True)
    quad = float(rt @ rt - gamma @ gamma)
    logdet = float(np.log(dvec).sum() + 2.0 * np.log(np.diag(lb)).sum())
    loglik = -0.5 * (quad + logdet + n * math.log(2.0 * math.pi))

    # alpha = C^-1 r, diag of C^-1, and the M x N "AW" block of A (T - aa^T)
    lb_t_gamma = sla.solve_triangular(lb.T, gamma, lower=False)
    alpha = (rt - v2.T @ lb_t_gamma) / np.sqrt(dvec)
    u = sla.solve_triangular(lb, v2, lower=True)
    diag_t = (1.0 - (u**2).sum(axis=0)) / dvec
    w_d = diag_t - alpha**2

    a_mat = sla.solve_triangular(lm.T, v, lower=False)  # K_M^-1 K_MN
    at_mat = sla.solve_triangular(
        lm.T, sla.solve_triangular(lb.T, u, lower=False), lower=False
    ) / np.sqrt(dvec)[None, :]  # A @ T
    a_alpha = a_mat @ alpha
    aw = at_mat - np.outer(a_alpha, alpha)  # A @ W
    awat = aw @ a_mat.T

    # trace coefficients: tr(W dC) = sum(P_MN o dK_MN) + sum(P_M o dK_M)
    #                                + sum(w_d o dk_nn) + tr(W) dnoise
    p_mn = 2.0 * (aw - a_mat * w_d[None, :])
    p_m = (a_mat * w_d[None, :]) @ a_mat.T - awat

    def half_tr(d_km, d_kmn, d_knn_scalar):
        return 0.5 * (
            float((p_mn * d_kmn).sum())
            + float((p_m * d_km).sum())
            + d_knn_scalar * float(w_d.sum())
        )

    # d/dlog s: every kernel block scales linearly with s
    g_log_s = -half_tr(km, kmn, s)
    # d/dlog l: elementwise k * d^2 / l^2 (zero on the diagonal of k_nn)
    g_log_l = -half_tr(km * d2_mm / ell**2, kmn * d2_mn / ell**2, 0.0)
    g_log_n = -0.5 * noise * float(w_d.sum())
    g_mu = float(alpha.sum())
    grad = np.array([g_mu, g_log_s, g_log_l, g_log_n])

    caches = {"lm": lm, "lb": lb,
              "c1": sla.solve_triangular(lm.T, lb_t_gamma, lower=False)}
    return loglik, grad, caches


def fit_expert(x, y, n_inducing: int, seed=0, max_steps=200) -> SparseGpExpert:
    """Fit one FITC expert: K-means inducing initialization, then backtracking
    gradient ascent on the marginal likelihood over (mean, log signal, log
    length scale, log noise)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] == 1 and y.size != 1:
        x = x.T
    n = x.shape[0]
    if n < 1:
        raise CcrError("expert needs at least one training point")
    m = min(int(n_inducing), n)
    if m < 1:
        raise CcrError("need at least one inducing point")

    if m == n:
        inducing = x.copy()
    else:
        rng = np.random.default_rng(seed)
        centers = _kmeans_pp_seeds(x, m, rng)
        inducing, _ = _lloyd(x, centers)

    y_var = float(y.var()) if n > 1 else 1.0
    y_var = max(y_var, 1e-8)
    if n > 1:
        sample = x if n <= 400 else x[np.random.default_rng(seed).choice(n, 400, replace=False)]
        d2 = _sq_dists(sample, sample)
        med = float(np.median(np.sqrt(d2[d2 > 0]))) if (d2 > 0).any() else 1.0
    else:
        med = 1.0
    params = np.array([
        float(y.mean()),
        math.log(y_var),
        math.log(max(med, 1e-6)),
        math.log(max(1e-4 * y_var, 1e-10)),
    ])

    loglik, grad, caches = fitc_loglik_and_grad(params, x, y, inducing)
    step = 0.1
    for _ in range(max_steps):
        gnorm = np.linalg.norm(grad)
        if gnorm < 1e-10 * (1.0 + abs(loglik)):
            break
        direction = grad / gnorm
        improved = False
        trial = step
        for _ in range(30):
            cand = params + trial * direction
            try:
                cand_ll, cand_grad, cand_caches = fitc_loglik_and_grad(cand, x, y, inducing)
            except (CcrError, FloatingPointError, OverflowError):
                trial *= 0.5
                continue
            if np.isfinite(cand_ll) and cand_ll > loglik:
                params, loglik, grad, caches = cand, cand_ll, cand_grad, cand_caches
                step = min(trial * 1.5, 1.0)
                improved = True
                break
            trial *= 0.5
        if not improved:
            break

    mu, log_s, log_l, log_n = params
    return SparseGpExpert(
        mean=float(mu),
        signal_var=math.exp(log_s),
        length_scale=math.exp(log_l),
        noise_var=math.exp(log_n),
        inducing=inducing,
        c1=caches["c1"],
        chol_km=caches["lm"],
        chol_b=caches["lb"],
        train_loglik=float(loglik),
    )


def gp_predict(expert: SparseGpExpert, X):
    """FITC predictive mean and variance (noise included) at new inputs."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != expert.inducing.shape[1]:
        if X.shape[0] == expert.inducing.shape[1] and X.shape[1] != expert.inducing.shape[1]:
            X = X.T
        else:
            raise CcrError(
                f"expected {expert.inducing.shape[1]} input dims, got {X.shape[1]}"
            )
    k_star = _kernel(expert.inducing, X, expert.signal_var, expert.length_scale)
    mean = expert.mean + k_star.T @ expert.c1
    v1 = sla.solve_triangular(expert.chol_km, k_star, lower=True)
    v2 = sla.solve_triangular(expert.chol_b, v1, lower=True)
    var = (
        expert.signal_var
        - (v1**2).sum(axis=0)
        + (v2**2).sum(axis=0)
        + expert.noise_var
    )
    return mean, var


# ---------------------------------------------------------------------------
# Composite model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CcrConfig:
    n_experts: int | None = None  # None -> BIC selection
    max_experts: int = 6
    inducing_min: int = 8
    inducing_fraction: float = 0.25
    gating: gbt.GbtParams = field(
        default_factory=lambda: gbt.GbtParams(n_rounds=60, max_depth=3,
                                              learning_rate=0.3, lam=1.0)
    )
    mode: str = HARD_GATE
    expert_opt_steps: int = 200

    def n_inducing(self, cluster_size: int) -> int:
        return min(cluster_size, max(self.inducing_min,
                                     math.ceil(cluster_size * self.inducing_fraction)))


@dataclass
class CCRModel:
    clusters: ClusterModel
    gating: GatingModel
    experts: list
    mode: str = HARD_GATE

    @property
    def n_experts(self) -> int:
        return len(self.experts)


def fit_ccr(X, y, config: CcrConfig | None = None, seed=0) -> CCRModel:
    """Cluster, classify, regress.  Expert l trains on the gate's partition
    (falling back to the K-means partition when the gate starves a cluster)."""
    config = config or CcrConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] == 1 and y.size != 1:
        X = X.T
    n = X.shape[0]
    if n < 4:
        raise CcrError("need at least 4 training pairs")

    L = config.n_experts or select_num_experts(X, y, config.max_experts, seed)
    L = min(L, n)
    clusters, labels = kmeans_cluster(X, y, L, seed)
    gating = fit_gating(X, labels, config.gating, n_classes=L)
    gate_labels = gating.probs(X).argmax(axis=1)

    experts = []
    seq = np.random.SeedSequence((seed, 0xE))
    expert_seeds = seq.spawn(L)
    for l in range(L):
        idx = np.flatnonzero(gate_labels == l)
        if idx.size == 0:
            idx = np.flatnonzero(labels == l)
        m_l = config.n_inducing(idx.size)
        experts.append(
            fit_expert(X[idx], y[idx], m_l, expert_seeds[l],
                       max_steps=config.expert_opt_steps)
        )
    return CCRModel(clusters, gating, experts, config.mode)


def predict_ccr(model: CCRModel, X) -> np.ndarray:
    """Hard gating routes each point to its argmax expert (ties toward the
    smaller label); soft mixture averages expert means under the gate."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    d = model.experts[0].inducing.shape[1]
    if X.shape[1] != d:
        raise CcrError(f"expected {d} input dims, got {X.shape[1]}")
    probs = model.gating.probs(X)
    if model.mode == HARD_GATE:
        choice = probs.argmax(axis=1)
        out = np.empty(X.shape[0])
        for l in range(model.n_experts):
            idx = np.flatnonzero(choice == l)
            if idx.size:
                out[idx], _ = gp_predict(model.experts[l], X[idx])
        return out
    out = np.zeros(X.shape[0])
    for l in range(model.n_experts):
        mean_l, _ = gp_predict(model.experts[l], X)
        out += probs[:, l] * mean_l
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _expert_to_blob(e: SparseGpExpert) -> bytes:
    m, d = e.inducing.shape
    head = _BLOB_MAGIC + struct.pack("<III", _BLOB_VERSION, m, d)
    parts = [
        np.array([e.mean, e.signal_var, e.length_scale, e.noise_var]),
        e.inducing.ravel(),
        e.c1,
        e.chol_km.ravel(),
        e.chol_b.ravel(),
    ]
    return head + b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in parts)


def _expert_from_blob(raw: bytes) -> SparseGpExpert:
    if raw[:4] != _BLOB_MAGIC:
        raise CcrError("bad expert blob magic")
    version, m, d = struct.unpack("<III", raw[4:16])
    if version != _BLOB_VERSION:
        raise CcrError(f"unsupported expert blob version {version}")
    vals = np.frombuffer(raw[16:], dtype="<f8")
    expected = 4 + m * d + m + 2 * m * m
    if vals.size != expected:
        raise CcrError("expert blob payload size mismatch")
    pos = 4
    mean, sig, ell, noise = vals[:4]
    inducing = vals[pos:pos + m * d].reshape(m, d).copy(); pos += m * d
    c1 = vals[pos:pos + m].copy(); pos += m
    lm = vals[pos:pos + m * m].reshape(m, m).copy(); pos += m * m
    lb = vals[pos:pos + m * m].reshape(m, m).copy()
    return SparseGpExpert(float(mean), float(sig), float(ell), float(noise),
                          inducing, c1, lm, lb)


def save_ccr(model: CCRModel, directory) -> str:
    os.makedirs(directory, exist_ok=True)
    gating_file = "gating.json"
    if model.gating.model is not None:
        gbt.save_gbt(model.gating.model, os.path.join(directory, gating_file))
    else:
        gating_file = None
    expert_files = []
    for l, e in enumerate(model.experts):
        name = f"expert_{l}.bin"
        with open(os.path.join(directory, name), "wb") as fh:
            fh.write(_expert_to_blob(e))
        expert_files.append(name)
    manifest = {
        "mode": model.mode,
        "n_classes": model.gating.n_classes,
        "gating": gating_file,
        "experts": expert_files,
        "clusters": {
            "n_clusters": model.clusters.n_clusters,
            "centers": model.clusters.centers.tolist(),
            "mean": model.clusters.mean_.tolist(),
            "scale": model.clusters.scale_.tolist(),
        },
    }
    path = os.path.join(directory, "ccr.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def load_ccr(manifest_path) -> CCRModel:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(manifest_path)
    gating_model = None
    if manifest["gating"] is not None:
        gating_model = gbt.load_gbt(os.path.join(base, manifest["gating"]))
    experts = []
    for name in manifest["experts"]:
        with open(os.path.join(base, name), "rb") as fh:
            experts.append(_expert_from_blob(fh.read()))
    c = manifest["clusters"]
    clusters = ClusterModel(
        int(c["n_clusters"]), np.asarray(c["centers"], dtype=float),
        np.asarray(c["mean"], dtype=float), np.asarray(c["scale"], dtype=float),
    )
    return CCRModel(clusters, GatingModel(int(manifest["n_classes"]), gating_model),
                    experts, manifest["mode"])
