"""From-scratch trainable scorers and hyperparameter grid search.

Linear SVM: L1 hinge loss with L2 regularization, solved by dual
coordinate descent with the bias folded in as an augmented constant
feature. RBF SVM: the same dual solver on a precomputed kernel matrix
(kernel + 1 for the bias). Logistic regression: penalized maximum
likelihood via FISTA with backtracking; L1 handled by soft-thresholding.
Class weights scale the per-sample misclassification cost.

Solver visitation order is derived from the run seed only, so repeated
runs are bit-reproducible.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dataset import derive_seed
from .evalstats import PairScoreSet, eer_threshold

TRAINABLE_KINDS = ("linear_svm", "rbf_svm", "logreg")
BASELINE_KINDS = ("always_accept", "always_reject", "random")
CLASSIFIER_KINDS = TRAINABLE_KINDS + BASELINE_KINDS


class TrainingError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class HyperParams:
    c_exp: int | None = None
    gamma_exp: int | None = None
    penalty: str | None = None       # logreg only: "l1" | "l2"
    balanced: bool = False

    @property
    def c(self):
        return 2.0 ** self.c_exp

    @property
    def gamma(self):
        return 2.0 ** self.gamma_exp

    def sort_key(self):
        # deterministic tie-break: smallest exponent tuple first
        return (self.c_exp if self.c_exp is not None else 0,
                self.gamma_exp if self.gamma_exp is not None else 0,
                self.penalty or "", self.balanced)

    def to_dict(self):
        return {"c_exp": self.c_exp, "gamma_exp": self.gamma_exp,
                "penalty": self.penalty, "balanced": self.balanced}


def exponent_range(stride):
    return list(range(-25, 11, stride))


def make_grid(kind, stride=5):
    """Hyperparameter grid for one classifier kind, in tie-break order."""
    exps = exponent_range(stride)
    weights = [False, True]
    grid = []
    if kind == "linear_svm":
        grid = [HyperParams(c_exp=c, balanced=w) for c in exps for w in weights]
    elif kind == "rbf_svm":
        grid = [HyperParams(c_exp=c, gamma_exp=g, balanced=w)
                for c in exps for g in exps for w in weights]
    elif kind == "logreg":
        grid = [HyperParams(c_exp=c, penalty=p, balanced=w)
                for c in exps for p in ("l1", "l2") for w in weights]
    elif kind in BASELINE_KINDS:
        grid = [HyperParams()]
    else:
        raise TrainingError(f"unknown classifier kind {kind!r}")
    return sorted(grid, key=HyperParams.sort_key)


@dataclass(frozen=True)
class TrainedModel:
    kind: str
    hp: HyperParams
    dim: int
    weights: np.ndarray | None = None      # linear_svm / logreg coefficient vector
    bias: float = 0.0
    sv_x: np.ndarray | None = None         # rbf_svm support vectors
    sv_coef: np.ndarray | None = None      # alpha_i * y_i
    seed: int = 0                          # random baseline
    converged: bool = True
    train_fingerprint: str = ""
    alphas: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        return {
            "kind": self.kind, "hp": self.hp.to_dict(), "dim": self.dim,
            "weights": None if self.weights is None else self.weights.tolist(),
            "bias": self.bias, "converged": self.converged,
            "train_fingerprint": self.train_fingerprint,
        }


def _check_training_set(X, y):
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise TrainingError("bad training set shape")
    if not np.all(np.isfinite(X)):
        raise TrainingError("non-finite features in training set")
    if np.all(y > 0) or np.all(y < 0):
        raise TrainingError("training set contains a single class")


def _sample_costs(y, hp):
    n = y.shape[0]
    if not hp.balanced:
        return np.ones(n)
    n_pos = np.count_nonzero(y > 0)
    n_neg = n - n_pos
    w = np.where(y > 0, n / (2.0 * n_pos), n / (2.0 * n_neg))
    return w


def _fingerprint(X, y):
    h = hashlib.blake2b(digest_size=16)
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    return h.hexdigest()


@njit(cache=True, fastmath=True)
def _linear_cd_kernel(Xa, y, costs, q_diag, order, tol, max_epochs):
    n, d = Xa.shape
    w = np.zeros(d)
    alpha = np.zeros(n)
    converged = False
    for _ in range(max_epochs):
        max_violation = 0.0
        for idx in range(n):
            i = order[idx]
            s = 0.0
            for j in range(d):
                s += Xa[i, j] * w[j]
            g = y[i] * s - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= costs[i]:
                pg = max(g, 0.0)
            else:
                pg = g
            if abs(pg) > max_violation:
                max_violation = abs(pg)
            if pg != 0.0 and q_diag[i] > 0.0:
                a_new = min(max(a - g / q_diag[i], 0.0), costs[i])
                if a_new != a:
                    delta = (a_new - a) * y[i]
                    for j in range(d):
                        w[j] += delta * Xa[i, j]
                    alpha[i] = a_new
        if max_violation < tol:
            converged = True
            break
    return w, alpha, converged


def train_linear_svm(X, y, hp, seed, tol=1e-4, max_epochs=1000):
    _check_training_set(X, y)
    n, d = X.shape
    costs = hp.c * _sample_costs(y, hp)
    Xa = np.ascontiguousarray(np.hstack([X, np.ones((n, 1))]))  # bias as feature
    q_diag = np.einsum("ij,ij->i", Xa, Xa)
    # fixed visitation order derived from the run seed
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    w, alpha, converged = _linear_cd_kernel(Xa, y, costs, q_diag, order,
                                            tol, max_epochs)
    return TrainedModel("linear_svm", hp, d, weights=w[:d].copy(), bias=float(w[d]),
                        converged=bool(converged), train_fingerprint=_fingerprint(X, y),
                        alphas=alpha)


@njit(cache=True, fastmath=True)
def _kernel_cd_kernel(Kb, y, costs, order, tol, max_epochs):
    n = Kb.shape[0]
    alpha = np.zeros(n)
    g_cache = np.zeros(n)                       # (K~ (alpha*y))_i
    converged = False
    for _ in range(max_epochs):
        max_violation = 0.0
        for idx in range(n):
            i = order[idx]
            g = y[i] * g_cache[i] - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= costs[i]:
                pg = max(g, 0.0)
            else:
                pg = g
            if abs(pg) > max_violation:
                max_violation = abs(pg)
            if pg != 0.0 and Kb[i, i] > 0.0:
                a_new = min(max(a - g / Kb[i, i], 0.0), costs[i])
                if a_new != a:
                    delta = (a_new - a) * y[i]
                    for j in range(n):
                        g_cache[j] += delta * Kb[i, j]
                    alpha[i] = a_new
        if max_violation < tol:
            converged = True
            break
    return alpha, converged


def rbf_kernel(A, B, gamma):
    sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :]
          - 2.0 * (A @ B.T))
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def train_rbf_svm(X, y, hp, seed, tol=1e-4, max_epochs=1000, kernel=None):
    _check_training_set(X, y)
    n, d = X.shape
    costs = hp.c * _sample_costs(y, hp)
    K = kernel if kernel is not None else rbf_kernel(X, X, hp.gamma)
    Kb = np.ascontiguousarray(K + 1.0)          # +1 absorbs the bias
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    alpha, converged = _kernel_cd_kernel(Kb, y, costs, order, tol, max_epochs)
    mask = alpha > 0.0
    return TrainedModel("rbf_svm", hp, d,
                        sv_x=X[mask].copy(), sv_coef=(alpha * y)[mask].copy(),
                        converged=converged, train_fingerprint=_fingerprint(X, y),
                        alphas=alpha)


def logreg_objective(beta, bias, X, y, costs, c, penalty):
    z = y * (X @ beta + bias)
    # log(1 + exp(-z)) computed stably
    loss = np.sum(costs * (np.logaddexp(0.0, -z)))
    if penalty == "l2":
        return loss + 0.5 / c * np.dot(beta, beta)
    return loss + np.sum(np.abs(beta)) / c


def logreg_gradient(beta, bias, X, y, costs, c, penalty):
    """Gradient of the smooth part (loss + L2 penalty) wrt (beta, bias)."""
    z = y * (X @ beta + bias)
    sig = 1.0 / (1.0 + np.exp(np.clip(z, -500, 500)))
    coef = -costs * y * sig
    g_beta = X.T @ coef
    g_bias = np.sum(coef)
    if penalty == "l2":
        g_beta = g_beta + beta / c
    return g_beta, g_bias


def train_logreg(X, y, hp, seed, tol=1e-6, max_iter=1000):
    _check_training_set(X, y)
    n, d = X.shape
    costs = _sample_costs(y, hp)
    c = hp.c
    penalty = hp.penalty or "l2"
    beta = np.zeros(d)
    bias = 0.0
    vb, vbias = beta.copy(), bias                # FISTA momentum point
    t_mom = 1.0
    step = 1.0
    prev_obj = logreg_objective(beta, bias, X, y, costs, c, penalty)
    converged = False
    for _ in range(max_iter):
        g_beta, g_bias = logreg_gradient(vb, vbias, X, y, costs, c, penalty)
        while True:
            nb = vb - step * g_beta
            nbias = vbias - step * g_bias
            if penalty == "l1":
                nb = np.sign(nb) * np.maximum(np.abs(nb) - step / c, 0.0)
            # sufficient-decrease test against the quadratic model
            obj_new = logreg_objective(nb, nbias, X, y, costs, c, penalty)
            diff_b = nb - vb
            diff_bias = nbias - vbias
            quad = (logreg_objective(vb, vbias, X, y, costs, c, penalty)
                    + np.dot(g_beta, diff_b) + g_bias * diff_bias
                    + (np.dot(diff_b, diff_b) + diff_bias ** 2) / (2.0 * step))
            if penalty == "l1":
                quad += (np.sum(np.abs(nb)) - np.sum(np.abs(vb))) / c
            if obj_new <= quad + 1e-12 * abs(quad) or step < 1e-16:
                break
            step *= 0.5
        # proximal-gradient mapping norm as the stopping criterion
        g_map = np.sqrt(np.sum((vb - nb) ** 2) + (vbias - nbias) ** 2) / step
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom)) / 2.0
        accel = (t_mom - 1.0) / t_next
        vb = nb + accel * (nb - beta)
        vbias = nbias + accel * (nbias - bias)
        beta, bias, t_mom = nb, nbias, t_next
        if obj_new > prev_obj:                   # adaptive restart
            vb, vbias, t_mom = beta.copy(), bias, 1.0
        prev_obj = obj_new
        if g_map < tol:
            converged = True
            break
    return TrainedModel("logreg", hp, d, weights=beta, bias=float(bias),
                        converged=converged, train_fingerprint=_fingerprint(X, y))


def train(kind, X, y, hp, seed) -> TrainedModel:
    """Train one scorer; baselines ignore the features."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if kind == "linear_svm":
        return train_linear_svm(X, y, hp, seed)
    if kind == "rbf_svm":
        return train_rbf_svm(X, y, hp, seed)
    if kind == "logreg":
        return train_logreg(X, y, hp, seed)
    if kind in BASELINE_KINDS:
        d = X.shape[1] if X.ndim == 2 else 0
        return TrainedModel(kind, hp, d, seed=seed,
                            train_fingerprint=_fingerprint(X, y) if X.size else "")
    raise TrainingError(f"unknown classifier kind {kind!r}")


def _random_score(seed, values):
    """Uniform in [-1, 1], deterministic in (model seed, vector bytes)."""
    h = hashlib.blake2b(np.ascontiguousarray(values).tobytes(),
                        digest_size=8, key=seed.to_bytes(8, "little"))
    u = int.from_bytes(h.digest(), "little") / float(2 ** 64)
    return 2.0 * u - 1.0


def score_many(model: TrainedModel, X) -> np.ndarray:
    """Decision scores for a batch of feature vectors; higher = more genuine."""
    X = np.asarray(X, dtype=np.float64)
    if model.kind in ("linear_svm", "logreg"):
        if X.shape[1] != model.dim:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {model.dim}")
        return X @ model.weights + model.bias
    if model.kind == "rbf_svm":
        if X.shape[1] != model.dim:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {model.dim}")
        if model.sv_x.shape[0] == 0:
            return np.zeros(X.shape[0])
        K = rbf_kernel(model.sv_x, X, model.hp.gamma) + 1.0
        return model.sv_coef @ K
    if model.kind == "always_accept":
        return np.ones(X.shape[0])
    if model.kind == "always_reject":
        return -np.ones(X.shape[0])
    if model.kind == "random":
        return np.array([_random_score(model.seed, row) for row in X])
    raise TrainingError(f"unknown classifier kind {model.kind!r}")


def score(model: TrainedModel, v) -> float:
    values = v.values if hasattr(v, "values") else np.asarray(v, dtype=np.float64)
    return float(score_many(model, values[None, :])[0])


def grid_search(kind, fold_sets, train_X, train_y, grid, seed):
    """3-fold CV over a hyperparameter grid; retrains the winner on the
    full training set.

    fold_sets: list of 3 (X, y) arrays, one per CV fold. Returns
    (best HyperParams, mean CV EER, final TrainedModel, failures).
    """
    if kind in BASELINE_KINDS:
        hp = HyperParams()
        return hp, float("nan"), train(kind, train_X, train_y, hp, seed), []
    for f, (Xf, yf) in enumerate(fold_sets):
        if Xf.shape[0] == 0 or np.all(yf > 0) or np.all(yf < 0):
            raise TrainingError(f"CV fold {f} is empty or single-class")
    grid = sorted(grid, key=HyperParams.sort_key)
    # cache per-held-out-fold squared-distance matrices for the RBF kernel
    dist_cache = {}
    if kind == "rbf_svm":
        for f in range(len(fold_sets)):
            Xtr = np.vstack([fold_sets[k][0] for k in range(len(fold_sets)) if k != f])
            Xte = fold_sets[f][0]
            sq_tr = (np.sum(Xtr * Xtr, axis=1)[:, None] + np.sum(Xtr * Xtr, axis=1)[None, :]
                     - 2.0 * (Xtr @ Xtr.T))
            np.maximum(sq_tr, 0.0, out=sq_tr)
            sq_te = (np.sum(Xtr * Xtr, axis=1)[:, None] + np.sum(Xte * Xte, axis=1)[None, :]
                     - 2.0 * (Xtr @ Xte.T))
            np.maximum(sq_te, 0.0, out=sq_te)
            dist_cache[f] = (Xtr, sq_tr, sq_te)
    best = None
    failures = []
    for hp in grid:
        eers = []
        try:
            for f in range(len(fold_sets)):
                y_tr = np.concatenate([fold_sets[k][1] for k in range(len(fold_sets)) if k != f])
                if kind == "rbf_svm":
                    Xtr, sq_tr, sq_te = dist_cache[f]
                    model = train_rbf_svm(Xtr, y_tr, hp, derive_seed(seed, f),
                                          kernel=np.exp(-hp.gamma * sq_tr))
                    sc = model.alphas * y_tr @ (np.exp(-hp.gamma * sq_te) + 1.0)
                else:
                    Xtr = np.vstack([fold_sets[k][0] for k in range(len(fold_sets)) if k != f])
                    model = train(kind, Xtr, y_tr, hp, derive_seed(seed, f))
                    sc = score_many(model, fold_sets[f][0])
                rep = eer_threshold(PairScoreSet(sc, fold_sets[f][1] > 0))
                eers.append(rep.hter)
        except (TrainingError, ValueError) as exc:
            failures.append((hp, str(exc)))
            continue
        mean_eer = float(np.mean(eers))
        if best is None or mean_eer < best[1]:
            best = (hp, mean_eer)
    if best is None:
        raise TrainingError(f"all {len(grid)} grid points failed: {failures[:3]}")
    final = train(kind, train_X, train_y, best[0], derive_seed(seed, 0xF1))
    return best[0], best[1], final, failures
