"""Trainable linear output layers: one-vs-one SVM, ridge, logistic, pinv, Adam.

The soft-margin linear SVM solves the dual

    min_a  1/2 a^T Q a - sum a_i   s.t.  0 <= a_i <= C,  sum a_i l_i = 0

with ``Q_kl = l_k l_l x_k . x_l`` by pairwise (two-coordinate) dual ascent on
the maximal KKT-violating pair, which keeps the equality constraint feasible
at every step.  Training terminates on the primal-dual gap; the weight vector
is recovered as the support-vector sum and the bias from the KKT margins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

DUAL_GAP_RTOL = 1e-6


class ConvergenceError(RuntimeError):
    """Solver hit its iteration cap; carries the final duality gap."""

    def __init__(self, message: str, gap: float):
        super().__init__(message)
        self.gap = gap


@dataclass
class BinarySVM:
    """One trained pair classifier: decision value ``w . x + b``."""

    w: np.ndarray
    b: float
    alpha: np.ndarray
    sv_indices: np.ndarray
    gap: float


@dataclass
class LinearModel:
    """Linear read-out ``W x + b`` with per-kind prediction rules."""

    kind: str
    classes: np.ndarray
    weights: np.ndarray  # (rows, D): one row per class, or per pair for svm_ovo
    bias: np.ndarray
    pairs: list = field(default_factory=list)  # [(class_a, class_b)] for svm_ovo
    binaries: list = field(default_factory=list)  # [BinarySVM] for svm_ovo

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


def _one_hot(labels: np.ndarray, classes: np.ndarray) -> np.ndarray:
    y = np.zeros((labels.size, classes.size))
    for j, c in enumerate(classes):
        y[labels == c, j] = 1.0
    return y


def _optimal_bias(y, margins):
    """Exact minimizer of the hinge sum over the bias (piecewise linear in b)."""
    candidates = y - margins
    slack = 1.0 - y[None, :] * (margins[None, :] + candidates[:, None])
    totals = np.maximum(slack, 0.0).sum(axis=1)
    return float(candidates[np.argmin(totals)]), float(totals.min())


def _polish_free_set(alpha, y, q, c_reg):
    """Solve the equality-constrained QP on the free variables exactly.

    Coordinate ascent identifies the active set quickly but crawls on the
    interior variables; one KKT linear solve on the free set (stepped to the
    first box face when it overshoots) removes that tail.
    """
    margin = 1e-10 * c_reg
    free = (alpha > margin) & (alpha < c_reg - margin)
    nf = int(free.sum())
    if nf == 0:
        return alpha, False
    fixed = ~free
    rhs_lin = 1.0 - q[np.ix_(free, fixed)] @ alpha[fixed]
    target_eq = -float(y[fixed] @ alpha[fixed])
    kkt = np.zeros((nf + 1, nf + 1))
    kkt[:nf, :nf] = q[np.ix_(free, free)] + 1e-12 * np.eye(nf)
    kkt[:nf, nf] = y[free]
    kkt[nf, :nf] = y[free]
    rhs = np.concatenate([rhs_lin, [target_eq]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return alpha, False
    new_free = sol[:nf]
    delta = new_free - alpha[free]
    # largest feasible fraction of the Newton step within the box
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(delta > 0, (c_reg - alpha[free]) / delta, np.inf)
        t_lo = np.where(delta < 0, -alpha[free] / delta, np.inf)
    t = min(1.0, float(np.min(np.minimum(t_hi, t_lo), initial=1.0)))
    if t <= 0:
        return alpha, False
    out = alpha.copy()
    out[free] = np.clip(alpha[free] + t * delta, 0.0, c_reg)
    return out, True


def _smo_binary(x, y, c_reg, gap_rtol=DUAL_GAP_RTOL, max_iter=200_000):
    """Pairwise dual ascent for one soft-margin binary problem (labels +-1).

    Working pairs are picked by second-order (maximal-gain) selection; the
    equality constraint stays feasible because every step moves along
    ``y_i e_i - y_j e_j``.  Termination is certified through the primal-dual
    gap with the hinge-optimal bias; a free-set KKT solve accelerates the
    final digits.
    """
    n = x.shape[0]
    gram = x @ x.T
    q = gram * np.outer(y, y)
    qdiag = np.diag(q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective 1/2 a^T Q a - 1^T a
    gap = np.inf
    pos = y > 0

    def duality_gap():
        coef = alpha * y
        quad_term = 0.5 * (coef @ (gram @ coef))
        dual = alpha.sum() - quad_term
        margins = gram @ coef
        _, hinge = _optimal_bias(y, margins)
        primal = quad_term + c_reg * hinge
        return primal - dual, dual

    check_every = max(n // 2, 64)
    converged = False
    it = 0
    while it < max_iter:
        minus_yg = -y * grad
        up = (pos & (alpha < c_reg)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < c_reg))
        if not up.any() or not low.any():
            converged = True
            break
        i = np.flatnonzero(up)[np.argmax(minus_yg[up])]
        m_up = minus_yg[i]
        m_low = minus_yg[low].min()
        stalled = m_up - m_low < 1e-12
        if stalled or it % check_every == check_every - 1:
            gap, dual = duality_gap()
            if gap <= gap_rtol * (1.0 + abs(dual)):
                converged = True
                break
            polished, changed = _polish_free_set(alpha, y, q, c_reg)
            if changed:
                alpha = polished
                grad = q @ alpha - 1.0
                gap, dual = duality_gap()
                if gap <= gap_rtol * (1.0 + abs(dual)):
                    converged = True
                    break
                it += 1
                continue
            if stalled:
                break  # stationary but uncertified; report the achieved gap
        # second-order choice of j: maximal decrease along (i, j)
        diff = m_up - minus_yg
        cand = low & (diff > 0)
        if not cand.any():
            gap, dual = duality_gap()
            converged = gap <= gap_rtol * (1.0 + abs(dual))
            break
        quad = np.maximum(qdiag[i] + qdiag - 2.0 * y[i] * y * q[:, i], 1e-12)
        gain = np.where(cand, diff**2 / quad, -np.inf)
        j = int(np.argmax(gain))
        step = diff[j] / quad[j]
        # feasible direction d = y_i e_i - y_j e_j; clip to the box
        step = min(step, c_reg - alpha[i] if y[i] > 0 else alpha[i])
        step = min(step, alpha[j] if y[j] > 0 else c_reg - alpha[j])
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        grad += step * (y[i] * q[:, i] - y[j] * q[:, j])
        it += 1

    if not converged:
        gap, dual = duality_gap()
        if gap > gap_rtol * (1.0 + abs(dual)):
            raise ConvergenceError(
                f"SVM pair solver stopped after {it} iterations with gap {gap:.3e}",
                gap,
            )

    coef = alpha * y
    w = x.T @ coef
    b = _bias_from_kkt(alpha, y, grad, c_reg)
    gap, _ = duality_gap()
    sv = np.flatnonzero(alpha > 1e-12)
    return BinarySVM(w=w, b=b, alpha=alpha, sv_indices=sv, gap=gap)


def _bias_from_kkt(alpha, y, grad, c_reg):
    """Bias from free support vectors, else the midpoint of the KKT bounds."""
    minus_yg = -y * grad
    free = (alpha > 1e-9 * c_reg) & (alpha < c_reg * (1 - 1e-9))
    if free.any():
        return float(minus_yg[free].mean())
    up = ((y > 0) & (alpha < c_reg)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c_reg))
    hi = minus_yg[up].max() if up.any() else 0.0
    lo = minus_yg[low].min() if low.any() else 0.0
    return float((hi + lo) / 2)


def svm_train(x, labels, c_reg: float = 1.0, max_iter: int = 200_000) -> LinearModel:
    """One-vs-one soft-margin linear SVM."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("need at least 2 classes")
    if c_reg <= 0:
        raise ValueError("C must be > 0")
    for c in classes:
        if np.sum(labels == c) < 1:
            raise ValueError(f"class {c} has no training samples")
    pairs, binaries = [], []
    for ia in range(classes.size):
        for ib in range(ia + 1, classes.size):
            a, b = classes[ia], classes[ib]
            mask = (labels == a) | (labels == b)
            y = np.where(labels[mask] == a, 1.0, -1.0)
            binaries.append(_smo_binary(x[mask], y, c_reg, max_iter=max_iter))
            pairs.append((a, b))
    weights = np.stack([m.w for m in binaries])
    bias = np.array([m.b for m in binaries])
    return LinearModel(
        kind="svm_ovo", classes=classes, weights=weights, bias=bias,
        pairs=pairs, binaries=binaries,
    )


def ridge_train(x, labels, lam: float = 1.0) -> LinearModel:
    """Closed-form ridge regression onto one-hot targets (dual form when D > n)."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    y = _one_hot(labels, classes)
    x_mean, y_mean = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - x_mean, y - y_mean
    n, d = xc.shape
    if lam <= 0:
        w = (np.linalg.pinv(xc) @ yc).T  # documented pseudoinverse fallback
    elif d > n:
        w = (xc.T @ np.linalg.solve(xc @ xc.T + lam * np.eye(n), yc)).T
    else:
        w = np.linalg.solve(xc.T @ xc + lam * np.eye(d), xc.T @ yc).T
    b = y_mean - w @ x_mean
    return LinearModel(kind="ridge", classes=classes, weights=w, bias=b)


def pinv_train(x, labels) -> LinearModel:
    """Least-squares linear layer through the pseudoinverse (bias via augmentation)."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    y = _one_hot(labels, classes)
    aug = np.hstack([x, np.ones((x.shape[0], 1))])
    w_aug = (np.linalg.pinv(aug) @ y).T
    model = LinearModel(
        kind="pinv", classes=classes, weights=w_aug[:, :-1], bias=w_aug[:, -1]
    )
    return model


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logistic_loss_grad(params, x, y_onehot, lam):
    """Mean multinomial cross-entropy and its gradient w.r.t. (W, b) flattened."""
    n, d = x.shape
    k = y_onehot.shape[1]
    w = params[: k * d].reshape(k, d)
    b = params[k * d :]
    logits = x @ w.T + b
    p = _softmax(logits)
    eps = 1e-300
    loss = -np.mean(np.sum(y_onehot * np.log(p + eps), axis=1)) + 0.5 * lam * np.sum(w**2)
    diff = (p - y_onehot) / n
    grad_w = diff.T @ x + lam * w
    grad_b = diff.sum(axis=0)
    return loss, np.concatenate([grad_w.reshape(-1), grad_b])


def logistic_train(x, labels, lam: float = 0.0, grad_tol: float = 1e-5,
                   max_iter: int = 5000) -> LinearModel:
    """Multinomial logistic regression by L-BFGS to small gradient norm."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    y = _one_hot(labels, classes)
    k, d = classes.size, x.shape[1]
    x0 = np.zeros(k * d + k)
    res = minimize(
        logistic_loss_grad, x0, args=(x, y, lam), jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": grad_tol, "ftol": 0.0},
    )
    w = res.x[: k * d].reshape(k, d)
    return LinearModel(kind="logistic", classes=classes, weights=w, bias=res.x[k * d :])


def sgd_train(x, labels, lr: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8,
              epochs: int = 300, batch_size: int = 64, seed: int = 0) -> LinearModel:
    """Fixed-budget Adam on the mean-squared error of a linear layer.

    Minibatch order is drawn from the seed, so training is deterministic.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    y = _one_hot(labels, classes)
    n, d = x.shape
    k = classes.size
    rng = np.random.default_rng(seed)
    w = np.zeros((k, d))
    b = np.zeros(k)
    m_w, v_w = np.zeros_like(w), np.zeros_like(w)
    m_b, v_b = np.zeros_like(b), np.zeros_like(b)
    beta1, beta2 = betas
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = x[idx], y[idx]
            err = xb @ w.T + b - yb
            g_w = 2.0 * err.T @ xb / idx.size
            g_b = 2.0 * err.mean(axis=0)
            t += 1
            m_w = beta1 * m_w + (1 - beta1) * g_w
            v_w = beta2 * v_w + (1 - beta2) * g_w**2
            m_b = beta1 * m_b + (1 - beta1) * g_b
            v_b = beta2 * v_b + (1 - beta2) * g_b**2
            corr1, corr2 = 1 - beta1**t, 1 - beta2**t
            w -= lr * (m_w / corr1) / (np.sqrt(v_w / corr2) + eps)
            b -= lr * (m_b / corr1) / (np.sqrt(v_b / corr2) + eps)
    return LinearModel(kind="sgd", classes=classes, weights=w, bias=b)


def decision_values(model: LinearModel, x) -> np.ndarray:
    return np.asarray(x, dtype=float) @ model.weights.T + model.bias


def predict(model: LinearModel, x) -> np.ndarray:
    """Class predictions; one-vs-one voting for the SVM, argmax otherwise.

    Vote ties break on the summed signed decision values, then on the lower
    class index.
    """
    scores = decision_values(model, x)
    if model.kind != "svm_ovo":
        return model.classes[np.argmax(scores, axis=1)]
    n = scores.shape[0]
    k = model.classes.size
    votes = np.zeros((n, k))
    sums = np.zeros((n, k))
    index = {c: i for i, c in enumerate(model.classes)}
    for col, (a, b) in enumerate(model.pairs):
        d = scores[:, col]
        ia, ib = index[a], index[b]
        votes[:, ia] += d > 0
        votes[:, ib] += d <= 0
        sums[:, ia] += d
        sums[:, ib] -= d
    # lexicographic tie-breaking: votes, then summed decisions, then low index
    rank = votes + 1e-9 * sums / (1.0 + np.abs(sums).max())
    return model.classes[np.argmax(rank, axis=1)]


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray  # confusion[i, j] = count of true class i predicted j


def evaluate(model: LinearModel, x, labels) -> EvalMetrics:
    """Accuracy, per-class accuracy and the confusion matrix on a labeled set."""
    labels = np.asarray(labels)
    pred = predict(model, x)
    classes = model.classes
    confusion = np.zeros((classes.size, classes.size), dtype=int)
    index = {c: i for i, c in enumerate(classes)}
    for t, p in zip(labels, pred):
        confusion[index[t], index[p]] += 1
    totals = confusion.sum(axis=1)
    per_class = np.divide(
        np.diag(confusion), totals, out=np.zeros(classes.size), where=totals > 0
    )
    return EvalMetrics(
        accuracy=float(np.mean(pred == labels)),
        per_class_accuracy=per_class,
        confusion=confusion,
    )


def save_model(path, model: LinearModel) -> None:
    """Plain-text model format: header, classes, W rows, bias, SVM dual data."""
    lines = ["gbsqrc-model 1", f"kind {model.kind}"]
    lines.append("classes " + " ".join(str(c) for c in model.classes))
    rows, d = model.weights.shape
    lines.append(f"shape {rows} {d}")
    for row in model.weights:
        lines.append("w " + " ".join(repr(float(v)) for v in row))
    lines.append("b " + " ".join(repr(float(v)) for v in model.bias))
    if model.kind == "svm_ovo":
        for (a, b), binary in zip(model.pairs, model.binaries):
            lines.append(f"pair {a} {b}")
            lines.append("alpha " + " ".join(repr(float(v)) for v in binary.alpha))
            lines.append("sv " + " ".join(str(int(i)) for i in binary.sv_indices))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> LinearModel:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if lines[0] != "gbsqrc-model 1":
        raise ValueError(f"{path}: not a gbsqrc model file")
    kind = lines[1].split(" ", 1)[1]
    classes = np.array([int(v) for v in lines[2].split()[1:]])
    rows, d = (int(v) for v in lines[3].split()[1:])
    weights = np.array(
        [[float(v) for v in lines[4 + r].split()[1:]] for r in range(rows)]
    ).reshape(rows, d)
    bias = np.array([float(v) for v in lines[4 + rows].split()[1:]])
    model = LinearModel(kind=kind, classes=classes, weights=weights, bias=bias)
    pos = 5 + rows
    while pos < len(lines) and lines[pos].startswith("pair"):
        a, b = (int(v) for v in lines[pos].split()[1:])
        alpha = np.array([float(v) for v in lines[pos + 1].split()[1:]])
        sv = np.array([int(v) for v in lines[pos + 2].split()[1:]], dtype=int)
        row = len(model.pairs)
        model.pairs.append((a, b))
        model.binaries.append(
            BinarySVM(w=weights[row], b=float(bias[row]), alpha=alpha,
                      sv_indices=sv, gap=np.nan)
        )
        pos += 3
    return model
