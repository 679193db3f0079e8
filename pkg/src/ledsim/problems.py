"""Per-node objectives with exact and noisy gradient oracles.

Two problem families are provided: heterogeneous synthetic logistic
regression with a smooth nonconvex regularizer, and quadratics with a
closed-form minimizer used as a test bed for exact-convergence and
noise-floor experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream


def softplus(t: np.ndarray) -> np.ndarray:
    """Numerically stable ln(1 + exp(t))."""
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t, dtype=float)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class NodeDataset:
    """One node's training data: S feature rows and +-1 labels."""

    features: np.ndarray  # (S, m)
    labels: np.ndarray    # (S,) in {-1, +1}

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) < 1:
            raise ValueError("features must be a nonempty S x m matrix")
        if not np.all(np.abs(self.labels) == 1):
            raise ValueError("labels must be exactly +-1")


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic heterogeneous logistic benchmark."""

    n_nodes: int = 15
    dim: int = 5
    n_samples: int = 1000
    reg: float = 0.01
    sigma_u: float = 6.0
    sigma_h: float = 2.0
    sigma: float = 1e-3
    feature_scale: float = 5.0

    def __post_init__(self):
        if min(self.sigma_u, self.sigma_h, self.sigma, self.feature_scale) < 0:
            raise ValueError("scales must be nonnegative")


class Problem:
    """Base class: N nodes sharing dimension m, plus a noisy-gradient oracle."""

    n_nodes: int
    dim: int
    sigma: float
    x_star: np.ndarray | None = None
    f_star: float | None = None

    def value(self, i: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grads(self, x_nodes: np.ndarray) -> np.ndarray:
        """Stacked per-node gradients at distinct points, (N, m) -> (N, m)."""
        return np.stack([self.grad(i, x_nodes[i]) for i in range(self.n_nodes)])

    def grads_at(self, x: np.ndarray) -> np.ndarray:
        """All node gradients evaluated at the same point."""
        return self.grads(np.broadcast_to(x, (self.n_nodes, self.dim)))

    def mean_value(self, x: np.ndarray) -> float:
        return sum(self.value(i, x) for i in range(self.n_nodes)) / self.n_nodes

    def stoch_grad(self, i: int, x: np.ndarray, stream: RngStream) -> np.ndarray:
        """Exact gradient plus iid Gaussian noise of std sigma per coordinate.

        With sigma == 0 this returns the exact gradient bit-for-bit.
        """
        g = self.grad(i, x)
        if self.sigma > 0:
            g = g + self.sigma * stream.normal(self.dim)
        return g

    def sampled_grads(self, x_nodes: np.ndarray, stream: RngStream | None) -> np.ndarray:
        """Noisy stacked gradients; one (N, m) noise draw per call."""
        g = self.grads(x_nodes)
        if self.sigma > 0:
            if stream is None:
                raise ValueError("sigma > 0 requires a random stream")
            g = g + self.sigma * stream.normal((self.n_nodes, self.dim))
        return g

    def global_grad_norm_sq(self, x_bar: np.ndarray) -> float:
        """||(1/N) sum_i grad f_i(x_bar)||^2, the error criterion."""
        return float(np.sum(self.grads_at(x_bar).mean(axis=0) ** 2))

    def heterogeneity_at(self, x: np.ndarray) -> float:
        """(1/N) sum_i ||grad f_i(x) - grad f(x)||^2."""
        g = self.grads_at(x)
        return float(np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1)))

    def lipschitz(self) -> float:
        raise NotImplementedError


class LogisticProblem(Problem):
    """Regularized logistic regression; each node holds its own dataset.

    f_i(x) = (1/S) sum_s ln(1 + exp(-y_s h_s^T x)) + reg * sum_j x_j^2/(1+x_j^2)
    """

    def __init__(self, datasets: list, reg: float, sigma: float = 0.0):
        dims = {d.features.shape[1] for d in datasets}
        if len(dims) != 1:
            raise ValueError("all nodes must share the feature dimension")
        self.datasets = list(datasets)
        self.n_nodes = len(datasets)
        self.dim = dims.pop()
        self.reg = float(reg)
        self.sigma = float(sigma)
        # Stacked copies for vectorized whole-network gradient evaluation.
        self._H = np.stack([d.features for d in datasets])       # (N, S, m)
        self._Y = np.stack([d.labels for d in datasets]).astype(float)  # (N, S)

    def value(self, i: int, x: np.ndarray) -> float:
        d = self.datasets[i]
        t = -d.labels * (d.features @ x)
        reg = self.reg * np.sum(x * x / (1.0 + x * x))
        return float(np.mean(softplus(t)) + reg)

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        d = self.datasets[i]
        t = -d.labels * (d.features @ x)
        coeff = -d.labels * sigmoid(t)  # (S,)
        loss_grad = (coeff @ d.features) / len(d.labels)
        reg_grad = self.reg * 2.0 * x / (1.0 + x * x) ** 2
        return loss_grad + reg_grad

    def grads(self, x_nodes: np.ndarray) -> np.ndarray:
        # hot path: batched matmuls and a tanh-form sigmoid (underflow in the
        # far tails is harmless for the gradient)
        margins = (self._H @ x_nodes[:, :, None])[:, :, 0]       # (N, S)
        s = 0.5 * (1.0 + np.tanh(-0.5 * self._Y * margins))
        coeff = (-self._Y * s)[:, None, :]                       # (N, 1, S)
        loss = (coeff @ self._H)[:, 0, :] / self._H.shape[1]
        reg = self.reg * 2.0 * x_nodes / (1.0 + x_nodes * x_nodes) ** 2
        return loss + reg

    def lipschitz(self) -> float:
        """Smoothness bound: logistic term (1/4S) lam_max(H_i^T H_i), plus the
        regularizer whose second derivative is bounded by 2."""
        worst = 0.0
        for d in self.datasets:
            gram = d.features.T @ d.features
            worst = max(worst, float(np.linalg.eigvalsh(gram)[-1]))
        return worst / (4.0 * self._H.shape[1]) + 2.0 * self.reg


def synth_logistic(cfg: SynthConfig, seed: int) -> LogisticProblem:
    """Draw the heterogeneous synthetic logistic problem.

    Each node gets a generating vector u_i = u0 + v_i with u0 ~ N(0, sigma_u^2 I)
    and v_i ~ N(0, sigma_h^2 I); features h ~ N(0, feature_scale^2 I); the label
    is +1 with the logistic probability 1/(1 + exp(-h^T u_i)).
    """
    root = RngStream(seed).child("synth")
    u0 = root.child("shared").normal(cfg.dim, cfg.sigma_u)
    datasets = []
    for i in range(cfg.n_nodes):
        node = root.child("node", i)
        u_i = u0 + node.child("shift").normal(cfg.dim, cfg.sigma_h)
        h = node.child("features").normal((cfg.n_samples, cfg.dim), cfg.feature_scale)
        z = node.child("labels").generator().random(cfg.n_samples)
        y = np.where(z <= sigmoid(h @ u_i), 1, -1)
        datasets.append(NodeDataset(features=h, labels=y))
    return LogisticProblem(datasets, reg=cfg.reg, sigma=cfg.sigma)


class QuadraticProblem(Problem):
    """Per-node f_i(x) = 0.5 x^T A_i x - b_i^T x with node-dependent Hessians.

    Each A_i is symmetric PSD; the aggregate Hessian (1/N) sum A_i is positive
    definite with extreme eigenvalues stored as mu and lip.  The consensus
    minimizer (mean A)^{-1} (mean b) is stored in closed form.
    """

    def __init__(self, a: np.ndarray, b: np.ndarray, sigma: float = 0.0):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.ndim == 2:
            a = np.broadcast_to(a, (b.shape[0],) + a.shape).copy()
        if np.max(np.abs(a - np.transpose(a, (0, 2, 1)))) > 0:
            raise ValueError("every per-node Hessian must be symmetric")
        self.a = a
        self.b = b
        self.n_nodes, self.dim = b.shape
        self.sigma = float(sigma)
        self.a_bar = a.mean(axis=0)
        eigs = np.linalg.eigvalsh(self.a_bar)
        if eigs[0] <= 0:
            raise ValueError("aggregate Hessian must be positive definite")
        per_node_min = min(float(np.linalg.eigvalsh(ai)[0]) for ai in a)
        if per_node_min < -1e-10:
            raise ValueError("every per-node Hessian must be PSD")
        self.mu = float(eigs[0])
        self.lip = float(eigs[-1])
        b_bar = b.mean(axis=0)
        self.x_star = np.linalg.solve(self.a_bar, b_bar)
        self.f_star = float(0.5 * self.x_star @ self.a_bar @ self.x_star
                            - b_bar @ self.x_star)

    def value(self, i: int, x: np.ndarray) -> float:
        return float(0.5 * x @ self.a[i] @ x - self.b[i] @ x)

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.a[i] @ x - self.b[i]

    def grads(self, x_nodes: np.ndarray) -> np.ndarray:
        return np.einsum("nij,nj->ni", self.a, x_nodes) - self.b

    def lipschitz(self) -> float:
        return max(float(np.linalg.eigvalsh(ai)[-1]) for ai in self.a)


def quadratic_problem(n_nodes: int, dim: int, mu: float, lip: float,
                      heterogeneity: float, seed: int, sigma: float = 0.0,
                      hessian_spread: float = 0.5) -> QuadraticProblem:
    """Random strongly convex quadratic suite with controlled heterogeneity.

    The aggregate Hessian gets eigenvalues spread over [mu, lip] exactly, in a
    random orthogonal basis.  Per-node Hessians deviate by centered symmetric
    perturbations scaled so every A_i stays PSD; with heterogeneity == 0 the
    nodes are identical.  b_i = b_bar + heterogeneity * d_i with centered d_i,
    so the gradient spread at the all-zeros point is set by the b spread alone.
    """
    if not 0 < mu <= lip:
        raise ValueError("need 0 < mu <= lip")
    rng = RngStream(seed).child("quadratic")
    gauss = rng.child("basis").normal((dim, dim))
    q, _ = np.linalg.qr(gauss)
    eigs = np.linspace(mu, lip, dim) if dim > 1 else np.array([mu])
    a_bar = (q * eigs) @ q.T
    a_bar = 0.5 * (a_bar + a_bar.T)  # kill asymmetric rounding

    a = np.broadcast_to(a_bar, (n_nodes, dim, dim)).copy()
    if heterogeneity > 0 and hessian_spread > 0 and n_nodes > 1:
        raw = rng.child("hessians").normal((n_nodes, dim, dim))
        sym = 0.5 * (raw + np.transpose(raw, (0, 2, 1)))
        sym -= sym.mean(axis=0)  # centered: aggregate Hessian stays a_bar
        worst = max(float(np.max(np.abs(np.linalg.eigvalsh(e)))) for e in sym)
        if worst > 0:
            # cap the deviation so A_i = a_bar + E_i keeps min eigenvalue >= mu/10
            scale = min(hessian_spread, 0.9 * mu / worst)
            a = a + scale * sym

    b_bar = rng.child("center").normal(dim)
    d = rng.child("spread").normal((n_nodes, dim))
    d -= d.mean(axis=0)
    b = b_bar + heterogeneity * d
    return QuadraticProblem(a, b, sigma=sigma)
