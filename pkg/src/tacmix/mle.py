"""Maximum-likelihood mixing weights on a fixed node grid.

The objective l(p) = sum_i log sum_j p_j exp(L_ij) is concave on the
probability simplex.  Two solvers are provided: the multiplicative EM
fixed-point update (default) and projected gradient ascent with Armijo
backtracking.  They share no code beyond the objective, so agreement of
their optima is a meaningful check.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import nnls

from .distribution import DiscreteDistribution
from .likelihood import (
    LogLikelihoodMatrix,
    _values,
    log_gradient,
    log_likelihood,
    responsibilities,
)

ALGORITHMS = ("em", "projected-gradient")


@dataclass(frozen=True)
class EstimatorConfig:
    algorithm: str = "em"
    tol: float = 1e-9
    max_iter: int = 5000
    prune_eps: float = 1e-8
    accelerate: bool = True  # SQUAREM extrapolation plus a Newton stabilizer
    gap_tol: float = 1e-11  # on the duality gap relative to 1 + |l|

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class FitResult:
    weights: np.ndarray
    final_loglik: float
    iterations: int
    converged: bool
    support_size: int
    config: EstimatorConfig = field(default_factory=EstimatorConfig)
    distribution: DiscreteDistribution | None = None
    history: tuple[float, ...] = ()
    sparsified: bool = False
    sparsify_failed: bool = False

    def to_dict(self, seed: int | None = None) -> dict:
        d = self.distribution
        return {
            "grid": None if d is None else d.grid.to_dict(),
            "weights": [float(w) for w in self.weights],
            "final_loglik": self.final_loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "support_size": self.support_size,
            "sparsified": self.sparsified,
            "sparsify_failed": self.sparsify_failed,
            "config": asdict(self.config),
            "seed": seed,
        }


def _normalize(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def em_update(p, L) -> np.ndarray:
    """One EM step: p'_j = p_j * mean_i exp(L_ij - lse_i(p))."""
    V = _values(L)
    p = np.asarray(p, dtype=float)
    if p.shape != (V.shape[1],):
        raise ValueError(f"p has shape {p.shape}, expected ({V.shape[1]},)")
    W = responsibilities(p, V)
    return _normalize(W.mean(axis=0))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {p >= 0, sum p = 1} (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1)
    return _normalize(np.maximum(v - theta, 0.0))


class _Kernel:
    """Row-scaled likelihoods E_ij = exp(L_ij - max_j L_ij) for fast inner loops.

    Mixture densities become matrix-vector products.  When a row density
    underflows the log-domain routines take over.
    """

    _FLOOR = 1e-280

    def __init__(self, V: np.ndarray):
        self.V = V
        self.m = V.shape[0]
        self.c = V.max(axis=1)
        self.E = np.exp(V - self.c[:, None])
        self.c_sum = float(self.c.sum())

    def _dens(self, p):
        f = self.E @ p
        return f if f.min() > self._FLOOR else None

    def loglik(self, p) -> float:
        f = self._dens(p)
        if f is None:
            return log_likelihood(_normalize(p), self.V)
        return float(np.log(f).sum()) + self.c_sum

    def em(self, p) -> np.ndarray:
        f = self._dens(p)
        if f is None:
            return em_update(p, self.V)
        return _normalize(p * (self.E.T @ (1.0 / f)) / self.m)

    def log_grad(self, p) -> np.ndarray:
        f = self._dens(p)
        if f is None:
            return log_gradient(p, self.V)
        with np.errstate(divide="ignore"):
            return np.log(self.E.T @ (1.0 / f))


def _rel_change(new: float, old: float) -> float:
    return abs(new - old) / (1.0 + abs(new))


def duality_gap(p, L) -> float:
    """Upper bound on max l - l(p): max_j dl/dp_j - m (since p . grad l = m)."""
    V = _values(L)
    top = float(log_gradient(p, V).max())
    if top > 700:
        return math.inf
    return max(math.exp(top) - V.shape[0], 0.0)


def _gap(K: _Kernel, p) -> float:
    top = float(K.log_grad(p).max())
    return math.inf if top > 700 else max(math.exp(top) - K.m, 0.0)


def _stalled(ll_new, ll, p, K, cfg) -> bool:
    # step change alone stops EM early in its sublinear phase; also demand
    # that the duality gap (a bound on the remaining ascent) is small
    if _rel_change(ll_new, ll) >= cfg.tol:
        return False
    return _gap(K, p) / (1.0 + abs(ll_new)) < cfg.gap_tol


def _squarem_step(p0, K):
    """One safeguarded SQUAREM cycle around the EM map F.

    The extrapolation p0 - 2a r + a^2 v is pulled back toward F(F(p0)) (a = -1)
    until it is nonnegative and, after one stabilizing EM step, no worse than
    F(F(p0)).
    """
    p1 = K.em(p0)
    p2 = K.em(p1)
    ll2 = K.loglik(p2)
    r = p1 - p0
    v = p2 - 2.0 * p1 + p0
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return p2, ll2
    a = min(-np.linalg.norm(r) / nv, -1.0)
    while a < -1.0:
        q = p0 - 2.0 * a * r + a * a * v
        if np.all(q >= 0):
            q = K.em(_normalize(q))
            llq = K.loglik(q)
            if llq >= ll2:
                return q, llq
        a = (a - 1.0) / 2.0
        if a > -1.0 - 1e-3:
            break
    return p2, ll2


def _newton_step(K, p, ll):
    """Constrained Newton step on the support plus promising new nodes.

    With s_ij = E_ij / f_i the second-order model of l around p is, up to a
    constant, -||S p' - 2||^2 / 2.  Its nonnegative minimizer (the sum
    constraint enters as a heavily weighted extra row) sets the direction,
    and a backtracking line search keeps the step monotone.
    """
    f = K.E @ p
    if f.min() <= K._FLOOR:
        return p, ll
    grad = K.E.T @ (1.0 / f)
    active = p > 0
    cand = np.flatnonzero(~active & (grad > K.m))
    cand = cand[np.argsort(-grad[cand], kind="stable")[: K.m]]
    idx = np.union1d(np.flatnonzero(active), cand)
    S = K.E[:, idx] / f[:, None]
    lam = 10.0 * math.sqrt(K.m)
    A = np.vstack([S, np.full(idx.size, lam)])
    b = np.concatenate([np.full(K.m, 2.0), [lam]])
    try:
        x, _ = nnls(A, b, maxiter=50 * idx.size)
    except RuntimeError:
        return p, ll
    if not x.sum() > 0:
        return p, ll
    d = -p
    d[idx] += x / x.sum()
    slope = float(grad @ d)
    t = 1.0
    while t > 1e-10:
        q = _normalize(p + t * d)
        lq = K.loglik(q)
        if lq >= ll and lq - ll >= 1e-4 * t * slope:
            return q, lq
        t /= 2.0
    return p, ll


def _run_em(K, p, cfg):
    ll = K.loglik(p)
    history = [ll]
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if cfg.accelerate:
            p_new, ll_new = _squarem_step(p, K)
            p_new, ll_new = _newton_step(K, p_new, ll_new)
        else:
            p_new = K.em(p)
            ll_new = K.loglik(p_new)
        history.append(ll_new)
        done = _stalled(ll_new, ll, p_new, K, cfg)
        if ll_new >= ll:
            p, ll = p_new, ll_new
        if done:
            converged = True
            break
    return p, ll, it, converged, history


def _run_projected_gradient(K, p, cfg, c=1e-4):
    ll = K.loglik(p)
    history = [ll]
    step = 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        lg = K.log_grad(p)
        scale = lg.max()
        g = np.exp(lg - scale)  # gradient direction rescaled so max component is 1
        t = min(step * 2.0, 1e12)
        accepted = False
        while t > 1e-18:
            p_new = project_simplex(p + t * g)
            delta = float(g @ (p_new - p))
            if delta <= 0:
                break
            ll_new = K.loglik(p_new)
            gain = ll_new - ll
            # Armijo on the unscaled gradient, compared in logs to avoid overflow
            if gain > 0 and math.log(gain) >= math.log(c) + scale + math.log(delta):
                accepted = True
                break
            t /= 2.0
        if not accepted:
            # no resolvable ascent step on a concave objective: numerically stationary
            converged = True
            break
        step = t
        done = _stalled(ll_new, ll, p_new, K, cfg)
        p, ll = p_new, ll_new
        history.append(ll)
        if done:
            converged = True
            break
    return p, ll, it, converged, history


def _make_fit(L, p, ll, it, converged, history, cfg, record_history):
    grid = L.grid if isinstance(L, LogLikelihoodMatrix) else None
    dist = DiscreteDistribution(grid, p) if grid is not None else None
    return FitResult(
        weights=p,
        final_loglik=float(ll),
        iterations=it,
        converged=converged,
        support_size=int(np.sum(p > cfg.prune_eps)),
        config=cfg,
        distribution=dist,
        history=tuple(history) if record_history else (),
    )


def estimate(L, cfg: EstimatorConfig = EstimatorConfig(), init=None, record_history: bool = False) -> FitResult:
    """Maximize l(p) over the simplex starting from ``init`` (uniform by default).

    Stops once |dl| / (1 + |l|) < tol and the duality gap max_j dl/dp_j - m,
    an upper bound on the remaining ascent, is below gap_tol * (1 + |l|).
    Hitting max_iter returns the best iterate with ``converged=False``.
    """
    V = _values(L)
    if not np.all(np.isfinite(V)):
        raise ValueError("log-likelihood matrix has non-finite entries")
    M = V.shape[1]
    p = np.full(M, 1.0 / M) if init is None else _normalize(np.asarray(init, dtype=float))
    if M == 1:
        ll = log_likelihood(p, V)
        return _make_fit(L, p, ll, 1, True, [ll, ll], cfg, record_history)
    run = _run_em if cfg.algorithm == "em" else _run_projected_gradient
    p, ll, it, converged, history = run(_Kernel(V), p, cfg)
    ll = log_likelihood(p, V)  # report the log-domain value
    return _make_fit(L, p, ll, it, converged, history, cfg, record_history)


def sparsify(fit: FitResult, L, tol: float = 1e-6) -> FitResult:
    """Restrict the fit to its m largest weights and re-optimize there.

    A maximizer with at most m support points always exists.  If the
    restricted optimum falls short of the full objective by ``tol`` or more,
    the original fit comes back with ``sparsify_failed=True``.
    """
    V = _values(L)
    m, M = V.shape
    w = np.asarray(fit.weights, dtype=float)
    if np.count_nonzero(w > 0) <= m:
        return fit
    keep = np.sort(np.argsort(-w, kind="stable")[:m])
    sub = V[:, keep]
    tight = EstimatorConfig(algorithm="em", tol=1e-15, max_iter=20000, prune_eps=fit.config.prune_eps)
    best = None
    for cfg in (tight, replace(tight, algorithm="projected-gradient")):
        r = estimate(sub, cfg, init=w[keep])
        if best is None or r.final_loglik > best.final_loglik:
            best = r
    p = np.zeros(M)
    p[keep] = best.weights
    p = _normalize(p)
    ll = log_likelihood(p, V)
    if fit.final_loglik - ll >= tol:
        return replace(fit, sparsify_failed=True)
    out = _make_fit(L, p, ll, fit.iterations + best.iterations, fit.converged, (), fit.config, False)
    return replace(out, sparsified=True)


def estimate_with_sigma2(
    L: LogLikelihoodMatrix,
    cfg: EstimatorConfig = EstimatorConfig(),
    sigma2_init: float | None = None,
    max_outer: int = 100,
    tol: float = 1e-8,
) -> tuple[FitResult, float]:
    """Alternate weight fits with the closed-form noise-variance update.

    Given responsibilities w_ij, the variance maximizing the expected
    complete-data likelihood is sum_ij w_ij SSR_ij / sum_i n_i.
    """
    if L.ssr is None or L.n_obs is None:
        raise ValueError("joint estimation needs residual sums (ssr) and n_obs")
    sigma2 = float(sigma2_init or L.sigma2 or 1e-6)
    fit = None
    total_obs = float(np.sum(L.n_obs))
    for _ in range(max_outer):
        Ls = L.with_sigma2(sigma2)
        fit = estimate(Ls, cfg, init=None if fit is None else np.maximum(fit.weights, 1e-300))
        W = responsibilities(fit.weights, Ls)
        new = float(np.sum(W * L.ssr) / total_obs)
        done = abs(new - sigma2) <= tol * sigma2
        sigma2 = new
        if done:
            break
    Ls = L.with_sigma2(sigma2)
    fit = estimate(Ls, cfg, init=np.maximum(fit.weights, 1e-300))
    return fit, sigma2


__all__ = [
    "EstimatorConfig",
    "FitResult",
    "duality_gap",
    "em_update",
    "estimate",
    "estimate_with_sigma2",
    "project_simplex",
    "sparsify",
]
