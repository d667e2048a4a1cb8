"""Online convex harness for the regret guarantee of anchored task arithmetic.

Each round ``t`` reveals a convex loss ``l_t``. The task vector for that round
approximates the negative gradient at the anchor, ``tau_t ~ -grad l_t(theta0)``
with error at most ``delta``. The iterate is

    theta_t = P_R(theta0 - eta * G_{t-1}),    G_t = -(tau_1 + ... + tau_t),

where ``G_t`` is the running sum of gradient estimates and ``P_R`` projects on
the ball of radius ``R`` around ``theta0``. The harness checks

    Regret_T <= R (L + delta) sqrt(T) + 2 mu R^2 T + 2 R delta T
    ||G_t - sum_{j<=t} grad l_j(theta_j)|| <= mu R t + t delta.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError, ConvergenceError
from .unlearn import aggregate_cata, memory_from_dense

FAMILIES = ("linear", "quadratic")
AGGREGATIONS = ("sum", "cata")

# Relative slack for float rounding when comparing computed quantities
# against analytic bounds.
ROUNDING_SLACK = 1e-9


@dataclass(frozen=True)
class RegretConfig:
    T: int
    R: float = 1.0
    L: float = 1.0
    mu: float = 0.0
    delta: float = 0.0
    eta: Optional[float] = None
    loss_family: str = "linear"
    project_iterates: bool = True
    seed: int = 0
    dim: int = 5
    aggregation: str = "sum"

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        for name in ("R", "L"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.mu < 0 or self.delta < 0:
            raise ConfigError("mu and delta must be non-negative")
        if self.loss_family not in FAMILIES:
            raise ConfigError(f"loss_family must be one of {FAMILIES}")
        if self.loss_family == "linear" and self.mu != 0:
            raise ConfigError("linear losses are 0-smooth; set mu=0")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
        if self.eta is not None and not self.eta > 0:
            raise ConfigError("eta must be positive")

    @property
    def step_size(self) -> float:
        if self.eta is not None:
            return self.eta
        return self.R / ((self.L + self.delta) * math.sqrt(self.T))

    def theorem_bound(self, T: Optional[int] = None) -> float:
        T = self.T if T is None else T
        R, L, mu, delta = self.R, self.L, self.mu, self.delta
        return R * (L + delta) * math.sqrt(T) + 2 * mu * R**2 * T + 2 * R * delta * T

    def prefix_bound(self, t: int) -> float:
        """Bound on the first ``t`` rounds' regret for the configured step size.

        Equals :meth:`theorem_bound` at ``t == T`` with the default step size.
        """
        eta, R, G = self.step_size, self.R, self.L + self.delta
        return R**2 / (2 * eta) + eta * t * G**2 / 2 + 2 * R * (self.mu * R + self.delta) * t


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *key])))


def _uniform_ball(rng: np.random.Generator, dim: int, radius: float, n: Optional[int] = None):
    shape = (dim,) if n is None else (n, dim)
    z = rng.standard_normal(shape)
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    r = radius * rng.random(shape[:-1] + (1,)) ** (1.0 / dim)
    return z / norms * r


@dataclass
class LossSequence:
    """``l_t(theta) = <g_t, theta>`` (linear) or ``0.5 ||A_t theta - b_t||^2`` (quadratic)."""

    family: str
    theta0: np.ndarray
    g: Optional[np.ndarray] = None  # (T, dim)
    A: Optional[np.ndarray] = None  # (T, m, dim)
    b: Optional[np.ndarray] = None  # (T, m)

    def __len__(self):
        return (self.g if self.family == "linear" else self.b).shape[0]

    def loss(self, t: int, theta) -> float:
        if self.family == "linear":
            return float(self.g[t] @ theta)
        r = self.A[t] @ theta - self.b[t]
        return 0.5 * float(r @ r)

    def grad(self, t: int, theta) -> np.ndarray:
        if self.family == "linear":
            return self.g[t].copy()
        return self.A[t].T @ (self.A[t] @ theta - self.b[t])

    def total_loss(self, theta) -> float:
        if self.family == "linear":
            return float(self.g.sum(axis=0) @ theta)
        r = np.einsum("tmd,d->tm", self.A, theta) - self.b
        return 0.5 * float(np.sum(r * r))

    def total_quadratic(self):
        """``(H, q, c)`` with ``sum_t l_t(theta) = 0.5 theta'H theta - q'theta + c``."""
        H = np.einsum("tmd,tme->de", self.A, self.A)
        q = np.einsum("tmd,tm->d", self.A, self.b)
        c = 0.5 * float(np.sum(self.b * self.b))
        return H, q, c


def make_loss_sequence(cfg: RegretConfig) -> LossSequence:
    """Seeded losses satisfying convexity, ``mu``-smoothness and ``L``-Lipschitzness.

    Quadratic losses are certified ``L``-Lipschitz on the ball of radius ``2R``
    around the anchor: ``||A_t||^2 <= mu`` and ``||grad l_t(theta0)|| <= L - 2 mu R``.
    """
    theta0 = _rng(cfg.seed, 0).standard_normal(cfg.dim)
    T, dim = cfg.T, cfg.dim
    rng = _rng(cfg.seed, 1)
    if cfg.loss_family == "linear":
        # shared drift plus per-round noise keeps the comparator away from theta0
        w = rng.standard_normal(dim)
        w /= np.linalg.norm(w)
        g = cfg.L * (0.6 * w + 0.4 * _uniform_ball(rng, dim, 1.0, T))
        return LossSequence("linear", theta0, g=g)

    slack = cfg.L - 2 * cfg.mu * cfg.R
    if slack <= 0:
        raise ConfigError(
            f"infeasible quadratic family: need L > 2*mu*R (L={cfg.L}, mu={cfg.mu}, R={cfg.R})"
        )
    m = dim
    A = np.zeros((T, m, dim))
    if cfg.mu > 0:
        raw = rng.standard_normal((T, m, dim))
        spec = np.linalg.norm(raw, ord=2, axis=(1, 2))
        scale = np.sqrt(cfg.mu * rng.uniform(0.5, 1.0, T)) / spec
        A = raw * scale[:, None, None]
    target = rng.standard_normal(m)
    resid = target + 0.5 * rng.standard_normal((T, m))
    # resid is b_t - A_t theta0, rescaled so that ||A_t' resid|| <= slack
    if cfg.mu > 0:
        at_r = np.linalg.norm(np.einsum("tmd,tm->td", A, resid), axis=1)
        shrink = np.minimum(1.0, slack * rng.uniform(0.5, 1.0, T) / np.maximum(at_r, 1e-300))
        resid = resid * shrink[:, None]
    b = np.einsum("tmd,d->tm", A, theta0) + resid
    return LossSequence("quadratic", theta0, A=A, b=b)


def approximate_task_vector(grad_at_theta0, delta: float, seed: int, t: int) -> np.ndarray:
    """Task vector ``-grad + e`` with ``e`` uniform in the ball of radius ``delta``."""
    if delta < 0:
        raise ConfigError("delta must be non-negative")
    grad = np.asarray(grad_at_theta0, dtype=np.float64)
    if delta == 0:
        return -grad
    e = _uniform_ball(_rng(seed, 2, t), grad.size, delta)
    tau = -grad + e
    assert np.linalg.norm(tau + grad) <= delta * (1 + ROUNDING_SLACK)
    return tau


def project_ball(theta, center, radius: float) -> np.ndarray:
    diff = theta - center
    n = float(np.linalg.norm(diff))
    if n <= radius:
        return theta
    return center + diff * (radius / n)


def solve_comparator(losses: LossSequence, R: float, tol: float = 1e-10, max_iter: int = 200_000) -> np.ndarray:
    """Best fixed parameter in the radius-``R`` ball around ``theta0``."""
    theta0 = losses.theta0
    if losses.family == "linear":
        gbar = losses.g.sum(axis=0)
        n = float(np.linalg.norm(gbar))
        return theta0.copy() if n == 0 else theta0 - R * gbar / n
    H, q, _ = losses.total_quadratic()
    lmax = float(np.linalg.eigvalsh(H)[-1]) if H.size else 0.0
    if lmax <= 0:
        return theta0.copy()
    step = 1.0 / lmax
    theta = theta0.copy()
    for _ in range(max_iter):
        nxt = project_ball(theta - step * (H @ theta - q), theta0, R)
        if np.linalg.norm(nxt - theta) <= tol * max(1.0, float(np.linalg.norm(theta))):
            return nxt
        theta = nxt
    raise ConvergenceError("comparator projected-gradient solve did not converge",
                           float(np.linalg.norm(nxt - theta)))


@dataclass
class OnlineTrace:
    cfg: RegretConfig
    theta0: np.ndarray
    iterates: np.ndarray  # (T, dim)
    G: np.ndarray  # (T, dim), G[t-1] = G_t
    true_grad_sums: np.ndarray  # (T, dim), sum_{j<=t} grad l_j(theta_j)
    losses: np.ndarray  # (T,) l_t(theta_t)
    comparator_losses: np.ndarray  # (T,) l_t(theta*)
    comparator: np.ndarray
    regret: float
    bound: float
    lemma1_lhs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lemma1_rhs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.losses - self.comparator_losses)

    @property
    def within_bound(self) -> bool:
        return self.regret <= self.bound * (1 + ROUNDING_SLACK) + ROUNDING_SLACK

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "loss", "regret_cum", "bound_cum", "lemma1_lhs", "lemma1_rhs"])
        cum = self.cumulative_regret
        for i in range(self.cfg.T):
            t = i + 1
            w.writerow([t, repr(float(self.losses[i])), repr(float(cum[i])),
                        repr(self.cfg.prefix_bound(t)), repr(float(self.lemma1_lhs[i])),
                        repr(float(self.lemma1_rhs[i]))])
        return buf.getvalue()


def run_cata_online(cfg: RegretConfig, losses: Optional[LossSequence] = None) -> OnlineTrace:
    """Play the anchored iterates against ``losses`` (generated from ``cfg`` if omitted).

    ``cfg.aggregation == "cata"`` replaces the running sum by ``(t-1)`` times
    the conflict-averse aggregate of the past task vectors; that mode is for
    comparison only and carries no guarantee.
    """
    losses = make_loss_sequence(cfg) if losses is None else losses
    T, dim = cfg.T, cfg.dim
    theta0 = losses.theta0
    eta = cfg.step_size
    iterates = np.zeros((T, dim))
    G = np.zeros((T, dim))
    grad_sums = np.zeros((T, dim))
    step_losses = np.zeros(T)
    taus: List[np.ndarray] = []
    g_run = np.zeros(dim)
    true_run = np.zeros(dim)
    for i in range(T):
        if cfg.aggregation == "cata" and taus:
            agg = aggregate_cata(memory_from_dense(taus)).aggregated
            direction = -len(taus) * agg
        else:
            direction = g_run
        theta = theta0 - eta * direction
        if cfg.project_iterates:
            theta = project_ball(theta, theta0, cfg.R)
        iterates[i] = theta
        step_losses[i] = losses.loss(i, theta)
        true_run = true_run + losses.grad(i, theta)
        tau = approximate_task_vector(losses.grad(i, theta0), cfg.delta, cfg.seed, i + 1)
        taus.append(tau)
        g_run = g_run - tau
        G[i] = g_run
        grad_sums[i] = true_run
    comparator = solve_comparator(losses, cfg.R)
    comp_losses = np.array([losses.loss(i, comparator) for i in range(T)])
    regret = float(math.fsum(step_losses) - math.fsum(comp_losses))
    trace = OnlineTrace(
        cfg=cfg,
        theta0=theta0,
        iterates=iterates,
        G=G,
        true_grad_sums=grad_sums,
        losses=step_losses,
        comparator_losses=comp_losses,
        comparator=comparator,
        regret=regret,
        bound=cfg.theorem_bound(),
    )
    trace.lemma1_lhs = np.linalg.norm(G - grad_sums, axis=1)
    t = np.arange(1, T + 1)
    trace.lemma1_rhs = cfg.mu * cfg.R * t + t * cfg.delta
    return trace


@dataclass(frozen=True)
class Lemma1Check:
    lhs: np.ndarray
    rhs: np.ndarray
    passed: np.ndarray  # bool per step

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))


def check_lemma1(trace: OnlineTrace, cfg: Optional[RegretConfig] = None) -> Lemma1Check:
    """Per-step test of the cumulative gradient-approximation bound.

    The bound relies on iterates staying within ``R`` of the anchor, so it is
    only asserted for projected runs; unprojected runs are reported as-is.
    """
    cfg = trace.cfg if cfg is None else cfg
    if not cfg.project_iterates:
        raise ConfigError("lemma check requires projected iterates; inspect trace.lemma1_* instead")
    lhs, rhs = trace.lemma1_lhs, trace.lemma1_rhs
    passed = lhs <= rhs * (1 + ROUNDING_SLACK) + ROUNDING_SLACK * np.arange(1, lhs.size + 1)
    return Lemma1Check(lhs, rhs, passed)


def comparator_is_optimal(trace: OnlineTrace, losses: LossSequence, n_points: int = 64) -> bool:
    """``theta*`` beats ``n_points`` random points of the ball on the summed loss."""
    rng = _rng(trace.cfg.seed, 3)
    pts = trace.theta0 + _uniform_ball(rng, trace.cfg.dim, trace.cfg.R, n_points)
    best = losses.total_loss(trace.comparator)
    return all(best <= losses.total_loss(p) + ROUNDING_SLACK * (1 + abs(best)) for p in pts)
