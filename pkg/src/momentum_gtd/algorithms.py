"""Gradient TD learners with and without heavy-ball momentum.

Three base algorithms (``gtd``, ``gtd2``, ``tdc``) are available in three
forms:

``vanilla``
    the original two-iterate recursion in ``(theta, u)``;
``two_form``
    the momentum recursion ``theta += alpha * dir + eta * (theta - theta_prev)``;
``three_form``
    the equivalent decomposition into ``(v, u, theta)`` driven by the step
    sizes ``xi = alpha / rho``, ``beta`` and ``rho``.

All steppers are pure: they read the pre-update state on every right hand
side and return a new :class:`LearnerState`. Feature arrays may carry leading
batch axes, in which case each batch row is an independent learner sharing
the step counter.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

import numpy as np

__all__ = [
    "ALGORITHMS",
    "FORMS",
    "REGIMES",
    "DivergenceError",
    "ScheduleSpec",
    "StepSizes",
    "LearnerState",
    "Learner",
    "schedule_at",
    "eta_settling_step",
    "td_error",
    "step_gtd",
    "step_gtd2",
    "step_tdc",
    "step_vanilla",
    "step_momentum_two_form",
    "step_momentum_three_form",
    "make_learner",
    "expected_directions",
    "sampled_directions",
]

ALGORITHMS = ("gtd", "gtd2", "tdc")
FORMS = ("vanilla", "two_form", "three_form")
REGIMES = ("vanilla", "one_ts", "three_ts")
DIVERGENCE_NORM = 1e8


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, norm: float):
        super().__init__(f"iterate diverged at step {step}: ||theta|| = {norm:.3e}")
        self.step = step
        self.norm = norm


@dataclass(frozen=True)
class ScheduleSpec:
    """Polynomially decaying step sizes ``x_t = (t + 1) ** -x``.

    ``alpha_exp`` and ``beta_exp`` drive the theta and u iterates; the momentum
    regimes add ``rho_exp`` and the momentum constant ``w``. The implied
    exponent of ``xi_t = alpha_t / rho_t`` is ``alpha_exp - rho_exp``.

    In ``one_ts`` the three decomposed step sizes must share one decay
    (``alpha = 2 rho`` and ``beta = rho``) and ``w >= 1``; ``c1`` and ``c2`` set
    the constant ratios ``beta_t = c1 xi_t`` and ``rho_t = c2 xi_t``. In
    ``three_ts`` the decays must be strictly ordered,
    ``0 < alpha - rho < beta < rho``, and ``w > 0``.
    """

    regime: str
    alpha_exp: float
    beta_exp: float
    rho_exp: float | None = None
    w: float | None = None
    c1: float = 1.0
    c2: float = 1.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.alpha_exp <= 0 or self.beta_exp <= 0:
            raise ValueError("step-size exponents must be positive")
        if self.regime == "vanilla":
            return
        if self.rho_exp is None or self.w is None:
            raise ValueError(f"regime {self.regime} needs rho_exp and w")
        if self.rho_exp <= 0:
            raise ValueError("rho_exp must be positive")
        xi = self.xi_exp
        if self.regime == "one_ts":
            if not (math.isclose(self.alpha_exp, 2 * self.rho_exp, abs_tol=1e-12)
                    and math.isclose(self.beta_exp, self.rho_exp, abs_tol=1e-12)):
                raise ValueError("one_ts needs alpha = 2 rho and beta = rho so that xi, beta, rho share one decay")
            if self.w < 1:
                raise ValueError(f"one_ts needs w >= 1, got w = {self.w}")
            if self.c1 <= 0 or self.c2 <= 0:
                raise ValueError("c1 and c2 must be positive")
        else:
            if not 0 < xi < self.beta_exp < self.rho_exp:
                raise ValueError(
                    f"three_ts needs 0 < alpha - rho < beta < rho, got xi={xi:g}, "
                    f"beta={self.beta_exp:g}, rho={self.rho_exp:g}")
            if self.w <= 0:
                raise ValueError(f"three_ts needs w > 0, got w = {self.w}")
        exps = (xi, self.beta_exp, self.rho_exp)
        if not all(0.5 < e <= 1.0 for e in exps):
            warnings.warn(
                f"step sizes are not square summable (exponents {exps}); "
                "almost-sure convergence guarantees do not cover this choice",
                stacklevel=3)

    @property
    def xi_exp(self) -> float | None:
        if self.rho_exp is None:
            return None
        return self.alpha_exp - self.rho_exp


class StepSizes(NamedTuple):
    """Step sizes at one step. For ``vanilla`` specs ``rho``, ``xi`` and ``eta`` are 0."""

    alpha: float
    beta: float
    rho: float
    xi: float
    eta: float


def schedule_at(spec: ScheduleSpec, t: int) -> StepSizes:
    """Step sizes at step ``t`` with the convention ``rho_{-1} = 1``."""
    n = t + 1.0
    if spec.regime == "vanilla":
        return StepSizes(n ** -spec.alpha_exp, n ** -spec.beta_exp, 0.0, 0.0, 0.0)
    c1, c2 = (spec.c1, spec.c2) if spec.regime == "one_ts" else (1.0, 1.0)
    alpha = c2 * n ** -spec.alpha_exp
    beta = c1 * n ** -spec.beta_exp
    rho = c2 * n ** -spec.rho_exp
    rho_prev = c2 * t ** -spec.rho_exp if t > 0 else 1.0
    return StepSizes(alpha, beta, rho, alpha / rho, (rho - spec.w * alpha) / rho_prev)


def _eta(spec: ScheduleSpec, t: float) -> float:
    # float-valued t so that astronomically late steps can be probed
    if t == 0:
        return schedule_at(spec, 0).eta
    return (t / (t + 1.0)) ** spec.rho_exp - spec.w * t ** spec.rho_exp * (t + 1.0) ** -spec.alpha_exp


def eta_settling_step(spec: ScheduleSpec, tol: float = 0.01, t_max: float = 1e300) -> float:
    """Smallest ``T`` (to bisection accuracy) with ``|eta_t - 1| < tol`` for all ``t >= T``.

    The decay of ``1 - eta_t`` is ruled by ``w t**-(alpha - rho)``, so ``T`` can
    be far beyond any practical horizon; the search runs in floating point.
    Returns ``inf`` if the bound is not met before ``t_max``.
    """
    if spec.regime == "vanilla":
        raise ValueError("vanilla schedules have no momentum parameter")
    ok = lambda t: abs(_eta(spec, t) - 1.0) < tol
    grid = np.geomspace(1.0, t_max, 3000)
    good = np.array([ok(t) for t in grid])
    if not good[-1]:
        return math.inf
    bad = np.flatnonzero(~good)
    if len(bad) == 0:
        return 0.0
    lo, hi = grid[bad[-1]], grid[bad[-1] + 1]
    while hi - lo > max(1.0, 1e-12 * hi):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return math.ceil(hi)


@dataclass
class LearnerState:
    """Iterates of one learner.

    ``theta_prev`` is carried by the two-iterate momentum form and ``v`` by the
    three-iterate form; vanilla learners leave both as ``None``.
    """

    theta: np.ndarray
    u: np.ndarray
    theta_prev: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0
    rho_prev: float = 1.0


# ---------------------------------------------------------------------------
# Update directions
# ---------------------------------------------------------------------------

def _inner(a, b):
    if a.ndim == 1 and b.ndim == 1:
        return a @ b
    return np.einsum("...i,...i->...", a, b)[..., None]


def _column(x):
    if isinstance(x, float):
        return x
    x = np.asarray(x, dtype=float)
    return x[..., None] if x.ndim else x


def td_error(theta, trans, gamma):
    return _column(trans.r) + gamma * _inner(trans.phi_next, theta) - _inner(trans.phi, theta)


def _directions(algo, theta, u, trans, gamma):
    # theta and u directions sharing one TD error and one phi^T u
    phi, phi_next = trans.phi, trans.phi_next
    delta = td_error(theta, trans, gamma)
    phi_u = _inner(phi, u)
    if algo == "tdc":
        d_theta = delta * phi - gamma * phi_u * phi_next
    else:
        d_theta = phi_u * (phi - gamma * phi_next)
    if algo == "gtd":
        return d_theta, delta * phi - u
    return d_theta, (delta - phi_u) * phi


def _theta_direction(algo, theta, u, trans, gamma):
    return _directions(algo, theta, u, trans, gamma)[0]


def _u_direction(algo, theta, u, trans, gamma):
    return _directions(algo, theta, u, trans, gamma)[1]


def _check(theta, u, t):
    if theta.ndim == 1:
        sq, uu = float(theta @ theta), float(u @ u)
    else:
        sq = np.max(np.einsum("...i,...i->...", theta, theta))
        uu = float(np.sum(u * u))
    # uu is inf/nan whenever any entry of u is
    if not sq <= DIVERGENCE_NORM ** 2 or not math.isfinite(uu):
        raise DivergenceError(t, float(np.sqrt(sq)) if np.isfinite(sq) else math.inf)


def _check_algo(algo):
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")


# ---------------------------------------------------------------------------
# Steppers
# ---------------------------------------------------------------------------

def step_vanilla(algo: str, state: LearnerState, trans, steps: StepSizes,
                 gamma: float) -> LearnerState:
    _check_algo(algo)
    theta, u = state.theta, state.u
    d_theta, d_u = _directions(algo, theta, u, trans, gamma)
    theta_new = theta + steps.alpha * d_theta
    u_new = u + steps.beta * d_u
    _check(theta_new, u_new, state.t)
    return LearnerState(theta_new, u_new, t=state.t + 1)


def step_gtd(state, trans, steps, gamma):
    """One GTD update: ``theta += alpha (phi - gamma phi') phi^T u``, ``u += beta (delta phi - u)``."""
    return step_vanilla("gtd", state, trans, steps, gamma)


def step_gtd2(state, trans, steps, gamma):
    """One GTD2 update; the u-iterate tracks ``C^{-1} E[delta phi]``."""
    return step_vanilla("gtd2", state, trans, steps, gamma)


def step_tdc(state, trans, steps, gamma):
    """One TDC update: a TD(0) step corrected by ``-alpha gamma phi' phi^T u``."""
    return step_vanilla("tdc", state, trans, steps, gamma)


def step_momentum_two_form(algo: str, state: LearnerState, trans, steps: StepSizes,
                           gamma: float) -> LearnerState:
    """Heavy-ball step ``theta + alpha * dir + eta * (theta - theta_prev)``."""
    _check_algo(algo)
    theta, u = state.theta, state.u
    prev = theta if state.theta_prev is None else state.theta_prev
    d_theta, d_u = _directions(algo, theta, u, trans, gamma)
    theta_new = theta + steps.alpha * d_theta + steps.eta * (theta - prev)
    u_new = u + steps.beta * d_u
    _check(theta_new, u_new, state.t)
    return LearnerState(theta_new, u_new, theta_prev=theta, t=state.t + 1, rho_prev=steps.rho)


def step_momentum_three_form(algo: str, state: LearnerState, trans, steps: StepSizes,
                             gamma: float, w: float) -> LearnerState:
    """Decomposed momentum step on ``(v, u, theta)``.

    ``v += xi (dir - w v)``; ``theta += rho * v_new``. Using the updated ``v``
    in the theta step is what makes this form reproduce the two-iterate
    recursion exactly.
    """
    _check_algo(algo)
    theta, u = state.theta, state.u
    v = np.zeros_like(theta) if state.v is None else state.v
    d_theta, d_u = _directions(algo, theta, u, trans, gamma)
    v_new = v + steps.xi * (d_theta - w * v)
    u_new = u + steps.beta * d_u
    theta_new = theta + steps.rho * v_new
    _check(theta_new, u_new, state.t)
    return LearnerState(theta_new, u_new, v=v_new, t=state.t + 1, rho_prev=steps.rho)


class Learner:
    """A learner state bundled with its stepper and schedule."""

    def __init__(self, algo: str, form: str, spec: ScheduleSpec, state: LearnerState,
                 gamma: float):
        self.algo, self.form, self.spec = algo, form, spec
        self.state = state
        self.gamma = float(gamma)
        if form == "vanilla":
            self._step = lambda s, tr, st: step_vanilla(algo, s, tr, st, self.gamma)
        elif form == "two_form":
            self._step = lambda s, tr, st: step_momentum_two_form(algo, s, tr, st, self.gamma)
        else:
            w = float(spec.w)
            self._step = lambda s, tr, st: step_momentum_three_form(algo, s, tr, st, self.gamma, w)

    @property
    def theta(self) -> np.ndarray:
        return self.state.theta

    def step(self, trans) -> LearnerState:
        self.state = self._step(self.state, trans, schedule_at(self.spec, self.state.t))
        return self.state

    def run(self, transitions: Iterable, callback: Callable | None = None) -> LearnerState:
        for tr in transitions:
            self.step(tr)
            if callback is not None:
                callback(self.state)
        return self.state

    def __repr__(self):
        return f"Learner({self.algo!r}, {self.form!r}, t={self.state.t})"


def make_learner(algo: str, form: str, spec: ScheduleSpec, d: int, theta0=None, u0=None,
                 *, gamma: float, batch: tuple = ()) -> Learner:
    """Construct a learner with zero-initialised iterates unless given.

    ``batch`` prepends axes to every iterate, e.g. ``batch=(5,)`` runs five
    independent learners in lockstep.
    """
    _check_algo(algo)
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}; expected one of {FORMS}")
    if (form == "vanilla") != (spec.regime == "vanilla"):
        raise ValueError(f"form {form!r} is incompatible with regime {spec.regime!r}")
    shape = tuple(batch) + (d,)
    theta = np.zeros(shape) if theta0 is None else np.broadcast_to(np.asarray(theta0, float), shape).copy()
    u = np.zeros(shape) if u0 is None else np.broadcast_to(np.asarray(u0, float), shape).copy()
    state = LearnerState(theta, u)
    if form == "two_form":
        state.theta_prev = theta.copy()
    elif form == "three_form":
        state.v = np.zeros(shape)
    return Learner(algo, form, spec, state, gamma)


# ---------------------------------------------------------------------------
# Mean-field maps of the decomposed momentum iterates
# ---------------------------------------------------------------------------

def expected_directions(algo: str, model, w: float, v, u, theta):
    """Closed-form mean directions ``(h, g, f)`` of the ``(v, u, theta)`` iterates.

    ===== ============================================ ==================
    algo  h (v-iterate)                                g (u-iterate)
    ===== ============================================ ==================
    gtd   ``-A^T u - w v``                             ``A theta + b - u``
    gtd2  ``-A^T u - w v``                             ``A theta + b - C u``
    tdc   ``A theta + b - gamma E[phi' phi^T] u - w v`` ``A theta + b - C u``
    ===== ============================================ ==================

    ``f = v`` in every case.
    """
    _check_algo(algo)
    A, b, C = model.A_bar, model.b_bar, model.C_bar
    v, u, theta = (np.asarray(x, dtype=float) for x in (v, u, theta))
    if algo == "tdc":
        h = A @ theta + b - model.gamma * model.cross_bar @ u - w * v
    else:
        h = -A.T @ u - w * v
    g = A @ theta + b - (u if algo == "gtd" else C @ u)
    return h, g, v.copy()


def sampled_directions(algo: str, batch, gamma: float, w: float, v, u, theta):
    """Per-sample stochastic directions matching :func:`expected_directions`.

    ``batch`` holds N transitions; the returned arrays have shape (N, d).
    """
    _check_algo(algo)
    n = len(batch.phi)
    theta_b = np.broadcast_to(theta, (n, len(theta)))
    u_b = np.broadcast_to(u, (n, len(u)))
    h, g = _directions(algo, theta_b, u_b, batch, gamma)
    h = h - w * np.asarray(v)
    return h, g, np.broadcast_to(np.asarray(v, dtype=float), (n, len(v))).copy()
