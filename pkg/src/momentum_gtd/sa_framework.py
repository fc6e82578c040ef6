"""Stochastic-approximation machinery for the momentum iterates.

Two tools live here. The first is the stacked one-timescale system
``psi = (v, u, theta)`` with driving matrix ``G`` and a Hurwitz verifier. The
second is a generic three-timescale runner for iterates ``x`` (fastest),
``y`` and ``z`` (slowest) together with a mechanical check of the stability
and convergence conditions when the mean maps are linear-affine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .algorithms import DIVERGENCE_NORM, DivergenceError, ScheduleSpec, schedule_at
from .mdp import sample_iid_batch

__all__ = [
    "StackedSystem",
    "build_stacked",
    "is_hurwitz_eig",
    "hurwitz_sufficient",
    "AffineMap",
    "ThreeTSProblem",
    "ThreeTSResult",
    "Condition",
    "ConditionReport",
    "run_three_ts",
    "check_b_conditions",
    "momentum_problem",
    "momentum_problem_from_exponents",
    "IIDNoise",
    "HURWITZ_TOL",
]

HURWITZ_TOL = 1e-12


@dataclass(frozen=True)
class StackedSystem:
    G: np.ndarray
    g: np.ndarray
    w: float
    A_bar: np.ndarray

    @property
    def dim(self) -> int:
        return self.A_bar.shape[0]

    def fixed_point(self) -> np.ndarray:
        """Equilibrium ``-G^{-1} g`` of the mean ODE, stacked as ``(v, u, theta)``."""
        return -np.linalg.solve(self.G, self.g)

    def theta_block(self, psi: np.ndarray) -> np.ndarray:
        return psi[2 * self.dim:]


def build_stacked(model, w: float) -> StackedSystem:
    """Mean dynamics of GTD-M with all three step sizes equal.

    ``G = [[-w I, -A^T, 0], [0, -I, A], [I, 0, 0]]`` and ``g = (0, b, 0)``.
    """
    A = np.asarray(model.A_bar, dtype=float)
    d = A.shape[0]
    I, Z = np.eye(d), np.zeros((d, d))
    G = np.block([[-w * I, -A.T, Z],
                  [Z, -I, A],
                  [I, Z, Z]])
    g = np.concatenate([np.zeros(d), np.asarray(model.b_bar, dtype=float), np.zeros(d)])
    return StackedSystem(G, g, float(w), A)


def is_hurwitz_eig(G) -> tuple[bool, float]:
    """Return ``(max Re(eig) < -1e-12, max Re(eig))``."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {G.shape}")
    try:
        eig = np.linalg.eigvals(G)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigenvalue computation failed: {exc}") from exc
    top = float(np.max(eig.real))
    return top < -HURWITZ_TOL, top


def hurwitz_sufficient(A_bar, w: float) -> bool:
    """Sufficient condition ``w > 0`` and ``w (w + 1) > ||A||_2^2`` for a Hurwitz ``G``."""
    return bool(w > 0 and w * (w + 1) > np.linalg.norm(np.asarray(A_bar, float), 2) ** 2)


# ---------------------------------------------------------------------------
# Generic three-timescale iterates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineMap:
    """``m(x, y, z) = Mx x + My y + Mz z + offset``."""

    Mx: np.ndarray
    My: np.ndarray
    Mz: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        # zero blocks are skipped when evaluating; the maps here are sparse in blocks
        blocks = (self.Mx, self.My, self.Mz)
        object.__setattr__(self, "_live", tuple(i for i, M in enumerate(blocks) if np.any(M)))
        object.__setattr__(self, "_has_offset", bool(np.any(self.offset)))

    def __call__(self, x, y, z):
        args, blocks = (x, y, z), (self.Mx, self.My, self.Mz)
        out = self.offset if self._has_offset else 0.0
        for i in self._live:
            out = out + blocks[i] @ args[i]
        if isinstance(out, float):
            return np.zeros(self.Mx.shape[0])
        return out

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(np.hstack([self.Mx, self.My, self.Mz]), 2))


@dataclass
class ThreeTSProblem:
    """Three coupled SA iterates ``x``, ``y``, ``z`` with step sizes ``a``, ``b``, ``c``.

    ``h``, ``g``, ``f`` are the mean maps; use :class:`AffineMap` for problems
    whose conditions should be checked mechanically, any callable otherwise.
    ``noise(n, x, y, z)`` returns the martingale terms ``(M1, M2, M3)``.
    ``eps_fast(n, x, y, z)`` returns ``(e1, e2)`` and ``eps_slow(n, x, y, z,
    x_next, y_next)`` returns ``e3``; the slow perturbation may depend on the
    freshly updated fast iterates.
    """

    dims: tuple[int, int, int]
    h: Callable
    g: Callable
    f: Callable
    a: Callable[[int], float]
    b: Callable[[int], float]
    c: Callable[[int], float]
    noise: Callable | None = None
    eps_fast: Callable | None = None
    eps_slow: Callable | None = None
    x0: np.ndarray | None = None
    y0: np.ndarray | None = None
    z0: np.ndarray | None = None
    equilibrium: tuple | None = None
    name: str = ""

    def initial(self):
        dx, dy, dz = self.dims
        pick = lambda v, k: np.zeros(k) if v is None else np.array(v, dtype=float)
        return pick(self.x0, dx), pick(self.y0, dy), pick(self.z0, dz)

    @property
    def affine(self) -> bool:
        return all(isinstance(m, AffineMap) for m in (self.h, self.g, self.f))


@dataclass
class ThreeTSResult:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    checkpoints: np.ndarray
    z_trace: np.ndarray
    sup_norm: float
    ratio_ba: np.ndarray
    ratio_cb: np.ndarray
    eps_norms: np.ndarray
    distance: tuple | None = None

    def ratio_trend(self) -> dict:
        """Whether both step-size ratios are nonincreasing and shrink over the run."""
        out = {}
        for key, r in (("b/a", self.ratio_ba), ("c/b", self.ratio_cb)):
            out[key] = bool(len(r) > 1 and np.all(np.diff(r) <= 1e-15) and r[-1] < r[0])
        return out


def run_three_ts(problem: ThreeTSProblem, n_steps: int, rng: np.random.Generator | None = None,
                 n_checkpoints: int = 50) -> ThreeTSResult:
    """Advance the three iterates for ``n_steps`` steps.

    Records the running sup-norm of ``(x, y, z)``, ``z`` and both step-size
    ratios at log-spaced checkpoints, and the distance to the declared
    equilibrium at the end.
    """
    x, y, z = problem.initial()
    checkpoints = np.unique(np.geomspace(1, max(n_steps, 1), n_checkpoints).astype(int))
    want = set(checkpoints.tolist())
    z_trace, r_ba, r_cb, eps_norms = [], [], [], []
    sup = float(np.linalg.norm(x) + np.linalg.norm(y) + np.linalg.norm(z))
    advance = _affine_stepper(problem, x, y, z) if problem.affine else _generic_stepper(problem)
    for n in range(n_steps):
        x, y, z, e = advance(n, x, y, z)
        nx, ny, nz = math.sqrt(x @ x), math.sqrt(y @ y), math.sqrt(z @ z)
        # each iterate is guarded on its own, like theta in the learners
        if not max(nx, ny, nz) <= DIVERGENCE_NORM:
            raise DivergenceError(n, max(nx, ny, nz))
        sup = max(sup, nx + ny + nz)
        if n + 1 in want:
            z_trace.append(z.copy())
            r_ba.append(problem.b(n) / problem.a(n))
            r_cb.append(problem.c(n) / problem.b(n))
            eps_norms.append(float(sum(np.linalg.norm(t) for t in e)))
    x, y, z = x.copy(), y.copy(), z.copy()
    distance = None
    if problem.equilibrium is not None:
        distance = tuple(float(np.linalg.norm(p - q)) for p, q in zip((x, y, z), problem.equilibrium))
    return ThreeTSResult(x, y, z, checkpoints[:len(z_trace)], np.array(z_trace), sup,
                         np.array(r_ba), np.array(r_cb), np.array(eps_norms), distance)


_NO_EPS = (0.0, 0.0, 0.0)


def _generic_stepper(problem):
    def advance(n, x, y, z):
        a, b, c = problem.a(n), problem.b(n), problem.c(n)
        m1, m2, m3 = problem.noise(n, x, y, z) if problem.noise is not None else _NO_EPS
        e1, e2 = problem.eps_fast(n, x, y, z) if problem.eps_fast is not None else _NO_EPS[:2]
        x_next = x + a * (problem.h(x, y, z) + m1 + e1)
        y_next = y + b * (problem.g(x, y, z) + m2 + e2)
        e3 = problem.eps_slow(n, x, y, z, x_next, y_next) if problem.eps_slow is not None else 0.0
        z_next = z + c * (problem.f(x, y, z) + m3 + e3)
        return x_next, y_next, z_next, (e1, e2, e3)
    return advance


def _affine_stepper(problem, x0, y0, z0):
    # all three maps as one stacked matrix acting on (x, y, z): a single matmul per step
    h, g, f = problem.h, problem.g, problem.f
    M = np.block([[h.Mx, h.My, h.Mz], [g.Mx, g.My, g.Mz], [f.Mx, f.My, f.Mz]])
    off = np.concatenate([h.offset, g.offset, f.offset])
    i, j = len(x0), len(x0) + len(y0)
    s = np.concatenate([x0, y0, z0])
    steps, buf = np.empty_like(s), np.empty_like(s)

    def advance(n, x, y, z):
        nonlocal s
        a, b, c = problem.a(n), problem.b(n), problem.c(n)
        drift = M @ s + off
        if problem.noise is not None:
            buf[:i], buf[i:j], buf[j:] = problem.noise(n, s[:i], s[i:j], s[j:])
            drift += buf
        e1 = e2 = e3 = 0.0
        if problem.eps_fast is not None:
            e1, e2 = problem.eps_fast(n, s[:i], s[i:j], s[j:])
            drift[:i] += e1
            drift[i:j] += e2
        steps[:i], steps[i:j], steps[j:] = a, b, c
        s_next = s + steps * drift
        if problem.eps_slow is not None:
            e3 = problem.eps_slow(n, s[:i], s[i:j], s[j:], s_next[:i], s_next[i:j])
            s_next[j:] += c * e3
        s = s_next
        return s[:i], s[i:j], s[j:], (e1, e2, e3)
    return advance


# ---------------------------------------------------------------------------
# Condition checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Condition:
    name: str
    verdict: str  # PASS, FAIL, WARN or UNCHECKABLE
    witness: str

    @property
    def ok(self) -> bool:
        return self.verdict in ("PASS", "WARN")

    def line(self) -> str:
        return f"{self.name:<8} {self.verdict:<11} {self.witness}"


@dataclass
class ConditionReport:
    conditions: list[Condition] = field(default_factory=list)
    matrices: dict = field(default_factory=dict)
    equilibria: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.conditions)

    def __getitem__(self, name) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def text(self) -> str:
        return "\n".join(c.line() for c in self.conditions)


def _decay_exponent(seq, n1, n2):
    return -math.log(seq(n2) / seq(n1)) / math.log((n2 + 1) / (n1 + 1))


def _max_real(M):
    return float(np.max(np.linalg.eigvals(M).real))


def _hurwitz_condition(name, M, what):
    top = _max_real(M)
    verdict = "PASS" if top < -HURWITZ_TOL else "FAIL"
    return Condition(name, verdict, f"{what}: max Re(eig) = {top:.6g}")


def _check_b2(problem, horizon):
    seqs = {"a": problem.a, "b": problem.b, "c": problem.c}
    probes = np.unique(np.geomspace(1, horizon, 40).astype(int))
    vals = {k: np.array([s(int(n)) for n in probes]) for k, s in seqs.items()}
    if any(np.any(v <= 0) for v in vals.values()):
        return Condition("B2", "FAIL", "step sizes must be positive")
    problems = []
    for num, den in (("b", "a"), ("c", "b")):
        r = vals[num] / vals[den]
        if not (np.all(np.diff(r) <= 1e-15) and r[-1] < r[0] * (1 - 1e-9)):
            problems.append(f"{num}/{den} does not decrease to 0 ({r[0]:.3g} -> {r[-1]:.3g})")
    n1, n2 = max(horizon // 10, 1), horizon
    exps = {k: _decay_exponent(s, n1, n2) for k, s in seqs.items()}
    for k, p in exps.items():
        if p > 1 + 1e-9:
            problems.append(f"sum {k}(n) converges (decay exponent {p:.3g} > 1)")
    witness = ", ".join(f"{k}~n^-{p:.4g}" for k, p in exps.items())
    ratios = (f"b/a {vals['b'][-1] / vals['a'][-1]:.3g}, c/b {vals['c'][-1] / vals['b'][-1]:.3g} "
              f"at n={horizon}")
    if problems:
        return Condition("B2", "FAIL", "; ".join(problems))
    not_sq = [k for k, p in exps.items() if p <= 0.5 + 1e-9]
    if not_sq:
        return Condition("B2", "WARN", f"{witness}; {ratios}; not square summable: {','.join(not_sq)}")
    return Condition("B2", "PASS", f"{witness}; {ratios}")


def _check_b3(problem, rng, n_samples=2000, n_points=3):
    pieces = []
    if problem.noise is not None:
        rng = np.random.default_rng(0) if rng is None else rng
        worst = 0.0
        for _ in range(n_points):
            pts = [rng.standard_normal(k) for k in problem.dims]
            draws = [problem.noise(10**6, *pts) for _ in range(n_samples)]
            for i in range(3):
                arr = np.array([np.broadcast_to(dr[i], (problem.dims[i],)) for dr in draws], float)
                se = arr.std(axis=0, ddof=1) / math.sqrt(n_samples)
                z = np.abs(arr.mean(axis=0)) / np.where(se > 0, se, np.inf)
                worst = max(worst, float(np.max(z, initial=0.0)))
        if worst > 5.0:
            return Condition("B3", "FAIL", f"noise mean is {worst:.2f} standard errors from 0")
        pieces.append(f"noise mean within {worst:.2f} standard errors of 0")
    else:
        pieces.append("no noise")
    pieces.append("perturbations " + ("present, decay monitored during runs"
                                      if problem.eps_fast or problem.eps_slow else "absent"))
    return Condition("B3", "PASS", "; ".join(pieces))


def check_b_conditions(problem: ThreeTSProblem, horizon: int = 10**6,
                       rng: np.random.Generator | None = None) -> ConditionReport:
    """Verify the three-timescale stability and convergence conditions.

    Every condition past the step-size checks needs linear-affine mean maps;
    otherwise those conditions are reported as ``UNCHECKABLE``. For affine
    maps the equilibria are solved in closed form:

    * fastest: ``x = lam(y, z) = Lx_y y + Lx_z z + lx``, needs ``Hx`` Hurwitz;
    * middle: ``y = Gam(z)``, needs ``Gx Lx_y + Gy`` Hurwitz;
    * slowest: ``z*``, needs the reduced ``z`` matrix Hurwitz.

    The scaled limits drop the offsets, which leaves the same three matrices
    and zero equilibria, so B5-B7 reduce to the same Hurwitz tests.
    """
    report = ConditionReport()
    add = report.conditions.append
    if not problem.affine:
        add(Condition("B1", "UNCHECKABLE", "mean maps are not linear-affine"))
        add(_check_b2(problem, horizon))
        for name in ("B3", "B4(i)", "B4(ii)", "B4(iii)", "B5", "B6", "B7"):
            add(Condition(name, "UNCHECKABLE", "mean maps are not linear-affine"))
        return report

    h, g, f = problem.h, problem.g, problem.f
    add(Condition("B1", "PASS", f"L1={h.lipschitz:.6g} L2={g.lipschitz:.6g} L3={f.lipschitz:.6g}"))
    add(_check_b2(problem, horizon))
    add(_check_b3(problem, rng))

    inv = lambda M: np.linalg.inv(M)
    c = _hurwitz_condition("B4(i)", h.Mx, "dx/dt matrix")
    add(c)
    if not c.ok:
        for name in ("B4(ii)", "B4(iii)", "B5", "B6", "B7"):
            add(Condition(name, "FAIL", "fastest ODE has no globally stable equilibrium"))
        return report
    Hx_inv = inv(h.Mx)
    Lxy, Lxz, lx = -Hx_inv @ h.My, -Hx_inv @ h.Mz, -Hx_inv @ h.offset

    My_red = g.Mx @ Lxy + g.My
    c = _hurwitz_condition("B4(ii)", My_red, "dy/dt matrix")
    add(c)
    if not c.ok:
        for name in ("B4(iii)", "B5", "B6", "B7"):
            add(Condition(name, "FAIL", "middle ODE has no globally stable equilibrium"))
        return report
    My_inv = inv(My_red)
    Gz = -My_inv @ (g.Mx @ Lxz + g.Mz)
    gz = -My_inv @ (g.Mx @ lx + g.offset)

    # z-dynamics after substituting y = Gam(z) and x = lam(Gam(z), z)
    lam_z = Lxy @ Gz + Lxz
    lam_0 = Lxy @ gz + lx
    Mz_red = f.Mx @ lam_z + f.My @ Gz + f.Mz
    mz = f.Mx @ lam_0 + f.My @ gz + f.offset
    top = _max_real(Mz_red)
    nd = float(np.max(np.linalg.eigvalsh(0.5 * (Mz_red + Mz_red.T))))
    verdict = "PASS" if top < -HURWITZ_TOL else "FAIL"
    add(Condition("B4(iii)", verdict,
                  f"dz/dt matrix: max Re(eig) = {top:.6g}; symmetric part max eig = {nd:.6g} "
                  f"({'negative definite' if nd < 0 else 'not negative definite'})"))
    report.matrices.update(Hx=h.Mx, y_matrix=My_red, z_matrix=Mz_red)
    if verdict == "PASS":
        z_star = -np.linalg.solve(Mz_red, mz)
        y_star = Gz @ z_star + gz
        x_star = Lxy @ y_star + Lxz @ z_star + lx
        report.equilibria.update(x=x_star, y=y_star, z=z_star)

    for name, M, what in (("B5", h.Mx, "scaled dx/dt matrix"),
                          ("B6", My_red, "scaled dy/dt matrix"),
                          ("B7", Mz_red, "scaled dz/dt matrix")):
        cond = _hurwitz_condition(name, M, what)
        add(Condition(name, cond.verdict, cond.witness + "; equilibrium at origin"))
    return report


# ---------------------------------------------------------------------------
# Momentum Gradient TD as a three-timescale problem
# ---------------------------------------------------------------------------

class IIDNoise:
    """Martingale noise of a momentum learner under i.i.d. stationary sampling.

    Each call draws one transition (buffered in blocks) and returns the
    sampled directions minus their means at the current iterates.
    """

    def __init__(self, algo, model, mdp, policy, features, rng, w, block=65536):
        self.algo, self.model, self.w = algo, model, w
        self._env = (mdp, policy, features)
        self.rng = rng
        self.block = block
        self._buf = None
        self._i = block

    def _next(self):
        if self._i >= self.block:
            b = sample_iid_batch(self.model, *self._env, self.rng, self.block)
            self._buf = (b.r, b.phi, b.phi_next)
            self._i = 0
        r, phi, phi_next = (a[self._i] for a in self._buf)
        self._i += 1
        return r, phi, phi_next

    def __call__(self, n, v, u, theta):
        r, phi, phi_next = self._next()
        m, gamma = self.model, self.model.gamma
        # rank-one sample matrices applied through inner products:
        # A_t = phi (gamma phi' - phi)^T, C_t = phi phi^T, cross_t = phi' phi^T
        diff = gamma * phi_next - phi
        phi_u = phi @ u
        m2 = phi * (diff @ theta + r) - m.A_bar @ theta - m.b_bar
        if self.algo == "tdc":
            m1 = m2 + gamma * (m.cross_bar @ u - phi_next * phi_u)
        else:
            m1 = m.A_bar.T @ u - diff * phi_u
        if self.algo == "gtd":
            return m1, m2, 0.0
        return m1, m2 + m.C_bar @ u - phi * phi_u, 0.0


class _LastStep:
    # a, b and c are queried at the same n in turn; compute the schedule once
    def __init__(self, spec):
        self.spec, self.n, self.steps = spec, None, None

    def __call__(self, n):
        if n != self.n:
            self.n, self.steps = n, schedule_at(self.spec, n)
        return self.steps


def _momentum_maps(algo, model, w):
    A, b, C = model.A_bar, model.b_bar, model.C_bar
    d = A.shape[0]
    I, Z, z0 = np.eye(d), np.zeros((d, d)), np.zeros(d)
    if algo == "tdc":
        h = AffineMap(-w * I, -model.gamma * model.cross_bar, A.copy(), b.copy())
    elif algo in ("gtd", "gtd2"):
        h = AffineMap(-w * I, -A.T, Z, z0)
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    g = AffineMap(Z, -I if algo == "gtd" else -C, A.copy(), b.copy())
    f = AffineMap(I, Z, Z, z0)
    return h, g, f


def _problem(algo, model, w, a, b, c, env, rng, name):
    w = float(w)
    h, g, f = _momentum_maps(algo, model, w)
    d = model.A_bar.shape[0]
    noise = None
    if env is not None:
        noise = IIDNoise(algo, model, *env, np.random.default_rng() if rng is None else rng, w)
    theta_star = model.theta_star
    # u tracks E[delta phi] (GTD) or C^{-1} E[delta phi]; both vanish at theta*
    u_star = np.zeros(d)
    return ThreeTSProblem(
        dims=(d, d, d), h=h, g=g, f=f, a=a, b=b, c=c,
        noise=noise,
        eps_slow=lambda n, x, y, z, x_next, y_next: x_next - x,
        equilibrium=(np.zeros(d), u_star, theta_star.copy()),
        name=name,
    )


def momentum_problem(algo: str, model, spec: ScheduleSpec, *, env=None,
                     rng: np.random.Generator | None = None) -> ThreeTSProblem:
    """Express a momentum learner in ``(x, y, z) = (v, u, theta)`` coordinates.

    ``a, b, c = xi, beta, rho``. The slow iterate is driven by ``v`` plus the
    perturbation ``v_next - v``, so a run reproduces the three-iterate learner.
    ``env = (mdp, policy, features)`` enables i.i.d. sampling noise.
    """
    if spec.regime == "vanilla":
        raise ValueError("momentum problems need a one_ts or three_ts schedule")
    sched = _LastStep(spec)
    return _problem(algo, model, spec.w,
                    lambda n: sched(n).xi, lambda n: sched(n).beta, lambda n: sched(n).rho,
                    env, rng, f"{algo}-m/{spec.regime}")


def momentum_problem_from_exponents(algo: str, model, w: float, xi_exp: float,
                                    beta_exp: float, rho_exp: float, *, env=None,
                                    rng: np.random.Generator | None = None) -> ThreeTSProblem:
    """Like :func:`momentum_problem` with ``a, b, c = (n+1)^-xi, (n+1)^-beta, (n+1)^-rho``.

    No ordering or sign checks are made here, so the condition checker can
    report on schedules that :class:`ScheduleSpec` would reject.
    """
    return _problem(algo, model, w,
                    lambda n: (n + 1.0) ** -xi_exp, lambda n: (n + 1.0) ** -beta_exp,
                    lambda n: (n + 1.0) ** -rho_exp, env, rng,
                    f"{algo}-m/exponents({xi_exp:g},{beta_exp:g},{rho_exp:g})")
