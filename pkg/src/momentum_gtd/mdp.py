"""Tabular benchmark environments, feature maps and transition samplers.

Four constructions are provided: the Boyan chain, the 5- and 19-state random
walks, and a seeded random MDP. Episodic chains keep their terminal states in
the kernel as zero-reward self loops; the restart-augmented chain used for the
stationary distribution sends terminal states back to the start distribution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "TabularMDP",
    "Policy",
    "FeatureMap",
    "Transition",
    "TransitionBatch",
    "Episode",
    "build_boyan_chain",
    "build_random_walk",
    "build_random_mdp",
    "dependent_features",
    "uniform_policy",
    "policy_matrix",
    "sample_episode",
    "sample_iid",
    "sample_iid_batch",
    "build_environment",
    "parse_environment",
    "dump_mdp",
    "ENVIRONMENTS",
]

_PROB_TOL = 1e-12
MAX_EPISODE_STEPS = 10**6


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP with a dense kernel ``transition[s, a, s']``.

    ``reward[s, a, s']`` is the expected reward of that transition. Terminal
    states must self-loop with zero reward.
    """

    transition: np.ndarray
    reward: np.ndarray
    terminal: np.ndarray
    gamma: float
    start_distribution: np.ndarray
    name: str = ""

    def __post_init__(self):
        P = _readonly(self.transition)
        R = _readonly(self.reward)
        term = _readonly(self.terminal, dtype=bool)
        mu = _readonly(self.start_distribution)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "terminal", term)
        object.__setattr__(self, "start_distribution", mu)
        object.__setattr__(self, "gamma", float(self.gamma))

        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        n, k, _ = P.shape
        if R.shape != P.shape:
            raise ValueError(f"reward shape {R.shape} != transition shape {P.shape}")
        if term.shape != (n,) or mu.shape != (n,):
            raise ValueError("terminal and start_distribution must have length n_states")
        if np.any(P < 0) or np.any(mu < 0):
            raise ValueError("probabilities must be nonnegative")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > _PROB_TOL:
            raise ValueError("transition rows must sum to 1")
        if abs(mu.sum() - 1.0) > _PROB_TOL:
            raise ValueError("start_distribution must sum to 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        for s in np.flatnonzero(term):
            if np.any(P[s, :, s] != 1.0) or np.any(R[s] != 0.0):
                raise ValueError(f"terminal state {s} must self-loop with reward 0")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class Policy:
    probs: np.ndarray

    def __post_init__(self):
        p = _readonly(self.probs)
        object.__setattr__(self, "probs", p)
        if p.ndim != 2:
            raise ValueError("policy probs must be a (S, A) array")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0)) > _PROB_TOL:
            raise ValueError("policy rows must be probability vectors")


@dataclass(frozen=True)
class FeatureMap:
    """Row ``s`` of ``phi`` is the feature vector of state ``s``."""

    phi: np.ndarray

    def __post_init__(self):
        phi = _readonly(self.phi)
        object.__setattr__(self, "phi", phi)
        if phi.ndim != 2:
            raise ValueError("phi must be a (S, d) array")
        norms = np.linalg.norm(phi, axis=1)
        if np.any(norms > 1.0 + 1e-12):
            raise ValueError(f"feature rows must have norm <= 1, max is {norms.max()}")
        if np.linalg.matrix_rank(phi) != phi.shape[1]:
            raise ValueError("feature matrix must have full column rank")

    @property
    def dim(self) -> int:
        return self.phi.shape[1]


@dataclass(frozen=True)
class Transition:
    s: int
    a: int
    r: float
    s_next: int
    done: bool
    phi: np.ndarray
    phi_next: np.ndarray


@dataclass(frozen=True)
class TransitionBatch:
    """Column-stacked transitions; feature arrays have shape (N, d)."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    phi: np.ndarray
    phi_next: np.ndarray

    def __len__(self):
        return len(self.s)

    def __getitem__(self, i) -> Transition:
        return Transition(int(self.s[i]), int(self.a[i]), float(self.r[i]),
                          int(self.s_next[i]), bool(self.done[i]),
                          self.phi[i], self.phi_next[i])


@dataclass
class Episode(Sequence):
    transitions: list = field(default_factory=list)
    truncated: bool = False

    def __len__(self):
        return len(self.transitions)

    def __getitem__(self, i):
        return self.transitions[i]

    def __iter__(self) -> Iterator[Transition]:
        return iter(self.transitions)


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def uniform_policy(n_states: int, n_actions: int = 1) -> Policy:
    return Policy(np.full((n_states, n_actions), 1.0 / n_actions))


def _spiked_features(n_live: int, n_total: int) -> np.ndarray:
    # Anchors evenly spread over the live states; rows between two anchors
    # interpolate linearly. Rows past n_live (absorbing states) stay zero.
    d = min(4, n_live)
    anchors = np.rint(np.linspace(0, n_live - 1, d)).astype(int)
    phi = np.zeros((n_total, d))
    for k in range(d - 1):
        lo, hi = anchors[k], anchors[k + 1]
        for s in range(lo, hi + 1):
            frac = (s - lo) / (hi - lo)
            phi[s, k] = 1.0 - frac
            phi[s, k + 1] = frac
    if d == 1:
        phi[0, 0] = 1.0
    return phi


def build_boyan_chain(n_states: int = 14) -> tuple[TabularMDP, FeatureMap]:
    """Boyan chain with ``n_states - 1`` live states and one absorbing state.

    From live state ``s`` the chain moves to ``s+1`` or ``s+2`` with probability
    1/2 each for reward -3. The last live state moves to the absorbing state
    with probability 1 for reward -2. The episode starts in state 0.
    """
    if n_states < 4:
        raise ValueError(f"Boyan chain needs at least 4 states, got {n_states}")
    n = n_states
    end = n - 1
    P = np.zeros((n, 1, n))
    R = np.zeros((n, 1, n))
    for s in range(end - 1):
        P[s, 0, s + 1] = P[s, 0, s + 2] = 0.5
        R[s, 0, s + 1] = R[s, 0, s + 2] = -3.0
    P[end - 1, 0, end] = 1.0
    R[end - 1, 0, end] = -2.0
    P[end, 0, end] = 1.0
    terminal = np.zeros(n, dtype=bool)
    terminal[end] = True
    start = np.zeros(n)
    start[0] = 1.0
    mdp = TabularMDP(P, R, terminal, 0.95, start, name=f"boyan{n}")
    return mdp, FeatureMap(_spiked_features(n - 1, n))


def dependent_features(n_live: int) -> np.ndarray:
    """Overlapping unit-norm ramp features for an odd number of live states.

    With ``d = (n_live + 1) // 2``, live state ``i`` switches on the coordinates
    ``max(0, i - d + 1) .. min(i, d - 1)``; the row is then normalised.
    """
    d = (n_live + 1) // 2
    phi = np.zeros((n_live, d))
    for i in range(n_live):
        lo, hi = max(0, i - d + 1), min(i, d - 1)
        phi[i, lo:hi + 1] = 1.0 / np.sqrt(hi - lo + 1)
    return phi


def build_random_walk(n_states: int = 5, left_reward: float = 0.0,
                      right_reward: float = 1.0) -> tuple[TabularMDP, FeatureMap]:
    """Undiscounted random walk over ``n_states`` live states.

    The kernel has ``n_states + 2`` states: index 0 and ``n_states + 1`` are the
    left and right terminal states, indices ``1..n_states`` are the live states.
    Every episode starts in the centre live state.
    """
    if n_states < 3 or n_states % 2 == 0:
        raise ValueError(f"random walk needs an odd number (>= 3) of states, got {n_states}")
    n = n_states + 2
    P = np.zeros((n, 1, n))
    R = np.zeros((n, 1, n))
    for s in range(1, n - 1):
        P[s, 0, s - 1] = P[s, 0, s + 1] = 0.5
    R[1, 0, 0] = left_reward
    R[n - 2, 0, n - 1] = right_reward
    for s in (0, n - 1):
        P[s, 0, s] = 1.0
    terminal = np.zeros(n, dtype=bool)
    terminal[[0, n - 1]] = True
    start = np.zeros(n)
    start[(n - 1) // 2] = 1.0
    phi = np.zeros((n, (n_states + 1) // 2))
    phi[1:-1] = dependent_features(n_states)
    mdp = TabularMDP(P, R, terminal, 1.0, start, name=f"rw{n_states}")
    return mdp, FeatureMap(phi)


def build_random_mdp(seed: int = 0, n_states: int = 20, n_actions: int = 5,
                     n_features: int = 10, additive: float = 1e-5,
                     gamma: float = 0.95) -> tuple[TabularMDP, Policy, FeatureMap]:
    """Seeded random MDP with "linear random" features.

    Kernel, policy and start distribution are uniform draws plus ``additive``,
    normalised; rewards are uniform on [0, 1]. Features have a constant 1 in the
    last coordinate and uniform [0, 10] entries elsewhere, each row scaled to
    unit length.
    """
    if n_states <= 0 or n_actions <= 0 or n_features <= 0:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    P = rng.uniform(0.0, 1.0, (n_states, n_actions, n_states)) + additive
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(0.0, 1.0, (n_states, n_actions, n_states))
    pi = rng.uniform(0.0, 1.0, (n_states, n_actions)) + additive
    pi /= pi.sum(axis=1, keepdims=True)
    mu = rng.uniform(0.0, 1.0, n_states) + additive
    mu /= mu.sum()
    phi = np.ones((n_states, n_features))
    phi[:, :-1] = rng.uniform(0.0, 10.0, (n_states, n_features - 1))
    phi /= np.linalg.norm(phi, axis=1, keepdims=True)
    terminal = np.zeros(n_states, dtype=bool)
    mdp = TabularMDP(P, R, terminal, gamma, mu,
                     name=f"randmdp({seed},{n_states},{n_actions})")
    return mdp, Policy(pi), FeatureMap(phi)


ENVIRONMENTS = ("boyan14", "rw5", "rw19", "randmdp(seed,n,k)")


def parse_environment(spec: str) -> tuple[str, tuple]:
    """Split ``"randmdp(3,20,5)"`` into ``("randmdp", (3, 20, 5))``."""
    spec = spec.strip().lower()
    if "(" in spec:
        if not spec.endswith(")"):
            raise ValueError(f"malformed environment spec {spec!r}")
        name, args = spec[:-1].split("(", 1)
        params = tuple(int(x) for x in args.split(",") if x.strip())
    else:
        name, params = spec, ()
    return name, params


def build_environment(spec: str) -> tuple[TabularMDP, Policy, FeatureMap]:
    """Build a named environment: ``boyan14``, ``rw5``, ``rw19`` or ``randmdp(seed,n,k)``."""
    name, params = parse_environment(spec)
    if name.startswith("boyan") and not params:
        n = int(name[5:] or 14)
        mdp, feats = build_boyan_chain(n)
    elif name == "rw5" and not params:
        mdp, feats = build_random_walk(5, 0.0, 1.0)
    elif name == "rw19" and not params:
        mdp, feats = build_random_walk(19, -1.0, 1.0)
    elif name == "randmdp":
        if len(params) > 3:
            raise ValueError("randmdp takes at most (seed, n_states, n_actions)")
        return build_random_mdp(*params)
    else:
        raise ValueError(f"unknown environment {spec!r}; expected one of {', '.join(ENVIRONMENTS)}")
    return mdp, uniform_policy(mdp.n_states, mdp.n_actions), feats


def policy_matrix(mdp: TabularMDP, policy: Policy, restart: bool = False) -> np.ndarray:
    """Induced state chain ``P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)``.

    With ``restart=True`` rows of terminal states are replaced by the start
    distribution, which makes episodic chains recurrent.
    """
    P_pi = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    if restart:
        P_pi[mdp.terminal] = mdp.start_distribution
    return P_pi


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _cumulative(p: np.ndarray) -> np.ndarray:
    c = np.cumsum(p, axis=-1)
    c /= c[..., -1:]
    c[..., -1] = 1.0
    return c


def sample_episode(mdp: TabularMDP, policy: Policy, features: FeatureMap,
                   rng: np.random.Generator,
                   max_steps: int = MAX_EPISODE_STEPS) -> Episode:
    """Roll out one episode from the start distribution.

    Stops on entering a terminal state or after ``max_steps`` transitions, in
    which case ``truncated`` is set.
    """
    pi_cum = _cumulative(policy.probs)
    P_cum = _cumulative(mdp.transition)
    mu_cum = _cumulative(mdp.start_distribution)
    phi, terminal, R = features.phi, mdp.terminal, mdp.reward
    zero = np.zeros(features.dim)
    zero.setflags(write=False)

    s = int(np.searchsorted(mu_cum, rng.random(), side="right"))
    out = []
    if terminal[s]:
        return Episode(out, False)
    for _ in range(max_steps):
        u1, u2 = rng.random(2)
        a = int(np.searchsorted(pi_cum[s], u1, side="right"))
        s2 = int(np.searchsorted(P_cum[s, a], u2, side="right"))
        done = bool(terminal[s2])
        out.append(Transition(s, a, float(R[s, a, s2]), s2, done, phi[s],
                              zero if done else phi[s2]))
        if done:
            return Episode(out, False)
        s = s2
    return Episode(out, True)


def sample_iid_batch(model, mdp: TabularMDP, policy: Policy, features: FeatureMap,
                     rng: np.random.Generator, size: int) -> TransitionBatch:
    """Draw ``size`` independent transitions with ``s`` from the stationary distribution."""
    d_pi = getattr(model, "d_pi", model)
    if d_pi is None:
        raise ValueError("stationary distribution has not been computed")
    d_pi = np.asarray(d_pi, dtype=float)
    u = rng.random((3, size))
    s = np.searchsorted(_cumulative(d_pi), u[0], side="right")
    pi_cum = _cumulative(policy.probs)[s]
    a = (pi_cum <= u[1][:, None]).sum(axis=1)
    P_cum = _cumulative(mdp.transition)[s, a]
    s2 = (P_cum <= u[2][:, None]).sum(axis=1)
    # guard against rounding pushing an index past the last support point
    a = np.minimum(a, mdp.n_actions - 1)
    s2 = np.minimum(s2, mdp.n_states - 1)
    done = mdp.terminal[s2]
    phi_next = features.phi[s2].copy()
    phi_next[done] = 0.0
    return TransitionBatch(s, a, mdp.reward[s, a, s2], s2, done,
                           features.phi[s], phi_next)


def sample_iid(model, mdp: TabularMDP, policy: Policy, features: FeatureMap,
               rng: np.random.Generator) -> Transition:
    return sample_iid_batch(model, mdp, policy, features, rng, 1)[0]


def dump_mdp(mdp: TabularMDP, path=None) -> str:
    """Plain-text kernel dump, one ``s a s' p r`` line per reachable triple."""
    lines = [f"# {mdp.name} n_states={mdp.n_states} n_actions={mdp.n_actions} gamma={float(mdp.gamma)!r}"]
    for s, a, t in zip(*np.nonzero(mdp.transition)):
        lines.append(f"{s} {a} {t} {mdp.transition[s, a, t]:.17g} {mdp.reward[s, a, t]:.17g}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
