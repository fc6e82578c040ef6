"""Exact model quantities for linear policy evaluation.

Everything here is computed in closed form from the tabular MDP: the
stationary distribution of the (restart-augmented) policy chain, the expected
TD matrices and the TD fixed point, and the MSPBE / NEU objectives.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .mdp import FeatureMap, Policy, TabularMDP, policy_matrix

__all__ = [
    "ModelMatrices",
    "ModelError",
    "stationary_distribution",
    "compute_model",
    "mspbe",
    "rmspbe",
    "neu",
    "mspbe_gradient",
    "dump_model",
    "load_model_dump",
]


class ModelError(ArithmeticError):
    """Raised when an exact model quantity does not exist or cannot be computed."""


@dataclass(frozen=True)
class ModelMatrices:
    """Expected TD quantities under the stationary distribution.

    ``A_bar = E[phi (gamma phi' - phi)^T]``, ``b_bar = E[r phi]``,
    ``C_bar = E[phi phi^T]`` and ``cross_bar = E[phi' phi^T]`` (the extra
    expectation needed by the TDC correction term).
    """

    A_bar: np.ndarray
    b_bar: np.ndarray
    C_bar: np.ndarray
    cross_bar: np.ndarray
    d_pi: np.ndarray
    theta_star: np.ndarray
    gamma: float

    def __post_init__(self):
        for name in ("A_bar", "b_bar", "C_bar", "cross_bar", "d_pi", "theta_star"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.d_pi)

    @property
    def dim(self) -> int:
        return self.A_bar.shape[0]


def _closed_classes(P: np.ndarray) -> int:
    # Count strongly connected components with no edge leaving them; a unique
    # stationary distribution exists iff there is exactly one.
    adj = P > 0
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    leaving = np.zeros(n_comp, dtype=bool)
    src, dst = np.nonzero(adj)
    np.logical_or.at(leaving, labels[src], labels[src] != labels[dst])
    return int(np.sum(~leaving))


def stationary_distribution(P_pi: np.ndarray, tol: float = 1e-12,
                            max_iter: int = 10**6) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix by power iteration.

    Iterates with the lazy chain ``(I + P) / 2``, which has the same stationary
    distribution and converges for periodic chains as well (the 5-state random
    walk with restart has period 2).

    Raises
    ------
    ModelError
        If the chain has more than one closed class, or the residual
        ``||d P - d||_1`` is still above ``tol`` after ``max_iter`` sweeps.
    """
    P = np.asarray(P_pi, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n) or np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1)) > 1e-12:
        raise ValueError("P_pi must be a square row-stochastic matrix")
    n_closed = _closed_classes(P)
    if n_closed != 1:
        raise ModelError(f"chain has {n_closed} closed classes; stationary distribution is not unique")

    lazy = 0.5 * (P + np.eye(n))
    d = np.full(n, 1.0 / n)
    res = np.inf
    for _ in range(max_iter):
        d = d @ lazy
        d /= d.sum()
        res = np.abs(d @ P - d).sum()
        if res < tol:
            return d
    raise ModelError(f"power iteration did not converge: residual {res:.3e} after {max_iter} iterations")


def compute_model(mdp: TabularMDP, policy: Policy, features: FeatureMap) -> ModelMatrices:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match the MDP")
    if features.phi.shape[0] != mdp.n_states:
        raise ValueError("feature map does not cover every state")
    P_pi = policy_matrix(mdp, policy)
    d_pi = stationary_distribution(policy_matrix(mdp, policy, restart=True))

    Phi = features.phi
    # next-state features are zero after entering a terminal state
    Phi_next = np.where(mdp.terminal[:, None], 0.0, Phi)
    wPhi = d_pi[:, None] * Phi
    C_bar = Phi.T @ wPhi
    cross_bar = (P_pi @ Phi_next).T @ wPhi
    A_bar = mdp.gamma * cross_bar.T - C_bar
    r_pi = np.einsum("sa,sat,sat->s", policy.probs, mdp.transition, mdp.reward)
    b_bar = wPhi.T @ r_pi

    if np.linalg.matrix_rank(C_bar) < features.dim:
        raise ModelError("features restricted to the support of d_pi are rank deficient")
    try:
        theta_star = np.linalg.solve(A_bar, -b_bar)
    except np.linalg.LinAlgError as exc:
        raise ModelError("A_bar is singular") from exc
    return ModelMatrices(A_bar, b_bar, C_bar, cross_bar, d_pi, theta_star, mdp.gamma)


def _residual(theta, model):
    return model.A_bar @ np.asarray(theta, dtype=float) + model.b_bar


def mspbe(theta, model: ModelMatrices) -> float:
    """``(A theta + b)^T C^{-1} (A theta + b)``, the squared projected Bellman error."""
    e = _residual(theta, model)
    try:
        x = np.linalg.solve(model.C_bar, e)
    except np.linalg.LinAlgError as exc:
        raise ModelError("C_bar is singular") from exc
    return max(float(e @ x), 0.0)


def rmspbe(theta, model: ModelMatrices) -> float:
    return float(np.sqrt(mspbe(theta, model)))


def mspbe_gradient(theta, model: ModelMatrices) -> np.ndarray:
    return 2.0 * model.A_bar.T @ np.linalg.solve(model.C_bar, _residual(theta, model))


def neu(theta, model: ModelMatrices) -> float:
    """Squared norm of the expected TD update ``E[delta phi] = A theta + b``."""
    e = _residual(theta, model)
    return float(e @ e)


_DUMP_BLOCKS = ("A", "b", "C", "d_pi", "theta_star")


def dump_model(model: ModelMatrices, path=None) -> str:
    """Plain-text dump of the model blocks.

    Each block starts with ``[name] rows cols`` followed by whitespace separated
    rows printed with 17 significant digits.
    """
    blocks = dict(zip(_DUMP_BLOCKS, (model.A_bar, model.b_bar, model.C_bar,
                                     model.d_pi, model.theta_star)))
    out = [f"# gamma {model.gamma!r}"]
    for name, arr in blocks.items():
        m = np.atleast_2d(arr) if arr.ndim == 2 else arr[None, :]
        out.append(f"[{name}] {m.shape[0]} {m.shape[1]}")
        out.extend(" ".join(f"{x:.17g}" for x in row) for row in m)
    text = "\n".join(out) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_model_dump(text: str) -> dict[str, np.ndarray]:
    """Parse :func:`dump_model` output back into arrays keyed by block name."""
    blocks: dict[str, np.ndarray] = {}
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    i = 0
    while i < len(lines):
        head = lines[i]
        if not head.startswith("["):
            raise ValueError(f"expected a block header, got {head!r}")
        name, rows, cols = head[1:].replace("]", " ").split()
        rows, cols = int(rows), int(cols)
        data = np.array([[float(x) for x in lines[i + 1 + k].split()] for k in range(rows)])
        if data.shape != (rows, cols):
            raise ValueError(f"block {name} has shape {data.shape}, header says {(rows, cols)}")
        blocks[name] = data if name in ("A", "C") else data.ravel()
        i += 1 + rows
    return blocks
