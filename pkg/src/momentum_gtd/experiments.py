"""Multi-run RMSPBE experiments over episodes.

Each run owns a generator seeded with ``base_seed + run_index``. The episodes
of a run are sampled once and fed to every configured learner, so learners are
compared on identical transition streams and a run's curves do not depend on
which other runs or learners are in the experiment.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .algorithms import DivergenceError, ScheduleSpec, make_learner
from .mdp import (MAX_EPISODE_STEPS, Episode, build_environment, sample_episode,
                  sample_iid_batch)
from .model import compute_model, rmspbe

__all__ = [
    "AlgorithmConfig",
    "ExperimentConfig",
    "CurveSet",
    "ExperimentError",
    "ConfigError",
    "run_experiment",
    "compare_presets",
    "Comparison",
    "export_curves",
    "load_curves",
    "list_presets",
    "load_preset",
    "config_from_dict",
    "config_to_dict",
    "AUC_EPISODES",
]

AUC_EPISODES = 100


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, run: int, label: str, step: int, msg: str):
        super().__init__(f"run {run}, {label}: diverged at step {step} ({msg})")
        self.run, self.label, self.step = run, label, step


@dataclass(frozen=True)
class AlgorithmConfig:
    algo: str
    form: str
    schedule: ScheduleSpec

    @property
    def label(self) -> str:
        if self.form == "vanilla":
            return self.algo
        return f"{self.algo}-m/{self.schedule.regime}"


@dataclass(frozen=True)
class ExperimentConfig:
    env: str
    algorithms: tuple[AlgorithmConfig, ...]
    n_runs: int = 100
    n_episodes: int = 200
    base_seed: int = 0
    sampling: str = "episodic"
    max_episode_steps: int = MAX_EPISODE_STEPS
    output: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if self.n_runs < 1:
            raise ConfigError(f"n_runs must be >= 1, got {self.n_runs}")
        if self.n_episodes < 0:
            raise ConfigError(f"n_episodes must be >= 0, got {self.n_episodes}")
        if self.max_episode_steps < 1:
            raise ConfigError("max_episode_steps must be >= 1")
        if self.sampling not in ("episodic", "iid"):
            raise ConfigError(f"sampling must be 'episodic' or 'iid', got {self.sampling!r}")
        labels = [a.label for a in self.algorithms]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate algorithm labels in {labels}")


@dataclass
class CurveSet:
    """Per-run RMSPBE after every episode, keyed by algorithm label.

    ``runs[label]`` has shape ``(n_runs, n_episodes)``; ``initial[label]`` is the
    RMSPBE of the starting iterate.
    """

    runs: dict[str, np.ndarray] = field(default_factory=dict)
    initial: dict[str, float] = field(default_factory=dict)

    @property
    def labels(self) -> list[str]:
        return list(self.runs)

    def mean(self, label: str) -> np.ndarray:
        return self.runs[label].mean(axis=0)

    def stderr(self, label: str) -> np.ndarray:
        r = self.runs[label]
        if r.shape[0] < 2:
            return np.zeros(r.shape[1])
        return r.std(axis=0, ddof=1) / np.sqrt(r.shape[0])

    def auc(self, label: str, k: int = AUC_EPISODES) -> float:
        """Area under the mean curve over the first ``k`` episodes (unit spacing)."""
        return float(np.sum(self.mean(label)[:k]))


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def _sample_run(cfg: ExperimentConfig, env, model, rng) -> list:
    mdp, policy, features = env
    if cfg.sampling == "iid":
        eps = []
        for _ in range(cfg.n_episodes):
            batch = sample_iid_batch(model, mdp, policy, features, rng, cfg.max_episode_steps)
            eps.append(Episode([batch[i] for i in range(len(batch))], True))
        return eps
    return [sample_episode(mdp, policy, features, rng, cfg.max_episode_steps)
            for _ in range(cfg.n_episodes)]


def _run_one(cfg: ExperimentConfig, run: int, env=None, model=None) -> dict[str, np.ndarray]:
    if env is None:
        env = build_environment(cfg.env)
        model = compute_model(*env)
    mdp, _, features = env
    episodes = _sample_run(cfg, env, model, np.random.default_rng(cfg.base_seed + run))
    C_inv = np.linalg.inv(model.C_bar)
    A, b = model.A_bar, model.b_bar

    def fast_rmspbe(theta):
        e = A @ theta + b
        return float(np.sqrt(max(e @ C_inv @ e, 0.0)))

    out = {}
    for ac in cfg.algorithms:
        learner = make_learner(ac.algo, ac.form, ac.schedule, features.dim, gamma=mdp.gamma)
        curve = np.empty(len(episodes))
        try:
            for k, ep in enumerate(episodes):
                for tr in ep:
                    learner.step(tr)
                curve[k] = fast_rmspbe(learner.theta)
        except DivergenceError as exc:
            raise ExperimentError(run, ac.label, exc.step, str(exc)) from exc
        out[ac.label] = curve
    return out


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> CurveSet:
    """Run every configured learner on ``cfg.n_runs`` independent seeds.

    ``jobs > 1`` distributes runs over worker processes; results are reduced
    in run order, so the output does not depend on ``jobs``.
    """
    env = build_environment(cfg.env)
    model = compute_model(*env)
    if jobs > 1 and cfg.n_runs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_run = list(pool.map(_run_one, [cfg] * cfg.n_runs, range(cfg.n_runs)))
    else:
        per_run = [_run_one(cfg, i, env, model) for i in range(cfg.n_runs)]
    curves = CurveSet()
    # learners start from theta = 0
    init = rmspbe(np.zeros(env[2].dim), model)
    for ac in cfg.algorithms:
        curves.runs[ac.label] = np.array([r[ac.label] for r in per_run]).reshape(cfg.n_runs, cfg.n_episodes)
        curves.initial[ac.label] = init
    return curves


@dataclass
class Comparison:
    env: str
    k: int
    auc: dict[tuple[str, str], float]
    curves: dict[str, CurveSet]

    def text(self) -> str:
        lines = [f"AUC of mean RMSPBE over the first {self.k} episodes on {self.env}"]
        algos = sorted({a for a, _ in self.auc}, key=lambda a: ("gtd", "gtd2", "tdc").index(a))
        for algo in algos:
            row = {reg: v for (a, reg), v in self.auc.items() if a == algo}
            order = " < ".join(sorted(row, key=row.get))
            vals = "  ".join(f"{reg}={v:.6g}" for reg, v in row.items())
            lines.append(f"{algo:<5} {vals}  order: {order}")
        return "\n".join(lines)

    def momentum_wins(self, algo: str, regime: str = "three_ts") -> bool:
        return self.auc[(algo, regime)] < self.auc[(algo, "vanilla")]


def compare_presets(env: str, algos=("gtd", "gtd2", "tdc"), horizon: int = 200,
                    n_runs: int = 100, base_seed: int = 0, k: int = AUC_EPISODES,
                    regimes=("vanilla", "one_ts", "three_ts"), jobs: int = 1) -> Comparison:
    """Run the shipped vanilla, One-TS and Three-TS presets of ``env`` and compare initial-phase AUCs."""
    prefix = _preset_prefix(env)
    auc, curves = {}, {}
    for regime in regimes:
        cfg = load_preset(f"{prefix}_{regime}")
        keep = tuple(a for a in cfg.algorithms if a.algo in algos)
        cfg = replace(cfg, algorithms=keep, n_runs=n_runs, n_episodes=horizon, base_seed=base_seed)
        cs = run_experiment(cfg, jobs=jobs)
        curves[regime] = cs
        for ac in keep:
            auc[(ac.algo, regime)] = cs.auc(ac.label, k)
    return Comparison(env, min(k, horizon), auc, curves)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _aggregate_path(path: Path) -> Path:
    return path.with_name(path.stem + "_aggregate" + (path.suffix or ".csv"))


def export_curves(curves: CurveSet, path) -> tuple[Path, Path]:
    """Write ``algorithm,run,episode,rmspbe`` rows and the mean/stderr aggregate.

    The aggregate goes next to ``path`` with an ``_aggregate`` suffix. Values
    use 17 significant digits.
    """
    path = Path(path)
    agg = _aggregate_path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["algorithm", "run", "episode", "rmspbe"])
            for label, runs in curves.runs.items():
                for i, row in enumerate(runs):
                    for k, x in enumerate(row):
                        w.writerow([label, i, k + 1, f"{x:.17g}"])
        with open(agg, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["algorithm", "episode", "mean", "stderr"])
            for label in curves.runs:
                for k, (m, s) in enumerate(zip(curves.mean(label), curves.stderr(label))):
                    w.writerow([label, k + 1, f"{m:.17g}", f"{s:.17g}"])
    except OSError as exc:
        raise OSError(f"cannot write curves to {exc.filename or path}: {exc.strerror}") from exc
    return path, agg


def load_curves(path) -> CurveSet:
    """Read back a raw curve file written by :func:`export_curves`."""
    rows: dict[str, dict[tuple[int, int], float]] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(rec["algorithm"], {})[(int(rec["run"]), int(rec["episode"]))] = float(rec["rmspbe"])
    cs = CurveSet()
    for label, vals in rows.items():
        n_runs = 1 + max(r for r, _ in vals)
        n_ep = max(e for _, e in vals)
        arr = np.full((n_runs, n_ep), np.nan)
        for (r, e), x in vals.items():
            arr[r, e - 1] = x
        cs.runs[label] = arr
    return cs


# ---------------------------------------------------------------------------
# Config files and presets
# ---------------------------------------------------------------------------

_SCHEDULE_KEYS = {"regime": "regime", "alpha": "alpha_exp", "beta": "beta_exp",
                  "rho": "rho_exp", "w": "w", "c1": "c1", "c2": "c2"}
_TOP_KEYS = {"env", "runs", "episodes", "seed", "sampling", "max_episode_steps",
             "output", "schedule", "algorithms"}


def _schedule(d: dict) -> ScheduleSpec:
    unknown = set(d) - set(_SCHEDULE_KEYS)
    if unknown:
        raise ConfigError(f"unknown schedule keys {sorted(unknown)}")
    try:
        return ScheduleSpec(**{_SCHEDULE_KEYS[k]: v for k, v in d.items() if v is not None})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid schedule {d}: {exc}") from exc


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build a config from the nested mapping used by the YAML config files.

    A top-level ``schedule`` section applies to every algorithm entry; keys in
    an entry override it.
    """
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if "env" not in d:
        raise ConfigError("config needs an 'env'")
    base = dict(d.get("schedule") or {})
    algos = []
    for entry in d.get("algorithms") or []:
        entry = {"algo": entry} if isinstance(entry, str) else dict(entry)
        algo = entry.pop("algo", None)
        if algo is None:
            raise ConfigError("algorithm entry without 'algo'")
        merged = {**base, **entry}
        form = merged.pop("form", "vanilla" if merged.get("regime", "vanilla") == "vanilla" else "two_form")
        algos.append(AlgorithmConfig(str(algo).lower(), form, _schedule(merged)))
    if not algos:
        raise ConfigError("config lists no algorithms")
    for a in algos:
        if a.algo not in ("gtd", "gtd2", "tdc"):
            raise ConfigError(f"unknown algorithm {a.algo!r}")
        if (a.form == "vanilla") != (a.schedule.regime == "vanilla"):
            raise ConfigError(f"form {a.form!r} is incompatible with regime {a.schedule.regime!r}")
    try:
        return ExperimentConfig(
            env=str(d["env"]), algorithms=tuple(algos),
            n_runs=int(d.get("runs", 100)), n_episodes=int(d.get("episodes", 200)),
            base_seed=int(d.get("seed", 0)), sampling=d.get("sampling", "episodic"),
            max_episode_steps=int(d.get("max_episode_steps", MAX_EPISODE_STEPS)),
            output=d.get("output"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: ExperimentConfig) -> dict:
    inv = {v: k for k, v in _SCHEDULE_KEYS.items()}
    algos = []
    for a in cfg.algorithms:
        s = {inv[k]: getattr(a.schedule, k) for k in inv if getattr(a.schedule, k) is not None}
        if s.get("c1") == 1.0 and s.get("c2") == 1.0:
            s.pop("c1"), s.pop("c2")
        algos.append({"algo": a.algo, "form": a.form, **s})
    return {"env": cfg.env, "runs": cfg.n_runs, "episodes": cfg.n_episodes,
            "seed": cfg.base_seed, "sampling": cfg.sampling,
            "max_episode_steps": cfg.max_episode_steps, "output": cfg.output,
            "algorithms": algos}


def _preset_prefix(env: str) -> str:
    env = env.lower()
    if env.startswith("randmdp"):
        return "randmdp"
    if env in ("boyan", "boyan14"):
        return "boyan"
    return env


def _preset_dir():
    return resources.files(__package__) / "presets"


def list_presets() -> list[str]:
    return sorted(p.name[:-5] for p in _preset_dir().iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> ExperimentConfig:
    names = list_presets()
    if name not in names:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(names)}")
    text = (_preset_dir() / f"{name}.yaml").read_text()
    return config_from_dict(yaml.safe_load(text))


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def default_output_dir() -> str:
    return os.environ.get("GTDM_OUTPUT_DIR", ".")
