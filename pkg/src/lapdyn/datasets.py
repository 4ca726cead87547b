"""Trajectory dataset generation, splits, normalization, and serialization.

Each trajectory draws its own Philox stream keyed by (run seed, trajectory
index), so generation is reproducible regardless of batching or scheduling
and reruns are byte-identical.  Files are JSON lines: a header record with
the generator metadata, split, and train-split normalization stats, then
one record per trajectory.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import systems

FORMAT_VERSION = 1

# kind -> (state dim, observation interval)
SYSTEMS = {
    "spiral_dde": (2, (0.0, 20.0)),
    "lotka_volterra_dde": (2, (0.1, 2.0)),
    "mackey_glass_dde": (1, (0.0, 20.0)),
    "stiff_vdp": (2, (0.0, 20.0)),
    "forced_ode": (1, (0.0, 20.0)),
    "integro_de": (1, (0.0, 4.0)),
    "sine": (1, (0.0, 20.0)),
    "square": (1, (0.0, 20.0)),
    "sawtooth": (1, (0.0, 20.0)),
}

SPLIT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass
class Trajectory:
    id: int
    times: np.ndarray
    states: np.ndarray
    init: object

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or self.states.ndim != 2:
            raise ValueError("times must be (n,), states (n, dim)")
        if self.times.shape[0] != self.states.shape[0]:
            raise ValueError("times and states lengths differ")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


@dataclass
class TrajectorySet:
    trajectories: list
    split: dict
    norm_mean: np.ndarray
    norm_std: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.norm_mean = np.asarray(self.norm_mean, dtype=float)
        self.norm_std = np.asarray(self.norm_std, dtype=float)
        ids = {t.id for t in self.trajectories}
        listed = [i for part in ("train", "val", "test") for i in self.split[part]]
        if sorted(listed) != sorted(ids):
            raise ValueError("split is not a disjoint exhaustive cover of ids")

    def subset(self, part):
        by_id = {t.id: t for t in self.trajectories}
        return [by_id[i] for i in self.split[part]]

    def normalize(self, states):
        return (np.asarray(states, dtype=float) - self.norm_mean) / self.norm_std

    def denormalize(self, states):
        return np.asarray(states, dtype=float) * self.norm_std + self.norm_mean

    @property
    def state_dim(self):
        return self.trajectories[0].states.shape[1]


def trajectory_rng(seed, index):
    """Counter-based per-trajectory stream; independent of batch order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def make_splits(n_traj, seed):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, n_traj])))
    order = rng.permutation(n_traj)
    n_train = int(SPLIT_FRACTIONS[0] * n_traj)
    n_val = int(SPLIT_FRACTIONS[1] * n_traj)
    return {
        "train": [int(i) for i in order[:n_train]],
        "val": [int(i) for i in order[n_train : n_train + n_val]],
        "test": [int(i) for i in order[n_train + n_val :]],
    }


def train_normalization(trajectories, split):
    train_ids = set(split["train"])
    stacked = np.concatenate(
        [t.states for t in trajectories if t.id in train_ids], axis=0
    )
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def grid_initial_conditions(kind, n_traj):
    """Deterministic per-system initial-condition layout.

    1-D systems use a linear grid over their sampling range; 2-D constant
    histories use the first n points (row-major) of the smallest square
    product grid that holds them; waveforms use translations in [0, 2*pi).
    """
    if kind == "spiral_dde":
        return _square_grid(-2.0, 2.0, n_traj)
    if kind == "lotka_volterra_dde":
        return _square_grid(0.1, 2.0, n_traj)
    if kind == "stiff_vdp":
        return np.linspace(0.1, 2.0, n_traj)
    if kind == "forced_ode":
        return np.linspace(0.0, 0.1, n_traj)
    if kind == "integro_de":
        return np.linspace(0.0, 1.0, n_traj)
    if kind in ("sine", "square", "sawtooth"):
        return np.linspace(0.0, 2.0 * np.pi, n_traj, endpoint=False)
    raise ValueError(f"no grid layout for {kind!r}")


def _square_grid(lo, hi, n):
    side = int(np.ceil(np.sqrt(n)))
    axis = np.linspace(lo, hi, side)
    a, b = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1)[:n]


def mackey_codes(rngs):
    """Ten-segment binary histories drawn from each trajectory's stream."""
    codes = np.empty((len(rngs), 10))
    for i, rng in enumerate(rngs):
        codes[i] = np.where(rng.random(10) < 0.5, -1.0, 1.1)
    return codes


def _solve_states(kind, inits, times):
    if kind == "spiral_dde":
        return systems.solve_spiral(inits, times)
    if kind == "lotka_volterra_dde":
        return systems.solve_lotka_volterra(inits, times)
    if kind == "mackey_glass_dde":
        return systems.solve_mackey_glass(inits, times)
    if kind == "stiff_vdp":
        # adaptive grids are shared within a chunk; chunking bounds the
        # coupling between unrelated initial conditions and the memory use
        chunks = [
            systems.solve_stiff_vdp(inits[i : i + 32], times)
            for i in range(0, len(inits), 32)
        ]
        return np.concatenate(chunks, axis=0)
    if kind == "forced_ode":
        return systems.eval_forced_ode(np.asarray(inits)[:, None], times)[..., None]
    if kind == "integro_de":
        return systems.eval_integro_de(np.asarray(inits)[:, None], times)[..., None]
    if kind in ("sine", "square", "sawtooth"):
        cols = [systems.waveform(kind, times, shift=s) for s in inits]
        return np.stack(cols, axis=0)[..., None]
    raise ValueError(f"unknown system {kind!r}")


def generate_dataset(kind, n_traj=1000, n_points=200, seed=0, noise_sigma=0.0):
    """Build a TrajectorySet for one benchmark system.

    States get i.i.d. Gaussian noise of std noise_sigma (times never do);
    the split is an 80:10:10 shuffle; normalization stats come from the
    train split of the stored (noisy) states.
    """
    if kind not in SYSTEMS:
        raise ValueError(f"unknown system {kind!r}")
    if n_traj < 10:
        raise ValueError("need at least 10 trajectories for nonempty splits")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    _, (t_lo, t_hi) = SYSTEMS[kind]
    times = np.linspace(t_lo, t_hi, n_points)

    # one live stream per trajectory: history-code draws (where used) and
    # noise draws consume the same stream in a fixed order
    rngs = [trajectory_rng(seed, i) for i in range(n_traj)]
    if kind == "mackey_glass_dde":
        inits = mackey_codes(rngs)
    else:
        inits = grid_initial_conditions(kind, n_traj)
    states = _solve_states(kind, inits, times)

    trajectories = []
    for i in range(n_traj):
        traj_states = states[i]
        if noise_sigma > 0:
            traj_states = traj_states + rngs[i].normal(0.0, noise_sigma, traj_states.shape)
        init = inits[i].tolist() if hasattr(inits[i], "tolist") else float(inits[i])
        trajectories.append(Trajectory(i, times, traj_states, init))

    split = make_splits(n_traj, seed)
    mean, std = train_normalization(trajectories, split)
    metadata = {
        "format_version": FORMAT_VERSION,
        "system": kind,
        "n_traj": n_traj,
        "n_points": n_points,
        "seed": seed,
        "noise_sigma": noise_sigma,
        "rng": "philox, per-trajectory streams keyed (seed, index)",
        "interval": [t_lo, t_hi],
    }
    return TrajectorySet(trajectories, split, mean, std, metadata)


def make_filter_toy(n_traj=100, n_points=200, seed=0):
    """Noise-removal toy: train on sin(t)+sin(2t)+0.5*sin(11t), judge
    against the clean sin(t)+sin(2t).

    Returns (dataset, clean) where dataset holds the corrupted states and
    clean[i] matches trajectory i's shape.
    """
    if n_traj < 10:
        raise ValueError("need at least 10 trajectories for nonempty splits")
    times = np.linspace(0.0, 20.0, n_points)
    shifts = np.linspace(0.0, 2.0 * np.pi, n_traj, endpoint=False)
    trajectories = []
    clean = np.empty((n_traj, n_points, 1))
    for i, shift in enumerate(shifts):
        t = times + shift
        base = np.sin(t) + np.sin(2.0 * t)
        corrupted = base + 0.5 * np.sin(11.0 * t)
        clean[i, :, 0] = base
        trajectories.append(Trajectory(i, times, corrupted[:, None], float(shift)))
    split = make_splits(n_traj, seed)
    mean, std = train_normalization(trajectories, split)
    metadata = {
        "format_version": FORMAT_VERSION,
        "system": "filter_toy",
        "n_traj": n_traj,
        "n_points": n_points,
        "seed": seed,
        "noise_sigma": 0.0,
        "rng": "philox, per-trajectory streams keyed (seed, index)",
        "interval": [0.0, 20.0],
    }
    return TrajectorySet(trajectories, split, mean, std, metadata), clean


def save_dataset(dataset, path, run_config=None):
    header = {
        "format_version": FORMAT_VERSION,
        "system_spec": dataset.metadata,
        "seed": dataset.metadata.get("seed"),
        "noise_sigma": dataset.metadata.get("noise_sigma"),
        "split": dataset.split,
        "norm": {
            "mean": dataset.norm_mean.tolist(),
            "std": dataset.norm_std.tolist(),
        },
    }
    if run_config is not None:
        header["run_config"] = run_config
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for traj in dataset.trajectories:
            record = {
                "id": traj.id,
                "system": dataset.metadata.get("system"),
                "init": traj.init,
                "times": traj.times.tolist(),
                "states": traj.states.tolist(),
            }
            fh.write(json.dumps(record) + "\n")


def load_dataset(path):
    with open(path) as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ValueError("empty dataset file")
    header = json.loads(lines[0])
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format_version {version!r}")
    trajectories = []
    for line in lines[1:]:
        rec = json.loads(line)
        trajectories.append(
            Trajectory(rec["id"], rec["times"], rec["states"], rec["init"])
        )
    return TrajectorySet(
        trajectories,
        header["split"],
        header["norm"]["mean"],
        header["norm"]["std"],
        header.get("system_spec", {}),
    )
