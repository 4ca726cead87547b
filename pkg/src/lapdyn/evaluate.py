"""Metrics and experiment protocols.

Extrapolation RMSE over a dataset's test split, the cos(t) inversion
benchmark, and rep-net evaluation counting.  Reports carry per-trajectory
rows so every aggregate can be recomputed from the emitted files.
"""

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ilt

BENCH_ALGORITHMS = ("fsi", "stehfest", "talbot", "dehoog")
NFE_MODES = ("single_future_point", "n_points_fixed_interval")


def rmse(pred, truth):
    """sqrt(mean over all times and dimensions of squared error)."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


@dataclass
class EvalReport:
    trajectory_ids: list
    rmse_per_trajectory: list
    rmse_normalized_per_trajectory: list
    nfe_per_trajectory: int
    mean_rmse: float
    std_rmse: float
    mean_rmse_normalized: float
    std_rmse_normalized: float
    config: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, ids, errors, errors_normalized, nfe, config=None):
        """Aggregate per-trajectory rows; rows are kept sorted by id."""
        order = np.argsort(ids)
        ids = [ids[i] for i in order]
        errors = [float(errors[i]) for i in order]
        errors_normalized = [float(errors_normalized[i]) for i in order]
        return cls(
            trajectory_ids=ids,
            rmse_per_trajectory=errors,
            rmse_normalized_per_trajectory=errors_normalized,
            nfe_per_trajectory=int(nfe),
            mean_rmse=float(np.mean(errors)),
            std_rmse=float(np.std(errors)),
            mean_rmse_normalized=float(np.mean(errors_normalized)),
            std_rmse_normalized=float(np.std(errors_normalized)),
            config=config or {},
        )

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)

    def write_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment is not None:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["trajectory_id", "rmse", "rmse_normalized"])
            for row in zip(self.trajectory_ids, self.rmse_per_trajectory,
                           self.rmse_normalized_per_trajectory):
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def extrapolation_eval(model, dataset, part="test", chunk_size=64):
    """Observe each trajectory's first half, predict the second, score both spaces.

    De-normalized RMSE is the headline number; the normalized-space RMSE is
    reported alongside it.
    """
    trajectories = sorted(dataset.subset(part), key=lambda t: t.id)
    if not trajectories:
        raise ValueError(f"dataset has no {part!r} trajectories")
    times = trajectories[0].times
    half = times.size // 2
    obs_t, query_t = times[:half], times[half:]
    states = np.stack([t.states for t in trajectories])

    errors, errors_norm = [], []
    nfe_before = model.nfe_count
    for i in range(0, states.shape[0], chunk_size):
        chunk = states[i : i + chunk_size]
        pred = model.predict(obs_t, chunk[:, :half], query_t)
        truth = chunk[:, half:]
        for j in range(chunk.shape[0]):
            errors.append(rmse(pred[j], truth[j]))
            errors_norm.append(rmse((pred[j] - model.norm_mean) / model.norm_std,
                                    (truth[j] - model.norm_mean) / model.norm_std))
    nfe = (model.nfe_count - nfe_before) // states.shape[0]

    return EvalReport.from_rows(
        [t.id for t in trajectories], errors, errors_norm, nfe,
        config={
            "part": part,
            "n_trajectories": len(trajectories),
            "n_observed": int(half),
            "n_predicted": int(times.size - half),
            "ilt_degree": model.config.ilt_degree,
        },
    )


def ilt_benchmark(algorithms=BENCH_ALGORITHMS, degree=None, n_points=1000,
                  t_max=10.0, cme_coeff_source=None):
    """Invert F(s) = s/(s^2+1) and score against cos(t).

    Times are the n_points linearly spaced values in (0, t_max]; t = 0 is
    excluded because no inversion rule admits it.  Wall time per point is
    informational (hardware-dependent).
    """
    times = np.linspace(0.0, t_max, n_points + 1)[1:]
    truth = np.cos(times)

    def F(s):
        return s / (s * s + 1.0)

    rows = []
    for algorithm in algorithms:
        config = ilt.ILTConfig(algorithm=algorithm, degree=degree,
                               cme_coeff_source=cme_coeff_source)
        start = time.perf_counter()
        recovered = ilt.invert_batch(F, times, config)
        elapsed = time.perf_counter() - start
        rows.append({
            "algorithm": algorithm,
            "degree": config.resolved_degree(),
            "rmse": rmse(recovered, truth),
            "mean_time_per_point_s": elapsed / len(times),
            "n_points": int(len(times)),
        })
    return rows


def write_ilt_table(rows, path, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment is not None:
            fh.write(f"# {header_comment}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v
                             for k, v in row.items()})


def count_nfe(model, mode, sweep):
    """Instrument rep-net forward evaluations for one trajectory.

    single_future_point sweeps the horizon with one query each; counts are
    constant.  n_points_fixed_interval sweeps the number of queries inside
    a fixed interval; counts are (2N+1) * n exactly.
    """
    if mode not in NFE_MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {NFE_MODES}")
    obs_t = np.linspace(0.0, 1.0, 10)
    obs_x = np.zeros((1, obs_t.size, model.config.state_dim))

    rows = []
    for value in sweep:
        if mode == "single_future_point":
            query = np.array([obs_t[-1] + float(value)])
        else:
            query = obs_t[-1] + np.linspace(1.0, 2.0, int(value))
        before = model.nfe_count
        model.predict(obs_t, obs_x, query)
        rows.append({"parameter": value, "nfe": model.nfe_count - before})
    return rows
