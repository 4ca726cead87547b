"""Trajectory model in the Laplace domain.

A reverse-time GRU encodes the observed window into a latent initial-
condition vector p.  For each query time the Fourier-series inversion
contour supplies a fixed set of s-points; the representation network maps
concat(p, sphere(s)) to sphere coordinates of F(s), and the inversion
weights reduce those values to a state prediction.  Everything between the
observations and the loss lives on the autodiff tape, so training is plain
reverse-mode gradient descent; the inversion itself is linear, its weights
entering as constants.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import ilt, nn
from .autodiff import Var
from .sphere import to_sphere

HALF_PI = 0.5 * np.pi


@dataclass
class ModelConfig:
    state_dim: int
    latent_dim: int = 2
    gru_layers: int = 2
    gru_units: int = 21
    rep_layers: int = 3
    rep_units: int = 42
    ilt_degree: int = 16
    phi_max: float = None
    ablation_no_projection: bool = False
    time_scale: float = 1.0

    def __post_init__(self):
        for name in ("state_dim", "latent_dim", "gru_layers", "gru_units",
                     "rep_layers", "rep_units", "ilt_degree"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.phi_max is not None and not 0.0 < self.phi_max:
            raise ValueError("phi_max must be positive")
        if self.time_scale <= 0.0:
            raise ValueError("time_scale must be positive")

    @property
    def phi_high(self):
        if self.phi_max is None:
            return HALF_PI
        return min(HALF_PI, float(self.phi_max))


def init_params(config, seed):
    """Glorot-uniform weights, zero biases; same seed gives identical bits."""
    rng = np.random.default_rng(seed)
    store = nn.ParamStore()
    width = config.state_dim + 1  # state plus scaled time
    for layer in range(config.gru_layers):
        nn.add_gru(store, f"enc.l{layer}", width, config.gru_units, rng)
        width = config.gru_units
    nn.add_dense(store, "enc.out", config.gru_units, config.latent_dim, rng)

    width = config.latent_dim + 2  # p plus the two sphere coordinates of s
    for layer in range(config.rep_layers - 1):
        nn.add_dense(store, f"rep.l{layer}", width, config.rep_units, rng)
        width = config.rep_units
    nn.add_dense(store, "rep.out", width, 2 * config.state_dim, rng)
    return store


def inversion_times(query_times):
    """Validate query times for the inversion axis.

    The representation is the Laplace transform of the trajectory on its
    own time axis, so query times pass through unchanged; the series
    inversion is only defined for t > 0.
    """
    q = np.asarray(query_times, dtype=float)
    if q.size == 0:
        raise ValueError("no query times")
    if np.any(q <= 0.0):
        raise ValueError("query times must be positive")
    return q


def query_plan(query_times, degree):
    """Constants of the decode path for one query grid.

    Returns (features, w_re, w_im) where features is ((n*b), 2) sphere
    coordinates of the stacked s-points and the weight arrays are (n, b),
    inversion prefactor included.
    """
    checked = inversion_times(query_times)
    points = np.stack([ilt.fsi_query(t, degree).points for t in checked])
    w = [ilt.fsi_weights(t, degree) for t in checked]
    w_re = np.stack([wi[0] for wi in w])
    w_im = np.stack([wi[1] for wi in w])
    theta, phi = to_sphere(points.ravel())
    features = np.stack([theta, phi], axis=1)
    raw = np.stack([points.ravel().real, points.ravel().imag], axis=1)
    return features, raw, w_re, w_im


class LaplaceModel:
    """Encoder + Laplace-domain representation + linear inversion decode."""

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = seed
        self.params = init_params(config, seed)
        self.norm_mean = np.zeros(config.state_dim)
        self.norm_std = np.ones(config.state_dim)
        self.training_history = []
        self.nfe_count = 0

    def set_normalization(self, mean, std):
        self.norm_mean = np.asarray(mean, dtype=float)
        self.norm_std = np.asarray(std, dtype=float)

    # -- encoder ---------------------------------------------------------

    def encode(self, obs_times, obs_states_norm):
        """Reverse-time GRU over (state, t/time_scale) pairs -> p (B, K)."""
        times = np.asarray(obs_times, dtype=float)
        states = np.atleast_3d(np.asarray(obs_states_norm, dtype=float))
        if times.size == 0:
            raise ValueError("empty observation window")
        if states.shape[1] != times.size:
            raise ValueError("observation window shape mismatch")
        scaled = times / self.config.time_scale
        batch = states.shape[0]
        feats = np.concatenate(
            [states.transpose(1, 0, 2),
             np.broadcast_to(scaled[:, None, None], (times.size, batch, 1))],
            axis=2,
        )
        seq = feats[::-1].copy()  # latest observation enters the recurrence first
        for layer in range(self.config.gru_layers):
            seq = nn.gru_sequence(self.params, f"enc.l{layer}", seq, self.config.gru_units)
        return nn.dense(self.params, "enc.out", seq[times.size - 1])

    # -- representation network ------------------------------------------

    def rep_values(self, p_rows):
        """MLP over rows of concat(p, s-features) -> (F_re, F_im), (R, D)."""
        h = p_rows
        for layer in range(self.config.rep_layers - 1):
            h = ad.tanh_affine(h, self.params[f"rep.l{layer}.W"],
                               self.params[f"rep.l{layer}.b"])
        out = nn.dense(self.params, "rep.out", h)
        d = self.config.state_dim
        u_theta = out[:, :d]
        u_phi = out[:, d:]
        if self.config.ablation_no_projection:
            return u_theta, u_phi
        theta = np.pi * ad.tanh(u_theta)
        lo, hi = -HALF_PI, self.config.phi_high
        phi = lo + (hi - lo) * 0.5 * (ad.tanh(u_phi) + 1.0)
        radius = ad.tan(0.5 * phi + 0.25 * np.pi)
        return radius * ad.cos(theta), radius * ad.sin(theta)

    # -- decode ----------------------------------------------------------

    def predict_normalized(self, obs_times, obs_states_norm, query_times, plan=None):
        """Tape-valued predictions in normalized space, (B, n_query, D)."""
        if plan is None:
            plan = query_plan(query_times, self.config.ilt_degree)
        features, raw, w_re, w_im = plan
        p = self.encode(obs_times, obs_states_norm)
        batch = p.value.shape[0]
        n_rows = features.shape[0]
        self.nfe_count += batch * n_rows

        tiled = np.tile(raw if self.config.ablation_no_projection else features,
                        (batch, 1))
        rows = ad.concat([ad.repeat_rows(p, n_rows), Var(tiled)], axis=1)
        f_re, f_im = self.rep_values(rows)

        n_q, b = w_re.shape
        d = self.config.state_dim
        f_re = f_re.reshape((batch, n_q, b, d))
        f_im = f_im.reshape((batch, n_q, b, d))
        contrib = f_re * w_re[None, :, :, None] + f_im * w_im[None, :, :, None]
        return contrib.sum(axis=2)

    def predict(self, obs_times, obs_states, query_times):
        """De-normalized numpy predictions for observed (B, n_obs, D) states."""
        states = np.atleast_3d(np.asarray(obs_states, dtype=float))
        norm = (states - self.norm_mean) / self.norm_std
        pred = self.predict_normalized(obs_times, norm, query_times)
        return pred.value * self.norm_std + self.norm_mean

    # -- persistence -------------------------------------------------------

    def save(self, path, adam=None, run_config=None):
        extra = {
            "normalization": {
                "mean": self.norm_mean.tolist(),
                "std": self.norm_std.tolist(),
            },
        }
        if run_config is not None:
            extra["run_config"] = run_config
        nn.save_checkpoint(
            path, self.params, asdict(self.config), self.seed,
            training_history=self.training_history, adam=adam, extra=extra,
        )

    @classmethod
    def load(cls, path):
        payload = nn.load_checkpoint(path)
        config = ModelConfig(**payload["architecture_config"])
        model = cls(config, seed=payload["rng_seed"])
        model.params.load_values(nn.params_from_checkpoint(payload))
        norm = payload.get("normalization", {})
        if norm:
            model.set_normalization(norm["mean"], norm["std"])
        model.training_history = payload.get("training_history", [])
        return model


def loss_terms(pred, truth):
    """(mean, sum) of squared Euclidean distance per time point.

    The mean (over trajectories and times) drives optimization; the sum is
    recorded alongside it.
    """
    truth = np.asarray(truth, dtype=float)
    if pred.value.shape != truth.shape:
        raise ValueError(
            f"prediction shape {pred.value.shape} != truth shape {truth.shape}"
        )
    sq = (pred - truth) ** 2.0
    total = sq.sum()
    count = int(np.prod(truth.shape[:-1]))
    return total * (1.0 / count), total


def _batched(order, size):
    for i in range(0, order.size, size):
        yield order[i : i + size]


def train(model, dataset, epochs=1000, lr=1e-3, batch_size=128, patience=100,
          seed=0, chunk_size=64, log_every=None):
    """Fit on the dataset's train split, early-stopping on validation RMSE.

    Each trajectory contributes its first half as the observed window and
    its second half as targets.  Minibatches are reshuffled every epoch;
    gradients accumulate over fixed-size chunks so memory stays bounded.
    Returns the per-epoch history; the model keeps its best-validation
    parameters.
    """
    times = dataset.trajectories[0].times
    for t in dataset.trajectories:
        if not np.array_equal(t.times, times):
            raise ValueError("training expects a shared time grid")
    half = times.size // 2
    obs_t, query_t = times[:half], times[half:]

    model.set_normalization(dataset.norm_mean, dataset.norm_std)
    model.config.time_scale = float(times[-1])
    plan = query_plan(query_t, model.config.ilt_degree)

    def split_arrays(part):
        trajs = dataset.subset(part)
        states = np.stack([t.states for t in trajs])
        return dataset.normalize(states)

    train_states = split_arrays("train")
    val_states = split_arrays("val")
    n_train = train_states.shape[0]

    opt = nn.Adam(model.params, lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    best_rmse = np.inf
    best_params = model.params.clone_values()
    best_epoch = -1
    since_best = 0

    for epoch in range(epochs):
        order = rng.permutation(n_train)
        epoch_sse = 0.0
        epoch_count = 0
        for batch_idx in _batched(order, batch_size):
            n_batch = batch_idx.size
            # backward() rebuilds grads from scratch per root, so chunk
            # gradients are harvested into an explicit accumulator
            acc = {name: np.zeros_like(p.value) for name, p in model.params.items()}
            for chunk_idx in _batched(batch_idx, chunk_size):
                chunk = train_states[chunk_idx]
                pred = model.predict_normalized(obs_t, chunk[:, :half], query_t,
                                                plan=plan)
                mean_loss, sum_loss = loss_terms(pred, chunk[:, half:])
                if not np.isfinite(mean_loss.value):
                    raise RuntimeError(f"training diverged at epoch {epoch}")
                epoch_sse += float(sum_loss.value)
                epoch_count += chunk_idx.size * (times.size - half)
                # scale so chunk gradients add up to the batch-mean gradient
                ad.backward(mean_loss * (chunk_idx.size / n_batch))
                for name, p in model.params.items():
                    if p.grad is not None:
                        acc[name] += p.grad
            for name, p in model.params.items():
                p.grad = acc[name]
            opt.step()

        val_rmse = _validation_rmse(model, val_states, obs_t, query_t, half,
                                    plan, chunk_size)
        history.append({
            "epoch": epoch,
            "train_loss_mean": epoch_sse / epoch_count,
            "train_loss_sum": epoch_sse,
            "val_rmse": val_rmse,
        })
        if log_every and epoch % log_every == 0:
            print(f"epoch {epoch}: train {epoch_sse / epoch_count:.5f} "
                  f"val_rmse {val_rmse:.5f}", flush=True)

        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best_params = model.params.clone_values()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                break

    model.params.load_values(best_params)
    model.training_history = history
    return {"history": history, "best_epoch": best_epoch,
            "best_val_rmse": best_rmse}


def _validation_rmse(model, val_states, obs_t, query_t, half, plan, chunk_size):
    errors = []
    for i in range(0, val_states.shape[0], chunk_size):
        chunk = val_states[i : i + chunk_size]
        pred = model.predict_normalized(obs_t, chunk[:, :half], query_t, plan=plan)
        pred_dn = pred.value * model.norm_std + model.norm_mean
        truth_dn = chunk[:, half:] * model.norm_std + model.norm_mean
        errors.append((pred_dn - truth_dn) ** 2)
    stacked = np.concatenate(errors, axis=0)
    return float(np.sqrt(stacked.mean()))
