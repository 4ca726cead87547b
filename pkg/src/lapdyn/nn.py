"""Trainable building blocks on top of the autodiff tape.

Everything here is deliberately small: a named parameter store whose values
are tape leaves, Glorot-uniform initialization, dense and GRU forward
passes, the Adam update, and a versioned JSON checkpoint format.  All math
is float64 and deterministic given the seed.
"""

import json

import numpy as np

from . import autodiff as ad
from .autodiff import Var

CHECKPOINT_VERSION = 1


class ParamStore:
    """Named parameter leaves with stable iteration order (insertion order)."""

    def __init__(self):
        self._params = {}

    def add(self, name, value):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        var = Var(np.array(value, dtype=float), op="param")
        self._params[name] = var
        return var

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def as_dict(self):
        return dict(self._params)

    def n_entries(self):
        return sum(v.value.size for v in self._params.values())

    def zero_grads(self):
        for var in self._params.values():
            var.grad = None

    def clone_values(self):
        return {name: var.value.copy() for name, var in self._params.items()}

    def load_values(self, values):
        for name, var in self._params.items():
            arr = np.asarray(values[name], dtype=float)
            if arr.shape != var.value.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: store has {var.value.shape}, got {arr.shape}"
                )
            var.value = arr.copy()


def glorot_uniform(rng, fan_in, fan_out):
    """Uniform(-b, b) with b = sqrt(6/(fan_in+fan_out)); the tanh-friendly default."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def add_dense(store, name, n_in, n_out, rng):
    store.add(f"{name}.W", glorot_uniform(rng, n_in, n_out))
    store.add(f"{name}.b", np.zeros(n_out))


def dense(params, name, x):
    return ad.affine(x, params[f"{name}.W"], params[f"{name}.b"])


def add_gru(store, name, n_in, n_hidden, rng):
    # gate order fixed (z, r, n) so initialization is reproducible by name
    for gate in ("z", "r", "n"):
        store.add(f"{name}.W{gate}", glorot_uniform(rng, n_in, n_hidden))
        store.add(f"{name}.U{gate}", glorot_uniform(rng, n_hidden, n_hidden))
        store.add(f"{name}.b{gate}", np.zeros(n_hidden))


def gru_cell(params, name, x, h):
    """One gated-recurrent-unit step; the reset gate scales h@Un, not h itself."""
    x = ad.lift(x)
    z = ad.sigmoid(ad.affine(x, params[f"{name}.Wz"], params[f"{name}.bz"]) + h @ params[f"{name}.Uz"])
    r = ad.sigmoid(ad.affine(x, params[f"{name}.Wr"], params[f"{name}.br"]) + h @ params[f"{name}.Ur"])
    n = ad.tanh(ad.affine(x, params[f"{name}.Wn"], params[f"{name}.bn"]) + r * (h @ params[f"{name}.Un"]))
    return (1.0 - z) * n + z * h


def gru_run(params, name, steps, n_hidden):
    """Run one GRU layer over a sequence of (batch, features) inputs.

    Returns the list of hidden states, one per step.  The initial hidden
    state is zero, so outputs stay inside (-1, 1) elementwise.
    """
    batch = np.shape(steps[0].value if isinstance(steps[0], Var) else steps[0])[0]
    h = Var(np.zeros((batch, n_hidden)), op="h0")
    outputs = []
    for x in steps:
        h = gru_cell(params, name, x, h)
        outputs.append(h)
    return outputs


def gru_sequence(params, name, x_seq, n_hidden):
    """Whole-sequence GRU layer as one graph node: (T, B, F) -> (T, B, H).

    Forward hoists the input-side product of all steps into a single matmul
    and keeps only the recurrence in the loop; backward is the standard
    truncated recursion over the stored gates.  Numerically this matches
    composing `gru_cell` step by step (up to summation order); it exists
    because building the per-step graph dominated training time.
    """
    x_seq = ad.lift(x_seq)
    if x_seq.ndim != 3:
        raise ValueError("gru_sequence expects a (steps, batch, features) input")
    n_steps, batch, _ = x_seq.shape
    w_all = np.hstack([params[f"{name}.W{g}"].value for g in ("z", "r", "n")])
    u_all = np.hstack([params[f"{name}.U{g}"].value for g in ("z", "r", "n")])
    b_all = np.hstack([params[f"{name}.b{g}"].value for g in ("z", "r", "n")])
    h_dim = n_hidden

    x_flat = x_seq.value.reshape(n_steps * batch, -1)
    ax = (x_flat @ w_all + b_all).reshape(n_steps, batch, 3 * h_dim)
    hs = np.empty((n_steps + 1, batch, h_dim))
    hs[0] = 0.0
    zs = np.empty((n_steps, batch, h_dim))
    rs = np.empty_like(zs)
    ns = np.empty_like(zs)
    h_un = np.empty_like(zs)
    for t in range(n_steps):
        hu = hs[t] @ u_all
        zs[t] = 1.0 / (1.0 + np.exp(-(ax[t, :, :h_dim] + hu[:, :h_dim])))
        rs[t] = 1.0 / (1.0 + np.exp(-(ax[t, :, h_dim : 2 * h_dim] + hu[:, h_dim : 2 * h_dim])))
        h_un[t] = hu[:, 2 * h_dim :]
        ns[t] = np.tanh(ax[t, :, 2 * h_dim :] + rs[t] * h_un[t])
        hs[t + 1] = (1.0 - zs[t]) * ns[t] + zs[t] * hs[t]

    def bwd(g):
        ga = np.empty((n_steps, batch, 3 * h_dim))  # preactivation grads (z, r, n)
        gu = np.empty_like(ga)  # same, with the n column scaled by the reset gate
        carry = np.zeros((batch, h_dim))
        for t in range(n_steps - 1, -1, -1):
            gh = g[t] + carry
            z, r, n = zs[t], rs[t], ns[t]
            gan = gh * (1.0 - z) * (1.0 - n * n)
            gaz = gh * (hs[t] - n) * z * (1.0 - z)
            gar = gan * h_un[t] * r * (1.0 - r)
            ga[t, :, :h_dim] = gaz
            ga[t, :, h_dim : 2 * h_dim] = gar
            ga[t, :, 2 * h_dim :] = gan
            gu[t, :, : 2 * h_dim] = ga[t, :, : 2 * h_dim]
            gu[t, :, 2 * h_dim :] = gan * r
            carry = gh * z + gu[t] @ u_all.T
        ga_flat = ga.reshape(n_steps * batch, -1)
        gx = (ga_flat @ w_all.T).reshape(x_seq.shape)
        gw = x_flat.T @ ga_flat
        gb = ga_flat.sum(axis=0)
        gu_all = np.einsum("tbh,tbk->hk", hs[:-1], gu)
        cols = [slice(0, h_dim), slice(h_dim, 2 * h_dim), slice(2 * h_dim, None)]
        out = [gx]
        for col in cols:
            out.extend([gw[:, col], gu_all[:, col], gb[col]])
        return tuple(out)

    parents = (x_seq,)
    for gate in ("z", "r", "n"):
        parents += (params[f"{name}.W{gate}"], params[f"{name}.U{gate}"], params[f"{name}.b{gate}"])
    return Var(hs[1:], parents, bwd, "gru_sequence")


class Adam:
    """Adam with bias correction; step() consumes and clears the gradients."""

    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(v.value) for name, v in store.items()}
        self.v = {name: np.zeros_like(v.value) for name, v in store.items()}

    def step(self):
        self.t += 1
        scale_m = 1.0 - self.beta1**self.t
        scale_v = 1.0 - self.beta2**self.t
        for name, param in self.store.items():
            grad = param.grad
            if grad is None:
                grad = 0.0
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(grad)
            param.value -= self.lr * (m / scale_m) / (np.sqrt(v / scale_v) + self.eps)
        self.store.zero_grads()

    def state_dict(self):
        return {
            "t": self.t,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": {k: arr.ravel().tolist() for k, arr in self.m.items()},
            "v": {k: arr.ravel().tolist() for k, arr in self.v.items()},
        }

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        for k, arr in self.m.items():
            arr[...] = np.asarray(state["m"][k], dtype=float).reshape(arr.shape)
        for k, arr in self.v.items():
            arr[...] = np.asarray(state["v"][k], dtype=float).reshape(arr.shape)


def save_checkpoint(path, store, architecture_config, rng_seed, training_history=None, adam=None, extra=None):
    """Write a versioned JSON checkpoint; floats survive the round trip exactly."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "architecture_config": architecture_config,
        "rng_seed": rng_seed,
        "training_history": training_history if training_history is not None else [],
        "params": {
            name: {"shape": list(var.value.shape), "data": var.value.ravel().tolist()}
            for name, var in store.items()
        },
    }
    if adam is not None:
        payload["adam_state"] = adam.state_dict()
    if extra:
        for key, value in extra.items():
            if key in payload:
                raise ValueError(f"extra checkpoint field {key!r} collides with a core field")
            payload[key] = value
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    return payload


def params_from_checkpoint(payload):
    """Rebuild the raw parameter arrays stored in a checkpoint payload."""
    values = {}
    for name, entry in payload["params"].items():
        values[name] = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
    return values
