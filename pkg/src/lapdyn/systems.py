"""Benchmark dynamical systems and the integrators that generate them.

Delay equations are integrated by the method of steps: classical RK4 on a
fixed dense grid, with delayed-state lookups served by cubic Hermite
interpolation of the stored solution (the grid stores slopes as well as
states, so the interpolant is C1 and locally fourth order).  The stiff Van
der Pol oscillator uses an adaptive TR-BDF2 scheme with an analytic
Jacobian.  Forced-ODE and integro-DE trajectories come from closed forms.

All solvers are batched: states have shape (batch, dim) and a whole family
of initial conditions shares one time grid.
"""

import numpy as np

SPIRAL_A = np.array([[-1.0, 1.0], [-1.0, -1.0]])
SPIRAL_TAU = 2.5
LOTKA_TAU = 0.1
MACKEY_TAU = 10.0
MACKEY_BETA = 0.25
MACKEY_GAMMA = 0.1
MACKEY_N = 10
VDP_MU = 1000.0

# TR-BDF2 constants: gamma = 2 - sqrt(2) makes both implicit stages share
# one Newton matrix; ERR_K is the third-order error-estimate weight.
TRBDF2_GAMMA = 2.0 - np.sqrt(2.0)
TRBDF2_ERR_K = (-3.0 * TRBDF2_GAMMA**2 + 4.0 * TRBDF2_GAMMA - 2.0) / (
    12.0 * (2.0 - TRBDF2_GAMMA)
)


class DenseGrid:
    """Stored solution nodes (t, y, f) with cubic Hermite evaluation.

    The slope can jump at a node when the right-hand side is discontinuous
    there (delayed reads of a piecewise history).  `fs` holds right limits
    (they seed the next step); `fs_left`, when given, holds left limits and
    supplies the slope at the right endpoint of each interval so the
    interpolant is one-sidedly consistent on both sides of a jump.
    """

    def __init__(self, ts, ys, fs, fs_left=None):
        self.ts = np.asarray(ts, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.fs = np.asarray(fs, dtype=float)
        self.fs_left = self.fs if fs_left is None else np.asarray(fs_left, dtype=float)
        if self.ts.ndim != 1 or self.ts.size < 2:
            raise ValueError("dense grid needs at least two nodes")
        if not (self.ys.shape == self.fs.shape and self.ys.shape[0] == self.ts.size):
            raise ValueError("node array shapes are inconsistent")

    def __call__(self, t):
        ts = self.ts
        span = ts[-1] - ts[0]
        if t < ts[0] - 1e-12 * max(span, 1.0):
            raise ValueError(f"lookup at t={t} precedes the stored solution")
        if t > ts[-1] + 1e-12 * max(span, 1.0):
            raise ValueError(f"lookup at t={t} is beyond the stored solution")
        i = int(np.searchsorted(ts, t, side="right")) - 1
        i = min(max(i, 0), ts.size - 2)
        h = ts[i + 1] - ts[i]
        theta = min(max((t - ts[i]) / h, 0.0), 1.0)
        t2 = theta * theta
        t3 = t2 * theta
        h00 = 2.0 * t3 - 3.0 * t2 + 1.0
        h10 = t3 - 2.0 * t2 + theta
        h01 = -2.0 * t3 + 3.0 * t2
        h11 = t3 - t2
        return (
            h00 * self.ys[i]
            + (h10 * h) * self.fs[i]
            + h01 * self.ys[i + 1]
            + (h11 * h) * self.fs_left[i + 1]
        )

    def sample(self, times):
        """Evaluate at each requested time; returns (batch, len(times), dim)."""
        cols = [self(t) for t in np.asarray(times, dtype=float)]
        return np.stack(cols, axis=-2)


def integrate_dde(field, history, t0, t1, n_steps, tau, history_left=None):
    """Method of steps for one fixed delay tau.

    field(t, y, y_delayed) -> dy/dt on (batch, dim) arrays; history(t) gives
    the state for t <= t0.  The internal step must not exceed the delay so
    every delayed lookup lands in already-computed territory.

    A piecewise history makes the right-hand side jump wherever a delayed
    read crosses one of its breakpoints.  Callers align the step so those
    crossings land on grid nodes and pass `history_left` for the left
    limits; the stage ending a step then sees the limit from inside that
    step, which keeps the scheme at full order through the jumps.
    """
    if tau <= 0:
        raise ValueError("delay must be positive")
    if n_steps < 1:
        raise ValueError("need at least one step")
    h = (t1 - t0) / n_steps
    if h <= 0:
        raise ValueError("empty integration interval")
    if h > tau:
        raise ValueError(f"internal step {h} exceeds the delay {tau}")

    ts = t0 + h * np.arange(n_steps + 1)
    ts[-1] = t1
    y0 = np.asarray(history(t0), dtype=float)
    ys = np.empty((n_steps + 1,) + y0.shape)
    fs = np.empty_like(ys)  # right-limit slopes, consumed as next-step k1
    fs_left = np.empty_like(ys)
    ys[0] = y0
    one_sided = history_left is not None
    hist_left = history_left if one_sided else history
    grid = DenseGrid.__new__(DenseGrid)  # filled incrementally below

    def delayed(t, left=False):
        if t <= t0:
            return np.asarray((hist_left if left else history)(t), dtype=float)
        return grid(t)

    def refresh(k):
        grid.ts = ts[: k + 1]
        grid.ys = ys[: k + 1]
        grid.fs = fs[: k + 1]
        grid.fs_left = fs_left[: k + 1]

    refresh(0)
    fs[0] = field(t0, ys[0], delayed(t0 - tau))
    fs_left[0] = fs[0]
    for i in range(n_steps):
        t = ts[i]
        y = ys[i]
        d_mid = delayed(t + 0.5 * h - tau)
        d_end = delayed(t + h - tau, left=True)
        k1 = fs[i]
        k2 = field(t + 0.5 * h, y + 0.5 * h * k1, d_mid)
        k3 = field(t + 0.5 * h, y + 0.5 * h * k2, d_mid)
        k4 = field(t + h, y + h * k3, d_end)
        ys[i + 1] = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        fs_left[i + 1] = field(ts[i + 1], ys[i + 1], d_end)
        refresh(i + 1)
        if one_sided:
            fs[i + 1] = field(ts[i + 1], ys[i + 1], delayed(ts[i + 1] - tau))
        else:
            fs[i + 1] = fs_left[i + 1]
    return DenseGrid(ts, ys, fs, fs_left)


def constant_history(values):
    arr = np.atleast_2d(np.asarray(values, dtype=float))
    return lambda t: arr


def spiral_field(t, y, y_tau):
    return np.tanh(y + y_tau) @ SPIRAL_A.T


def solve_spiral(history_values, times, n_steps=2000):
    """Coupled delay spiral on t in [0, 20] with constant history."""
    grid = integrate_dde(spiral_field, constant_history(history_values),
                         0.0, 20.0, n_steps, SPIRAL_TAU)
    return grid.sample(times)


def lotka_volterra_field(t, y, y_tau):
    out = np.empty_like(y)
    out[..., 0] = 0.5 * y[..., 0] * (1.0 - y_tau[..., 1])
    out[..., 1] = 0.5 * y[..., 1] * (1.0 - y_tau[..., 0])
    return out


def solve_lotka_volterra(history_values, times, n_steps=2000):
    """Delay predator-prey on t in [0, 2]; observations live in [0.1, 2]."""
    grid = integrate_dde(lotka_volterra_field, constant_history(history_values),
                         0.0, 2.0, n_steps, LOTKA_TAU)
    return grid.sample(times)


def mackey_glass_field(t, y, y_tau):
    xd = y_tau
    return MACKEY_BETA * xd / (1.0 + xd**MACKEY_N) - MACKEY_GAMMA * y


def mackey_history(codes):
    """Piecewise-constant binary history on [0, 10): ten unit segments.

    codes is (batch, 10) with entries in {-1, 1.1}; segment j covers
    [j, j+1).  Returns (right, left) lookup functions; they differ only at
    the integer breakpoints, where `right` takes the incoming segment and
    `left` the outgoing one.  Queries within 1e-9 of an integer are snapped
    to it, absorbing lattice rounding in the solver's step times.
    """
    codes = np.asarray(codes, dtype=float)
    if codes.ndim != 2 or codes.shape[1] != 10:
        raise ValueError("expected (batch, 10) history codes")

    def segment(t, left):
        nearest = round(t)
        if abs(t - nearest) < 1e-9:
            j = nearest - 1 if left else nearest
        else:
            j = int(np.floor(t))
        return codes[:, min(max(j, 0), 9), None]

    return (lambda t: segment(t, False)), (lambda t: segment(t, True))


def solve_mackey_glass(codes, times, n_steps=2070):
    """Long-memory delay system; `times` are in the rescaled interval [0, 20].

    Raw dynamics run on [10, 100] after the binary history fills [0, 10);
    raw time is 5x the rescaled time.  For rescaled t < 2 the trajectory IS
    the history.
    """
    hist_right, hist_left = mackey_history(codes)
    grid = integrate_dde(mackey_glass_field, hist_right, 10.0, 100.0,
                         n_steps, MACKEY_TAU, history_left=hist_left)
    raw = 5.0 * np.asarray(times, dtype=float)
    cols = [hist_right(t) if t < 10.0 else grid(t) for t in raw]
    return np.stack(cols, axis=-2)


def hutchinson_field(a):
    def field(t, y, y_tau):
        return a * y * (1.0 - y_tau)

    return field


def solve_hutchinson(x0, times, a=1.0, n_steps=2000, t_end=10.0):
    """Logistic delay equation with unit delay and constant history x0."""
    grid = integrate_dde(hutchinson_field(a), constant_history(x0),
                         0.0, t_end, n_steps, 1.0)
    return grid.sample(times)


def vdp_field(mu):
    def field(t, y):
        out = np.empty_like(y)
        out[..., 0] = y[..., 1]
        out[..., 1] = mu * (1.0 - y[..., 0] ** 2) * y[..., 1] - y[..., 0]
        return out

    return field


def vdp_jacobian(mu):
    def jac(t, y):
        b = y.shape[0]
        out = np.zeros((b, 2, 2))
        out[:, 0, 1] = 1.0
        out[:, 1, 0] = -2.0 * mu * y[:, 0] * y[:, 1] - 1.0
        out[:, 1, 1] = mu * (1.0 - y[:, 0] ** 2)
        return out

    return jac


def _newton_stage(field, jac, t_stage, rhs, d_h, guess, scale, max_iter=15):
    """Solve y = rhs + d_h * f(t_stage, y) by damped-free full Newton."""
    y = guess.copy()
    eye = np.eye(y.shape[-1])
    prev = np.inf
    for _ in range(max_iter):
        residual = y - d_h * field(t_stage, y) - rhs
        m = eye - d_h * jac(t_stage, y)
        try:
            delta = np.linalg.solve(m, -residual[..., None])[..., 0]
        except np.linalg.LinAlgError:
            return None
        y = y + delta
        err = float(np.max(np.abs(delta) / scale))
        if not np.isfinite(err):
            return None
        if err < 5e-2:
            return y
        if err > 4.0 * prev:
            return None  # diverging
        prev = err
    return None


def integrate_trbdf2(field, jac, y0, t0, t1, atol=1e-8, rtol=1e-6,
                     h0=None, max_steps=2_000_000):
    """Adaptive TR-BDF2 over a batch sharing one step sequence.

    The error controller uses the max scaled third-order estimate over the
    whole batch, so every trajectory meets the tolerance.  Returns a
    DenseGrid of accepted nodes.
    """
    gamma = TRBDF2_GAMMA
    d = gamma / 2.0
    y = np.atleast_2d(np.asarray(y0, dtype=float)).copy()
    t = float(t0)
    span = float(t1) - t
    if span <= 0:
        raise ValueError("empty integration interval")
    h = span * 1e-6 if h0 is None else float(h0)
    h_min = span * 1e-13

    ts = [t]
    ys = [y.copy()]
    f = field(t, y)
    fs = [f.copy()]

    for _ in range(max_steps):
        if t >= t1:
            return DenseGrid(np.array(ts), np.stack(ys), np.stack(fs))
        h = min(h, t1 - t)
        if h < h_min:
            raise RuntimeError(f"step size underflow at t={t}")
        scale = atol + rtol * np.abs(y)

        t_mid = t + gamma * h
        y_mid = _newton_stage(field, jac, t_mid, y + d * h * f, d * h,
                              y + gamma * h * f, scale)
        if y_mid is None:
            h *= 0.5
            continue
        f_mid = field(t_mid, y_mid)

        rhs = (y_mid - (1.0 - gamma) ** 2 * y) / (gamma * (2.0 - gamma))
        y_new = _newton_stage(field, jac, t + h, rhs, d * h, y_mid, scale)
        if y_new is None:
            h *= 0.5
            continue
        f_new = field(t + h, y_new)

        est = TRBDF2_ERR_K * h * (
            f / gamma
            - f_mid / (gamma * (1.0 - gamma))
            + f_new / (1.0 - gamma)
        )
        err = float(np.max(np.abs(est) / (atol + rtol * np.abs(y_new))))
        if not np.isfinite(err):
            h *= 0.5
            continue
        factor = min(max(0.9 * err ** (-1.0 / 3.0) if err > 0 else 5.0, 0.2), 5.0)
        if err <= 1.0:
            t += h
            y = y_new
            f = f_new
            ts.append(t)
            ys.append(y.copy())
            fs.append(f.copy())
        h *= factor
    raise RuntimeError("step budget exhausted")


def solve_stiff_vdp(x0, times, mu=VDP_MU, atol=1e-8, rtol=1e-6):
    """Stiff Van der Pol with y(0)=0; `times` are in rescaled units.

    Raw integration covers [0, 200 * max(times)] (the native interval is
    [0, 4000], reported on [0, 20]); outputs are read off the dense grid at
    raw time 200 * t.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    y0 = np.zeros((x0.size, 2))
    y0[:, 0] = x0
    raw = 200.0 * np.asarray(times, dtype=float)
    if raw.size == 0:
        raise ValueError("no output times requested")
    grid = integrate_trbdf2(vdp_field(mu), vdp_jacobian(mu), y0,
                            0.0, float(np.max(raw)), atol=atol, rtol=rtol)
    return grid.sample(raw)


def eval_forced_ode(x0, t):
    """Oscillator x'' + 4x = u(t) under the ramp-then-hold load.

    u is 0 until t=5, rises linearly to 1 at t=10, then holds.  Closed form
    via Duhamel's integral; each ramp onset contributes
    (1/20) * ((t - t0) - sin(2(t - t0)) / 2) past its own start.
    """
    t = np.asarray(t, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    ramp1 = np.where(t > 5.0, (t - 5.0) - 0.5 * np.sin(2.0 * (t - 5.0)), 0.0)
    ramp2 = np.where(t > 10.0, (t - 10.0) - 0.5 * np.sin(2.0 * (t - 10.0)), 0.0)
    return x0 * np.cos(2.0 * t) + (ramp1 - ramp2) / 20.0


def eval_integro_de(x0, t):
    """x' + 2x + 5 * integral of x = step input; damped ringing toward 0."""
    t = np.asarray(t, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    return np.exp(-t) * (x0 * np.cos(2.0 * t) + 0.5 * (1.0 - x0) * np.sin(2.0 * t))


WAVEFORM_KINDS = ("sine", "square", "sawtooth")


def waveform(kind, times, shift=0.0):
    """Periodic toy signals evaluated at times + shift (period 2*pi)."""
    t = np.asarray(times, dtype=float) + shift
    if kind == "sine":
        return np.sin(t)
    if kind == "sawtooth":
        return t / (2.0 * np.pi) - np.floor(t / (2.0 * np.pi))
    if kind == "square":
        return 2.0 * (1.0 - np.floor(t / np.pi) % 2)
    raise ValueError(f"unknown waveform {kind!r}")
