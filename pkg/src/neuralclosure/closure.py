"""Augmented systems (known physics + neural closure) and their adjoints.

A closure model adds a trainable term to a known low-fidelity right-hand
side. Three memory structures are supported:

* ``Markovian``: du/dt = base(t, u) + f(u; theta), a neural ODE term;
* ``Discrete``: the closure is a recurrent network fed the state at a set of
  discrete delays, du/dt = base + f([u(t-tau_K), ..., u(t-tau_1), u(t)]; theta);
* ``Distributed``: a coupled pair where an auxiliary field y integrates a
  learned density g over a moving window [t-tau_2, t-tau_1]:
      du/dt = base(t, u) + f([u; y]; theta)
      dy/dt = g(u(t-tau_1), t-tau_1; phi) - g(u(t-tau_2), t-tau_2; phi)
      y(t0) = integral of g(h(s), s; phi) over [t0-tau_2, t0-tau_1].

Gradients of data-time losses are computed by integrating adjoint variables
backward in time. The adjoint equations reference *advanced* arguments
lambda(t+tau), mu(t+tau); these are read from the backward-growing dense
store (zero at and beyond the final time). Losses enter as jumps
lambda <- lambda - dl/du applied when the sweep crosses a data time; the sign
convention is frozen against the finite-difference oracle in the tests.

All parameters of one model travel in a single flat vector: theta first,
then phi for distributed closures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .integrate import (
    DdeProblem,
    DenseTrajectory,
    RK4Fixed,
    StepperSpec,
    integrate_dde,
    integrate_ode,
    quadrature,
)
from .linalg import Vec


# ---------------------------------------------------------------------------
# Closure models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Markovian:
    net: nn.Network


@dataclass(frozen=True)
class Discrete:
    """Recurrent closure over states at discrete delays (ascending, > 0).

    The network receives the sequence oldest first:
    [u(t - tau_K), ..., u(t - tau_1), u(t)]. K = 0 reduces to a Markovian
    closure evaluated through the recurrent cell on a one-element sequence.
    """

    net: nn.Network
    delays: tuple[float, ...]

    def __post_init__(self):
        d = tuple(float(x) for x in self.delays)
        if any(x <= 0.0 for x in d):
            raise ValueError("Discrete: delays must be positive")
        if any(d[i] >= d[i + 1] for i in range(len(d) - 1)):
            raise ValueError("Discrete: delays must be strictly ascending")
        object.__setattr__(self, "delays", d)
        if not self.net.recurrent:
            raise ValueError("Discrete closure needs a recurrent network")


@dataclass(frozen=True)
class Distributed:
    """Windowed-memory closure with auxiliary state y of dimension aux_dim.

    ``window`` is (tau_1, tau_2) with 0 <= tau_1 <= tau_2; tau_1 == tau_2
    degenerates to y frozen at its initial value (an empty moving window).
    ``history_quad_panels`` fixes the trapezoid rule used for y(t0); the
    adjoint's history term mirrors the same rule so gradients stay consistent
    with the forward computation.
    """

    f_net: nn.Network
    g_net: nn.Network
    window: tuple[float, float]
    aux_dim: int
    history_quad_panels: int = 64

    def __post_init__(self):
        t1, t2 = (float(self.window[0]), float(self.window[1]))
        if t1 < 0.0 or t2 < t1:
            raise ValueError("Distributed: need 0 <= tau_1 <= tau_2")
        object.__setattr__(self, "window", (t1, t2))
        if self.aux_dim <= 0:
            raise ValueError("Distributed: aux_dim must be positive")


ClosureModel = Markovian | Discrete | Distributed


@dataclass(frozen=True)
class AugmentedSystem:
    """base_rhs plus a neural closure acting on a flat state of state_dim.

    ``base_vjp(t, u, w)`` must return w^T d(base_rhs)/du; when omitted it is
    approximated by central differences on base_rhs (slower, used by tests
    and small toys). ``grid_points`` is required when the closure networks
    operate on (points, channels) fields; flat states are then reshaped
    C-order, i.e. point-major.
    """

    base_rhs: Callable[[float, Vec], Vec]
    closure: ClosureModel
    state_dim: int
    base_vjp: Callable[[float, Vec, Vec], Vec] | None = None
    grid_points: int | None = None

    # -- parameter bookkeeping -------------------------------------------

    @property
    def n_theta(self) -> int:
        if isinstance(self.closure, Distributed):
            return self.closure.f_net.n_params
        return self.closure.net.n_params

    @property
    def n_phi(self) -> int:
        if isinstance(self.closure, Distributed):
            return self.closure.g_net.n_params
        return 0

    @property
    def n_params(self) -> int:
        return self.n_theta + self.n_phi

    def split_params(self, params: Vec) -> tuple[Vec, Vec]:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(
                f"params shape {params.shape}, expected ({self.n_params},)")
        return params[:self.n_theta], params[self.n_theta:]

    @property
    def aux_dim(self) -> int:
        return self.closure.aux_dim if isinstance(self.closure, Distributed) else 0

    @property
    def aug_dim(self) -> int:
        return self.state_dim + self.aux_dim

    # -- flat <-> network-shape adapters ---------------------------------

    def _shape_for(self, net: nn.Network, v: Vec):
        kind, ch = net.input_spec
        if kind == "dense":
            return v
        if self.grid_points is None:
            raise ValueError("grid closure networks need grid_points")
        return v.reshape(self.grid_points, ch)

    def _flatten_out(self, out) -> Vec:
        return np.asarray(out, dtype=float).ravel()

    def _f_input(self, u: Vec, y: Vec):
        """Concatenate state and auxiliary field for the distributed f-net."""
        net = self.closure.f_net
        kind, _ = net.input_spec
        if kind == "dense":
            return np.concatenate([u, y])
        n = self.grid_points
        cu = self.state_dim // n
        cy = self.aux_dim // n
        return np.concatenate([u.reshape(n, cu), y.reshape(n, cy)], axis=1)

    def _split_f_input_grad(self, dx) -> tuple[Vec, Vec]:
        kind, _ = self.closure.f_net.input_spec
        if kind == "dense":
            return dx[:self.state_dim], dx[self.state_dim:]
        n = self.grid_points
        cu = self.state_dim // n
        return dx[:, :cu].ravel(), dx[:, cu:].ravel()

    def _base_vjp(self, t: float, u: Vec, w: Vec) -> Vec:
        if self.base_vjp is not None:
            return np.asarray(self.base_vjp(t, u, w), dtype=float)
        return _fd_rhs_vjp(self.base_rhs, t, u, w)

    # -- closure term evaluations ----------------------------------------

    def closure_term(self, t: float, u: Vec, theta: Vec,
                     delayed: list[Vec] | None = None, y: Vec | None = None) -> Vec:
        """The neural contribution to du/dt at time t."""
        c = self.closure
        if isinstance(c, Markovian):
            out = nn.forward(c.net, self._shape_for(c.net, u), theta, t)
        elif isinstance(c, Discrete):
            seq = [self._shape_for(c.net, v) for v in (delayed or [])] + \
                  [self._shape_for(c.net, u)]
            out = nn.rnn_forward(c.net, seq, theta, t)
        else:
            out = nn.forward(c.f_net, self._f_input(u, y), theta, t)
        term = self._flatten_out(out)
        if term.shape != (self.state_dim,):
            raise ValueError(
                f"closure output has {term.size} entries, state has {self.state_dim}")
        return term

    def g_eval(self, t: float, u: Vec, phi: Vec) -> Vec:
        g = self.closure.g_net
        out = nn.forward(g, self._shape_for(g, u), phi, t)
        out = self._flatten_out(out)
        if out.shape != (self.aux_dim,):
            raise ValueError(
                f"g-network output has {out.size} entries, aux_dim is {self.aux_dim}")
        return out


def _fd_rhs_vjp(rhs, t, u, w, eps=1e-7):
    """w^T d(rhs)/du by central differences (fallback when no analytic VJP)."""
    g = np.zeros_like(u)
    for j in range(u.size):
        du = eps * max(1.0, abs(u[j]))
        up, um = u.copy(), u.copy()
        up[j] += du
        um[j] -= du
        g[j] = float(w @ (np.asarray(rhs(t, up)) - np.asarray(rhs(t, um)))) / (2 * du)
    return g


def constant_history(u0: Vec) -> Callable[[float], Vec]:
    """History callable that returns the initial state for every past time."""
    u0 = np.asarray(u0, dtype=float).copy()
    return lambda t: u0


# ---------------------------------------------------------------------------
# Forward solves
# ---------------------------------------------------------------------------


@dataclass
class ForwardRun:
    """Forward solution of an augmented system plus the context the adjoint
    needs: the original history callable and the state/aux split."""

    traj: DenseTrajectory
    t0: float
    t1: float
    u_dim: int
    aux_dim: int
    history: Callable[[float], Vec] | None

    def _clip(self, t: float) -> float:
        # tolerate ulp overshoot past the final time (advanced-time lookups)
        if t > self.t1 and t - self.t1 < 1e-9 * max(1.0, abs(t)):
            return self.t1
        return t

    def u_at(self, t: float) -> Vec:
        if t < self.t0:
            if self.history is None:
                raise ValueError(f"state requested at t={t} before start without history")
            return np.asarray(self.history(t), dtype=float)
        return self.traj.eval(self._clip(t))[:self.u_dim]

    def y_at(self, t: float) -> Vec:
        if self.aux_dim == 0:
            return np.zeros(0)
        return self.traj.eval(self._clip(t))[self.u_dim:]


def forward_augmented(sys: AugmentedSystem, params: Vec, t_span: tuple[float, float],
                      stepper: StepperSpec,
                      history: Callable[[float], Vec] | None = None,
                      u0: Vec | None = None) -> ForwardRun:
    """Solve the augmented system over t_span.

    ``history`` supplies u(t) for t <= t_span start; required whenever the
    closure looks into the past. ``u0`` overrides the initial state (defaults
    to history at the start, or must be given for Markovian closures).
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    theta, phi = sys.split_params(params)
    c = sys.closure

    if u0 is None:
        if history is None:
            raise ValueError("forward_augmented needs u0 or a history callable")
        u0 = np.asarray(history(t0), dtype=float)
    else:
        u0 = np.asarray(u0, dtype=float)
    if u0.shape != (sys.state_dim,):
        raise ValueError(f"u0 shape {u0.shape}, expected ({sys.state_dim},)")

    if isinstance(c, Markovian) or (isinstance(c, Discrete) and not c.delays):
        if isinstance(c, Markovian):
            def rhs(t, u):
                return sys.base_rhs(t, u) + sys.closure_term(t, u, theta)
        else:
            def rhs(t, u):
                return sys.base_rhs(t, u) + sys.closure_term(t, u, theta, delayed=[])
        traj = integrate_ode(rhs, u0, (t0, t1), stepper)
        return ForwardRun(traj, t0, t1, sys.state_dim, 0, history)

    if isinstance(c, Discrete):
        if history is None:
            raise ValueError("discrete-delay closure needs a history callable")

        def hist(s):
            if s >= t0:
                return u0
            return np.asarray(history(s), dtype=float)

        def rhs(t, u, delayed):
            # delayed arrives ascending by delay; the net wants oldest first
            return sys.base_rhs(t, u) + sys.closure_term(
                t, u, theta, delayed=list(reversed(delayed)))

        prob = DdeProblem(rhs=rhs, delays=c.delays, history=hist)
        traj = integrate_dde(prob, (t0, t1), stepper)
        return ForwardRun(traj, t0, t1, sys.state_dim, 0, history)

    # distributed closure
    tau1, tau2 = c.window
    if tau2 > tau1 and history is None:
        raise ValueError("distributed closure needs a history callable")

    if tau2 > tau1:
        y0 = quadrature(lambda s: sys.g_eval(s, np.asarray(history(s), float), phi),
                        t0 - tau2, t0 - tau1, c.history_quad_panels)
    else:
        y0 = np.zeros(sys.aux_dim)
    U0 = np.concatenate([u0, y0])

    pos = sorted({tau for tau in (tau1, tau2) if tau > 0.0})

    def u_of(U):
        return U[:sys.state_dim]

    def aug_rhs_parts(t, U, u_tau1, u_tau2):
        u, y = U[:sys.state_dim], U[sys.state_dim:]
        du = sys.base_rhs(t, u) + sys.closure_term(t, u, theta, y=y)
        if tau2 > tau1:
            dy = sys.g_eval(t - tau1, u_tau1, phi) - sys.g_eval(t - tau2, u_tau2, phi)
        else:
            dy = np.zeros(sys.aux_dim)
        return np.concatenate([du, dy])

    if not pos or tau1 == tau2:
        def rhs_ode(t, U):
            u = u_of(U)
            return aug_rhs_parts(t, U, u, u)
        traj = integrate_ode(rhs_ode, U0, (t0, t1), stepper)
        return ForwardRun(traj, t0, t1, sys.state_dim, sys.aux_dim, history)

    def hist_aug(s):
        if s >= t0:
            return U0
        return np.concatenate([np.asarray(history(s), float), np.zeros(sys.aux_dim)])

    idx = {tau: i for i, tau in enumerate(pos)}

    def rhs_dde(t, U, delayed):
        u = u_of(U)
        u1 = u if tau1 == 0.0 else u_of(delayed[idx[tau1]])
        u2 = u_of(delayed[idx[tau2]])
        return aug_rhs_parts(t, U, u1, u2)

    prob = DdeProblem(rhs=rhs_dde, delays=tuple(pos), history=hist_aug)
    traj = integrate_dde(prob, (t0, t1), stepper)
    return ForwardRun(traj, t0, t1, sys.state_dim, sys.aux_dim, history)


# ---------------------------------------------------------------------------
# Adjoint sweeps
# ---------------------------------------------------------------------------


@dataclass
class AdjointRun:
    """Backward adjoint solution and the assembled parameter gradient.

    ``adjoint_traj`` stores the adjoint state over [t0, T] (state adjoint
    lambda, then the auxiliary adjoint mu for distributed closures); queries
    at t >= T return zero by construction.
    """

    adjoint_traj: DenseTrajectory
    t0: float
    t_final: float
    u_dim: int
    aux_dim: int
    grad: Vec
    n_theta: int

    @property
    def grad_theta(self) -> Vec:
        return self.grad[:self.n_theta]

    @property
    def grad_phi(self) -> Vec:
        return self.grad[self.n_theta:]

    def lam_at(self, t: float) -> Vec:
        if t >= self.t_final:
            return np.zeros(self.u_dim)
        return self.adjoint_traj.eval(t)[:self.u_dim]

    def mu_at(self, t: float) -> Vec:
        if t >= self.t_final:
            return np.zeros(self.aux_dim)
        return self.adjoint_traj.eval(t)[self.u_dim:]


def _loss_jumps(run: ForwardRun, dataset, loss_spec):
    """Data times (ascending) and dL/du(T_i) cotangents from the forward run."""
    times = np.asarray(dataset.times, dtype=float)
    targets = np.asarray(dataset.states, dtype=float)
    if times.ndim != 1 or targets.shape != (times.size, run.u_dim):
        raise ValueError("dataset shapes inconsistent with the forward run")
    tol = 1e-9 * max(1.0, abs(run.t1))
    if np.any(times <= run.t0 + tol) or np.any(times > run.t1 + tol):
        raise ValueError("dataset times must lie in (t0, T]")
    times = np.minimum(times, run.t1)
    order = np.argsort(times)
    times = times[order]
    targets = targets[order]
    preds = np.stack([run.u_at(t) for t in times])
    cots = np.asarray(loss_spec.cotangents(preds, targets), dtype=float)
    if cots.shape != preds.shape:
        raise ValueError("loss cotangents must match prediction shape")
    return times, cots


def _advance_clip(tau_list):
    pos = [tau for tau in tau_list if tau > 0.0]
    return min(pos) if pos else None


def _backward_sweep(dim, t0, T, jump_times, jump_vals, rhs_adj, integrand, dt,
                    tau_cap=None, extra_stops=()):
    """Fixed-step RK4 sweep from T down to t0 with jumps and running trapezoid.

    rhs_adj(t, a, look) gives the adjoint time derivative; ``look`` reads
    already-computed adjoint values at advanced times. The adjoint state
    jumps at data times, so the advanced lookups are one-sided there: stages
    at a step's upper knot take the limit from below (the stored post-jump
    value), the final stage at the lower knot takes the limit from above
    (jump added back). ``extra_stops`` must list every time where an advanced
    argument crosses a jump (data time minus delay) so that discontinuities
    of the adjoint RHS land exactly on step boundaries; without this the
    sweep degrades to first order. ``integrand(t, a)`` returns the flat
    gradient integrand accumulated by the trapezoid rule on the backward
    knots. Returns (DenseTrajectory, integral).
    """
    store = DenseTrajectory()
    a = np.zeros(dim)
    total = None
    u_dim = jump_vals.shape[1]

    jump_map = {}
    for t, g in zip(jump_times, jump_vals):
        jump_map.setdefault(float(t), np.zeros(u_dim))
        jump_map[float(t)] += g
    special = sorted(set(jump_map) | {float(T)})

    def _snap(s):
        for tj in special:
            if abs(s - tj) <= 1e-9 * max(1.0, abs(tj)):
                return tj
        return s

    def look_below(s):
        """lambda(s-): post-jump values, zero strictly beyond T."""
        s = _snap(s)
        if s > T:
            return np.zeros(dim)
        if not len(store):
            return np.zeros(dim)
        end = store.t_end  # backward store: t_end is the lowest covered time
        if s < end and end - s < 1e-9 * max(1.0, abs(s)):
            s = end
        return store.eval(s)

    def look_above(s):
        """lambda(s+): pre-jump values, zero at and beyond T."""
        s = _snap(s)
        if s >= T:
            return np.zeros(dim)
        end = store.t_end
        if s < end and end - s < 1e-9 * max(1.0, abs(s)):
            s = end
        v = store.eval(s)
        if s in jump_map:
            v = v.copy()
            v[:u_dim] += jump_map[s]
        return v

    # segment boundaries: jump times plus the advanced-crossing stops
    eps_t = 1e-9 * max(1.0, abs(T))
    bounds = {float(t0), float(T)} | set(jump_map)
    for s in extra_stops:
        s = float(s)
        if t0 + eps_t < s < T - eps_t and all(abs(s - b) > eps_t for b in bounds):
            bounds.add(s)
    knots = sorted(bounds)

    t_hi = knots[-1]
    if t_hi in jump_map:
        a = a.copy()
        a[:u_dim] -= jump_map[t_hi]
    for seg_lo in reversed(knots[:-1]):
        span = t_hi - seg_lo
        h_max = dt if tau_cap is None else min(dt, tau_cap)
        n = max(int(np.ceil(span / h_max - 1e-12)), 1)
        ts = t_hi - (span / n) * np.arange(n + 1)
        ts[-1] = seg_lo
        m_prev = integrand(t_hi, a)
        if total is None:
            total = np.zeros_like(m_prev)
        for t, t_next in zip(ts[:-1], ts[1:]):
            h = t_next - t  # negative
            f1 = rhs_adj(t, a, look_below)
            f2 = rhs_adj(t + 0.5 * h, a + 0.5 * h * f1, look_below)
            f3 = rhs_adj(t + 0.5 * h, a + 0.5 * h * f2, look_below)
            f4 = rhs_adj(t_next, a + h * f3, look_above)
            a_next = a + (h / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
            store.append(t, t_next, a, a_next, f1, f4)
            a = a_next
            m_now = integrand(t_next, a)
            total += 0.5 * (t - t_next) * (m_prev + m_now)
            m_prev = m_now
        t_hi = seg_lo
        if t_hi in jump_map and t_hi > t0:
            a = a.copy()
            a[:u_dim] -= jump_map[t_hi]
    return store, total


def _require_rk4(stepper) -> float:
    if not isinstance(stepper, RK4Fixed):
        raise ValueError("adjoint sweeps are fixed-step RK4; pass RK4Fixed(dt)")
    return stepper.dt


def adjoint_markovian(sys: AugmentedSystem, params: Vec, run: ForwardRun,
                      dataset, loss_spec, stepper: StepperSpec) -> AdjointRun:
    """Plain no-delay adjoint: d lambda/dt = -(d_u f_total)^T lambda."""
    dt = _require_rk4(stepper)
    theta, _ = sys.split_params(params)
    net = sys.closure.net
    times, cots = _loss_jumps(run, dataset, loss_spec)
    seq = isinstance(sys.closure, Discrete)

    def net_vjp(t, u, w):
        x = sys._shape_for(net, u)
        wshaped = w if net.output_spec[0] == "dense" else w.reshape(
            sys.grid_points, net.output_spec[1])
        if seq:
            dxs, dth = nn.vjp(net, [x], theta, wshaped, t)
            return sys._flatten_out(dxs[0]), dth
        dx, dth = nn.vjp(net, x, theta, wshaped, t)
        return sys._flatten_out(dx), dth

    def rhs_adj(t, lam, store):
        u = run.u_at(t)
        din, _ = net_vjp(t, u, lam)
        return -(sys._base_vjp(t, u, lam) + din)

    def integrand(t, lam):
        u = run.u_at(t)
        _, dth = net_vjp(t, u, lam)
        return dth

    store, integral = _backward_sweep(run.u_dim, run.t0, run.t1, times, cots,
                                      rhs_adj, integrand, dt)
    return AdjointRun(store, run.t0, run.t1, run.u_dim, 0, -integral, sys.n_theta)


def adjoint_discrete(sys: AugmentedSystem, params: Vec, run: ForwardRun,
                     dataset, loss_spec, stepper: StepperSpec) -> AdjointRun:
    """Adjoint for discrete-delay closures with advanced arguments.

    d lambda^T/dt = -lambda^T(t) d_u F(t)
                    - sum_k lambda^T(t+tau_k) d_{u(t)} F(t+tau_k)
    with F = base + closure; the k-th advanced term differentiates F at the
    shifted time with respect to its tau_k-delayed input slot.
    """
    if not isinstance(sys.closure, Discrete):
        raise ValueError("adjoint_discrete needs a Discrete closure")
    if not sys.closure.delays:
        return adjoint_markovian(sys, params, run, dataset, loss_spec, stepper)
    dt = _require_rk4(stepper)
    theta, _ = sys.split_params(params)
    net = sys.closure.net
    delays = sys.closure.delays
    K = len(delays)
    times, cots = _loss_jumps(run, dataset, loss_spec)
    T = run.t1

    def seq_at(s):
        # oldest first: u(s - tau_K), ..., u(s - tau_1), u(s)
        vals = [run.u_at(s - tau) for tau in reversed(delays)] + [run.u_at(s)]
        return [sys._shape_for(net, v) for v in vals]

    def shaped_cot(w):
        if net.output_spec[0] == "dense":
            return w
        return w.reshape(sys.grid_points, net.output_spec[1])

    def rhs_adj(t, lam, look):
        u = run.u_at(t)
        dxs, _ = nn.vjp(net, seq_at(t), theta, shaped_cot(lam), t)
        acc = sys._base_vjp(t, u, lam) + sys._flatten_out(dxs[K])
        for k, tau in enumerate(delays, start=1):
            lam_adv = look(t + tau)[:run.u_dim]
            if not np.any(lam_adv):
                continue
            dxs_adv, _ = nn.vjp(net, seq_at(t + tau), theta,
                                shaped_cot(lam_adv), t + tau)
            acc = acc + sys._flatten_out(dxs_adv[K - k])
        return -acc

    def integrand(t, lam):
        _, dth = nn.vjp(net, seq_at(t), theta, shaped_cot(lam), t)
        return dth

    stops = [tj - tau for tj in times for tau in delays]
    store, integral = _backward_sweep(run.u_dim, run.t0, T, times, cots,
                                      rhs_adj, integrand, dt, tau_cap=delays[0],
                                      extra_stops=stops)
    return AdjointRun(store, run.t0, T, run.u_dim, 0, -integral, sys.n_theta)


def adjoint_distributed(sys: AugmentedSystem, params: Vec, run: ForwardRun,
                        dataset, loss_spec, stepper: StepperSpec) -> AdjointRun:
    """Coupled adjoint for distributed closures.

    d lambda^T/dt = -lambda^T d_u f - mu^T(t+tau_1) d_u g(u(t), t)
                    + mu^T(t+tau_2) d_u g(u(t), t)
    d mu^T/dt = -lambda^T d_y f

    The phi-gradient combines the moving-window integrand with the history
    term -mu^T(t0) * d_phi y(t0), evaluated with the same trapezoid rule the
    forward solve used for y(t0).
    """
    c = sys.closure
    if not isinstance(c, Distributed):
        raise ValueError("adjoint_distributed needs a Distributed closure")
    dt = _require_rk4(stepper)
    theta, phi = sys.split_params(params)
    tau1, tau2 = c.window
    windowed = tau2 > tau1
    times, cots = _loss_jumps(run, dataset, loss_spec)
    T = run.t1
    du_dim, dy_dim = run.u_dim, run.aux_dim

    def g_cot(w):
        g = c.g_net
        if g.output_spec[0] == "dense":
            return w
        return w.reshape(sys.grid_points, g.output_spec[1])

    def f_cot(w):
        f = c.f_net
        if f.output_spec[0] == "dense":
            return w
        return w.reshape(sys.grid_points, f.output_spec[1])

    def g_vjp_input(t, u, w):
        dx, _ = nn.vjp(c.g_net, sys._shape_for(c.g_net, u), phi, g_cot(w), t)
        return sys._flatten_out(dx)

    def g_vjp_params(t, u, w):
        _, dphi = nn.vjp(c.g_net, sys._shape_for(c.g_net, u), phi, g_cot(w), t)
        return dphi

    def rhs_adj(t, a, look):
        lam, mu = a[:du_dim], a[du_dim:]
        u, y = run.u_at(t), run.y_at(t)
        dxf, _ = nn.vjp(c.f_net, sys._f_input(u, y), theta, f_cot(lam), t)
        fu, fy = sys._split_f_input_grad(dxf)
        dlam = -(sys._base_vjp(t, u, lam) + fu)
        if windowed:
            mu1 = mu if tau1 == 0.0 else look(t + tau1)[du_dim:]
            if np.any(mu1):
                dlam = dlam - g_vjp_input(t, u, mu1)
            mu2 = look(t + tau2)[du_dim:]
            if np.any(mu2):
                dlam = dlam + g_vjp_input(t, u, mu2)
        dmu = -fy
        return np.concatenate([dlam, dmu])

    def integrand(t, a):
        lam, mu = a[:du_dim], a[du_dim:]
        u, y = run.u_at(t), run.y_at(t)
        _, dth = nn.vjp(c.f_net, sys._f_input(u, y), theta, f_cot(lam), t)
        if windowed:
            dphi = g_vjp_params(t - tau1, run.u_at(t - tau1), mu) \
                 - g_vjp_params(t - tau2, run.u_at(t - tau2), mu)
        else:
            dphi = np.zeros(sys.n_phi)
        return np.concatenate([dth, dphi])

    tau_cap = _advance_clip([tau1, tau2])
    stops = [tj - tau for tj in times for tau in (tau1, tau2) if tau > 0.0]
    store, integral = _backward_sweep(du_dim + dy_dim, run.t0, T, times, cots,
                                      rhs_adj, integrand, dt, tau_cap=tau_cap,
                                      extra_stops=stops)
    grad = -integral

    if windowed:
        # history term: -mu^T(t0) d_phi integral of g(h(s), s) over the window,
        # mirroring the forward y(t0) trapezoid rule node for node
        mu0 = store.eval(run.t0)[du_dim:]
        if np.any(mu0):
            a, b = run.t0 - tau2, run.t0 - tau1
            npan = c.history_quad_panels
            ts = np.linspace(a, b, npan + 1)
            w = np.full(npan + 1, (b - a) / npan)
            w[0] *= 0.5
            w[-1] *= 0.5
            hist_grad = np.zeros(sys.n_phi)
            for s, wj in zip(ts, w):
                hs = np.asarray(run.history(s), dtype=float)
                hist_grad += wj * g_vjp_params(s, hs, mu0)
            grad[sys.n_theta:] -= hist_grad
    return AdjointRun(store, run.t0, T, du_dim, dy_dim, grad, sys.n_theta)


# ---------------------------------------------------------------------------
# Loss evaluation and the finite-difference oracle
# ---------------------------------------------------------------------------


def run_loss(sys: AugmentedSystem, params: Vec, t_span, dataset, loss_spec,
             stepper: StepperSpec, history=None, u0=None):
    """Forward solve + total loss on the dataset times. Returns (loss, run)."""
    run = forward_augmented(sys, params, t_span, stepper, history=history, u0=u0)
    times = np.asarray(dataset.times, dtype=float)
    targets = np.asarray(dataset.states, dtype=float)
    tol = 1e-9 * max(1.0, abs(run.t1))
    preds = np.stack([run.u_at(min(t, run.t1)) for t in times])
    if np.any(times > run.t1 + tol):
        raise ValueError("dataset times exceed the forward span")
    return float(loss_spec.total(preds, targets)), run


def adjoint_gradient(sys: AugmentedSystem, params: Vec, run: ForwardRun,
                     dataset, loss_spec, stepper: StepperSpec) -> AdjointRun:
    """Dispatch to the adjoint matching the system's closure kind."""
    if isinstance(sys.closure, Markovian):
        return adjoint_markovian(sys, params, run, dataset, loss_spec, stepper)
    if isinstance(sys.closure, Discrete):
        return adjoint_discrete(sys, params, run, dataset, loss_spec, stepper)
    return adjoint_distributed(sys, params, run, dataset, loss_spec, stepper)


def fd_gradient(sys: AugmentedSystem, params: Vec, t_span, dataset, loss_spec,
                stepper: StepperSpec, history=None, u0=None,
                eps: float = 1e-5) -> Vec:
    """Central-difference gradient of the total loss; the adjoint oracle.

    Cost is two forward solves per parameter: keep parameter counts small.
    """
    params = np.asarray(params, dtype=float)
    grad = np.zeros_like(params)
    for i in range(params.size):
        pp, pm = params.copy(), params.copy()
        pp[i] += eps
        pm[i] -= eps
        lp, _ = run_loss(sys, pp, t_span, dataset, loss_spec, stepper, history, u0)
        lm, _ = run_loss(sys, pm, t_span, dataset, loss_spec, stepper, history, u0)
        grad[i] = (lp - lm) / (2.0 * eps)
    return grad
