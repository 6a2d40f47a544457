"""Study definitions: reference-data pipelines, closure architectures, and
training recipes.

Each study pairs an expensive reference model with a cheap low-fidelity model
and trains a neural closure on the mismatch:

* ``exp1_rom``      three-mode Galerkin dynamics of an advecting front learn
  the effect of the truncated modes of a 100-cell reference run,
* ``exp2_subgrid``  a 25-cell front model learns the subgrid stresses of the
  100-cell run restricted onto its grid,
* ``exp3a_bio0d``   a 3-species plankton box model learns the memory of the
  5-species system whose nitrogen pools it aggregates,
* ``exp3b_bio1d``   the same aggregation inside a seasonally forced,
  diffusively mixed water column,
* ``toy``           a 2-state linear problem small enough for exhaustive
  finite-difference gradient checks.

Architectures and hyperparameters are frozen per study; the trainable
parameter counts they must reproduce are in :data:`PARAMETER_COUNTS`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .closure import ClosureModel, Discrete, Distributed, Markovian
from .closure import AugmentedSystem
from .integrate import DenseTrajectory, DormandPrince54, RK4Fixed, StepperSpec
from .integrate import integrate_ode
from .models import biology, burgers, column, rom
from .train import LossSpec, SnapshotDataset, TrainSettings

CLOSURE_KINDS = ("markovian", "discrete", "distributed")

PARAMETER_COUNTS = {
    ("exp1_rom", "markovian"): 158,
    ("exp1_rom", "discrete"): 63,
    ("exp1_rom", "distributed"): 110,
    ("exp2_subgrid", "markovian"): 424,
    ("exp2_subgrid", "discrete"): 110,
    ("exp2_subgrid", "distributed"): 361,
    ("exp3a_bio0d", "markovian"): 317,
    ("exp3a_bio0d", "discrete"): 142,
    ("exp3a_bio0d", "distributed"): 195,
    ("exp3b_bio1d", "markovian"): 987,
    ("exp3b_bio1d", "discrete"): 426,
    ("exp3b_bio1d", "distributed"): 477,
}


def closure_parameter_count(closure: ClosureModel) -> int:
    if isinstance(closure, Distributed):
        return closure.f_net.n_params + closure.g_net.n_params
    return closure.net.n_params


def initial_params(closure: ClosureModel, seed: int) -> np.ndarray:
    """Flat initial parameter vector: zeroed final layer so the closure is
    exactly neutral at epoch 0; the memory network keeps live weights."""
    if isinstance(closure, Distributed):
        theta = nn.init_params(closure.f_net, seed)
        phi = nn.init_params(closure.g_net, seed + 1, zero_final=False)
        return np.concatenate([theta, phi])
    return nn.init_params(closure.net, seed)


def uniform_times(t_end: float, dt: float, t_start: float = 0.0) -> np.ndarray:
    n = round((t_end - t_start) / dt)
    if abs(t_start + n * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError(f"span ({t_start}, {t_end}) is not a multiple of dt={dt}")
    return np.linspace(t_start, t_end, n + 1)


def sample_trajectory(traj: DenseTrajectory, times) -> np.ndarray:
    return np.stack([traj.eval(float(t)) for t in times])


def _dense_chain(sizes, hidden_act: str = "tanh") -> list:
    layers = []
    for i in range(len(sizes) - 1):
        act = hidden_act if i < len(sizes) - 2 else "linear"
        layers.append(nn.Dense(sizes[i], sizes[i + 1], act))
    return layers


# ---------------------------------------------------------------------------
# Study 1: modal dynamics of the advecting front
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RomData:
    times: np.ndarray      # data grid over the full span
    coeffs: np.ndarray     # reference modal coefficients (n_t, n_modes)
    basis: rom.PodBasis


@dataclass(frozen=True)
class RomStudy:
    """Three-mode reduced dynamics closed against the full 100-cell run."""

    name: str = "exp1_rom"
    re: float = 1000.0
    n_fine: int = 100
    n_modes: int = 3
    dt_data: float = 0.01
    basis_t: float = 4.0        # snapshot span feeding the modal basis
    train_end: float = 2.0
    val_end: float = 4.0
    predict_end: float = 6.0
    delays: tuple[float, ...] = (0.025, 0.05, 0.075, 0.1, 0.125, 0.15)
    window: tuple[float, float] = (0.0, 0.075)
    aux_dim: int = 2
    epochs: int = 200
    lr0: float = 0.075
    forward_dt: float = 0.005
    positivity_weight: float = 0.0

    @property
    def state_dim(self) -> int:
        return self.n_modes

    grid_points = None

    def default_truth_stepper(self) -> StepperSpec:
        return DormandPrince54(rtol=1e-8, atol=1e-8)

    def forward_stepper(self) -> StepperSpec:
        return RK4Fixed(self.forward_dt)

    def loss_spec(self) -> LossSpec:
        return LossSpec()

    def batch_size(self, kind: str) -> int:
        return 2

    def settings(self, kind: str, seed: int = 0, epochs: int | None = None) -> TrainSettings:
        return TrainSettings(epochs=self.epochs if epochs is None else epochs,
                             batch_size=self.batch_size(kind), lr0=self.lr0,
                             adjoint_dt=self.forward_dt, seed=seed)

    def closure(self, kind: str, delays=None, window=None) -> ClosureModel:
        if kind == "markovian":
            return Markovian(nn.Network(_dense_chain([3, 5, 5, 5, 5, 5, 3])))
        if kind == "discrete":
            net = nn.Network([nn.SimpleRnnCell(3, 5, "tanh"), nn.Dense(5, 3)])
            return Discrete(net, tuple(delays) if delays is not None else self.delays)
        if kind == "distributed":
            f = nn.Network(_dense_chain([3 + self.aux_dim, 5, 5, 3]))
            g = nn.Network(_dense_chain([3, 3, 3, self.aux_dim]))
            win = tuple(window) if window is not None else self.window
            return Distributed(f, g, win, self.aux_dim)
        raise ValueError(f"unknown closure kind {kind!r}")

    def _fom_rhs(self):
        grid = burgers.BurgersGrid(self.n_fine)
        nu = 1.0 / self.re
        return grid, lambda t, u: burgers.rhs(t, u, nu, grid.dx)

    def setup(self, stepper: StepperSpec | None = None) -> RomData:
        """Reference run -> modal basis -> re-run from the basis-filtered
        initial state -> coefficient trajectories on the data grid."""
        stepper = stepper or self.default_truth_stepper()
        grid, fom = self._fom_rhs()
        u0 = burgers.initial_condition(grid.x, self.re)
        snaps_traj = integrate_ode(fom, u0, (0.0, self.basis_t), stepper)
        snaps = sample_trajectory(snaps_traj, uniform_times(self.basis_t, self.dt_data))
        basis = rom.pod(snaps, self.n_modes)

        u0_filtered = basis.reconstruct(basis.project(u0))
        truth_traj = integrate_ode(fom, u0_filtered, (0.0, self.predict_end), stepper)
        times = uniform_times(self.predict_end, self.dt_data)
        coeffs = np.stack([basis.project(truth_traj.eval(float(t))) for t in times])
        return RomData(times=times, coeffs=coeffs, basis=basis)

    def galerkin(self, basis: rom.PodBasis) -> rom.GalerkinRom:
        grid = burgers.BurgersGrid(self.n_fine)
        return rom.galerkin_rom(basis, 1.0 / self.re, grid.dx)

    def system(self, closure: ClosureModel, basis: rom.PodBasis) -> AugmentedSystem:
        gal = self.galerkin(basis)
        return AugmentedSystem(gal.rhs, closure, self.state_dim, base_vjp=gal.rhs_vjp)

    def baselines(self, basis: rom.PodBasis) -> dict:
        gal = self.galerkin(basis)
        return {"baseline": gal.rhs}


# ---------------------------------------------------------------------------
# Study 2: coarse-grid front with subgrid closure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubgridData:
    times: np.ndarray
    fine_states: np.ndarray     # (n_t, n_fine)
    coarse_states: np.ndarray   # (n_t, n_coarse) box-averaged reference


@dataclass(frozen=True)
class SubgridStudy:
    """25-cell front model closed against the box-averaged 100-cell run."""

    name: str = "exp2_subgrid"
    re: float = 1000.0
    n_fine: int = 100
    n_coarse: int = 25
    dt_data: float = 0.0125
    train_end: float = 1.25
    val_end: float = 2.5
    predict_end: float = 5.0
    delays: tuple[float, ...] = (0.025, 0.05, 0.075, 0.1, 0.125, 0.15)
    window: tuple[float, float] = (0.0, 0.075)
    aux_channels: int = 3
    epochs: int = 250
    lr0: float = 0.075
    forward_dt: float = 0.00625
    cs: float = 1.0             # eddy-viscosity constant for the reference closure
    positivity_weight: float = 0.0

    @property
    def state_dim(self) -> int:
        return self.n_coarse

    @property
    def grid_points(self) -> int:
        return self.n_coarse

    @property
    def aux_dim(self) -> int:
        return self.n_coarse * self.aux_channels

    def default_truth_stepper(self) -> StepperSpec:
        return DormandPrince54(rtol=1e-8, atol=1e-8)

    def forward_stepper(self) -> StepperSpec:
        return RK4Fixed(self.forward_dt)

    def loss_spec(self) -> LossSpec:
        return LossSpec()

    def batch_size(self, kind: str) -> int:
        return 8

    def settings(self, kind: str, seed: int = 0, epochs: int | None = None) -> TrainSettings:
        return TrainSettings(epochs=self.epochs if epochs is None else epochs,
                             batch_size=self.batch_size(kind), lr0=self.lr0,
                             adjoint_dt=self.forward_dt, seed=seed)

    def closure(self, kind: str, delays=None, window=None) -> ClosureModel:
        if kind == "markovian":
            net = nn.Network([
                nn.Conv1d(1, 4, 3, "swish"),
                nn.Conv1d(4, 5, 3, "swish"),
                nn.Conv1d(5, 5, 3, "swish"),
                nn.Conv1d(5, 5, 3, "swish"),
                nn.Conv1d(5, 5, 3, "swish"),
                nn.Conv1dTranspose(5, 3, 3, "swish"),
                nn.Conv1dTranspose(3, 2, 3, "swish"),
                nn.Conv1dTranspose(2, 2, 3, "swish"),
                nn.Conv1dTranspose(2, 2, 3, "swish"),
                nn.Conv1dTranspose(2, 1, 3, "linear"),
            ])
            return Markovian(net)
        if kind == "discrete":
            net = nn.Network([
                nn.SimpleRnnConvCell(1, 3, 3, "swish"),
                nn.Conv1d(3, 2, 3, "swish"),
                nn.Conv1dTranspose(2, 2, 3, "swish"),
                nn.Conv1dTranspose(2, 1, 3, "linear"),
            ])
            return Discrete(net, tuple(delays) if delays is not None else self.delays)
        if kind == "distributed":
            c = self.aux_channels
            f = nn.Network([
                nn.Conv1d(1 + c, 4, 3, "swish"),
                nn.Conv1d(4, 5, 3, "swish"),
                nn.Conv1d(5, 5, 3, "swish"),
                nn.Conv1dTranspose(5, 3, 3, "swish"),
                nn.Conv1dTranspose(3, 2, 3, "swish"),
                nn.Conv1dTranspose(2, 1, 3, "linear"),
            ])
            g = nn.Network([
                nn.Conv1d(1, 2, 3, "swish"),
                nn.Conv1d(2, 3, 3, "swish"),
                nn.Conv1dTranspose(3, 3, 3, "swish"),
                nn.Conv1dTranspose(3, c, 3, "linear"),
            ])
            win = tuple(window) if window is not None else self.window
            return Distributed(f, g, win, self.aux_dim)
        raise ValueError(f"unknown closure kind {kind!r}")

    def setup(self, stepper: StepperSpec | None = None) -> SubgridData:
        stepper = stepper or self.default_truth_stepper()
        fine = burgers.BurgersGrid(self.n_fine)
        nu = 1.0 / self.re
        u0 = burgers.initial_condition(fine.x, self.re)
        traj = integrate_ode(lambda t, u: burgers.rhs(t, u, nu, fine.dx),
                             u0, (0.0, self.predict_end), stepper)
        times = uniform_times(self.predict_end, self.dt_data)
        fine_states = sample_trajectory(traj, times)
        factor = self.n_fine // self.n_coarse
        coarse = np.stack([burgers.coarsen(u, factor) for u in fine_states])
        return SubgridData(times=times, fine_states=fine_states, coarse_states=coarse)

    def coarse_rhs(self) -> Callable:
        grid = burgers.BurgersGrid(self.n_coarse)
        nu = 1.0 / self.re
        return lambda t, u: burgers.rhs(t, u, nu, grid.dx)

    def system(self, closure: ClosureModel, data=None) -> AugmentedSystem:
        grid = burgers.BurgersGrid(self.n_coarse)
        nu = 1.0 / self.re
        return AugmentedSystem(
            self.coarse_rhs(), closure, self.state_dim,
            base_vjp=lambda t, u, w: burgers.rhs_vjp(t, u, w, nu, grid.dx),
            grid_points=self.grid_points)

    def smagorinsky_rhs(self) -> Callable:
        grid = burgers.BurgersGrid(self.n_coarse)
        nu = 1.0 / self.re
        cs = self.cs

        def rhs(t, u):
            return burgers.rhs(t, u, nu, grid.dx) + \
                burgers.smagorinsky_term(u, grid.dx, cs)
        return rhs

    def baselines(self, data=None) -> dict:
        return {"baseline": self.coarse_rhs(), "smagorinsky": self.smagorinsky_rhs()}


# ---------------------------------------------------------------------------
# Study 3a: plankton box model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Plankton0dData:
    times: np.ndarray
    full_states: np.ndarray   # 5-species reference (n_t, 5)
    agg_states: np.ndarray    # aggregated (n_t, 3) training target


@dataclass(frozen=True)
class Plankton0dStudy:
    """Aggregated 3-species box dynamics closed against the 5-species run."""

    name: str = "exp3a_bio0d"
    params: biology.BioParams = field(default_factory=biology.BioParams)
    dt_data: float = 0.05
    train_end: float = 30.0
    val_end: float = 60.0
    predict_end: float = 330.0
    delays: tuple[float, ...] = (0.75, 1.5, 2.25, 3.0, 3.75, 4.5)
    window: tuple[float, float] = (0.0, 2.5)
    aux_dim: int = 4
    epochs: int = 350
    lr0: float = 0.05
    forward_dt: float = 0.025
    positivity_weight: float = 1.0

    state_dim = 3
    grid_points = None

    def default_truth_stepper(self) -> StepperSpec:
        return DormandPrince54(rtol=1e-10, atol=1e-10)

    def forward_stepper(self) -> StepperSpec:
        return RK4Fixed(self.forward_dt)

    def loss_spec(self) -> LossSpec:
        return LossSpec(positivity_weight=self.positivity_weight)

    def batch_size(self, kind: str) -> int:
        return 4

    def settings(self, kind: str, seed: int = 0, epochs: int | None = None) -> TrainSettings:
        return TrainSettings(epochs=self.epochs if epochs is None else epochs,
                             batch_size=self.batch_size(kind), lr0=self.lr0,
                             adjoint_dt=self.forward_dt, seed=seed)

    def closure(self, kind: str, delays=None, window=None) -> ClosureModel:
        if kind == "markovian":
            layers = _dense_chain([3, 7, 7, 7, 7, 7, 7, 1]) + [nn.BioConstrain()]
            return Markovian(nn.Network(layers))
        if kind == "discrete":
            net = nn.Network([nn.SimpleRnnCell(3, 7, "tanh"),
                              nn.Dense(7, 7, "tanh"), nn.Dense(7, 1),
                              nn.BioConstrain()])
            return Discrete(net, tuple(delays) if delays is not None else self.delays)
        if kind == "distributed":
            f = nn.Network(_dense_chain([3 + self.aux_dim, 7, 7, 1])
                           + [nn.BioConstrain()])
            g = nn.Network(_dense_chain([3, 5, 5, self.aux_dim]))
            win = tuple(window) if window is not None else self.window
            return Distributed(f, g, win, self.aux_dim)
        raise ValueError(f"unknown closure kind {kind!r}")

    def growth(self) -> float:
        return float(biology.growth_G(self.params))

    def setup(self, stepper: StepperSpec | None = None) -> Plankton0dData:
        stepper = stepper or self.default_truth_stepper()
        p, G = self.params, self.growth()
        u0 = biology.nnpzd_initial(p)
        traj = integrate_ode(lambda t, u: biology.nnpzd_rhs(t, u, p, G),
                             u0, (0.0, self.predict_end), stepper)
        times = uniform_times(self.predict_end, self.dt_data)
        full = sample_trajectory(traj, times)
        return Plankton0dData(times=times, full_states=full,
                              agg_states=biology.aggregate_nnpzd(full))

    def base_rhs(self) -> Callable:
        p, G = self.params, self.growth()
        return lambda t, u: biology.npz_rhs(t, u, p, G)

    def system(self, closure: ClosureModel, data=None) -> AugmentedSystem:
        p, G = self.params, self.growth()
        return AugmentedSystem(
            self.base_rhs(), closure, self.state_dim,
            base_vjp=lambda t, u, w: biology.npz_rhs_vjp(t, u, w, p, G))

    def baselines(self, data=None) -> dict:
        return {"baseline": self.base_rhs()}


# ---------------------------------------------------------------------------
# Study 3b: plankton column
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnData:
    times: np.ndarray
    full_states: np.ndarray   # 5-species column, flat (n_t, n_z*5)
    agg_states: np.ndarray    # aggregated column, flat (n_t, n_z*3)


@dataclass(frozen=True)
class ColumnStudy:
    """Aggregated plankton column closed against the 5-species column."""

    name: str = "exp3b_bio1d"
    params: biology.BioParams = field(default_factory=biology.BioParams)
    cfg: column.ColumnConfig = field(default_factory=column.ColumnConfig)
    forcing: column.SeasonalForcing = field(default_factory=column.SeasonalForcing)
    dt_data: float = 0.1
    train_end: float = 30.0
    val_end: float = 60.0
    predict_end: float = 364.0
    delays: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)
    window: tuple[float, float] = (0.0, 2.0)
    aux_channels: int = 2
    epochs: int = 200
    lr0: float = 0.05
    forward_dt: float = 0.05
    positivity_weight: float = 1.0

    @property
    def state_dim(self) -> int:
        return self.cfg.n_z * 3

    @property
    def grid_points(self) -> int:
        return self.cfg.n_z

    @property
    def aux_dim(self) -> int:
        return self.cfg.n_z * self.aux_channels

    def default_truth_stepper(self) -> StepperSpec:
        return DormandPrince54(rtol=1e-8, atol=1e-8)

    def forward_stepper(self) -> StepperSpec:
        return RK4Fixed(self.forward_dt)

    def loss_spec(self) -> LossSpec:
        return LossSpec(kind="depth_avg_l2", positivity_weight=self.positivity_weight,
                        n_depth=self.cfg.n_z)

    def batch_size(self, kind: str) -> int:
        return 4 if kind == "distributed" else 8

    def settings(self, kind: str, seed: int = 0, epochs: int | None = None) -> TrainSettings:
        return TrainSettings(epochs=self.epochs if epochs is None else epochs,
                             batch_size=self.batch_size(kind), lr0=self.lr0,
                             adjoint_dt=self.forward_dt, seed=seed)

    def context_channels(self) -> Callable[[float], np.ndarray]:
        """Normalized depth and attenuated daylight channels for the nets."""
        z = self.cfg.z_centers
        zn = z / abs(self.cfg.depth_total)
        atten = np.exp(self.params.k_w * z)
        scale = self.forcing.i0_mean

        def channels(t: float) -> np.ndarray:
            light = self.forcing.surface_light(t) * atten / scale
            return np.stack([zn, light], axis=1)
        return channels

    def closure(self, kind: str, delays=None, window=None) -> ClosureModel:
        ctx = self.context_channels()
        if kind == "markovian":
            net = nn.Network(
                [nn.AddExtraChannels(2, ctx, "depth+light", in_ch=3)]
                + [nn.Conv1d(a, b, 1, "swish") for a, b in
                   [(5, 5), (5, 7), (7, 9), (9, 11), (11, 13), (13, 13),
                    (13, 11), (11, 9), (9, 7), (7, 5), (5, 3)]]
                + [nn.Conv1d(3, 1, 1, "linear"), nn.BioConstrain()])
            return Markovian(net)
        if kind == "discrete":
            net = nn.Network(
                [nn.SimpleRnnConvCell(3, 5, 1, "swish"),
                 nn.AddExtraChannels(2, ctx, "depth+light")]
                + [nn.Conv1d(a, b, 1, "swish") for a, b in
                   [(7, 7), (7, 9), (9, 9), (9, 7), (7, 5), (5, 3)]]
                + [nn.Conv1d(3, 1, 1, "linear"), nn.BioConstrain()])
            return Discrete(net, tuple(delays) if delays is not None else self.delays)
        if kind == "distributed":
            c = self.aux_channels
            f = nn.Network(
                [nn.AddExtraChannels(2, ctx, "depth+light", in_ch=3 + c)]
                + [nn.Conv1d(a, b, 1, "swish") for a, b in
                   [(5 + c, 7), (7, 9), (9, 9), (9, 7), (7, 5), (5, 3)]]
                + [nn.Conv1d(3, 1, 1, "linear"), nn.BioConstrain()])
            g = nn.Network(
                [nn.Conv1d(a, b, 1, "swish") for a, b in
                 [(3, 3), (3, 5), (5, 7), (7, 5)]]
                + [nn.Conv1d(5, c, 1, "linear")])
            win = tuple(window) if window is not None else self.window
            return Distributed(f, g, win, self.aux_dim)
        raise ValueError(f"unknown closure kind {kind!r}")

    def setup(self, stepper: StepperSpec | None = None) -> ColumnData:
        stepper = stepper or self.default_truth_stepper()
        model = column.ColumnModel(self.cfg, self.params, self.forcing, kind="nnpzd")
        traj = integrate_ode(model.rhs, model.initial_state(),
                             (0.0, self.predict_end), stepper)
        times = uniform_times(self.predict_end, self.dt_data)
        full = sample_trajectory(traj, times)
        agg = np.stack([column.aggregate_column_state(u, self.cfg.n_z) for u in full])
        return ColumnData(times=times, full_states=full, agg_states=agg)

    def base_model(self) -> column.ColumnModel:
        return column.ColumnModel(self.cfg, self.params, self.forcing, kind="npz")

    def system(self, closure: ClosureModel, data=None) -> AugmentedSystem:
        base = self.base_model()
        return AugmentedSystem(base.rhs, closure, self.state_dim,
                               base_vjp=base.rhs_vjp, grid_points=self.grid_points)

    def baselines(self, data=None) -> dict:
        return {"baseline": self.base_model().rhs}


# ---------------------------------------------------------------------------
# Toy study for gradient verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyData:
    times: np.ndarray
    states: np.ndarray


@dataclass(frozen=True)
class ToyStudy:
    """Linear decay toward a constant source; trains in seconds."""

    name: str = "toy"
    source: tuple[float, float] = (0.5, -0.3)
    u0: tuple[float, float] = (1.0, -0.5)
    dt_data: float = 0.05
    train_end: float = 1.0
    val_end: float = 2.0
    predict_end: float = 3.0
    delays: tuple[float, ...] = (0.1, 0.25)
    window: tuple[float, float] = (0.0, 0.5)
    aux_dim: int = 2
    epochs: int = 5
    lr0: float = 0.05
    forward_dt: float = 0.025
    positivity_weight: float = 0.0

    state_dim = 2
    grid_points = None

    def default_truth_stepper(self) -> StepperSpec:
        return DormandPrince54(rtol=1e-10, atol=1e-10)

    def forward_stepper(self) -> StepperSpec:
        return RK4Fixed(self.forward_dt)

    def loss_spec(self) -> LossSpec:
        return LossSpec()

    def batch_size(self, kind: str) -> int:
        return 2

    def settings(self, kind: str, seed: int = 0, epochs: int | None = None) -> TrainSettings:
        return TrainSettings(epochs=self.epochs if epochs is None else epochs,
                             batch_size=self.batch_size(kind), lr0=self.lr0,
                             adjoint_dt=self.forward_dt, seed=seed)

    def closure(self, kind: str, delays=None, window=None) -> ClosureModel:
        if kind == "markovian":
            return Markovian(nn.Network([nn.Dense(2, 4, "tanh"), nn.Dense(4, 2)]))
        if kind == "discrete":
            net = nn.Network([nn.SimpleRnnCell(2, 4, "tanh"), nn.Dense(4, 2)])
            return Discrete(net, tuple(delays) if delays is not None else self.delays)
        if kind == "distributed":
            f = nn.Network([nn.Dense(2 + self.aux_dim, 4, "tanh"), nn.Dense(4, 2)])
            g = nn.Network([nn.Dense(2, 3, "tanh"), nn.Dense(3, self.aux_dim)])
            win = tuple(window) if window is not None else self.window
            return Distributed(f, g, win, self.aux_dim)
        raise ValueError(f"unknown closure kind {kind!r}")

    def base_rhs(self) -> Callable:
        return lambda t, u: -u

    def truth_rhs(self) -> Callable:
        c = np.asarray(self.source, dtype=float)
        return lambda t, u: -u + c

    def setup(self, stepper: StepperSpec | None = None) -> ToyData:
        stepper = stepper or self.default_truth_stepper()
        traj = integrate_ode(self.truth_rhs(), np.asarray(self.u0, float),
                             (0.0, self.predict_end), stepper)
        times = uniform_times(self.predict_end, self.dt_data)
        return ToyData(times=times, states=sample_trajectory(traj, times))

    def system(self, closure: ClosureModel, data=None) -> AugmentedSystem:
        return AugmentedSystem(self.base_rhs(), closure, self.state_dim,
                               base_vjp=lambda t, u, w: -w)

    def baselines(self, data=None) -> dict:
        return {"baseline": self.base_rhs()}


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


STUDIES = {
    "exp1_rom": RomStudy,
    "exp2_subgrid": SubgridStudy,
    "exp3a_bio0d": Plankton0dStudy,
    "exp3b_bio1d": ColumnStudy,
    "toy": ToyStudy,
}

EXPERIMENTS = tuple(STUDIES)


def get_study(name: str, **overrides):
    if name not in STUDIES:
        raise ValueError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    return STUDIES[name](**overrides)
