"""Acceptance suite: one test per criterion, pinned tolerances.

Each test prints a single PASS/FAIL line (visible with ``pytest -s`` or on
failure) and asserts the same condition, so the suite doubles as a
human-readable acceptance report. Training-based criteria pin their seeds
and epoch budgets; they run real training, just shorter than the full
recipes.
"""

import numpy as np
import pytest

from neuralclosure import experiments as ex
from neuralclosure import nn
from neuralclosure.closure import (
    AugmentedSystem,
    Discrete,
    Markovian,
    adjoint_discrete,
    adjoint_gradient,
    adjoint_markovian,
    constant_history,
    fd_gradient,
    forward_augmented,
)
from neuralclosure.integrate import (
    DdeProblem,
    DormandPrince54,
    RK4Fixed,
    integrate_dde,
    integrate_ode,
)
from neuralclosure.models import biology, column
from neuralclosure.train import (
    LossSpec,
    SnapshotDataset,
    evaluate_rollout,
    iterations_per_epoch,
    rmse_series,
    train,
)


def _report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _toy_gradient_setup(kind: str, window=None):
    """Toy closure problem over T=2 with three supervised states."""
    study = ex.get_study("toy")
    data = study.setup()
    clo = study.closure(kind, window=window)
    system = study.system(clo)
    ds_all = SnapshotDataset(data.times, data.states)
    idx = [12, 24, 36]                       # t = 0.6, 1.2, 1.8
    ds = SnapshotDataset(ds_all.times[idx], ds_all.states[idx])
    rng = np.random.default_rng(9)
    params = ex.initial_params(clo, seed=9)
    params = params + 0.1 * rng.standard_normal(params.size)
    hist = constant_history(data.states[0])
    # the backward sweep is fixed-step; dt is fine enough that its
    # discretization error sits orders of magnitude under the tolerance
    stepper = RK4Fixed(0.005)
    return study, system, params, ds, hist, stepper


def test_criterion_1_discrete_adjoint_vs_finite_differences():
    study, system, params, ds, hist, stepper = _toy_gradient_setup("discrete")
    assert system.n_params <= 60
    run = forward_augmented(system, params, (0.0, 2.0), stepper, history=hist)
    adj = adjoint_gradient(system, params, run, ds, study.loss_spec(), stepper)
    fd = fd_gradient(system, params, (0.0, 2.0), ds, study.loss_spec(),
                     stepper, history=hist, eps=1e-6)
    rel = _rel(adj.grad, fd)
    _report("criterion 1 (discrete adjoint)", rel < 1e-4,
            f"rel L2 error {rel:.3e} < 1e-4")


@pytest.mark.parametrize("window", [(0.0, 0.5), (0.2, 0.7)])
def test_criterion_2_distributed_adjoint_vs_finite_differences(window):
    study, system, params, ds, hist, stepper = _toy_gradient_setup(
        "distributed", window=window)
    run = forward_augmented(system, params, (0.0, 2.0), stepper, history=hist)
    adj = adjoint_gradient(system, params, run, ds, study.loss_spec(), stepper)
    fd = fd_gradient(system, params, (0.0, 2.0), ds, study.loss_spec(),
                     stepper, history=hist, eps=1e-6)
    nt = system.n_theta
    rel_theta = _rel(adj.grad[:nt], fd[:nt])
    rel_phi = _rel(adj.grad[nt:], fd[nt:])
    # the phi gradient flows through the aux dynamics and, for tau_1 > 0,
    # through the quadrature seeding y(t0) from pre-history (the mu(0) term);
    # a vanishing fd phi-gradient would make the comparison vacuous
    assert np.linalg.norm(fd[nt:]) > 1e-10
    ok = rel_theta < 1e-4 and rel_phi < 1e-4
    _report(f"criterion 2 (distributed adjoint, window {window})", ok,
            f"rel theta {rel_theta:.3e}, rel phi {rel_phi:.3e} < 1e-4")


def test_criterion_3_markovian_reduction_of_discrete_adjoint():
    study = ex.get_study("toy")
    data = study.setup()
    ds_all = SnapshotDataset(data.times, data.states)
    idx = [12, 24, 36]
    ds = SnapshotDataset(ds_all.times[idx], ds_all.states[idx])
    hist = constant_history(data.states[0])
    stepper = RK4Fixed(0.01)
    loss = study.loss_spec()

    rnn_net = nn.Network([nn.SimpleRnnCell(2, 4, "tanh"), nn.Dense(4, 2)])
    sys_k0 = AugmentedSystem(study.base_rhs(), Discrete(rnn_net, ()), 2,
                             base_vjp=lambda t, u, w: -w)
    rng = np.random.default_rng(5)
    p = 0.3 * rng.standard_normal(rnn_net.n_params)
    run = forward_augmented(sys_k0, p, (0.0, 2.0), stepper, history=hist)
    g_disc = adjoint_discrete(sys_k0, p, run, ds, loss, stepper).grad
    g_mark = adjoint_markovian(sys_k0, p, run, ds, loss, stepper).grad
    rel_entry = _rel(g_disc, g_mark)

    # a one-element sequence never touches the recurrent kernel (h0 = 0), so
    # K = 0 must equal a dense network carrying the same input kernel
    dense_net = nn.Network([nn.Dense(2, 4, "tanh"), nn.Dense(4, 2)])
    wx, wh, b, w2, b2 = (p[:8], p[8:24], p[24:28], p[28:36], p[36:38])
    q = np.concatenate([wx, b, w2, b2])
    sys_m = AugmentedSystem(study.base_rhs(), Markovian(dense_net), 2,
                            base_vjp=lambda t, u, w: -w)
    run_m = forward_augmented(sys_m, q, (0.0, 2.0), stepper, history=hist)
    g_dense = adjoint_markovian(sys_m, q, run_m, ds, loss, stepper).grad
    rel_map = max(_rel(g_disc[:8], g_dense[:8]),        # input kernel
                  _rel(g_disc[24:28], g_dense[8:12]),   # bias
                  _rel(g_disc[28:], g_dense[12:]))      # head layer
    rel_wh = float(np.linalg.norm(g_disc[8:24]))
    ok = rel_entry < 1e-10 and rel_map < 1e-10 and rel_wh < 1e-10
    _report("criterion 3 (K=0 reduction)", ok,
            f"adjoint entry points {rel_entry:.1e}, dense equivalence "
            f"{rel_map:.1e}, recurrent-kernel grad {rel_wh:.1e} < 1e-10")


def test_criterion_4_dde_solver_analytic_check():
    # u' = -u(t-1) with unit history: u(t) = 1 - t on [0,1], so u(1) = 0 and
    # u(2) = integral of (t-2) over [1,2] = -1/2
    prob = DdeProblem(rhs=lambda t, u, ud: -ud[0], delays=(1.0,),
                      history=lambda t: np.array([1.0]))
    traj = integrate_dde(prob, (0.0, 2.0), DormandPrince54(1e-10, 1e-10))
    e1 = abs(float(traj.eval(1.0)[0]))
    e2 = abs(float(traj.eval(2.0)[0]) + 0.5)
    ok = e1 < 1e-8 and e2 < 1e-7
    _report("criterion 4 (DDE analytic)", ok,
            f"|u(1)| {e1:.2e} < 1e-8, |u(2)+1/2| {e2:.2e} < 1e-7")


def test_criterion_5_pod_energy_anchor(rom_reference):
    frac = rom_reference.basis.singular_value_fraction()
    ok = abs(frac - 0.608) < 0.02
    _report("criterion 5 (POD anchor)", ok,
            f"3 modes capture {100 * frac:.2f}% (target 60.8% +/- 2%)")


def test_criterion_6_conservation_suite(bio0d_reference):
    p = biology.BioParams()
    G = float(biology.growth_G(p))
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        u3 = rng.uniform(0.0, 10.0, 3)
        u5 = rng.uniform(0.0, 10.0, 5)
        worst = max(worst,
                    abs(float(np.sum(biology.npz_rhs(0.0, u3, p, G))))
                    / max(np.linalg.norm(u3), 1e-300),
                    abs(float(np.sum(biology.nnpzd_rhs(0.0, u5, p, G))))
                    / max(np.linalg.norm(u5), 1e-300))

    totals = bio0d_reference.full_states.sum(axis=1)
    drift = float(np.max(np.abs(totals - totals[0])) / totals[0])

    cfg = column.ColumnConfig()
    model = column.ColumnModel(cfg, p, column.SeasonalForcing(), kind="npz",
                               bio_on=False)
    traj = integrate_ode(model.rhs, model.initial_state(), (0.0, 30.0),
                         DormandPrince54(1e-10, 1e-10))
    t0_tot = model.species_totals(model.initial_state())
    tT_tot = model.species_totals(traj.eval(30.0))
    col_drift = float(np.max(np.abs(tT_tot - t0_tot) / t0_tot))

    ok = worst < 1e-12 and drift < 1e-6 and col_drift < 1e-8
    _report("criterion 6 (conservation)", ok,
            f"rhs sums {worst:.1e} < 1e-12, 330d drift {drift:.1e} < 1e-6, "
            f"column 30d drift {col_drift:.1e} < 1e-8")


def test_criterion_7_architecture_fidelity():
    table = {("exp1_rom", "markovian"): 158, ("exp1_rom", "discrete"): 63,
             ("exp1_rom", "distributed"): 110,
             ("exp2_subgrid", "markovian"): 424,
             ("exp2_subgrid", "discrete"): 110,
             ("exp2_subgrid", "distributed"): 361}
    got = {key: ex.closure_parameter_count(ex.get_study(key[0]).closure(key[1]))
           for key in table}
    iters = {}
    for name, want in (("exp1_rom", 18), ("exp2_subgrid", 4),
                       ("exp3a_bio0d", 26), ("exp3b_bio1d", 8)):
        study = ex.get_study(name)
        n_steps = round(study.train_end / study.dt_data)
        iters[name] = (iterations_per_epoch(n_steps,
                                            study.batch_size("discrete")), want)
    ok = got == table and all(a == b for a, b in iters.values())
    _report("criterion 7 (architecture fidelity)", ok,
            f"param counts {tuple(got.values())}, iterations "
            f"{tuple(a for a, _ in iters.values())}")


@pytest.fixture(scope="module")
def rom_reference():
    return ex.get_study("exp1_rom").setup()


@pytest.fixture(scope="module")
def subgrid_reference():
    return ex.get_study("exp2_subgrid").setup()


@pytest.fixture(scope="module")
def bio0d_reference():
    return ex.get_study("exp3a_bio0d").setup()


def _rollout_error(study, system, params, dataset, metric):
    preds, _, _ = evaluate_rollout(system, params, dataset,
                                   study.forward_stepper(),
                                   history=constant_history(dataset.states[0]))
    return metric.total(preds, dataset.states), preds


def test_criterion_8_exp2_closure_efficacy(subgrid_reference):
    # pinned desk-scale run: seed and epoch budget chosen once, within the
    # criterion's <= 100 epoch allowance
    seed, epochs = 1, 80
    study = ex.get_study("exp2_subgrid")
    ds = SnapshotDataset(subgrid_reference.times, subgrid_reference.coarse_states)
    train_ds = ds.restrict(0.0, study.train_end)
    both = ds.restrict(0.0, study.val_end)
    metric = LossSpec()

    errors = {}
    for name, rhs in study.baselines().items():
        traj = integrate_ode(rhs, both.states[0], (0.0, both.t_end),
                             study.forward_stepper())
        preds = np.stack([traj.eval(min(float(t), both.t_end))
                          for t in both.times])
        errors[name] = metric.total(preds, both.states)

    clo = study.closure("discrete")
    system = study.system(clo)
    result = train(system, train_ds, ex.initial_params(clo, seed=seed),
                   study.settings("discrete", seed=seed, epochs=epochs),
                   study.loss_spec(), study.forward_stepper())
    assert not result.diverged
    err_model, _ = _rollout_error(study, system, result.params, both, metric)

    ratio = err_model / errors["baseline"]
    smag_ratio = errors["smagorinsky"] / errors["baseline"]
    ok = ratio <= 0.5 and errors["smagorinsky"] < errors["baseline"]
    _report("criterion 8 (exp2 efficacy)", ok,
            f"closure/baseline {ratio:.3f} <= 0.5 after {epochs} epochs, "
            f"smagorinsky/baseline {smag_ratio:.3f} < 1")


def test_criterion_9_exp1_closure_efficacy(rom_reference):
    seed, epochs = 0, 20
    study = ex.get_study("exp1_rom")
    ds = SnapshotDataset(rom_reference.times, rom_reference.coeffs)
    train_ds = ds.restrict(0.0, study.train_end)
    full = ds.restrict(0.0, study.val_end)
    sel = full.times >= study.train_end - 1e-9

    gal = study.galerkin(rom_reference.basis)
    traj = integrate_ode(gal.rhs, full.states[0], (0.0, full.t_end),
                         study.forward_stepper())
    rom_preds = np.stack([traj.eval(min(float(t), full.t_end))
                          for t in full.times])
    rmse_rom = rmse_series(rom_preds[sel], full.states[sel])

    clo = study.closure("discrete")
    system = study.system(clo, rom_reference.basis)
    result = train(system, train_ds, ex.initial_params(clo, seed=seed),
                   study.settings("discrete", seed=seed, epochs=epochs),
                   study.loss_spec(), study.forward_stepper())
    assert not result.diverged
    preds, _, _ = evaluate_rollout(system, result.params, full,
                                   study.forward_stepper(),
                                   history=constant_history(full.states[0]))
    rmse_model = rmse_series(preds[sel], full.states[sel])
    ok = rmse_model < rmse_rom
    _report("criterion 9 (exp1 efficacy)", ok,
            f"trained RMSE {rmse_model:.3e} < plain ROM {rmse_rom:.3e} "
            f"over [2,4] after {epochs} epochs")


def test_criterion_10_zero_closure_neutrality(
        rom_reference, subgrid_reference, bio0d_reference):
    spans = {"toy": 1.0, "exp1_rom": 0.5, "exp2_subgrid": 0.25,
             "exp3a_bio0d": 5.0, "exp3b_bio1d": 2.0}
    cached = {"exp1_rom": rom_reference, "exp2_subgrid": subgrid_reference,
              "exp3a_bio0d": bio0d_reference}
    worst = 0.0
    for name, t_end in spans.items():
        study = ex.get_study(name)
        data = cached.get(name) or study.setup()
        if name == "toy":
            u0 = data.states[0]
        elif name == "exp1_rom":
            u0 = data.coeffs[0]
        elif name == "exp2_subgrid":
            u0 = data.coarse_states[0]
        else:
            u0 = data.agg_states[0]
        base_rhs = study.baselines(
            data.basis if name == "exp1_rom" else None)["baseline"]
        base = integrate_ode(base_rhs, u0, (0.0, t_end), study.forward_stepper())
        for kind in ex.CLOSURE_KINDS:
            clo = study.closure(kind)
            system = study.system(
                clo, data.basis if name == "exp1_rom" else None)
            params = ex.initial_params(clo, seed=3)
            run = forward_augmented(system, params, (0.0, t_end),
                                    study.forward_stepper(),
                                    history=constant_history(u0))
            for t in np.linspace(0.0, t_end, 5):
                worst = max(worst, float(np.max(np.abs(
                    run.u_at(float(t)) - base.eval(float(t))))))
    _report("criterion 10 (zero-closure neutrality)", worst < 1e-8,
            f"max deviation {worst:.2e} < 1e-8 over 5 studies x 3 kinds")


def test_criterion_11_delay_sweep_harness(tmp_path):
    from neuralclosure import cli
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text("""
[run]
experiment = exp1_rom
closure = distributed
seed = 0

[sweep]
tau2 = 0 0.0375 0.075 0.15
repeats = 3
epochs = 2
""")
    out = tmp_path / "sweep"
    rc = cli.main(["sweep-delay", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    header, summary = cli.read_table(out / "summary.csv")
    assert header == ["tau2", "n_ok", "min", "q1", "median", "q3", "max"]
    assert summary.shape == (4, 7)
    assert np.allclose(summary[:, 0], [0.0, 0.0375, 0.075, 0.15])
    finished = summary[:, 1].sum()
    five_ok = np.all(np.diff(summary[summary[:, 1] > 0][:, 2:], axis=1)
                     >= -1e-300)
    runs_rows = (out / "runs.csv").read_text().strip().splitlines()[1:]
    ok = len(runs_rows) == 12 and finished >= 1 and bool(five_ok)
    _report("criterion 11 (delay sweep)", ok,
            f"12 runs recorded, {int(finished)} finished, five-number "
            f"summaries ordered per tau2")
