"""Command-line front end.

Subcommands::

    neuralclosure gen-data         --config c.txt --out DIR
    neuralclosure train            --config c.txt --out DIR [--checkpoint CK]
    neuralclosure evaluate         --config c.txt --out DIR [--checkpoint CK]
    neuralclosure verify-gradients [--config c.txt]
    neuralclosure sweep-delay      --config c.txt --out DIR

Every table is CSV with a header row and 17-significant-digit floats; see the
README for the per-file column layouts. Exit code 0 on success, 2 on
validation failure (bad config, mismatched checkpoint, gradient check out of
tolerance), 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import sys as _sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .checkpoint import (
    Checkpoint,
    check_compatible,
    closure_fingerprint,
    load_checkpoint,
    save_checkpoint,
)
from .closure import (
    Distributed,
    adjoint_gradient,
    constant_history,
    fd_gradient,
    forward_augmented,
)
from .config import ExperimentConfig, config_hash, config_text, load_config
from .integrate import IntegrationError, RK4Fixed, integrate_ode
from .models import rom
from .train import LossSpec, SnapshotDataset, TrainResult, avg_crosscorr, train

GRAD_TOL = 1e-4
CHECKPOINT_EVERY = 25
FINAL_EPOCH_AVG = 50


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(x) for x in row) + "\n")


def read_table(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: {len(header)} columns in header, "
                         f"{data.shape[1]} in body")
    return header, data


def state_columns(experiment: str, which: str) -> list[str]:
    """Column names for a state table; ``which`` is 'target' or 'full'."""
    if experiment == "toy":
        return ["u1", "u2"]
    if experiment == "exp1_rom":
        if which == "target":
            return ["a1", "a2", "a3"]
        return [f"u{i:03d}" for i in range(1, 101)]
    if experiment == "exp2_subgrid":
        if which == "target":
            return [f"u{i:02d}" for i in range(1, 26)]
        return [f"u{i:03d}" for i in range(1, 101)]
    if experiment == "exp3a_bio0d":
        if which == "target":
            return ["N", "P", "Z"]
        return ["NO3", "NH4", "P", "Z", "D"]
    if experiment == "exp3b_bio1d":
        if which == "target":
            species = ("N", "P", "Z")
        else:
            species = ("NO3", "NH4", "P", "Z", "D")
        return [f"{s}_d{d:02d}" for d in range(1, 21) for s in species]
    raise ValueError(f"unknown experiment {experiment!r}")


def _state_table(path, times, states, names) -> None:
    write_csv(path, ["t"] + list(names),
              ([t] + list(row) for t, row in zip(times, states)))


# ---------------------------------------------------------------------------
# Modal-basis file
# ---------------------------------------------------------------------------


def save_basis(path, basis: rom.PodBasis) -> None:
    lines = [
        "# pod basis v1",
        f"n_x = {basis.mean.size}",
        f"n_modes = {basis.n_modes}",
        "",
        "[mean]",
        *[repr(float(v)) for v in basis.mean],
        "",
        "[singular_values]",
        *[repr(float(v)) for v in basis.singular_values],
        "",
        "[modes]",
        *[",".join(repr(float(v)) for v in row) for row in basis.modes],
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_basis(path) -> rom.PodBasis:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "# pod basis v1":
        raise ValueError(f"{path} is not a basis file")
    sections: dict[str, list[str]] = {}
    current = None
    for line in lines[1:]:
        s = line.strip()
        if not s or "=" in s and current is None:
            continue
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(s)
    mean = np.array([float(x) for x in sections["mean"]])
    sv = np.array([float(x) for x in sections["singular_values"]])
    modes = np.array([[float(x) for x in row.split(",")]
                      for row in sections["modes"]])
    return rom.PodBasis(mean=mean, modes=modes, singular_values=sv)


# ---------------------------------------------------------------------------
# Truth data on disk
# ---------------------------------------------------------------------------


def generate_truth(cfg: ExperimentConfig, out: Path) -> None:
    study = cfg.study()
    data = study.setup(cfg.truth_stepper(study))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_text(cfg), encoding="utf-8")
    name = cfg.experiment
    tcols = state_columns(name, "target")
    if name == "toy":
        _state_table(out / "truth.csv", data.times, data.states, tcols)
    elif name == "exp1_rom":
        _state_table(out / "truth.csv", data.times, data.coeffs, tcols)
        save_basis(out / "pod_basis.txt", data.basis)
    elif name == "exp2_subgrid":
        _state_table(out / "truth.csv", data.times, data.coarse_states, tcols)
        _state_table(out / "truth_fine.csv", data.times, data.fine_states,
                     state_columns(name, "full"))
    else:
        _state_table(out / "truth.csv", data.times, data.agg_states, tcols)
        _state_table(out / "truth_full.csv", data.times, data.full_states,
                     state_columns(name, "full"))
    print(f"wrote truth data for {name} to {out}")


def load_truth(cfg: ExperimentConfig, out: Path, generate: bool = True):
    """Returns (dataset, basis-or-None), generating the files if absent."""
    truth = out / "truth.csv"
    if not truth.exists():
        if not generate:
            raise FileNotFoundError(f"no truth data at {truth}")
        generate_truth(cfg, out)
    header, table = read_table(truth)
    want = ["t"] + state_columns(cfg.experiment, "target")
    if header != want:
        raise ValueError(f"{truth} has unexpected columns {header}")
    ds = SnapshotDataset(table[:, 0], table[:, 1:])
    basis = None
    if cfg.experiment == "exp1_rom":
        basis = load_basis(out / "pod_basis.txt")
    return ds, basis


def build_system(cfg: ExperimentConfig, study, closure, basis):
    if cfg.experiment == "exp1_rom":
        return study.system(closure, basis)
    return study.system(closure, None)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _write_history(path, records) -> None:
    write_csv(path, ["epoch", "train_loss", "val_loss", "lr"],
              ([r.epoch, r.train_loss, r.val_loss, r.lr] for r in records))


def run_training(cfg: ExperimentConfig, out: Path,
                 resume: Path | None = None,
                 window=None, quiet: bool = False) -> TrainResult:
    study = cfg.study()
    dataset, basis = load_truth(cfg, out)
    closure = cfg.closure(study, window=window)
    system = build_system(cfg, study, closure, basis)
    settings = cfg.settings(study)
    stepper = cfg.forward_stepper(study)
    loss_spec = study.loss_spec()
    train_ds = dataset.restrict(0.0, study.train_end)
    val_ds = dataset.restrict(study.train_end, study.val_end)

    cfg_sha = config_hash(cfg)
    arch = closure_fingerprint(closure)
    params0 = ex.initial_params(closure, settings.seed)
    opt_state = None
    rng = None
    start_epoch = 0
    prior: list = []
    if resume is not None:
        ck = load_checkpoint(resume)
        check_compatible(ck, closure, cfg.kind, cfg.experiment)
        if ck.config_sha != cfg_sha:
            print("note: resuming under a config that differs from the "
                  "checkpoint's (e.g. extended epochs)", file=_sys.stderr)
        params0, opt_state = ck.params, ck.opt_state()
        rng, start_epoch = ck.rng(), ck.epoch
        hist_path = out / "loss_history.csv"
        if hist_path.exists():
            _, rows = read_table(hist_path)
            prior = [row for row in rows if row[0] < start_epoch]

    out.mkdir(parents=True, exist_ok=True)

    def save(epoch_done: int, result: TrainResult, rng_now) -> None:
        ck = Checkpoint(experiment=cfg.experiment, kind=cfg.kind, arch=arch,
                        config_sha=cfg_sha, epoch=epoch_done,
                        params=result.params, opt_s=result.opt_state.s,
                        opt_step=result.opt_state.step,
                        rng_state=rng_now.bit_generator.state)
        save_checkpoint(out / "checkpoint.txt", ck)
        rows = list(prior) + [
            [r.epoch, r.train_loss, r.val_loss, r.lr] for r in result.history]
        write_csv(out / "loss_history.csv",
                  ["epoch", "train_loss", "val_loss", "lr"], rows)

    rng_live = rng if rng is not None else np.random.default_rng(settings.seed)
    every = cfg.checkpoint_every if cfg.checkpoint_every else CHECKPOINT_EVERY

    def callback(epoch: int, result: TrainResult) -> None:
        rec = result.history[-1]
        if not quiet:
            print(f"epoch {epoch + 1}/{settings.epochs} "
                  f"train {rec.train_loss:.6e} val {rec.val_loss:.6e} "
                  f"lr {rec.lr:.4e}")
        if (epoch + 1) % every == 0:
            save(epoch + 1, result, rng_live)

    result = train(system, train_ds, params0, settings, loss_spec, stepper,
                   val_dataset=val_ds, val_history=train_ds.history_fn(),
                   opt_state=opt_state, rng=rng_live,
                   start_epoch=start_epoch, callback=callback)
    save(result.epochs_run, result, rng_live)
    return result


def cmd_train(cfg: ExperimentConfig, out: Path, resume: Path | None) -> int:
    result = run_training(cfg, out, resume=resume)
    if result.diverged:
        print(f"training diverged at epoch {result.epochs_run}; "
              f"last finite state saved", file=_sys.stderr)
        return 1
    print(f"trained {cfg.experiment}/{cfg.kind} for {result.epochs_run} epochs; "
          f"checkpoint + loss history in {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _metric_loss(study) -> LossSpec:
    return replace(study.loss_spec(), positivity_weight=0.0)


def cmd_evaluate(cfg: ExperimentConfig, out: Path, ckpt: Path | None) -> int:
    study = cfg.study()
    dataset, basis = load_truth(cfg, out)
    ckpt = ckpt if ckpt is not None else out / "checkpoint.txt"
    ck = load_checkpoint(ckpt)
    closure = cfg.closure(study)
    check_compatible(ck, closure, cfg.kind, cfg.experiment)
    system = build_system(cfg, study, closure, basis)
    stepper = cfg.forward_stepper(study)

    span = (dataset.t_start, dataset.t_end)
    hist = constant_history(dataset.states[0])
    run = forward_augmented(system, ck.params, span, stepper, history=hist,
                            u0=dataset.states[0])
    model = np.stack([run.u_at(min(t, run.t1)) for t in dataset.times])

    rollouts = {"model": model}
    for bname, rhs in study.baselines(
            basis if cfg.experiment == "exp1_rom" else None).items():
        traj = integrate_ode(rhs, dataset.states[0], span, stepper)
        rollouts[bname] = np.stack(
            [traj.eval(min(float(t), span[1])) for t in dataset.times])

    names = state_columns(cfg.experiment, "target")
    order = ["model"] + [k for k in rollouts if k != "model"]
    header = ["t"] + [f"truth_{c}" for c in names] + \
        [f"{k}_{c}" for k in order for c in names]
    rows = ([t] + list(dataset.states[i]) +
            [v for k in order for v in rollouts[k][i]]
            for i, t in enumerate(dataset.times))
    write_csv(out / "trajectory.csv", header, rows)

    err = {k: rollouts[k] - dataset.states for k in order}
    write_csv(out / "rmse.csv", ["t"] + [f"rmse_{k}" for k in order],
              ([t] + [float(np.sqrt(np.mean(err[k][i] ** 2))) for k in order]
               for i, t in enumerate(dataset.times)))

    windows = [("train", 0.0, study.train_end),
               ("val", study.train_end, study.val_end),
               ("predict", study.val_end, study.predict_end)]
    mloss = _metric_loss(study)
    mrows = []
    for wname, lo, hi in windows:
        sel = (dataset.times >= lo - 1e-9) & (dataset.times <= hi + 1e-9)
        for k in order:
            mrows.append(["time_avg_l2", wname, k,
                          mloss.total(rollouts[k][sel], dataset.states[sel])])
    sel = dataset.times >= study.val_end - 1e-9
    for k in order:
        mrows.append(["crosscorr", "predict", k,
                      avg_crosscorr(rollouts[k][sel], dataset.states[sel])])
    write_csv(out / "metrics.csv", ["metric", "window", "model", "value"], mrows)
    print(f"evaluated {cfg.experiment}/{cfg.kind}: trajectory.csv, rmse.csv, "
          f"metrics.csv in {out}")
    return 0


# ---------------------------------------------------------------------------
# verify-gradients
# ---------------------------------------------------------------------------


def gradient_checks(cfg: ExperimentConfig | None = None):
    """Adjoint-vs-finite-difference relative errors on the toy study.

    Yields (label, relative_error) for the three closure kinds; distributed
    runs both a from-zero and an interior window so the history term of its
    second adjoint variable is exercised.
    """
    study = ex.get_study("toy") if cfg is None or cfg.experiment != "toy" \
        else cfg.study()
    data = study.setup()
    span = (0.0, 2.0)
    ds_all = SnapshotDataset(data.times, data.states)
    idx = [int(round(t / ds_all.dt)) for t in (0.6, 1.2, 1.8)]
    ds = SnapshotDataset(ds_all.times[idx], ds_all.states[idx])
    stepper = RK4Fixed(0.005)
    loss = study.loss_spec()
    hist = constant_history(data.states[0])

    cases = [("markovian", None), ("discrete", None),
             ("distributed (0,0.5)", (0.0, 0.5)),
             ("distributed (0.2,0.7)", (0.2, 0.7))]
    for label, window in cases:
        kind = label.split()[0]
        clo = study.closure(kind, window=window)
        system = study.system(clo)
        rng = np.random.default_rng(9)
        params = ex.initial_params(clo, seed=9)
        params = params + 0.1 * rng.standard_normal(params.size)
        run = forward_augmented(system, params, span, stepper, history=hist)
        adj = adjoint_gradient(system, params, run, ds, loss, stepper)
        fd = fd_gradient(system, params, span, ds, loss, stepper,
                         history=hist, eps=1e-6)
        if isinstance(clo, Distributed):
            nt = system.n_theta
            rel = max(
                np.linalg.norm(adj.grad[:nt] - fd[:nt]) / max(np.linalg.norm(fd[:nt]), 1e-14),
                np.linalg.norm(adj.grad[nt:] - fd[nt:]) / max(np.linalg.norm(fd[nt:]), 1e-14))
        else:
            rel = np.linalg.norm(adj.grad - fd) / max(np.linalg.norm(fd), 1e-14)
        yield label, float(rel)


def cmd_verify_gradients(cfg: ExperimentConfig | None) -> int:
    worst = 0.0
    for label, rel in gradient_checks(cfg):
        status = "PASS" if rel < GRAD_TOL else "FAIL"
        print(f"{label:24s} rel {rel:.3e}  {status}")
        worst = max(worst, rel)
    print(f"max relative error {worst:.3e} (tolerance {GRAD_TOL:g})")
    return 0 if worst < GRAD_TOL else 2


# ---------------------------------------------------------------------------
# sweep-delay
# ---------------------------------------------------------------------------


def final_epoch_val_loss(records, n_last: int = FINAL_EPOCH_AVG) -> float:
    """Validation loss averaged over the last ``n_last`` epochs (all if fewer)."""
    vals = np.array([r.val_loss for r in records[-n_last:]], dtype=float)
    if vals.size == 0 or not np.any(np.isfinite(vals)):
        return float("nan")
    return float(np.nanmean(vals))


def cmd_sweep_delay(cfg: ExperimentConfig, out: Path) -> int:
    cfg = replace(cfg, kind="distributed",
                  epochs=cfg.sweep_epochs if cfg.sweep_epochs is not None
                  else cfg.epochs)
    load_truth(cfg, out)   # shared by every run
    run_rows = []
    by_tau: dict[float, list[float]] = {}
    for tau2 in cfg.sweep_tau2:
        for rep in range(cfg.sweep_repeats):
            seed = cfg.seed + rep
            rcfg = replace(cfg, seed=seed)
            rdir = out / f"tau2_{tau2:g}" / f"rep{rep}"
            rdir.mkdir(parents=True, exist_ok=True)
            for name in ("truth.csv", "pod_basis.txt", "truth_fine.csv",
                         "truth_full.csv"):
                src = out / name
                if src.exists() and not (rdir / name).exists():
                    (rdir / name).write_bytes(src.read_bytes())
            result = run_training(rcfg, rdir, window=(0.0, tau2), quiet=True)
            loss = final_epoch_val_loss(result.history)
            status = "diverged" if result.diverged or not np.isfinite(loss) \
                else "ok"
            if status == "ok":
                by_tau.setdefault(tau2, []).append(loss)
            run_rows.append([tau2, rep, seed, status, loss])
            print(f"tau2 {tau2:g} rep {rep} seed {seed}: {status} "
                  f"val:{loss:.6e}")
    write_csv(out / "runs.csv",
              ["tau2", "repeat", "seed", "status", "val_loss_final"],
              run_rows)
    srows = []
    for tau2 in cfg.sweep_tau2:
        vals = by_tau.get(tau2, [])
        if vals:
            q = np.percentile(vals, [0, 25, 50, 75, 100])
            srows.append([tau2, len(vals), *q])
        else:
            srows.append([tau2, 0] + [float("nan")] * 5)
    write_csv(out / "summary.csv",
              ["tau2", "n_ok", "min", "q1", "median", "q3", "max"], srows)
    print(f"sweep complete: runs.csv, summary.csv in {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="neuralclosure",
        description="Train and evaluate neural delay-closure models.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, needs_config in (("gen-data", True), ("train", True),
                               ("evaluate", True), ("verify-gradients", False),
                               ("sweep-delay", True)):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=needs_config,
                        help="path to a run configuration file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--out", default=None,
                        help="run directory (overrides [run] out)")
        sp.add_argument("--checkpoint", default=None,
                        help="checkpoint path (train: resume from; "
                             "evaluate: weights to score)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else None
        if cfg is not None and args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        out = args.out if args.out is not None else (cfg.out if cfg else None)
        if args.command != "verify-gradients":
            if out is None:
                raise ValueError("need --out or [run] out in the config")
            out = Path(out)
        ckpt = Path(args.checkpoint) if args.checkpoint else None
        if args.command == "gen-data":
            generate_truth(cfg, out)
            return 0
        if args.command == "train":
            return cmd_train(cfg, out, ckpt)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out, ckpt)
        if args.command == "verify-gradients":
            return cmd_verify_gradients(cfg)
        return cmd_sweep_delay(cfg, out)
    except ValueError as e:
        print(f"error: {e}", file=_sys.stderr)
        return 2
    except (OSError, IntegrationError) as e:
        print(f"error: {e}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
