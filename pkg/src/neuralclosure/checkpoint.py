"""Self-describing text checkpoints.

A checkpoint freezes everything a training run needs to continue exactly:
the architecture fingerprint, the flat parameter vector, the optimizer
accumulator, and the batch-sampler RNG state. Values are written with
``repr`` (shortest exact round-trip), so loading and resuming reproduces
the next update bit for bit on the same build.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .closure import ClosureModel, Discrete, Distributed, Markovian
from .train import RmspropState

FORMAT_LINE = "# neural closure checkpoint v1"


def closure_fingerprint(closure: ClosureModel) -> str:
    """Stable one-line description of the closure, delays included."""
    def nums(xs):
        return ",".join(format(x, ".17g") for x in xs)
    if isinstance(closure, Markovian):
        return "markovian|" + closure.net.describe()
    if isinstance(closure, Discrete):
        return f"discrete[{nums(closure.delays)}]|" + closure.net.describe()
    if isinstance(closure, Distributed):
        return (f"distributed[{nums(closure.window)};aux={closure.aux_dim}]"
                f"|f:{closure.f_net.describe()}|g:{closure.g_net.describe()}")
    raise TypeError(f"not a closure: {closure!r}")


@dataclass
class Checkpoint:
    experiment: str
    kind: str
    arch: str                 # closure_fingerprint of the trained closure
    config_sha: str
    epoch: int
    params: np.ndarray
    opt_s: np.ndarray
    opt_step: int
    rng_state: dict | None = None

    @property
    def arch_sha(self) -> str:
        return hashlib.sha256(self.arch.encode()).hexdigest()

    def opt_state(self) -> RmspropState:
        return RmspropState(s=self.opt_s.copy(), step=self.opt_step)

    def rng(self) -> np.random.Generator | None:
        if self.rng_state is None:
            return None
        bg = np.random.PCG64()
        bg.state = self.rng_state
        return np.random.Generator(bg)


def _vec_lines(v: np.ndarray) -> str:
    return "\n".join(repr(float(x)) for x in v)


def dump_checkpoint(ck: Checkpoint) -> str:
    parts = [
        FORMAT_LINE,
        f"experiment = {ck.experiment}",
        f"closure = {ck.kind}",
        f"epoch = {ck.epoch}",
        f"opt_step = {ck.opt_step}",
        f"n_params = {ck.params.size}",
        f"arch = {ck.arch}",
        f"arch_sha256 = {ck.arch_sha}",
        f"config_sha256 = {ck.config_sha}",
        "",
        "[params]",
        _vec_lines(ck.params),
        "",
        "[opt_s]",
        _vec_lines(ck.opt_s),
    ]
    if ck.rng_state is not None:
        parts += ["", "[rng]", json.dumps(ck.rng_state, sort_keys=True)]
    return "\n".join(parts) + "\n"


def save_checkpoint(path, ck: Checkpoint) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_checkpoint(ck))


def parse_checkpoint(text: str) -> Checkpoint:
    lines = text.splitlines()
    if not lines or lines[0] != FORMAT_LINE:
        raise ValueError("not a checkpoint file (bad format line)")
    head: dict[str, str] = {}
    i = 1
    while i < len(lines) and lines[i].strip() and not lines[i].startswith("["):
        key, _, val = lines[i].partition("=")
        if not _:
            raise ValueError(f"bad checkpoint header line: {lines[i]!r}")
        head[key.strip()] = val.strip()
        i += 1
    sections: dict[str, list[str]] = {}
    current = None
    for line in lines[i:]:
        s = line.strip()
        if not s:
            continue
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1]
            sections[current] = []
        elif current is None:
            raise ValueError(f"stray checkpoint line: {line!r}")
        else:
            sections[current].append(s)
    for need in ("experiment", "closure", "epoch", "opt_step", "n_params",
                 "arch", "config_sha256"):
        if need not in head:
            raise ValueError(f"checkpoint missing header field {need!r}")
    for need in ("params", "opt_s"):
        if need not in sections:
            raise ValueError(f"checkpoint missing [{need}] section")
    params = np.array([float(x) for x in sections["params"]])
    opt_s = np.array([float(x) for x in sections["opt_s"]])
    n = int(head["n_params"])
    if params.size != n or opt_s.size != n:
        raise ValueError(f"checkpoint expects {n} parameters, got "
                         f"{params.size} params / {opt_s.size} opt entries")
    rng_state = None
    if "rng" in sections:
        rng_state = json.loads("\n".join(sections["rng"]))
    ck = Checkpoint(experiment=head["experiment"], kind=head["closure"],
                    arch=head["arch"], config_sha=head["config_sha256"],
                    epoch=int(head["epoch"]), params=params, opt_s=opt_s,
                    opt_step=int(head["opt_step"]), rng_state=rng_state)
    if "arch_sha256" in head and head["arch_sha256"] != ck.arch_sha:
        raise ValueError("checkpoint architecture fingerprint mismatch")
    return ck


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        return parse_checkpoint(fh.read())


def check_compatible(ck: Checkpoint, closure: ClosureModel, kind: str,
                     experiment: str, config_sha: str | None = None) -> None:
    """Refuse to resume against a different run description."""
    if ck.experiment != experiment:
        raise ValueError(f"checkpoint is for {ck.experiment}, not {experiment}")
    if ck.kind != kind:
        raise ValueError(f"checkpoint closure kind {ck.kind} != {kind}")
    want = closure_fingerprint(closure)
    if ck.arch != want:
        raise ValueError("checkpoint architecture does not match the config")
    if config_sha is not None and ck.config_sha != config_sha:
        raise ValueError("checkpoint was produced by a different config")
