"""Inverse dynamics model: dataset construction, training and action queries.

An input row is the flattened history window (``W + 1`` observations, then
``W`` actions) followed by the desired next observation.  The label is the
action that was executed, or in ``correction`` mode its difference from the
action the source policy proposed at that step.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RngStream, Trajectory, Window, read_jsonl, write_jsonl
from .nn import (
    HIDDEN,
    Mlp,
    Normalizer,
    adam_init,
    adam_step,
    fit_normalizer,
    forward,
    grad_mse,
    identity_normalizer,
    init_mlp,
    mse_loss,
    normalize,
    zero_mlp,
)

log = logging.getLogger(__name__)

MODES = ("direct", "correction")


def input_dim(W: int, d_obs: int, d_act: int) -> int:
    return (W + 2) * d_obs + W * d_act


def sample_input(window: Window, o_next) -> np.ndarray:
    return np.concatenate([window.observations.ravel(), window.actions.ravel(), np.ravel(o_next)])


@dataclass
class InvDataset:
    """Stacked inverse-dynamics samples; rows keep insertion order."""

    inputs: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.inputs)

    @classmethod
    def empty(cls, d_in: int, d_act: int) -> InvDataset:
        return cls(np.zeros((0, d_in)), np.zeros((0, d_act)))

    def extend(self, other: InvDataset) -> InvDataset:
        return InvDataset(
            np.concatenate([self.inputs, other.inputs]), np.concatenate([self.labels, other.labels])
        )

    def save(self, path: str | Path, append: bool = False) -> None:
        write_jsonl(
            path,
            ({"input": x.tolist(), "label": y.tolist()} for x, y in zip(self.inputs, self.labels)),
            append=append,
        )

    @classmethod
    def load(cls, path: str | Path) -> InvDataset:
        recs = list(read_jsonl(path))
        return cls(np.array([r["input"] for r in recs]), np.array([r["label"] for r in recs]))


def window_at(traj: Trajectory, t: int, W: int, d_act: int) -> Window:
    """Padded window ending at observation ``t`` (same rule as ``pad_window``)."""
    obs = [traj.observations[max(i, 0)] for i in range(t - W, t + 1)]
    acts = [traj.actions[i] if i >= 0 else np.zeros(d_act) for i in range(t - W, t)]
    return Window(np.array(obs), np.array(acts).reshape(W, d_act))


def build_dataset(
    trajs: list[Trajectory],
    W: int,
    mode: str = "direct",
    source_actions: list[list[np.ndarray]] | None = None,
) -> InvDataset:
    """One sample per action: window ending at ``o_t``, target ``o_{t+1}``, label ``a_t``.

    ``source_actions[i][t]`` is required in correction mode and is subtracted
    from the label.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "correction" and source_actions is None:
        raise ValueError("correction mode needs the source actions of every step")
    xs, ys = [], []
    for i, traj in enumerate(trajs):
        if not traj.actions:
            continue
        d_act = traj.actions[0].shape[0]
        for t, a in enumerate(traj.actions):
            xs.append(sample_input(window_at(traj, t, W, d_act), traj.observations[t + 1]))
            ys.append(a - source_actions[i][t] if mode == "correction" else a)
    if not xs:
        raise ValueError("no transitions in the given trajectories")
    return InvDataset(np.array(xs), np.array(ys))


@dataclass
class InverseModel:
    mlp: Mlp
    normalizer: Normalizer
    W: int
    mode: str = "direct"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def d_act(self) -> int:
        return self.mlp.d_out

    def query(self, window: Window, o_next, a_source=None) -> np.ndarray:
        return query(self, window, o_next, a_source)

    def to_dict(self) -> dict:
        return {
            "dims": self.mlp.sizes,
            "weights": [W.tolist() for W in self.mlp.weights],
            "biases": [b.tolist() for b in self.mlp.biases],
            "norm_mean": self.normalizer.mean.tolist(),
            "norm_std": self.normalizer.std.tolist(),
            "W": self.W,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> InverseModel:
        mlp = Mlp([np.array(W, dtype=float) for W in d["weights"]], [np.array(b, dtype=float) for b in d["biases"]])
        if mlp.sizes != list(d["dims"]):
            raise ValueError("checkpoint dims do not match its weight arrays")
        norm = Normalizer(np.array(d["norm_mean"], dtype=float), np.array(d["norm_std"], dtype=float))
        return cls(mlp, norm, int(d["W"]), d.get("mode", "direct"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> InverseModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def query(phi: InverseModel, window: Window, o_next, a_source=None) -> np.ndarray:
    if window.W != phi.W:
        raise ValueError(f"window has W={window.W}, model expects W={phi.W}")
    x = sample_input(window, o_next)
    if x.shape[0] != phi.mlp.d_in:
        raise ValueError(f"input dim {x.shape[0]} does not match model input {phi.mlp.d_in}")
    out = forward(phi.mlp, normalize(phi.normalizer, x))
    if phi.mode == "correction":
        if a_source is None:
            raise ValueError("correction mode needs the source action")
        out = np.asarray(a_source, dtype=float) + out
    return np.clip(out, -1.0, 1.0)


def zero_model(d_obs: int, d_act: int, W: int, mode: str = "correction", hidden=HIDDEN) -> InverseModel:
    """All-zero network: outputs zero, i.e. ``a_source`` itself in correction mode."""
    d_in = input_dim(W, d_obs, d_act)
    return InverseModel(zero_mlp([d_in, *hidden, d_act]), identity_normalizer(d_in), W, mode)


def random_model(d_obs: int, d_act: int, W: int, rng: RngStream, mode: str = "direct", hidden=HIDDEN):
    d_in = input_dim(W, d_obs, d_act)
    return InverseModel(init_mlp([d_in, *hidden, d_act], rng), identity_normalizer(d_in), W, mode)


@dataclass
class TrainConfig:
    epochs: int = 40
    batch: int = 128
    lr: float = 1e-3
    hidden: tuple[int, ...] = HIDDEN
    val_fraction: float = 0.1


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    label_var: float = 0.0

    @property
    def final_mse(self) -> float:
        """Per-sample squared error (twice the half-MSE loss) of the returned model."""
        return 2.0 * self.train_loss[self.best_epoch]


def train(
    data: InvDataset,
    W: int,
    rng: RngStream,
    mode: str = "direct",
    cfg: TrainConfig | None = None,
) -> tuple[InverseModel, TrainReport]:
    """Fit a fresh network with Adam on normalized inputs.

    The last ``val_fraction`` of the rows is held out; the returned weights
    are those of the epoch with the lowest held-out loss (last epoch when
    nothing is held out).  In correction mode the output layer starts at
    zero, so the untrained network predicts no correction.  Draw order: init
    weights, then one permutation per epoch.
    """
    cfg = cfg or TrainConfig()
    n = len(data)
    if n < 2:
        raise ValueError("training needs at least two samples")
    norm = fit_normalizer(data.inputs)
    X = normalize(norm, data.inputs)
    Y = data.labels
    n_val = int(n * cfg.val_fraction)
    n_tr = n - n_val
    Xtr, Ytr, Xva, Yva = X[:n_tr], Y[:n_tr], X[n_tr:], Y[n_tr:]

    model = init_mlp([X.shape[1], *cfg.hidden, Y.shape[1]], rng)
    if mode == "correction":
        # start from "no correction": the output layer is zero, hidden layers random
        model.weights[-1][:] = 0.0
    opt = adam_init(model, lr=cfg.lr)
    report = TrainReport(label_var=float(np.mean(np.var(Y, axis=0))))
    best, best_val = model, np.inf
    for epoch in range(cfg.epochs):
        perm = rng.gen.permutation(n_tr)
        total = 0.0
        for start in range(0, n_tr, cfg.batch):
            idx = perm[start : start + cfg.batch]
            grads, loss = grad_mse(model, Xtr[idx], Ytr[idx], return_loss=True)
            model, opt = adam_step(model, grads, opt)
            total += loss * len(idx)
        report.train_loss.append(total / n_tr)
        if n_val:
            val = mse_loss(model, Xva, Yva)
            report.val_loss.append(val)
            if val < best_val:
                best, best_val, report.best_epoch = model, val, epoch
        else:
            best, report.best_epoch = model, epoch
    log.debug("trained on %d samples, best epoch %d", n_tr, report.best_epoch)
    return InverseModel(best, norm, W, mode), report
