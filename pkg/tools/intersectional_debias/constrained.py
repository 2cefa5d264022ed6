"""Bias-constrained training as a two-player Lagrangian game.

The primal player minimises cross-entropy plus multiplier-weighted proxy constraints
with torch's Adam; the dual player runs projected gradient ascent on the multipliers
using the exact indicator-based constraint values measured on the full training split.

Each absolute TPR constraint gamma_g |tpr_g - tpr| <= nu is split into two one-sided
constraints with their own multipliers, ordered (upper, lower) per group.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from .config import (
    ADAM_BETAS,
    ADAM_EPS,
    ITERATE_LOG_FILE,
    ITERATES_DIR,
    MAX_OUTER_ITERATIONS,
    MAX_RETAINED_ITERATES,
    MODEL_KINDS,
    STATE_FILE,
)
from .errors import (
    ConfigError,
    DimensionMismatchError,
    DivergenceError,
    InvalidInputError,
    NoIncludedGroupsError,
    UnconstrainedFallbackError,
)
from .groups import build_group_set, enumerate_groups, gerry_group_set
from .metrics import f1_score, tpr_violations
from .models import (
    ConstrainedTrainState,
    ConstraintSpec,
    Dataset,
    GroupSet,
    IterateSnapshot,
    TrainerConfig,
)
from .utils_io import read_json, read_matrix_csv, write_json, write_jsonl, write_matrix_csv

Params = Dict[str, np.ndarray]
IterateCallback = Callable[[int, "TaskModel"], None]
DTYPE = torch.float64


def _as_tensor(values: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.asarray(values, dtype=float), dtype=DTYPE)


class TaskModel:
    """Binary classifier over a torch module: linear scores or one hidden ReLU layer.

    Parameters are float64 and named after the module's state dict
    (`out.weight`, `out.bias`, plus `hidden.weight`, `hidden.bias` for mlp).
    """

    def __init__(self, kind: str, input_dim: int, hidden_dim: int = 0):
        if kind not in MODEL_KINDS:
            raise ConfigError(f"Unknown model kind '{kind}'")
        if kind == "mlp" and hidden_dim < 1:
            raise ConfigError("mlp models need hidden_dim >= 1")
        self.kind = kind
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim if kind == "mlp" else 0
        layers: OrderedDict[str, torch.nn.Module]
        if kind == "linear":
            layers = OrderedDict([("out", torch.nn.Linear(input_dim, 1))])
        else:
            layers = OrderedDict(
                [
                    ("hidden", torch.nn.Linear(input_dim, hidden_dim)),
                    ("relu", torch.nn.ReLU()),
                    ("out", torch.nn.Linear(hidden_dim, 1)),
                ]
            )
        self.module = torch.nn.Sequential(layers).to(DTYPE)

    @classmethod
    def init(cls, kind: str, input_dim: int, hidden_dim: int, seed: int) -> "TaskModel":
        """He-initialised weights and zero intercepts, seeded."""
        model = cls(kind, input_dim, hidden_dim)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
        params: Params = {}
        for name, tensor in model.module.state_dict().items():
            if name.endswith(".bias"):
                params[name] = np.zeros(tuple(tensor.shape))
            else:
                fan_in = tensor.shape[1]
                params[name] = rng.standard_normal(tuple(tensor.shape)) * np.sqrt(2.0 / fan_in)
        model.load_params(params)
        return model

    @classmethod
    def from_params(
        cls, kind: str, input_dim: int, params: Params, hidden_dim: int = 0
    ) -> "TaskModel":
        model = cls(kind, input_dim, hidden_dim)
        model.load_params(params)
        return model

    @property
    def params(self) -> Params:
        """Detached numpy copies of every parameter."""
        return {k: v.detach().cpu().numpy().copy() for k, v in self.module.state_dict().items()}

    def load_params(self, params: Params) -> None:
        expected = self.module.state_dict()
        if set(params) != set(expected):
            raise InvalidInputError(
                f"Expected parameters {sorted(expected)}, got {sorted(params)}"
            )
        self.module.load_state_dict(
            {
                name: _as_tensor(params[name]).reshape(tensor.shape)
                for name, tensor in expected.items()
            }
        )

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionMismatchError(self.input_dim, X.shape[-1] if X.ndim else 0)
        return X

    def logits(self, X: np.ndarray) -> torch.Tensor:
        """Differentiable scores, one per row."""
        return self.module(_as_tensor(self._check(X))).squeeze(-1)

    def scores(self, X: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return self.logits(X).numpy()

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class 1 iff sigmoid(score) > 0.5."""
        return (self.scores(X) > 0).astype(np.int64)

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(p).all()) for p in self.module.parameters())

    def describe(self) -> Dict[str, object]:
        return {"kind": self.kind, "input_dim": self.input_dim, "hidden_dim": self.hidden_dim}


def make_optimizer(model: TaskModel, learning_rate: float) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        model.module.parameters(), lr=learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
    )


# ---------------------------------------------------------------------------
# Constraint algebra
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProxyBatch:
    """A batch with the per-row coefficients of every one-sided constraint.

    Constraint c reads sum_i coef[c, i] * 1[s_i > 0] - nu, with rates normalised by the
    batch's own positive counts; constraints whose group has no positives are all-zero.
    """

    X: np.ndarray  # m x d
    y: np.ndarray  # m
    coef: np.ndarray  # C x m
    nu: float


def constraint_coefficients(
    y: np.ndarray, members: np.ndarray, gammas: np.ndarray
) -> np.ndarray:
    """(2G) x m coefficients turning indicator predictions into one-sided TPR gaps."""
    positives = (np.asarray(y) == 1).astype(float)
    n_pos = positives.sum()
    G, m = members.shape
    coef = np.zeros((2 * G, m))
    if n_pos == 0:
        return coef
    overall = positives / n_pos
    for g in range(G):
        in_group = members[g] * positives
        count = in_group.sum()
        if count == 0:
            continue
        gap = gammas[g] * (in_group / count - overall)
        coef[2 * g] = gap
        coef[2 * g + 1] = -gap
    return coef


def make_proxy_batch(
    X: np.ndarray, y: np.ndarray, members: np.ndarray, gammas: np.ndarray, nu: float
) -> ProxyBatch:
    return ProxyBatch(
        X=X, y=np.asarray(y), coef=constraint_coefficients(y, members, gammas), nu=nu
    )


def batch_for_spec(dataset: Dataset, spec: ConstraintSpec) -> ProxyBatch:
    return make_proxy_batch(
        dataset.features, dataset.labels, _members(dataset, spec.group_set), spec.gammas(), spec.nu
    )


def hinge_upper(scores: torch.Tensor) -> torch.Tensor:
    """max(0, 1 + s) >= 1[s > 0]."""
    return torch.clamp(1.0 + scores, min=0.0)


def ramp_lower(scores: torch.Tensor) -> torch.Tensor:
    """min(1, s) <= 1[s > 0]."""
    return torch.clamp(scores, max=1.0)


def proxy_tensor(scores: torch.Tensor, batch: ProxyBatch) -> torch.Tensor:
    coef = _as_tensor(batch.coef)
    pos = torch.clamp(coef, min=0.0)
    neg = torch.clamp(coef, max=0.0)
    return pos @ hinge_upper(scores) + neg @ ramp_lower(scores) - batch.nu


def proxy_constraints(scores: np.ndarray, batch: ProxyBatch) -> np.ndarray:
    with torch.no_grad():
        return proxy_tensor(_as_tensor(scores), batch).numpy()


def indicator_constraints(scores: np.ndarray, batch: ProxyBatch) -> np.ndarray:
    return batch.coef @ (scores > 0).astype(float) - batch.nu


def cross_entropy(scores: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(scores, y)


def lagrangian(model: TaskModel, lambdas: np.ndarray, batch: ProxyBatch) -> torch.Tensor:
    """Mean cross-entropy plus sum_c lambda_c * proxy_c, differentiable in the model."""
    scores = model.logits(batch.X)
    loss = cross_entropy(scores, _as_tensor(batch.y))
    if batch.coef.shape[0] == 0:
        return loss
    return loss + _as_tensor(lambdas) @ proxy_tensor(scores, batch)


def lagrangian_value(
    model: TaskModel,
    lambdas: np.ndarray,
    batch: Union[ProxyBatch, Dataset],
    spec: Optional[ConstraintSpec] = None,
) -> float:
    if isinstance(batch, Dataset):
        if spec is None:
            raise InvalidInputError("A ConstraintSpec is required to evaluate a Dataset batch")
        batch = batch_for_spec(batch, spec)
    with torch.no_grad():
        return float(lagrangian(model, lambdas, batch))


def lagrangian_and_grad(
    model: TaskModel, lambdas: np.ndarray, batch: ProxyBatch
) -> Tuple[float, Params]:
    """Lagrangian value and its autograd gradient per named parameter."""
    model.module.zero_grad()
    loss = lagrangian(model, lambdas, batch)
    loss.backward()
    grads: Params = {}
    for name, param in model.module.named_parameters():
        grad = param.grad
        grads[name] = np.zeros(tuple(param.shape)) if grad is None else grad.numpy().copy()
    return float(loss.detach()), grads


def _members(dataset: Dataset, group_set: GroupSet) -> np.ndarray:
    if not len(group_set):
        return np.zeros((0, dataset.n))
    return np.vstack([g.matches(dataset.protected) for g in group_set.defs]).astype(float)


def one_sided_violations(
    model: TaskModel, dataset: Dataset, spec: ConstraintSpec
) -> np.ndarray:
    """Exact one-sided constraint values (upper, lower per group) on a full split."""
    batch = make_proxy_batch(
        dataset.features, dataset.labels, _members(dataset, spec.group_set), spec.gammas(), spec.nu
    )
    return indicator_constraints(model.scores(dataset.features), batch)


def true_violations(model: TaskModel, dataset: Dataset, spec: ConstraintSpec) -> np.ndarray:
    """gamma_g |tpr_g - tpr| - nu per group; NaN for groups with no positives here."""
    preds = model.predict(dataset.features)
    positives = dataset.labels == 1
    overall = float(np.mean(preds[positives] == 1)) if positives.any() else float("nan")
    gammas = spec.gammas()
    out = np.full(len(spec.group_set), np.nan)
    for i, g in enumerate(spec.group_set.defs):
        members = g.matches(dataset.protected) & positives
        if members.any():
            tpr_g = float(np.mean(preds[members] == 1))
            out[i] = gammas[i] * abs(tpr_g - overall) - spec.nu
    return out


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _active_spec(spec: ConstraintSpec) -> ConstraintSpec:
    keep = [i for i, c in enumerate(spec.group_set.positive_counts) if c > 0]
    dropped = [spec.group_set.defs[i].label for i in range(len(spec.group_set)) if i not in keep]
    if dropped:
        logging.warning(
            "Dropping %d constraint groups without training positives: %s",
            len(dropped),
            ", ".join(dropped),
        )
    if not keep:
        raise UnconstrainedFallbackError("Every constraint group lacks training positives")
    gs = spec.group_set
    subset = GroupSet(
        defs=tuple(gs.defs[i] for i in keep),
        masks=gs.masks[keep],
        positive_counts=tuple(gs.positive_counts[i] for i in keep),
    )
    return ConstraintSpec(subset, spec.nu, spec.gamma_mode, spec.metric)


def retention_stride(T: int) -> int:
    """Keep every stride-th iterate so at most MAX_RETAINED_ITERATES (plus T) are stored."""
    return max(1, -(-T // MAX_RETAINED_ITERATES))


def _game(
    train: Dataset,
    dev: Dataset,
    spec: Optional[ConstraintSpec],
    model_kind: str,
    T: int,
    seed: int,
    trainer: TrainerConfig,
    on_iterate: Optional[IterateCallback],
) -> ConstrainedTrainState:
    if not 1 <= T <= MAX_OUTER_ITERATIONS:
        raise ConfigError(f"T must lie in [1, {MAX_OUTER_ITERATIONS}], got {T}")
    if dev.d != train.d:
        raise DimensionMismatchError(train.d, dev.d, "dev features")

    model = TaskModel.init(model_kind, train.d, trainer.hidden_dim, seed)
    optimizer = make_optimizer(model, trainer.learning_rate)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))

    if spec is not None:
        members = _members(train, spec.group_set)
        gammas = spec.gammas()
        labels = [f"{g.label}:{side}" for g in spec.group_set.defs for side in ("upper", "lower")]
        nu = spec.nu
    else:
        members = np.zeros((0, train.n))
        gammas = np.zeros(0)
        labels = []
        nu = 0.0
    lambdas = np.full(len(labels), trainer.lambda_init)
    state = ConstrainedTrainState(model=model, lambdas=lambdas, constraint_labels=labels, T=T)

    dev_groups = gerry_group_set(dev)
    stride = retention_stride(T)
    n = train.n
    batch = min(trainer.batch_size, n)

    for t in range(1, T + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            pb = make_proxy_batch(
                train.features[idx], train.labels[idx], members[:, idx], gammas, nu
            )
            optimizer.zero_grad()
            loss = lagrangian(model, state.lambdas, pb)
            if not bool(torch.isfinite(loss)):
                raise DivergenceError(t, float(loss.detach()))
            loss.backward()
            optimizer.step()
        if not model.is_finite():
            raise DivergenceError(t, float("nan"))

        train_max: Optional[float] = None
        if spec is not None:
            full = make_proxy_batch(train.features, train.labels, members, gammas, nu)
            psi = indicator_constraints(model.scores(train.features), full)
            state.lambdas = np.maximum(0.0, state.lambdas + trainer.dual_learning_rate * psi)
            train_max = float(np.max(psi + nu))

        preds = model.predict(dev.features)
        dev_avg: Optional[float] = None
        dev_max: Optional[float] = None
        skipped = 0
        try:
            report = tpr_violations(preds, dev.labels, dev_groups, trainer.min_positives)
            dev_avg, dev_max, skipped = report.avg, report.max, len(report.skipped)
        except NoIncludedGroupsError as e:
            skipped = e.skipped
            if t == 1:
                logging.warning(
                    "Dev violations unavailable: no dev group has %d positives (%d skipped)",
                    e.min_positives,
                    e.skipped,
                )
        snapshot = IterateSnapshot(
            t=t,
            dev_f1=f1_score(preds, dev.labels),
            dev_avg_violation=dev_avg,
            dev_max_violation=dev_max,
            lambda_max=float(state.lambdas.max()) if state.lambdas.size else 0.0,
            lambda_sum=float(state.lambdas.sum()),
            train_max_violation=train_max,
            lambda_min=float(state.lambdas.min()) if state.lambdas.size else 0.0,
            dev_skipped_groups=skipped,
        )
        state.iterate_log.append(snapshot)
        if t % stride == 0 or t == T:
            state.retained[t] = model.params
        logging.debug(
            "t=%d dev_f1=%.4f dev_avg=%s lambda_max=%.4f",
            t,
            snapshot.dev_f1,
            snapshot.dev_avg_violation,
            snapshot.lambda_max,
        )
        if on_iterate is not None:
            on_iterate(t, model)

    last = state.iterate_log[-1]
    logging.info(
        "Training finished: T=%d dev_f1=%.4f dev_avg_violation=%s lambda_sum=%.4f",
        T,
        last.dev_f1,
        last.dev_avg_violation,
        last.lambda_sum,
    )
    return state


def constrained_train(
    train: Dataset,
    dev: Dataset,
    spec: ConstraintSpec,
    model_kind: str,
    T: int,
    seed: int,
    trainer: Optional[TrainerConfig] = None,
    on_iterate: Optional[IterateCallback] = None,
) -> ConstrainedTrainState:
    """Run T rounds of the primal/dual game under TPR-deviation constraints."""
    if spec.group_set.masks.shape[1] != train.n:
        raise InvalidInputError("Constraint groups were not built on the training split")
    active = _active_spec(spec)
    return _game(train, dev, active, model_kind, T, seed, trainer or TrainerConfig(), on_iterate)


def train_unconstrained(
    train: Dataset,
    dev: Dataset,
    model_kind: str,
    T: int,
    seed: int,
    trainer: Optional[TrainerConfig] = None,
    on_iterate: Optional[IterateCallback] = None,
) -> ConstrainedTrainState:
    """The same loop with no constraints (the biased model)."""
    return _game(train, dev, None, model_kind, T, seed, trainer or TrainerConfig(), on_iterate)


def constraint_spec_for(
    train: Dataset, group_kind: str, nu: float, gamma_mode: str = "uniform"
) -> ConstraintSpec:
    return ConstraintSpec(
        build_group_set(enumerate_groups(train.schema, group_kind), train), nu, gamma_mode
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _save_params(model_meta: Dict[str, object], params: Params, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, value in params.items():
        write_matrix_csv(directory / f"{name}.csv", np.atleast_2d(value))
    write_json(directory / "model.json", {**model_meta, "params": sorted(params)})


def save_train_state(state: ConstrainedTrainState, out_dir: Path) -> None:
    """Final parameters, iterate log, multipliers and retained iterates."""
    out_dir = Path(out_dir)
    model: TaskModel = state.model
    meta = model.describe()
    _save_params(meta, model.params, out_dir)
    write_jsonl(out_dir / ITERATE_LOG_FILE, [s.to_dict() for s in state.iterate_log])
    write_json(
        out_dir / STATE_FILE,
        {
            "T": state.T,
            "lambdas": state.lambdas.tolist(),
            "constraint_labels": state.constraint_labels,
            "retained": sorted(state.retained),
        },
    )
    for t, params in sorted(state.retained.items()):
        _save_params(meta, params, out_dir / ITERATES_DIR / f"t{t:05d}")


def load_task_model(directory: Path, iterate: Optional[int] = None) -> TaskModel:
    """Load the final model, or a retained iterate when `iterate` is given."""
    directory = Path(directory)
    if iterate is not None:
        directory = directory / ITERATES_DIR / f"t{iterate:05d}"
    if not (directory / "model.json").exists():
        raise InvalidInputError(f"No stored model under {directory}")
    meta = read_json(directory / "model.json")
    params = {name: read_matrix_csv(directory / f"{name}.csv") for name in meta["params"]}
    return TaskModel.from_params(
        str(meta["kind"]), int(meta["input_dim"]), params, int(meta["hidden_dim"])
    )


def model_at(state: ConstrainedTrainState, t: int) -> TaskModel:
    if t not in state.retained:
        raise InvalidInputError(f"Iterate {t} was not retained")
    model: TaskModel = state.model
    params = {k: v.copy() for k, v in state.retained[t].items()}
    return TaskModel.from_params(model.kind, model.input_dim, params, model.hidden_dim)
