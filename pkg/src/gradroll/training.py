"""Deterministic single-example training with per-step update deltas.

The trainer's contract with the influence ledger: after each optimizer step
on example d it reports the actually-applied change of d's own subject,
relation, and object rows (negative-sample rows are updated too but never
reported). Deltas are captured before the norm-constraint projection unless
`track_post_projection` is set.

Batch size is fixed at 1 whenever an update sink is attached; that is the
regime in which the reported deltas are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import model
from .errors import ConfigError, TrainingDivergedError
from .rng import RngPolicy
from .triples import Triple, TripleStore

SGD = "sgd"
ADAM = "adam"
OPTIMIZERS = (SGD, ADAM)

SCHEDULE_CONSTANT = "constant"
SCHEDULE_INVERSE_T = "inverse-t"
SCHEDULE_LINEAR = "linear"
SCHEDULES = (SCHEDULE_CONSTANT, SCHEDULE_INVERSE_T, SCHEDULE_LINEAR)

CONSTRAINT_NONE = "none"
CONSTRAINT_UNIT = "unit"
CONSTRAINT_MAX = "max"
CONSTRAINTS = (CONSTRAINT_NONE, CONSTRAINT_UNIT, CONSTRAINT_MAX)

INIT_UNIFORM = "uniform"
INIT_NORMAL = "normal"
INITS = (INIT_UNIFORM, INIT_NORMAL)


@dataclass
class TrainConfig:
    seed: int = 42
    epochs: int = 10
    h: int = 10
    scoring: str = model.DISTMULT
    loss: str = model.SOFTMAX_CE
    optimizer: str = ADAM
    lr0: float = 1e-3
    lr_schedule: str = SCHEDULE_CONSTANT
    num_negatives: int = 13
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    norm_constraint: str = CONSTRAINT_NONE
    max_norm: Optional[float] = None  # C, required for the "max" constraint
    init: str = INIT_UNIFORM
    init_scale: float = 0.05
    track_post_projection: bool = False
    dtype: str = "float32"

    def validate(self) -> None:
        problems = []
        if self.seed < 0:
            problems.append("seed must be non-negative")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.h < 1:
            problems.append("h must be >= 1")
        if self.scoring not in model.SCORING_KINDS:
            problems.append(f"unknown scoring {self.scoring!r}")
        if self.scoring == model.COMPLEX and self.h % 2 != 0:
            problems.append("complex scoring requires even h")
        if self.loss not in model.LOSS_KINDS:
            problems.append(f"unknown loss {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            problems.append(f"unknown optimizer {self.optimizer!r}")
        if self.lr0 <= 0:
            problems.append("lr0 must be positive")
        if self.lr_schedule not in SCHEDULES:
            problems.append(f"unknown lr schedule {self.lr_schedule!r}")
        if self.num_negatives < 0:
            problems.append("num_negatives must be >= 0")
        if self.norm_constraint not in CONSTRAINTS:
            problems.append(f"unknown norm constraint {self.norm_constraint!r}")
        if self.norm_constraint == CONSTRAINT_MAX and not self.max_norm:
            problems.append("max norm constraint requires max_norm")
        if self.max_norm is not None and self.max_norm <= 0:
            problems.append("max_norm must be positive")
        if self.init not in INITS:
            problems.append(f"unknown init {self.init!r}")
        if self.init_scale <= 0:
            problems.append("init_scale must be positive")
        if problems:
            raise ConfigError("; ".join(problems))

    def with_constraint(self, constraint: str, max_norm: Optional[float] = None
                        ) -> "TrainConfig":
        return replace(self, norm_constraint=constraint, max_norm=max_norm)

    @property
    def norm_bound(self) -> Optional[float]:
        """The embedding-row norm bound C implied by the constraint."""
        if self.norm_constraint == CONSTRAINT_UNIT:
            return 1.0
        if self.norm_constraint == CONSTRAINT_MAX:
            return self.max_norm
        return None


@dataclass
class UpdateDelta:
    """Applied parameter change of one step, restricted to the gold rows.

    For a self-loop example (s == o) the merged entity row's change is
    carried on the subject slot and the object slot is zero, so slot sums
    always equal true per-row changes.
    """

    triple_id: int
    step: int
    triple: Triple
    delta_s: np.ndarray
    delta_r: np.ndarray
    delta_o: np.ndarray


@dataclass
class StepInfo:
    step: int
    epoch: int
    triple_id: int
    loss: float
    lr: float
    grad_norm: float
    params: model.Parameters


def init_params(config: TrainConfig, n_entities: int, n_relations: int
                ) -> model.Parameters:
    """Deterministic initialization from (seed, sizes, h, init scheme)."""
    rng = RngPolicy(config.seed).init_generator()
    dtype = np.dtype(config.dtype)
    shape_e = (n_entities, config.h)
    shape_r = (n_relations, config.h)
    if config.init == INIT_UNIFORM:
        b = config.init_scale
        e = rng.uniform(-b, b, size=shape_e)
        r = rng.uniform(-b, b, size=shape_r)
    else:
        e = rng.normal(0.0, config.init_scale, size=shape_e)
        r = rng.normal(0.0, config.init_scale, size=shape_r)
    params = model.Parameters(e.astype(dtype), r.astype(dtype), config.scoring)
    if config.norm_constraint != CONSTRAINT_NONE:
        apply_norm_constraint(params, config.norm_constraint, config.max_norm)
    return params


def apply_norm_constraint(params: model.Parameters, kind: str,
                          max_norm: Optional[float] = None) -> model.Parameters:
    """Project every row in place: unit -> norm exactly 1 (zero rows kept),
    max -> rows with norm > C rescaled to C."""
    for matrix in (params.entities, params.relations):
        _project_rows(matrix, np.arange(matrix.shape[0]), kind, max_norm)
    return params


def _project_rows(matrix: np.ndarray, rows, kind: str, max_norm: Optional[float]) -> None:
    if kind == CONSTRAINT_NONE:
        return
    rows = np.asarray(rows, dtype=np.int64)
    norms = np.linalg.norm(matrix[rows].astype(np.float64), axis=1)
    if kind == CONSTRAINT_UNIT:
        scale_rows = rows[norms > 0]
        scales = norms[norms > 0]
    elif kind == CONSTRAINT_MAX:
        if not max_norm:
            raise ConfigError("max norm constraint requires max_norm")
        over = norms > max_norm
        scale_rows = rows[over]
        scales = norms[over] / max_norm
    else:
        raise ConfigError(f"unknown norm constraint {kind!r}")
    for row, s in zip(scale_rows, scales):
        matrix[row] = (matrix[row] / matrix.dtype.type(s)).astype(matrix.dtype)


def learning_rate(config: TrainConfig, step: int, total_steps: int) -> float:
    """Step size for 1-based global step index."""
    if config.lr_schedule == SCHEDULE_CONSTANT:
        return config.lr0
    if config.lr_schedule == SCHEDULE_INVERSE_T:
        return config.lr0 / step
    if config.lr_schedule == SCHEDULE_LINEAR:
        return config.lr0 * (1.0 - (step - 1) / max(total_steps, 1))
    raise ConfigError(f"unknown lr schedule {config.lr_schedule!r}")


class SgdOptimizer:
    def __init__(self, params: model.Parameters):
        self.params = params

    def apply(self, grad: model.SparseGrad, lr: float) -> dict:
        """Decrement every touched row by lr * g; returns applied changes."""
        applied = {}
        dtype = self.params.entities.dtype
        lr = dtype.type(lr)
        for kind, i, g in grad.rows():
            matrix = self.params.entities if kind == "e" else self.params.relations
            before = matrix[i].copy()
            matrix[i] = before - lr * g.astype(dtype)
            applied[(kind, i)] = matrix[i] - before
        return applied


class AdamOptimizer:
    """Adam with lazily created per-row state and per-row bias-correction
    counters (rows update at different frequencies under sparse gradients)."""

    def __init__(self, params: model.Parameters, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[tuple[str, int], np.ndarray] = {}
        self._v: dict[tuple[str, int], np.ndarray] = {}
        self._t: dict[tuple[str, int], int] = {}

    def apply(self, grad: model.SparseGrad, lr: float) -> dict:
        applied = {}
        dtype = self.params.entities.dtype
        for kind, i, g in grad.rows():
            matrix = self.params.entities if kind == "e" else self.params.relations
            key = (kind, i)
            g = g.astype(np.float64)
            m = self._m.get(key)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
                t = 0
            else:
                v = self._v[key]
                t = self._t[key]
            t += 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[key], self._v[key], self._t[key] = m, v, t
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            step = lr * m_hat / (np.sqrt(v_hat) + self.eps)
            before = matrix[i].copy()
            matrix[i] = before - step.astype(dtype)
            applied[(kind, i)] = matrix[i] - before
        return applied


def make_optimizer(config: TrainConfig, params: model.Parameters):
    if config.optimizer == SGD:
        return SgdOptimizer(params)
    if config.optimizer == ADAM:
        return AdamOptimizer(params, config.adam_beta1, config.adam_beta2,
                            config.adam_eps)
    raise ConfigError(f"unknown optimizer {config.optimizer!r}")


def train(config: TrainConfig, store: TripleStore, n_entities: int,
          n_relations: int,
          delta_sink: Optional[Callable[[UpdateDelta], None]] = None,
          step_observer: Optional[Callable[[StepInfo], None]] = None,
          negative_source: Optional[Callable[..., np.ndarray]] = None,
          ) -> model.Parameters:
    """Run epochs x |store| single-example steps and return the parameters.

    Fully deterministic in (config, store contents and ids): visit order and
    negatives come from the keyed RNG policy, so two coupled runs on D and
    D - {d'} see identical streams for every surviving triple.
    """
    config.validate()
    policy = RngPolicy(config.seed)
    draw_negatives = negative_source if negative_source is not None else policy.negatives
    params = init_params(config, n_entities, n_relations)
    optimizer = make_optimizer(config, params)
    total_steps = config.epochs * len(store)
    zero = np.zeros(config.h, dtype=params.entities.dtype)

    step = 0
    for epoch in range(config.epochs):
        for tid in policy.visit_order(epoch, store.id_capacity):
            tid = int(tid)
            if tid not in store:
                continue
            step += 1
            d = store.triple(tid)
            lr = learning_rate(config, step, total_steps)
            negs = draw_negatives(tid, epoch, d.o, n_entities, config.num_negatives)
            loss, grad = model.loss_and_grad(params, config.loss, d, negs)
            if not np.isfinite(loss):
                raise TrainingDivergedError(step, tid, loss)
            applied = optimizer.apply(grad, lr)

            if delta_sink is not None and not config.track_post_projection:
                delta_sink(_gold_delta(tid, step, d, applied, zero))

            if config.norm_constraint != CONSTRAINT_NONE:
                ent_rows = sorted({i for k, i in applied if k == "e"})
                rel_rows = sorted({i for k, i in applied if k == "r"})
                pre = None
                if delta_sink is not None and config.track_post_projection:
                    pre = {key: (params.entities if key[0] == "e" else
                                 params.relations)[key[1]].copy()
                           for key in applied}
                _project_rows(params.entities, ent_rows, config.norm_constraint,
                              config.max_norm)
                _project_rows(params.relations, rel_rows, config.norm_constraint,
                              config.max_norm)
                if pre is not None:
                    for key in applied:
                        matrix = params.entities if key[0] == "e" else params.relations
                        applied[key] = applied[key] + (matrix[key[1]] - pre[key])

            if delta_sink is not None and config.track_post_projection:
                delta_sink(_gold_delta(tid, step, d, applied, zero))

            if step_observer is not None:
                step_observer(StepInfo(step, epoch, tid, loss, lr,
                                       grad.norm(), params))
    return params


def _gold_delta(tid: int, step: int, d: Triple, applied: dict,
                zero: np.ndarray) -> UpdateDelta:
    delta_s = applied.get(("e", d.s), zero)
    delta_r = applied.get(("r", d.r), zero)
    delta_o = zero if d.s == d.o else applied.get(("e", d.o), zero)
    return UpdateDelta(tid, step, d, delta_s, delta_r, delta_o)
