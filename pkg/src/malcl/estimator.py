"""Scikit-learn style continual classifier: one ``partial_fit`` call per task."""

from __future__ import annotations

import copy
import time
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from malcl.data.datasets import BOOLEAN, REAL, infer_feature_kind
from malcl.data.preprocessing import IncrementalStandardizer
from malcl.data.scenarios import CLASS_IL, DOMAIN_IL, SCENARIOS, TASK_IL
from malcl.errors import ConfigurationError
from malcl.model.mlp import MLPConfig, OptimizerSpec, masked_softmax, train_step
from malcl.strategies import Strategy, TaskContext, strategy_dispatch


def task_seed(random_state: int, task_id: int, stream: int) -> int:
    """Independent 63-bit seed for one (run, task, purpose) triple."""
    return int(np.random.SeedSequence([random_state, task_id, stream]).generate_state(2, np.uint64)[0] >> 1)


class ContinualClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier trained task by task under a continual-learning strategy.

    Each ``partial_fit`` call is one task. The output layer holds one unit per
    class in ``classes`` (given on the first call); which units compete is
    decided by the scenario:

    * ``task_il``: only the current task's classes, with task identity given
      again at prediction time through ``active_classes``;
    * ``class_il``: every class seen so far;
    * ``domain_il``: every class, always.

    Parameters mirror :class:`~malcl.model.mlp.MLPConfig` and
    :class:`~malcl.model.mlp.OptimizerSpec`. ``early_stopping="auto"`` defers
    to the strategy (on for partial joint replay only). ``standardize`` and
    ``feature_kind`` default to ``"auto"``: boolean inputs are left as they
    are, real inputs are standardized with running moments updated from each
    task's training data before it is learned.
    """

    def __init__(self, strategy="none", strategy_params=None, scenario=CLASS_IL,
                 hidden_widths=(1024, 512, 256, 128), dropout_rate=0.5, use_batch_norm=True,
                 activation="relu", optimizer="sgd", learning_rate=0.01, momentum=0.9,
                 weight_decay=1e-6, batch_size=32, epochs=20, early_stopping="auto", patience=5,
                 validation_fraction=0.1, standardize="auto", feature_kind="auto", random_state=0):
        self.strategy = strategy
        self.strategy_params = strategy_params
        self.scenario = scenario
        self.hidden_widths = hidden_widths
        self.dropout_rate = dropout_rate
        self.use_batch_norm = use_batch_norm
        self.activation = activation
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.early_stopping = early_stopping
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.standardize = standardize
        self.feature_kind = feature_kind
        self.random_state = random_state

    # -- setup ---------------------------------------------------------------

    def _validate_params(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1:
            raise ConfigurationError("batch_size and patience must be >= 1, epochs >= 0")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must lie in (0, 1)")
        if self.early_stopping not in ("auto", True, False):
            raise ConfigurationError("early_stopping must be 'auto', True or False")

    def _setup(self, X, classes):
        self._validate_params()
        if classes is None:
            raise ValueError("classes must be given on the first partial_fit call")
        self.classes_ = np.unique(np.asarray(classes))
        self.n_features_in_ = X.shape[1]
        kind = infer_feature_kind(X) if self.feature_kind == "auto" else self.feature_kind
        if kind not in (BOOLEAN, REAL):
            raise ConfigurationError(f"unknown feature_kind {kind!r}")
        self.feature_kind_ = kind
        standardize = (kind == REAL) if self.standardize == "auto" else bool(self.standardize)
        self.standardizer_ = IncrementalStandardizer() if standardize else None

        if isinstance(self.strategy, Strategy):
            strategy = copy.deepcopy(self.strategy)
        else:
            strategy = self.strategy
        self.strategy_ = strategy_dispatch(strategy, self.scenario, **(self.strategy_params or {}))

        self.mlp_config_ = MLPConfig(self.n_features_in_, len(self.classes_), list(self.hidden_widths),
                                     self.dropout_rate, self.use_batch_norm, self.activation)
        self.optimizer_spec_ = OptimizerSpec(self.optimizer, self.learning_rate, self.momentum, self.weight_decay)
        torch.manual_seed(task_seed(self.random_state, 0, 0))
        self.model_ = self.strategy_.build_model(self.mlp_config_, self.feature_kind_)
        self.n_tasks_ = 0
        self.seen_classes_: list[int] = []
        self.task_masks_: dict[int, tuple[int, ...]] = {}
        self.ledger_: list[dict] = []

    def _encode(self, y) -> np.ndarray:
        y = np.asarray(y)
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        bad = self.classes_[idx] != y
        if bad.any():
            raise ValueError(f"labels {np.unique(y[bad]).tolist()} not in classes")
        return idx.astype(np.int64)

    def _to_model_space(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if self.standardizer_ is not None:
            return self.standardizer_.transform(X)
        return X

    @property
    def _uses_bn(self) -> bool:
        return self.use_batch_norm

    def _early_stopping_on(self) -> bool:
        if self.early_stopping == "auto":
            return bool(getattr(self.strategy_, "default_early_stopping", False))
        return bool(self.early_stopping)

    # -- training ------------------------------------------------------------

    def _context(self, task_id: int, task_classes: Sequence[int]) -> TaskContext:
        previous = tuple(self.seen_classes_)
        new = tuple(c for c in task_classes if c not in previous)
        if self.scenario == TASK_IL:
            active = tuple(task_classes)
        elif self.scenario == CLASS_IL:
            active = previous + new
        else:
            active = tuple(range(len(self.classes_)))
            new = tuple(c for c in active if c not in previous)
        masks = dict(self.task_masks_)
        masks[task_id] = active
        gen = torch.Generator().manual_seed(task_seed(self.random_state, task_id, 2))
        return TaskContext(
            task_id=task_id, scenario=self.scenario, n_units=len(self.classes_), new_classes=new,
            active=active, previous_classes=previous, task_masks=masks, batch_size=self.batch_size,
            rng=np.random.default_rng(task_seed(self.random_state, task_id, 1)), generator=gen,
            input_dim=self.n_features_in_, feature_kind=self.feature_kind_)

    def partial_fit(self, X, y, classes=None, active_classes=None):
        """Learn one task from ``(X, y)``.

        ``active_classes`` (label values) names the task's classes; by default
        the labels present in ``y``. Under ``task_il`` these become the task's
        output mask.
        """
        X, y = check_X_y(X, y, dtype=np.float32)
        if not hasattr(self, "model_"):
            self._setup(X, classes)
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        y_enc = self._encode(y)
        if active_classes is None:
            task_classes = sorted(set(y_enc.tolist()))
        else:
            task_classes = self._encode(np.asarray(active_classes)).tolist()
            if not set(y_enc.tolist()) <= set(task_classes):
                raise ValueError("labels outside active_classes")
        task_id = self.n_tasks_
        ctx = self._context(task_id, task_classes)
        torch.manual_seed(task_seed(self.random_state, task_id, 3))

        if self.standardizer_ is not None:
            self.standardizer_.partial_fit(X)
        replayed_before = self.strategy_.n_replayed
        extra = self.strategy_.before_task(self, ctx, X, y_enc)

        x_cur = torch.from_numpy(self._to_model_space(X))
        y_cur = torch.from_numpy(y_enc)
        t_cur = torch.full((len(y_enc),), task_id, dtype=torch.long)
        xs, ys, ts = [x_cur], [y_cur], [t_cur]
        n_extra = 0
        if extra is not None and len(extra):
            ex = extra.x if extra.space == "model" else self._to_model_space(extra.x)
            xs.append(torch.as_tensor(np.asarray(ex, dtype=np.float32)))
            ys.append(torch.as_tensor(np.asarray(extra.y), dtype=torch.long))
            ts.append(torch.as_tensor(np.asarray(extra.task_ids), dtype=torch.long))
            n_extra = len(extra)
        pool = (torch.cat(xs), torch.cat(ys), torch.cat(ts))

        # the optimizer only sees parameters still trainable after before_task
        optimizer = self.optimizer_spec_.build(self.model_.parameters())
        start = time.perf_counter()
        n_processed, epochs_run = self._train(pool, ctx, optimizer)
        wall = time.perf_counter() - start

        self.strategy_.after_task(self, ctx, x_cur, y_cur, t_cur)
        self.seen_classes_ = list(ctx.previous_classes) + [c for c in ctx.active
                                                           if c not in ctx.previous_classes]
        self.task_masks_[task_id] = ctx.active
        self.n_tasks_ += 1
        self.ledger_.append({
            "task_id": task_id,
            "n_train": int(len(y_enc)),
            "n_extra": int(n_extra),
            "n_replayed": int(self.strategy_.n_replayed - replayed_before),
            "n_processed": int(n_processed),
            "epochs": int(epochs_run),
            "wall_time": wall,
        })
        return self

    def _batches(self, n: int, rng: np.random.Generator):
        order = rng.permutation(n)
        for s in range(0, n, self.batch_size):
            idx = order[s:s + self.batch_size]
            # batch-norm cannot normalise a single sample in training mode
            if len(idx) < 2 and self._uses_bn:
                continue
            yield torch.from_numpy(idx)

    def _train(self, pool, ctx: TaskContext, optimizer) -> tuple[int, int]:
        x, y, t = pool
        rng = np.random.default_rng(task_seed(self.random_state, ctx.task_id, 4))
        val = None
        if self._early_stopping_on() and len(y) >= 10:
            perm = rng.permutation(len(y))
            n_val = max(1, int(round(self.validation_fraction * len(y))))
            vi, ti = torch.from_numpy(np.sort(perm[:n_val])), torch.from_numpy(np.sort(perm[n_val:]))
            val = (x[vi], y[vi], t[vi])
            x, y, t = x[ti], y[ti], t[ti]

        strategy, model = self.strategy_, self.model_
        best, best_state, stale = float("inf"), None, 0
        n_processed = epochs_run = 0

        def loss_fn(m, batch):
            return strategy.batch_loss(self, *batch, ctx)

        for _ in range(self.epochs):
            epochs_run += 1
            for idx in self._batches(len(y), rng):
                batch = (x[idx], y[idx], t[idx])
                train_step(model, batch, loss_fn, optimizer, lambda: strategy.before_update(self, ctx))
                strategy.after_update(self, ctx)
                n_processed += len(idx)
            if val is not None:
                loss = self._validation_loss(val, ctx)
                if loss < best - 1e-12:
                    best, best_state, stale = loss, copy.deepcopy(model.state_dict()), 0
                else:
                    stale += 1
                    if stale >= self.patience:
                        break
        if best_state is not None:
            model.load_state_dict(best_state)
        return n_processed, epochs_run

    @torch.no_grad()
    def _validation_loss(self, val, ctx) -> float:
        self.model_.eval()
        loss = float(self.strategy_.task_loss(self.model_, *val, ctx))
        self.model_.train()
        return loss

    def fit(self, X, y, task_ids=None, classes=None):
        """Fresh model; one task per distinct ``task_ids`` value (a single task by default)."""
        for attr in ("model_", "classes_"):
            if hasattr(self, attr):
                delattr(self, attr)
        X, y = check_X_y(X, y, dtype=np.float32)
        classes = np.unique(y) if classes is None else classes
        if task_ids is None:
            return self.partial_fit(X, y, classes=classes)
        task_ids = np.asarray(task_ids)
        for tid in np.unique(task_ids):
            sel = task_ids == tid
            self.partial_fit(X[sel], y[sel], classes=classes)
        return self

    # -- prediction ----------------------------------------------------------

    def _default_mask(self) -> list[int]:
        if self.scenario == DOMAIN_IL:
            return list(range(len(self.classes_)))
        return list(self.seen_classes_)

    @torch.no_grad()
    def decision_function(self, X, active_classes=None) -> np.ndarray:
        """Raw scores over all units; units outside the mask are ``-inf``."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        mask = self._default_mask() if active_classes is None else self._encode(np.asarray(active_classes)).tolist()
        if not mask:
            raise ValueError("no active classes to predict")
        x = torch.from_numpy(self._to_model_space(X))
        self.model_.eval()
        scores = self.strategy_.predict_scores(self, x, mask)
        if scores is None:
            logits = self.model_(x)
            scores = torch.full_like(logits, float("-inf"))
            scores[:, mask] = logits[:, mask]
        return scores.numpy()

    def predict_proba(self, X, active_classes=None) -> np.ndarray:
        scores = torch.from_numpy(self.decision_function(X, active_classes))
        mask = torch.isfinite(scores[0]).nonzero().flatten().tolist() if len(scores) else []
        if not mask:
            return np.zeros(scores.shape, dtype=np.float32)
        return masked_softmax(scores.nan_to_num(neginf=0.0), mask).numpy()

    def predict(self, X, active_classes=None) -> np.ndarray:
        scores = self.decision_function(X, active_classes)
        return self.classes_[scores.argmax(axis=1)]

    def score(self, X, y, sample_weight=None, active_classes=None) -> float:
        pred = self.predict(X, active_classes)
        return float(np.average(pred == np.asarray(y), weights=sample_weight))
