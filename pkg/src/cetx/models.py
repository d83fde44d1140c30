"""One-step forecasting models over lagged features.

Five kinds share one interface: a linear autoregression with exogenous
inputs (``arx``) fit by least squares, and four neural models (``mlp``,
``rnn``, ``lstm``, ``gru``) trained by full-batch gradient descent through
the package's own differentiation engine.  Every kind consumes the flat
feature layout documented in :mod:`cetx.series`.

Recurrent kinds unroll the lag window as a sequence of ``L = max(m, n)``
steps, oldest lag first.  The input vector at the step for lag ``tau`` is
``[x[t-tau], z[0, t-tau], ..., z[K-1, t-tau]]`` with a zero filling any slot
whose lag order does not reach ``tau`` (``tau > m`` for the target slot,
``tau > n`` for exogenous slots).

``predict_one`` and the internal forwards accept either plain numpy inputs
(returning floats) or :class:`~cetx.autodiff.Var` inputs (returning a
differentiable node), so counterfactual search can push gradients through
any trained model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from types import SimpleNamespace

import numpy as np

from .autodiff import Var, backward, matmul, sigmoid, stack, tanh, vsum
from .errors import (
    ArityError,
    CetxError,
    DomainError,
    NumericError,
    SingularDesignError,
    TrainingDivergenceError,
)
from .series import LaggedDataset, ScalerParams, SeriesSet, make_lagged_dataset, split_train_test

KINDS = ("arx", "mlp", "rnn", "lstm", "gru")
RECURRENT_KINDS = ("rnn", "lstm", "gru")


@dataclass
class TrainingConfig:
    """Hyperparameters for the gradient-descent fits."""

    epochs: int = 500
    learning_rate: float = 0.01
    batch_size: int | None = None  # None = full batch
    seed: int = 0


@dataclass
class TrainingRecord:
    epochs: int
    learning_rate: float
    seed: int
    loss_checkpoints: list[float] = field(default_factory=list)
    final_train_mse: float = float("nan")
    test_mse: float | None = None


@dataclass
class ForecastModel:
    """A trained one-step predictor with lag orders ``(m, n)``.

    Immutable by convention after fitting; ``params`` arrays are set
    read-only so the model can be shared across threads.
    """

    kind: str
    m: int
    n: int
    n_exog: int
    params: dict[str, np.ndarray]
    hidden: int
    training: TrainingRecord
    scaler: ScalerParams | None = None

    def __post_init__(self):
        for v in self.params.values():
            v.setflags(write=False)

    @property
    def n_features(self) -> int:
        return self.m + self.n * self.n_exog

    def predict_one(self, features):
        """Predict the next value from one feature vector.

        Accepts a length ``m + n*K`` numpy vector (returns ``float``) or a
        Var (returns a Var for gradient propagation).  A 2-D numpy array is
        treated as a batch of rows and returns a vector.
        """
        width = features.shape[-1] if hasattr(features, "shape") else len(features)
        if width != self.n_features:
            raise ArityError(
                f"expected {self.n_features} features for (m={self.m}, "
                f"n={self.n}, K={self.n_exog}), got {width}"
            )
        out = _FORWARD[self.kind](self, features)
        if isinstance(out, Var):
            return out
        return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Forward passes.  Parameter matrices are stored (fan_in, fan_out) so that a
# single feature vector and a batch of rows run through identical code.
# ---------------------------------------------------------------------------


def _forward_arx(model: ForecastModel, feats):
    p = model.params
    return matmul(feats, p["coef"]) + p["intercept"]


def _forward_mlp(model: ForecastModel, feats):
    p = model.params
    h = tanh(matmul(feats, p["w_in"]) + p["b_in"])
    return matmul(h, p["w_out"]) + p["b_out"]


def _sequence_steps(feats, m: int, n: int, n_exog: int):
    """Split a flat feature vector (or batch) into recurrent step inputs."""
    L = max(m, n)
    steps = []
    if isinstance(feats, Var):
        for s in range(L):
            tau = L - s
            parts = [feats[tau - 1] if tau <= m else 0.0]
            for k in range(n_exog):
                parts.append(feats[m + k * n + (tau - 1)] if tau <= n else 0.0)
            steps.append(stack(parts))
        return steps
    feats = np.asarray(feats, dtype=np.float64)
    batch = feats.ndim == 2
    for s in range(L):
        tau = L - s
        shape = (feats.shape[0], 1 + n_exog) if batch else (1 + n_exog,)
        inp = np.zeros(shape)
        if tau <= m:
            inp[..., 0] = feats[..., tau - 1]
        for k in range(n_exog):
            if tau <= n:
                inp[..., 1 + k] = feats[..., m + k * n + (tau - 1)]
        steps.append(inp)
    return steps


def _forward_rnn(model: ForecastModel, feats):
    p = model.params
    h = np.zeros(model.hidden)
    for inp in _sequence_steps(feats, model.m, model.n, model.n_exog):
        h = tanh(matmul(inp, p["w_x"]) + matmul(h, p["w_h"]) + p["b_h"])
    return matmul(h, p["w_out"]) + p["b_out"]


def _forward_lstm(model: ForecastModel, feats):
    p = model.params
    h = np.zeros(model.hidden)
    c = np.zeros(model.hidden)
    for inp in _sequence_steps(feats, model.m, model.n, model.n_exog):
        gi = sigmoid(matmul(inp, p["w_xi"]) + matmul(h, p["w_hi"]) + p["b_i"])
        gf = sigmoid(matmul(inp, p["w_xf"]) + matmul(h, p["w_hf"]) + p["b_f"])
        go = sigmoid(matmul(inp, p["w_xo"]) + matmul(h, p["w_ho"]) + p["b_o"])
        cc = tanh(matmul(inp, p["w_xc"]) + matmul(h, p["w_hc"]) + p["b_c"])
        c = gf * c + gi * cc
        h = go * tanh(c)
    return matmul(h, p["w_out"]) + p["b_out"]


def _forward_gru(model: ForecastModel, feats):
    p = model.params
    h = np.zeros(model.hidden)
    for inp in _sequence_steps(feats, model.m, model.n, model.n_exog):
        gz = sigmoid(matmul(inp, p["w_xz"]) + matmul(h, p["w_hz"]) + p["b_z"])
        gr = sigmoid(matmul(inp, p["w_xr"]) + matmul(h, p["w_hr"]) + p["b_r"])
        hc = tanh(matmul(inp, p["w_xh"]) + matmul(gr * h, p["w_hh"]) + p["b_h"])
        h = (1.0 - gz) * h + gz * hc
    return matmul(h, p["w_out"]) + p["b_out"]


_FORWARD = {
    "arx": _forward_arx,
    "mlp": _forward_mlp,
    "rnn": _forward_rnn,
    "lstm": _forward_lstm,
    "gru": _forward_gru,
}


# ---------------------------------------------------------------------------
# Parameter initialization.
# ---------------------------------------------------------------------------


def _uniform(rng, fan_in: int, *shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def _init_params(kind: str, n_features: int, n_exog: int, hidden: int, seed: int):
    rng = np.random.default_rng(seed)
    F, H, I = n_features, hidden, 1 + n_exog
    if kind == "mlp":
        return {
            "w_in": _uniform(rng, F, F, H),
            "b_in": np.zeros(H),
            "w_out": _uniform(rng, H, H),
            "b_out": np.zeros(()),
        }
    if kind == "rnn":
        return {
            "w_x": _uniform(rng, I, I, H),
            "w_h": _uniform(rng, H, H, H),
            "b_h": np.zeros(H),
            "w_out": _uniform(rng, H, H),
            "b_out": np.zeros(()),
        }
    if kind == "lstm":
        params = {}
        for gate in ("i", "f", "o", "c"):
            params[f"w_x{gate}"] = _uniform(rng, I, I, H)
            params[f"w_h{gate}"] = _uniform(rng, H, H, H)
            # Forget gate opens at init so early gradients flow through time.
            params[f"b_{gate}"] = np.ones(H) if gate == "f" else np.zeros(H)
        params["w_out"] = _uniform(rng, H, H)
        params["b_out"] = np.zeros(())
        return params
    if kind == "gru":
        params = {}
        for gate in ("z", "r", "h"):
            params[f"w_x{gate}"] = _uniform(rng, I, I, H)
            params[f"w_h{gate}"] = _uniform(rng, H, H, H)
            params[f"b_{gate}"] = np.zeros(H)
        params["w_out"] = _uniform(rng, H, H)
        params["b_out"] = np.zeros(())
        return params
    raise DomainError(f"unknown neural kind '{kind}'")


# ---------------------------------------------------------------------------
# Fitting.
# ---------------------------------------------------------------------------


def fit_arx(train: LaggedDataset) -> ForecastModel:
    """Ordinary least squares with intercept over the lagged features."""
    X = np.column_stack([np.ones(train.n_rows), train.features])
    y = train.targets
    if train.n_rows < X.shape[1]:
        raise DomainError(
            f"need at least {X.shape[1]} rows to fit {X.shape[1]} coefficients,"
            f" got {train.n_rows}"
        )
    theta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        cond = float(np.linalg.cond(X))
        raise SingularDesignError(
            f"rank-deficient design (rank {rank} < {X.shape[1]}, "
            f"condition estimate {cond:.3g})",
            condition=cond,
        )
    params = {"intercept": np.asarray(theta[0]), "coef": theta[1:].copy()}
    model = ForecastModel(
        kind="arx",
        m=train.m,
        n=train.n,
        n_exog=train.n_exog,
        params=params,
        hidden=0,
        training=TrainingRecord(epochs=0, learning_rate=0.0, seed=0),
    )
    model.training.final_train_mse = evaluate_mse(model, train)
    return model


def _batch_loss(model: ForecastModel, var_params, X, y):
    # SimpleNamespace stand-in: same attributes, but params hold Vars.
    proxy = SimpleNamespace(
        kind=model.kind,
        m=model.m,
        n=model.n,
        n_exog=model.n_exog,
        hidden=model.hidden,
        params=var_params,
    )
    pred = _FORWARD[model.kind](proxy, X)
    diff = pred - y
    return vsum(diff * diff) * (1.0 / len(y))


def fit_neural(
    train: LaggedDataset,
    kind: str,
    hidden: int = 8,
    hyper: TrainingConfig | None = None,
) -> ForecastModel:
    """Gradient-descent fit of an ``mlp``/``rnn``/``lstm``/``gru`` model.

    Deterministic for a fixed seed.  A zero-epoch budget returns the
    initialized model with its training MSE recorded.  If the loss goes
    non-finite the fit aborts with :class:`TrainingDivergenceError`.
    """
    if kind not in RECURRENT_KINDS and kind != "mlp":
        raise DomainError(f"kind must be one of {('mlp',) + RECURRENT_KINDS}, got '{kind}'")
    hyper = hyper or TrainingConfig()
    n_features = train.m + train.n * train.n_exog
    params = _init_params(kind, n_features, train.n_exog, hidden, hyper.seed)
    record = TrainingRecord(
        epochs=hyper.epochs, learning_rate=hyper.learning_rate, seed=hyper.seed
    )
    model = ForecastModel(
        kind=kind,
        m=train.m,
        n=train.n,
        n_exog=train.n_exog,
        params=params,
        hidden=hidden,
        training=record,
    )

    X, y = train.features, train.targets
    rng = np.random.default_rng(hyper.seed)
    checkpoint_every = max(1, hyper.epochs // 10)
    work = {k: v.copy() for k, v in params.items()}
    for epoch in range(hyper.epochs):
        if hyper.batch_size is None:
            batches = [(X, y)]
        else:
            order = rng.permutation(len(y))
            batches = [
                (X[order[i : i + hyper.batch_size]], y[order[i : i + hyper.batch_size]])
                for i in range(0, len(y), hyper.batch_size)
            ]
        try:
            for bX, by in batches:
                var_params = {k: Var(v) for k, v in work.items()}
                loss = _batch_loss(model, var_params, bX, by)
                backward(loss)
                for k, v in var_params.items():
                    if v.grad is not None:
                        work[k] -= hyper.learning_rate * v.grad
        except NumericError as exc:
            raise TrainingDivergenceError(
                f"{kind} training diverged at epoch {epoch} ({exc}); "
                "try a smaller learning rate"
            ) from exc
        if (epoch + 1) % checkpoint_every == 0 or epoch == hyper.epochs - 1:
            frozen = {k: v.copy() for k, v in work.items()}
            record.loss_checkpoints.append(
                evaluate_mse(replace(model, params=frozen), train)
            )

    final = {k: v.copy() for k, v in work.items()}
    fitted = replace(model, params=final)
    record.final_train_mse = evaluate_mse(fitted, train)
    return fitted


def evaluate_mse(model: ForecastModel, data: LaggedDataset) -> float:
    """Mean squared one-step prediction error over a lagged dataset."""
    if data.n_rows == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    pred = model.predict_one(data.features)
    return float(np.mean((pred - data.targets) ** 2))


# ---------------------------------------------------------------------------
# Grid selection.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateResult:
    kind: str
    m: int
    n: int
    test_mse: float
    train_mse: float


@dataclass(frozen=True)
class FailedCandidate:
    kind: str
    m: int
    n: int
    reason: str


@dataclass
class SelectionReport:
    """Grid-search outcome, ranked ascending by held-out MSE."""

    ranking: list[CandidateResult]
    failed: list[FailedCandidate]
    train_ratio: float

    @property
    def winner(self) -> CandidateResult | None:
        return self.ranking[0] if self.ranking else None

    def top(self, count: int = 5) -> list[CandidateResult]:
        return self.ranking[:count]


def select_model(
    s: SeriesSet,
    kinds=("arx",),
    m_grid=(1, 2, 3),
    n_grid=(1, 2, 3),
    hyper: TrainingConfig | None = None,
    hidden: int = 8,
    train_ratio: float = 0.8,
) -> SelectionReport:
    """Evaluate every (kind, m, n) on an identical chronological split.

    Candidates that fail to fit are recorded with their reason instead of
    aborting the sweep.  Repeated calls with the same seed are reproducible.
    """
    if not kinds or not m_grid or not n_grid:
        raise DomainError("kinds, m_grid and n_grid must be nonempty")
    hyper = hyper or TrainingConfig()
    ranking: list[CandidateResult] = []
    failed: list[FailedCandidate] = []
    for kind in kinds:
        if kind not in KINDS:
            raise DomainError(f"unknown model kind '{kind}'")
        for m in m_grid:
            for n in n_grid:
                try:
                    data = make_lagged_dataset(s, m, n)
                    train, test = split_train_test(data, train_ratio)
                    if kind == "arx":
                        model = fit_arx(train)
                    else:
                        model = fit_neural(train, kind, hidden=hidden, hyper=hyper)
                    test_mse = evaluate_mse(model, test)
                    model.training.test_mse = test_mse
                    ranking.append(
                        CandidateResult(
                            kind=kind,
                            m=m,
                            n=n,
                            test_mse=test_mse,
                            train_mse=model.training.final_train_mse,
                        )
                    )
                except CetxError as exc:
                    failed.append(FailedCandidate(kind, m, n, str(exc)))
    ranking.sort(key=lambda c: (c.test_mse, c.kind, c.m, c.n))
    return SelectionReport(ranking=ranking, failed=failed, train_ratio=train_ratio)


def refit_winner(
    s: SeriesSet,
    report: SelectionReport,
    hyper: TrainingConfig | None = None,
    hidden: int = 8,
) -> ForecastModel:
    """Refit the report's winning configuration on its training split."""
    win = report.winner
    if win is None:
        raise DomainError("selection produced no successful candidate")
    data = make_lagged_dataset(s, win.m, win.n)
    train, test = split_train_test(data, report.train_ratio)
    if win.kind == "arx":
        model = fit_arx(train)
    else:
        model = fit_neural(train, win.kind, hidden=hidden, hyper=hyper)
    model.training.test_mse = evaluate_mse(model, test)
    return model


# ---------------------------------------------------------------------------
# Persistence: a self-describing JSON document.
# ---------------------------------------------------------------------------

MODEL_SCHEMA_VERSION = 1


def model_to_dict(model: ForecastModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "kind": model.kind,
        "m": model.m,
        "n": model.n,
        "n_exog": model.n_exog,
        "hidden": model.hidden,
        "params": {k: v.tolist() for k, v in model.params.items()},
        "training": {
            "epochs": model.training.epochs,
            "learning_rate": model.training.learning_rate,
            "seed": model.training.seed,
            "loss_checkpoints": model.training.loss_checkpoints,
            "final_train_mse": model.training.final_train_mse,
            "test_mse": model.training.test_mse,
        },
        "scaler": None
        if model.scaler is None
        else {
            "x_mean": model.scaler.x_mean,
            "x_std": model.scaler.x_std,
            "z_mean": model.scaler.z_mean.tolist(),
            "z_std": model.scaler.z_std.tolist(),
        },
    }


def model_from_dict(doc: dict) -> ForecastModel:
    tr = doc["training"]
    record = TrainingRecord(
        epochs=tr["epochs"],
        learning_rate=tr["learning_rate"],
        seed=tr["seed"],
        loss_checkpoints=list(tr["loss_checkpoints"]),
        final_train_mse=tr["final_train_mse"],
        test_mse=tr["test_mse"],
    )
    scaler = None
    if doc.get("scaler"):
        sc = doc["scaler"]
        scaler = ScalerParams(
            x_mean=sc["x_mean"],
            x_std=sc["x_std"],
            z_mean=np.asarray(sc["z_mean"]),
            z_std=np.asarray(sc["z_std"]),
        )
    return ForecastModel(
        kind=doc["kind"],
        m=doc["m"],
        n=doc["n"],
        n_exog=doc["n_exog"],
        params={k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()},
        hidden=doc["hidden"],
        training=record,
        scaler=scaler,
    )


def save_model(model: ForecastModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> ForecastModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
