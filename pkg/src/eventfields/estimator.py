"""Estimator facade over the pipeline, following the fit/predict convention.

``EventFieldModel`` wraps dataset handling, training, and forecasting behind
the familiar estimator API: hyperparameters in ``__init__`` (unmodified, so
``get_params``/``set_params``/cloning work), learned state in
trailing-underscore attributes set by ``fit``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .datagen import Dataset, Trajectory, assign_splits
from .errors import ConfigurationError
from .model import Checkpoint, ModelConfig
from .pointprocess import SpaceTimeDomain
from .training import TrainConfig, predict_marks_batch, train_loop, validation_mae
from .validation import check_trajectory


def _as_dataset(X) -> Dataset:
    if isinstance(X, Dataset):
        return X
    trajs = [check_trajectory(t) for t in X]
    if not trajs:
        raise ConfigurationError("fit needs at least one trajectory")
    d_x = trajs[0].d_x
    t_hi = max(float(t.times[-1]) for t in trajs)
    domain = SpaceTimeDomain((0.0, t_hi), tuple((0.0, 1.0) for _ in range(d_x)))
    return Dataset(
        domain=domain,
        d_x=d_x,
        d_y=trajs[0].d_y,
        config={},
        ids=list(range(len(trajs))),
        splits=assign_splits(len(trajs)),
        trajectories=trajs,
    )


class EventFieldModel(BaseEstimator):
    """Latent-ODE forecaster for marked spatiotemporal event streams.

    Parameters mirror the model and training configs; ``fit`` accepts a
    :class:`Dataset` or a plain list of trajectories (split 80/10/10 by
    position in that case).
    """

    def __init__(
        self,
        d_z: int = 16,
        d_model: int = 64,
        n_enc_layers: int = 2,
        n_heads: int = 4,
        h_f: int = 64,
        h_phi: int = 64,
        h_lambda: int = 64,
        n_grid: int = 20,
        interp: str = "linear",
        sigma_y: float = 1e-3,
        intensity_floor: float = 1e-4,
        lr: float = 1e-3,
        warmup_iters: int = 250,
        total_iters: int = 3000,
        batch_size: int = 32,
        val_every: int = 125,
        val_window: int = 10,
        mc_train: int = 32,
        mc_eval: int = 256,
        weight_decay: float = 1e-4,
        no_stpp: bool = False,
        no_obs: bool = False,
        seed: int = 0,
    ):
        self.d_z = d_z
        self.d_model = d_model
        self.n_enc_layers = n_enc_layers
        self.n_heads = n_heads
        self.h_f = h_f
        self.h_phi = h_phi
        self.h_lambda = h_lambda
        self.n_grid = n_grid
        self.interp = interp
        self.sigma_y = sigma_y
        self.intensity_floor = intensity_floor
        self.lr = lr
        self.warmup_iters = warmup_iters
        self.total_iters = total_iters
        self.batch_size = batch_size
        self.val_every = val_every
        self.val_window = val_window
        self.mc_train = mc_train
        self.mc_eval = mc_eval
        self.weight_decay = weight_decay
        self.no_stpp = no_stpp
        self.no_obs = no_obs
        self.seed = seed

    def _model_config(self, d_x: int, d_y: int) -> ModelConfig:
        return ModelConfig(
            d_z=self.d_z,
            d_model=self.d_model,
            n_enc_layers=self.n_enc_layers,
            n_heads=self.n_heads,
            h_f=self.h_f,
            h_phi=self.h_phi,
            h_lambda=self.h_lambda,
            n_grid=self.n_grid,
            interp=self.interp,
            sigma_y=self.sigma_y,
            intensity_floor=self.intensity_floor,
            d_x=d_x,
            d_y=d_y,
            d_u=d_y,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            warmup_iters=self.warmup_iters,
            total_iters=self.total_iters,
            batch_size=self.batch_size,
            val_every=self.val_every,
            val_window=self.val_window,
            mc_train=self.mc_train,
            mc_eval=self.mc_eval,
            seed=self.seed,
            weight_decay=self.weight_decay,
            no_stpp=self.no_stpp,
            no_obs=self.no_obs,
        )

    def fit(self, X, y=None):
        """Train on a dataset (or trajectory list); returns self."""
        data = _as_dataset(X)
        ckpt, curve = train_loop(
            data,
            self._model_config(data.d_x, data.d_y),
            self._train_config(),
            run_config={"estimator_params": self.get_params()},
        )
        self.checkpoint_: Checkpoint = ckpt
        self.curve_ = curve
        self.n_iterations_ = len(curve)
        return self

    def _check_fitted(self) -> Checkpoint:
        if not hasattr(self, "checkpoint_"):
            raise NotFittedError(
                "this EventFieldModel is not fitted yet; call fit() first"
            )
        return self.checkpoint_

    def predict(self, X) -> list[np.ndarray]:
        """Posterior-mean mark forecasts at each trajectory's target events."""
        ckpt = self._check_fitted()
        trajs = X.trajectories if isinstance(X, Dataset) else list(X)
        preds = predict_marks_batch(
            ckpt.params, ckpt.config, [check_trajectory(t) for t in trajs]
        )
        return [p.detach().numpy() for p in preds]

    def score(self, X, y=None) -> float:
        """Negative target-event MAE (higher is better)."""
        ckpt = self._check_fitted()
        trajs = X.trajectories if isinstance(X, Dataset) else list(X)
        return -validation_mae(
            ckpt.params, ckpt.config, [check_trajectory(t) for t in trajs]
        )
