"""Scikit-learn style front end for the weight-tied autoencoder.

TiedAutoencoder wraps the SGD engine behind the familiar
fit / transform / get_params surface so the lab's trainer composes with
pipelines and grid tools.  fit accepts either a SpectralModel (fresh
i.i.d. batches, the regime the theory covers) or a plain data matrix
(epoch shuffling).
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import sgd
from .activations import Activation, parse_activation
from .spectral import SpectralModel, TwoBlockModel

__all__ = ["TiedAutoencoder"]


class TiedAutoencoder(TransformerMixin, BaseEstimator):
    """Mean-field-scaled weight-tied two-layer autoencoder trained by SGD.

    Parameters mirror the run configuration: n_neurons, activation (name
    or Activation instance), l2 penalty, learning rate, batch size, step
    count, init scale r0 and the seed.  After fit, ``weights_`` holds the
    final (n_neurons, d) matrix and ``history_`` the checkpoint metrics.
    """

    def __init__(
        self,
        n_neurons=1000,
        activation="relu",
        l2=0.0,
        learning_rate=0.01,
        batch_size=100,
        n_steps=10_000,
        r0=0.2,
        seed=0,
        checkpoints=None,
        mc_samples=10_000,
        norm_blocks=None,
    ):
        self.n_neurons = n_neurons
        self.activation = activation
        self.l2 = l2
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.r0 = r0
        self.seed = seed
        self.checkpoints = checkpoints
        self.mc_samples = mc_samples
        self.norm_blocks = norm_blocks

    def _activation(self):
        act = self.activation
        return act if isinstance(act, Activation) else parse_activation(act)

    def _config(self):
        return sgd.TrainConfig(
            l2=self.l2,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            steps=self.n_steps,
            r0=self.r0,
            seed=self.seed,
            checkpoints=self.checkpoints,
        )

    def fit(self, data, y=None, eval_data=None):
        """Train on a data law or a (n, d) matrix; records checkpoint metrics."""
        if isinstance(data, TwoBlockModel):
            data = data.to_spectral()
        if not isinstance(data, SpectralModel):
            data = np.asarray(data, dtype=float)
            if data.ndim != 2 or data.shape[0] < 1:
                raise ValueError("fit needs a SpectralModel or a nonempty (n, d) array")
        if isinstance(eval_data, TwoBlockModel):
            eval_data = eval_data.to_spectral()

        dim = data.dim if isinstance(data, SpectralModel) else data.shape[1]
        act = self._activation()
        cfg = self._config()
        weights = sgd.init_weights(self.n_neurons, dim, self.r0, self.seed)
        history = []
        for record in sgd.train(
            weights,
            cfg,
            data,
            act,
            mc_samples=self.mc_samples,
            norm_blocks=self.norm_blocks,
            eval_data=eval_data,
        ):
            history.append(
                sgd.Checkpoint(
                    step=record.step,
                    time=record.time,
                    rec_err=record.rec_err,
                    block_norms=record.block_norms,
                    weights=None,
                )
            )
            weights = record.weights
        self.weights_ = np.array(weights)
        self.history_ = history
        self.dim_ = dim
        return self

    def _require_fit(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("TiedAutoencoder must be fit before use")

    def transform(self, x):
        """Reconstructions of the rows of x."""
        self._require_fit()
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        rows = np.atleast_2d(x)
        if rows.shape[1] != self.dim_:
            raise ValueError(f"inputs have {rows.shape[1]} features, model was fit with {self.dim_}")
        out = sgd.reconstruct_batch(self.weights_, rows, self._activation())
        return out[0] if single else out

    def reconstruction_error(self, data, n_mc=10_000, seed=None):
        """RiskEstimate on a data law (Monte Carlo) or a fixed matrix."""
        self._require_fit()
        if isinstance(data, TwoBlockModel):
            data = data.to_spectral()
        if isinstance(data, SpectralModel):
            eval_seed = self.seed + 1 if seed is None else seed
            return sgd.estimate_rec_err(self.weights_, data, self._activation(), n_mc, eval_seed)
        return sgd.dataset_rec_err(self.weights_, np.asarray(data, dtype=float), self._activation())

    def score(self, x, y=None):
        """Negative mean reconstruction error (higher is better)."""
        return -self.reconstruction_error(x).mean
