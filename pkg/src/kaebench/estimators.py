"""scikit-learn style wrappers around the kernel baseline and the trainer."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .baselines import BandwidthRule, BaselineKind, kae_group_values
from .evaluation import exact_objective
from .kernels import KernelSpec
from .trainer import TrainConfig, train

_BASELINES = {"kae": "kae_nw", "kae_alg1": "kae_alg1", "grpo": "group_mean_loo",
              "rpp": "batch_mean_loo", "reinforce": "zero", "oracle": "oracle"}


class KernelValueEstimator(RegressorMixin, BaseEstimator):
    """Kernel-weighted value estimate of a prompt from its past rewards.

    Parameters
    ----------
    kernel : str, default="triangular"
    rho : float, default=0.5
        Decay base of the exponential kernel.
    bandwidth : {"fixed_window", "fixed", "stone"}, default="fixed_window"
    window : float, default=4.0
    h : float, default=0.5

    Attributes
    ----------
    history_ : dict
        ``{prompt: (iterations, rewards)}`` collected by :meth:`fit`.

    Examples
    --------
    >>> import numpy as np
    >>> X = np.array([[0, 0], [0, 1], [0, 2]])
    >>> est = KernelValueEstimator(window=4).fit(X, [0.0, 1.0, 1.0])
    >>> float(est.predict([[0, 3]])[0])
    0.8333333333333334
    """

    def __init__(self, kernel="triangular", rho=0.5, bandwidth="fixed_window", window=4.0,
                 h=0.5):
        self.kernel = kernel
        self.rho = rho
        self.bandwidth = bandwidth
        self.window = window
        self.h = h

    def _spec(self):
        return (KernelSpec(self.kernel, rho=self.rho),
                BandwidthRule(self.bandwidth, h=self.h, window=self.window))

    def fit(self, X, y):
        """Store rewards ``y`` observed at rows ``X = [prompt, iteration]``."""
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns: prompt, iteration")
        self._spec()
        self.history_ = {}
        for p in np.unique(X[:, 0]).astype(int):
            rows = X[:, 0] == p
            self.history_[int(p)] = (X[rows, 1].copy(), y[rows].copy())
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        """Value of each ``[prompt, current_iteration]`` row from strictly earlier rewards.

        Raises
        ------
        NoData
            A prompt has no earlier reward with nonzero kernel weight.
        """
        check_is_fitted(self, "history_")
        X = check_array(X, dtype=np.float64)
        kernel, rule = self._spec()
        out = np.empty(X.shape[0])
        for row, (p, i) in enumerate(X):
            iters, rewards = self.history_.get(int(p), (np.zeros(0), np.zeros(0)))
            past = iters < i
            out[row] = kae_group_values(iters[past], rewards[past], [0.0], int(i), kernel,
                                        rule)[0]
        return out


class PolicyGradientTrainer(BaseEstimator):
    """Train a tabular softmax policy on a :class:`~kaebench.env.TaskSet`.

    Parameters
    ----------
    baseline : {"kae", "kae_alg1", "grpo", "rpp", "reinforce", "oracle"}, default="kae"
    steps, B, G, J : int
    schedule : {"block_reuse", "iid"}
    beta : float
        Inverse learning-rate scale, ``eta_i = beta / (i + 1)``.
    kernel : str
    window : float
    seed : int

    Attributes
    ----------
    theta_ : PolicyParams
    run_ : RunRecord
    task_ : TaskSet
    """

    def __init__(self, baseline="kae", steps=300, B=4, G=4, schedule="block_reuse", J=10,
                 beta=200.0, kernel="triangular", window=4.0, seed=0):
        self.baseline = baseline
        self.steps = steps
        self.B = B
        self.G = G
        self.schedule = schedule
        self.J = J
        self.beta = beta
        self.kernel = kernel
        self.window = window
        self.seed = seed

    def _config(self):
        if self.baseline not in _BASELINES:
            raise ValueError(f"unknown baseline {self.baseline!r}")
        kind = _BASELINES[self.baseline]
        rule = BandwidthRule("fixed" if kind == "kae_alg1" else "fixed_window",
                             window=self.window)
        return TrainConfig(steps=self.steps, B=self.B, G=self.G,
                           baseline=BaselineKind(kind, KernelSpec(self.kernel), rule),
                           schedule=self.schedule, J=self.J, beta=self.beta, seed=self.seed,
                           algorithm=self.baseline)

    def fit(self, task, y=None):
        self.run_ = train(self._config(), task)
        self.theta_ = self.run_.theta
        self.task_ = task
        return self

    def predict(self, prompts):
        """Greedy completion (most likely token per position) for each prompt."""
        check_is_fitted(self, "theta_")
        prompts = np.asarray(prompts, dtype=np.int64).ravel()
        if prompts.size and (prompts.min() < 0 or prompts.max() >= self.theta_.m):
            raise ValueError("prompt index out of range")
        return np.argmax(self.theta_.logits[prompts], axis=-1)

    def score(self, task=None, y=None):
        """Exact expected reward ``J(theta)`` on ``task`` (the training task by default)."""
        check_is_fitted(self, "theta_")
        return exact_objective(self.theta_, self.task_ if task is None else task)


__all__ = ["KernelValueEstimator", "PolicyGradientTrainer"]
