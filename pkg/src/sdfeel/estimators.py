"""scikit-learn style classifier that trains through a simulated federated run."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .asynchronous import AsyncConfig, make_profiles, run_async
from .data import Dataset, assign_clusters, partition
from .exceptions import ConfigurationError
from .harness import ALL_SCHEMES
from .latency import LatencyParams
from .models import make_model
from .sync import SyncConfig, run_sync
from .topology import make_graph


class SDFEELClassifier(ClassifierMixin, BaseEstimator):
    """Classifier fitted by simulated semi-decentralized federated training.

    The training set is partitioned across ``n_clients`` clients grouped into
    ``n_servers`` edge clusters, one of the federated schemes is simulated,
    and the resulting global model is used for prediction.

    Parameters
    ----------
    scheme : {"sdfeel", "hierfavg", "fedavg", "feel", "async"}, default="sdfeel"
    n_clients, n_servers : int, default=10, 5
    topology : str, default="ring"
    partition : {"label_skew", "dirichlet", "iid"}, default="iid"
    classes_per_client : int, default=2
        Classes per client under label skew.
    concentration : float, default=0.5
        Dirichlet concentration.
    tau1, tau2, alpha : int, default=1
        Aggregation periods and gossip rounds.
    eta : float, default=0.05
    n_iter : int, default=100
        Synchronous iterations, or asynchronous completions.
    batch_size : int or None, default=10
    model : {"softmax", "mlp"}, default="softmax"
    hidden : int, default=32
    heterogeneity : float, default=1.0
        Speed ratio between the fastest and slowest client (async only).
    theta_max : int, default=5
    random_state : int, default=0

    Attributes
    ----------
    classes_ : ndarray
    coef_ : ndarray
        Flat parameter vector of the trained model.
    trace_ : RunTrace
    """

    def __init__(self, scheme="sdfeel", n_clients=10, n_servers=5, topology="ring", partition="iid",
                 classes_per_client=2, concentration=0.5, tau1=1, tau2=1, alpha=1, eta=0.05, n_iter=100,
                 batch_size=10, model="softmax", hidden=32, heterogeneity=1.0, theta_max=5, random_state=0):
        self.scheme = scheme
        self.n_clients = n_clients
        self.n_servers = n_servers
        self.topology = topology
        self.partition = partition
        self.classes_per_client = classes_per_client
        self.concentration = concentration
        self.tau1 = tau1
        self.tau2 = tau2
        self.alpha = alpha
        self.eta = eta
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.model = model
        self.hidden = hidden
        self.heterogeneity = heterogeneity
        self.theta_max = theta_max
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        if self.scheme not in ALL_SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError(f"need samples of at least two classes, got {self.classes_.size} class")
        if X.shape[0] < self.n_clients:
            raise ValueError(f"n_samples={X.shape[0]} is fewer than the {self.n_clients} clients")
        ds = Dataset(X, encoded, int(self.classes_.size))
        seed = int(self.random_state)
        part = partition(ds, self.partition, self.n_clients, seed, c=self.classes_per_client, beta=self.concentration)
        part = part.with_clusters(assign_clusters(self.n_clients, self.n_servers, 0, seed))
        graph = make_graph(self.topology, self.n_servers, weights=part.m_tilde)
        self.model_ = make_model(self.model, X.shape[1], ds.num_classes, self.hidden)
        if self.scheme == "async":
            latency = LatencyParams()
            profiles = make_profiles(self.n_clients, self.heterogeneity, seed, latency.c_cpu)
            cfg = AsyncConfig(deadlines=(self.theta_max * latency.t_comp / self.heterogeneity,) * self.n_servers,
                              theta_max=self.theta_max, eta=self.eta, T=self.n_iter, seed=seed,
                              batch_size=self.batch_size, latency=latency)
            self.trace_ = run_async(cfg, graph, part, ds, profiles, self.model_)
        else:
            k = self.n_iter - self.n_iter % (self.tau1 * self.tau2) or self.tau1 * self.tau2
            cfg = SyncConfig(tau1=self.tau1, tau2=self.tau2, alpha=self.alpha, eta=self.eta, K=k,
                             scheme=self.scheme, seed=seed, batch_size=self.batch_size)
            self.trace_ = run_sync(cfg, graph, part, ds, self.model_)
        self.coef_ = self.trace_.final_model
        return self

    def decision_function(self, X):
        z = self._scores(X)
        return z[:, 1] - z[:, 0] if z.shape[1] == 2 else z

    def _scores(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        if hasattr(self.model_, "logits"):
            return self.model_.logits(self.coef_, X)
        return self.model_._forward(self.coef_, X)[1]

    def predict_proba(self, X):
        z = self._scores(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.classes_[np.argmax(self._scores(X), axis=1)]
