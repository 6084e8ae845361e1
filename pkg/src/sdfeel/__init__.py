"""Simulator and library for semi-decentralized federated edge learning."""
from .asynchronous import AsyncConfig, ClientProfile, delta_max, run_async
from .data import Dataset, Partition, assign_clusters, load_idx, synth_dataset
from .estimators import SDFEELClassifier
from .exceptions import (
    ConfigurationError,
    ContractViolation,
    ConvergenceError,
    DivergenceError,
    ParseError,
    SDFEELError,
)
from .harness import load_config, run_experiment, validate_config
from .latency import LatencyParams, scheme_total, sdfeel_total
from .sync import SyncConfig, matrix_oracle, run_fedavg, run_feel, run_hierfavg, run_sdfeel
from .theory import BoundInputs, eval_async_bound, eval_sync_bound, estimate_inputs
from .topology import build_mixing, build_staleness_mixing, consensus_round, make_graph, rho_sequence

__version__ = "0.1.0"
