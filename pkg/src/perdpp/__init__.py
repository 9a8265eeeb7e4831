"""Grid path planning with elastic-step DQN and priority/diversity replay."""

from .cluster import HDBSCAN, hdbscan_labels
from .elastic import ElasticConfig, ElasticStepper, elastic_step
from .env import GridMap, MazeEnv, load_map, path_metrics, read_map
from .harness import ExperimentConfig, RunReport, compute_convergence, run_experiment
from .kernel import DPPSelector, brute_force_map, build_kernel, greedy_map_select
from .qnet import QNetwork, train_step
from .replay import PrioritizedReplayBuffer, Transition

__version__ = "0.1.0"

__all__ = [
    "DPPSelector",
    "ElasticConfig",
    "ElasticStepper",
    "ExperimentConfig",
    "GridMap",
    "HDBSCAN",
    "MazeEnv",
    "PrioritizedReplayBuffer",
    "QNetwork",
    "RunReport",
    "Transition",
    "brute_force_map",
    "build_kernel",
    "compute_convergence",
    "elastic_step",
    "greedy_map_select",
    "hdbscan_labels",
    "load_map",
    "path_metrics",
    "read_map",
    "run_experiment",
    "train_step",
]
