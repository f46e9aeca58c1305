"""Federated logistic regression over client-server and peer-to-peer site graphs."""
from .cohort import Cohort, SiteDataset, SyntheticCohortSpec, generate_synthetic, ingest_csv, merge_small_sites
from .evaluation import ExperimentResult, classification_metrics, make_fold_plan, roc_auc, run_experiment
from .model import SolverConfig
from .normalize import FeatureStats, NormalizationMode
from .topology import EmpiricalGraph, TopologyKind, TopologySpec, build_graph
from .trainers import TrainerKind, TrainingRun, train_centralized, train_fedavg, train_fedgd, train_site_specific

__version__ = "0.1.0"
