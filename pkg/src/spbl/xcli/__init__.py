"""Config-driven experiment harness and the ``spbl`` command line."""

from spbl.xcli.config import Experiment, load_config, sub_seed
from spbl.xcli.experiments import ExperimentReport, run

__all__ = ["Experiment", "ExperimentReport", "load_config", "run", "sub_seed"]
