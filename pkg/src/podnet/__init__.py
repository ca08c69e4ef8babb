"""Option discovery from unstructured demonstrations with a categorical VAE,
plus option-space planning through the learned option dynamics."""

from .data import (Dataset, EnvSpec, NormStats, Trajectory, downsample, env_step,
                   generate_dataset, load_dataset, make_env, normalize, save_dataset, split)
from .evaluation import (boundary_f1, dynamics_option_sensitivity, matched_accuracy,
                         normalized_mutual_information, segment)
from .model import (LossBreakdown, LossHyper, PodnetModel, compute_loss, dynamics_predict,
                    infer_options, policy_action, rollout_dynamics)
from .planner import Plan, PlannerConfig, execute, plan
from .training import (Checkpoint, TrainConfig, discover_num_options, evaluate_bc_loss,
                       load_checkpoint, save_checkpoint, train)

__version__ = "0.1.0"
