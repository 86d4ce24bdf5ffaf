"""Multi-generator rationalization on a small numpy autodiff core."""

from .data import SyntheticSpec, generate_synthetic, load_dataset, load_embeddings
from .game import GameSpec, estimate_pc, min_generators, monte_carlo_spurious, p_spurious, payoff_gradient, predictor_payoff
from .entropy import JointDistribution, entropy, mutual_information, verify_theorem2
from .models import MgrModel, load_model, save_model
from .training import TrainConfig, infer, mgr_loss, train_loop

__version__ = "0.1.0"
