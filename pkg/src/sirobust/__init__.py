"""Scale-invariant adversarial attacks and defenses on a small numpy autodiff engine."""

from .attacks import AttackConfig, AttackResult, SpsaConfig, evaluate_suite, pgd_step, run_attack, si_pgd, spsa_attack
from .datasets import Dataset, gen_gaussian_blobs, gen_two_moons, load_idx
from .defenses import DefenseConfig, Method, OptimizerConfig, TrainLog, inner_maximize, train, training_objective
from .losses import LossKind, LossTag
from .model import Checkpoint, Network, accuracy, cos_theta, mlp, predict, rescale_softmax_layer, small_convnet
from .tensor import Tensor, backward

__version__ = "0.1.0"
