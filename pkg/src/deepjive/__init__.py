"""DeepJIVE: joint and individual variation via paired autoencoders."""

from .analyze import (
    fit_linear_classifier,
    joint_identity_error,
    joint_individual_dependence,
    latent_perturbation_map,
    recovery_score,
)
from .datagen import (
    builtin_patterns,
    gen_1d,
    gen_offset_1d,
    gen_overlaid,
    gen_paired,
    load_mnist,
    make_digit_corpus,
)
from .jive import jive_fit
from .linalg import pca, principal_angles, svd_singular_values
from .networks import (
    ConvSpec,
    DeepJiveNetwork,
    LatentBundle,
    NetworkSpec,
    build_network,
    load_checkpoint,
    save_checkpoint,
    spec_1d,
    spec_overlaid,
    spec_paired,
)
from .rank import choose_total_rank, fit_plain_autoencoder, select_joint_rank
from .tensor import Tensor, no_grad
from .training import (
    TrainConfig,
    loss_exchange,
    loss_explicit,
    loss_merged,
    ortho_penalty,
    regression_step,
    total_loss,
    train,
)

__version__ = "0.1.0"
