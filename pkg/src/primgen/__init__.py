"""primgen: cuboid-primitive shape abstraction and recurrent shape generation.

Two halves:

* parsing — decompose a point cloud into oriented cuboids by minimizing a
  truncated Gaussian-kernel fitness energy (analytic gradients, L-BFGS
  block alternation, random restarts, symmetry completion, refinement);
* generation — a stacked recurrent network with a bivariate mixture-density
  head that emits shapes as sequences of per-axis primitive tokens, with
  optional conditioning on a single depth image.
"""

from .energy import EnergyConfig, EnergyGradient, EnergyObjective, alpha_weight, \
    energy_gradient, energy_positive, energy_value_and_gradient, energy_weighted
from .geometry import CubeLattice, PointCloud, Primitive, TriangleMesh, VoxelGrid, \
    cuboid_mesh, mirror_primitive, point_box_distance, points_in_primitive, \
    points_in_primitive_set, primitive_set_mesh, rotation_matrix, \
    rotation_matrix_derivatives, sample_mesh_surface, transform_lattice, \
    voxel_occupancy, wrap_angles
from .metrics import EvalReport, face_label_accuracy, iou, surface_distance
from .network import MixtureParams, ModelWeights, NetConfig, backward_sequence, \
    forward_sequence, init_weights, load_weights, lstm_step, mdn_head, mdn_loss, \
    mdn_step_loss, rotation_heads, save_weights, total_loss, LSTMState
from .optim import AlternationConfig, AlternationResult, LbfgsConfig, alternate_fit, \
    lbfgs_minimize
from .parser import ParserConfig, PrimitiveSet, assign_points, detect_symmetry, \
    fit_primitives, free_space_samples, load_primitive_set, refine_set, \
    save_primitive_set
from .encoder import encode_depth, encoder_backward, init_encoder_params, nn_retrieve
from .pipeline import PipelineConfig, RenderConfig, build_dataset, \
    complete_from_depth, load_dataset, render_depth, train_on_dataset
from .tokens import NormStats, Token, TokenSequence, compute_stats, detokenize, tokenize
from .training import TrainConfig, TrainingDiverged, draw_init_token, generate, \
    retrieve_init_token, sample_next, train

__version__ = "0.1.0"
