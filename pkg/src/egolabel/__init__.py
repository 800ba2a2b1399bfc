"""Multi-view spatio-temporal optimization for egocentric 3D pose pseudo labels."""

from .align import AlignmentResult, PnPReport, pnp_estimate, procrustes
from .energy import (EnergyBreakdown, EnergyWeights, TermResult, WindowObservations,
                     WindowState, e_bone, e_cam_consistency, e_cam_orth, e_pose_ego,
                     e_pose_ext, e_reproj_ego, e_reproj_ext, e_smooth, total_energy)
from .errors import (BehindCamera, DegenerateBone, DegenerateConfiguration,
                     DimensionMismatch, EgolabelError, InitializationFailure,
                     InsufficientData, InsufficientPoints, OutsideFieldOfView,
                     SchemaError, SequenceTooShort, ShapeMismatch)
from .geometry import (FisheyeModel, PinholeModel, RigidTransform,
                       axis_angle_to_matrix, compose, default_fisheye,
                       default_pinhole, invert, load_calibration,
                       matrix_to_axis_angle, orthonormalize, project_fisheye,
                       project_pinhole, save_calibration, unproject_fisheye)
from .losses import adversarial_loss, reconstruction_loss
from .metrics import ba_mpjpe, ba_mpjpe_frames, pa_mpjpe, pa_mpjpe_frames
from .optimize import OptimizationReport, OptimizerConfig, optimize_window
from .pipeline import (BlendingEstimator, BootstrapResult, FrameObservation,
                       HeatmapGrid, PseudoLabelSet, SequenceDataset, bootstrap,
                       generate_pseudo_labels, labels_to_heatmaps_distances,
                       load_dataset_jsonl, save_dataset_jsonl, save_labels, segment)
from .prior import (MotionPrior, decode, encode, fit_linear_subspace,
                    identity_prior, load_prior, save_prior)
from .skeleton import (BoneTopology, JointSet15, PoseSequence, bone_lengths,
                       default_topology, load_pose_sequence, rescale_to_skeleton,
                       save_pose_sequence)
from .synth import Scenario, ScenarioConfig, gen_scenario, ground_truth_state

__version__ = "0.1.0"
