"""Learn cable-gripper contacts for aerial payload transport from one demonstration
and transfer them to new point clouds."""

__version__ = "0.1.0"

from .cloud import FeatureTable, PointCloud, SurfaceFeature, load_cloud, save_cloud, surface_feature
from .config import RunConfig, load_config
from .density import Bandwidths, MixtureDensity
from .geom import Pose, compose, inverse, pose_distance, relative_pose
from .models import (ConfigurationModel, ContactModel, DemonstrationRecord, ModelBundle, ObjectModel,
                     TaskModel, learn_models, load_model, save_model)
from .transfer import (CandidateGrasp, QueryDensity, TransferParams, build_query_density,
                       feasibility_filter, likelihood, optimize, select_top_k, snap_to_surface)

__all__ = [
    "Bandwidths", "CandidateGrasp", "ConfigurationModel", "ContactModel", "DemonstrationRecord",
    "FeatureTable", "MixtureDensity", "ModelBundle", "ObjectModel", "PointCloud", "Pose", "QueryDensity",
    "RunConfig", "SurfaceFeature", "TaskModel", "TransferParams", "build_query_density", "compose",
    "feasibility_filter", "inverse", "learn_models", "likelihood", "load_cloud", "load_config",
    "load_model", "optimize", "pose_distance", "relative_pose", "save_cloud", "save_model",
    "select_top_k", "snap_to_surface", "surface_feature",
]
