from consistency.detection import DetectionGrid, combined_pc_loss, detection_class_consistency, detection_residual_consistency, pc_in_time_loss
from consistency.errors import ConsistencyError, ConsistencyWarning
from consistency.normals import normals_consistency_loss, normals_from_depth
from consistency.photometric import PhotometricConfig, photometric_loss, ssim
from consistency.segmentation import combined_2d_loss, movable_mask, seg_consistency_loss
from consistency.terms import ConsistencyOptions, ConsistencyTerm, get_term, registered_terms

__all__ = [
    "ConsistencyError",
    "ConsistencyOptions",
    "ConsistencyTerm",
    "ConsistencyWarning",
    "DetectionGrid",
    "PhotometricConfig",
    "combined_2d_loss",
    "combined_pc_loss",
    "detection_class_consistency",
    "detection_residual_consistency",
    "get_term",
    "movable_mask",
    "normals_consistency_loss",
    "normals_from_depth",
    "pc_in_time_loss",
    "photometric_loss",
    "registered_terms",
    "seg_consistency_loss",
    "ssim",
]
