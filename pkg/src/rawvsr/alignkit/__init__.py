"""LR-HR spatial alignment: robust homography, dense flow, packed-domain rescaling."""

from .flow import dense_flow
from .homography import Correspondences, estimate_homography, fit_dlt, reprojection_error
from .matching import harris_corners, match_corners
from .pipeline import AlignConfig, AlignResult, align_pair
from .warp import FlowField, Homography, rescale_for_subframe, warp_flow, warp_image

__all__ = [
    "AlignConfig", "AlignResult", "Correspondences", "FlowField", "Homography", "align_pair",
    "dense_flow", "estimate_homography", "fit_dlt", "harris_corners", "match_corners",
    "rescale_for_subframe", "reprojection_error", "warp_flow", "warp_image",
]
