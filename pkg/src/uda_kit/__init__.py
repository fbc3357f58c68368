"""Toolkit for unsupervised domain adaptation of LiDAR semantic segmentation.

Stages: segment extraction (RANSAC + DBSCAN), augmented views and a toy
contrastive encoder, hard-vote pseudo-label fusion, range-image kNN cleanup
and IoU/accuracy evaluation.
"""

__version__ = "0.1.0"

from .augmentation import AugmentationSpec, PolarMixParams, apply_augmentation, make_view_pair, polar_mix
from .cloud_io import (
    ClassMap,
    PredictionSet,
    default_class_map,
    load_class_map,
    read_labels,
    read_point_cloud,
    remap_labels,
    write_labels,
    write_point_cloud,
)
from .contrastive import (
    EncoderParams,
    FinetuneParams,
    PseudoLabelSegmenter,
    SegmentContrastEncoder,
    TrainConfig,
    cross_entropy_loss,
    encode_points,
    finetune_step,
    info_nce_loss,
    pool_segment,
    pretrain_step,
)
from .ensemble import HardVoter, generate_pseudo_labels, hard_vote
from .evaluation import ConfusionMatrix, accumulate_confusion, class_iou, eval_report, mean_iou, overall_accuracy
from .range_postprocess import KnnParams, RangeKnnRefiner, knn_filter, project_spherical
from .segmentation import (
    GridDBSCAN,
    RansacGroundRemover,
    SegmentationParams,
    SegmentExtractor,
    dbscan_cluster,
    filter_segments,
    ransac_ground_fit,
    remove_ground,
    segment_scan,
)
