"""Structure-measure evaluation of foreground maps, with baseline measures and meta-measures for comparison."""

from .baselines import FbwParams, auc, average_precision, f_beta, fbw, pr_curve, roc_curve
from .maps import (ConfusionCounts, MapError, confusion_counts, foreground_centroid, invert, load_binary_map,
                   load_gray_map, region_stats, threshold_map)
from .meta import (MetaResult, ScoreMatrix, gaussian_baseline_map, mm1_application_ranking, mm2_generic_vs_sota,
                   mm3_gt_switch, mm4_annotation_robustness, mm5_rank_distance, perturb_gt, select_study_pairs,
                   spearman_rho)
from .smeasure import (SMeasureParams, object_component, object_score, partition_blocks, region_score,
                       ssim_block, structure_measure)

__version__ = "0.1.0"
