"""biosift: post-detection analytics for bio-digester site detectors.

Turns raw detector output (sites, digestion tanks, biomass piles) into
calibrated site scores by part-based probabilistic fusion, evaluates the
result with distance- and IoU-based metrics, drives an iterative
human-verified hard-negative mining loop, and aggregates confirmed sites
into inventories with power-production estimates.
"""

from .detections import (
    DatasetStats,
    Detection,
    GroundTruthSite,
    dedup_sites,
    dilution,
    read_detections,
    read_inventory,
    write_detections,
    write_inventory,
)
from .fusion import (
    CountDistribution,
    CountPrior,
    SiteEvidence,
    extract_evidence,
    fit_bivariate_poisson_prior,
    fit_empirical_prior,
    fit_poisson_prior,
    fused_score,
    poisson_binomial,
    rescore_region,
)
from .geom import GeoPoint, OrientedBox, center_distance, contains_point, convex_intersection_area, iou
from .metrics import (
    MatchReport,
    PRCurve,
    ap_dist,
    ap_iou,
    match_by_distance,
    max_recall_at_full_precision,
    mean_ap,
    pr_curve,
    region_report,
)
from .mining import IterationLedger, ReviewBatch, VerdictRecord, apply_verdicts, build_review_batch, dilution_series
from .power import RegressionFit, SiteFeature, aggregate_power, fit_linear, tank_area
from .simulate import Scenario, enumerate_poisson_binomial, generate, standard_scenario

__version__ = "0.1.0"
