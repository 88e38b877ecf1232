"""Part-based probabilistic rescoring of site detections.

A site detection with confidence ``p_b`` is fused with the evidence of
the tank and pile detections found inside its box: each part detection is
an independent Bernoulli trial with its score as success probability, the
resulting count distributions are weighted by a prior over plausible
(tank, pile) count pairs, and the site score becomes

    score = p_b * sum_{N_t, N_p} P(N_t | tanks) P(N_p | piles) w(N_t, N_p)

Priors can be fitted from per-site count histograms (empirical marginals,
independent Poissons, or a bivariate Poisson with a shared component).
"""

from __future__ import annotations

import json
import math
import os
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .detections import Detection
from .errors import DomainError, FitError, FormatError, ValidationError
from .geom import GeoPoint, contains_point

PRIOR_KINDS = ("empirical_independent", "poisson_independent", "bivariate_poisson", "uniform")
CONTAINMENT_MODES = ("center_in", "box_in")

DEFAULT_CAP = 50
DEFAULT_SMOOTHING = 1e-4


@dataclass(frozen=True)
class SiteEvidence:
    """A site detection plus the scores of its contained part detections."""

    site: Detection
    p_b: float
    p_t: tuple
    p_p: tuple

    def __post_init__(self):
        for name, values in (("p_b", (self.p_b,)), ("p_t", self.p_t), ("p_p", self.p_p)):
            for v in values:
                if not 0.0 <= v <= 1.0:
                    raise ValidationError(f"{name} entry {v} outside [0, 1]")


@dataclass(frozen=True)
class CountDistribution:
    """pmf over the number of true detections, indexed 0..N_max."""

    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        object.__setattr__(self, "pmf", pmf)
        if pmf.ndim != 1 or pmf.size == 0:
            raise ValidationError("pmf must be a non-empty 1-d array")
        if np.any(pmf < -1e-12) or abs(pmf.sum() - 1.0) > 1e-9:
            raise ValidationError("pmf entries must be >= 0 and sum to 1")

    @property
    def mode(self) -> int:
        return int(np.argmax(self.pmf))

    def __len__(self) -> int:
        return self.pmf.size


def poisson_binomial(p) -> CountDistribution:
    """Count distribution of independent detections with probabilities ``p``.

    Iterative one-trial-at-a-time convolution, O(n^2); equals the
    subset-sum expansion without ever enumerating subsets.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.size and (np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr))):
        raise DomainError("probabilities must lie in [0, 1]")
    return CountDistribution(_kernels.poisson_binomial_pmf(arr))


def poisson_pmf(k: int, lam: float) -> float:
    """Poisson pmf; by convention pmf(0, 0) = 1."""
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    if lam == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(lam) - lam - math.lgamma(k + 1))


def bivariate_poisson_pmf(x: int, y: int, lam_t: float, lam_p: float, lam_c: float) -> float:
    """Joint pmf of a bivariate Poisson with shared component ``lam_c``.

    P(x, y) = exp(-(lt+lp+lc)) * sum_k lt^(x-k) lp^(y-k) lc^k
              / ((x-k)! (y-k)! k!),  k = 0..min(x, y).
    """
    total = 0.0
    for k in range(min(x, y) + 1):
        term = -(lam_t + lam_p + lam_c)
        term += _xlogy(x - k, lam_t) - math.lgamma(x - k + 1)
        term += _xlogy(y - k, lam_p) - math.lgamma(y - k + 1)
        term += _xlogy(k, lam_c) - math.lgamma(k + 1)
        if term == -math.inf:
            continue
        total += math.exp(term)
    return total


def _xlogy(k: int, lam: float) -> float:
    if k == 0:
        return 0.0
    if lam == 0.0:
        return -math.inf
    return k * math.log(lam)


@dataclass(frozen=True)
class CountPrior:
    """Weight table over (tank count, pile count) pairs.

    ``table[n_t, n_p]`` is the weight applied to that count pair during
    fusion. Fitted priors are proper pmfs; arbitrary weight tables (e.g.
    all-ones) are also legal, which is what makes the uniform prior an
    exact no-op.
    """

    kind: str
    table: np.ndarray
    cap: int = DEFAULT_CAP
    params: dict | None = None
    smoothing: float = 0.0

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValidationError(f"unknown prior kind {self.kind!r}")
        table = np.asarray(self.table, dtype=np.float64)
        object.__setattr__(self, "table", table)
        if table.shape != (self.cap + 1, self.cap + 1):
            raise ValidationError(
                f"table shape {table.shape} does not match cap {self.cap}"
            )
        if np.any(table < 0.0) or np.any(table > 1.0):
            raise ValidationError("table weights must lie in [0, 1]")

    def weight(self, n_t: int, n_p: int) -> float:
        return float(self.table[min(n_t, self.cap), min(n_p, self.cap)])

    @classmethod
    def uniform(cls, cap: int = DEFAULT_CAP) -> "CountPrior":
        """Weight 1 everywhere; fusion degenerates to the raw site score."""
        return cls(kind="uniform", table=np.ones((cap + 1, cap + 1)), cap=cap)

    def scaled(self, factor: float) -> "CountPrior":
        """Same prior with all weights scaled; rescoring order is unchanged."""
        if factor <= 0.0:
            raise DomainError(f"scale factor must be > 0, got {factor}")
        return CountPrior(
            kind=self.kind,
            table=self.table * factor,
            cap=self.cap,
            params=self.params,
            smoothing=self.smoothing,
        )

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "cap": self.cap,
            "smoothing": self.smoothing,
            "params": self.params,
            "table": [[float(w) for w in row] for row in self.table],
        }
        return json.dumps(doc, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def from_json(cls, text: str) -> "CountPrior":
        doc = json.loads(text)
        try:
            return cls(
                kind=doc["kind"],
                table=np.asarray(doc["table"], dtype=np.float64),
                cap=int(doc["cap"]),
                params=doc.get("params"),
                smoothing=float(doc.get("smoothing", 0.0)),
            )
        except KeyError as exc:
            raise FormatError(f"prior file missing field {exc}") from exc

    @classmethod
    def load(cls, path) -> "CountPrior":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _hist_to_array(hist, cap: int) -> np.ndarray:
    """Normalize a count histogram (mapping or sequence) to length cap+1."""
    arr = np.zeros(cap + 1)
    if isinstance(hist, Mapping):
        items = hist.items()
    else:
        items = enumerate(hist)
    for count, mass in items:
        count = int(count)
        if count < 0:
            raise FitError(f"negative count {count} in histogram")
        if mass < 0:
            raise FitError(f"negative mass {mass} in histogram")
        if count <= cap:
            arr[count] += float(mass)
    total = arr.sum()
    if total <= 0.0:
        raise FitError("histogram has no mass")
    return arr / total


def _marginal(hist, cap: int, smoothing: float) -> np.ndarray:
    p = _hist_to_array(hist, cap)
    if smoothing > 0.0:
        p = np.maximum(p, smoothing)
        p /= p.sum()
    return p


def fit_empirical_prior(
    tank_counts, pile_counts, smoothing: float = DEFAULT_SMOOTHING, cap: int = DEFAULT_CAP
) -> CountPrior:
    """Independent empirical prior: product of the two smoothed marginals.

    Every marginal cell is floored at ``smoothing`` before renormalizing,
    so an unseen count can never hard-zero a true site.
    """
    p_t = _marginal(tank_counts, cap, smoothing)
    p_p = _marginal(pile_counts, cap, smoothing)
    return CountPrior(
        kind="empirical_independent",
        table=np.outer(p_t, p_p),
        cap=cap,
        smoothing=smoothing,
    )


def _hist_mean(p: np.ndarray) -> float:
    return float(np.arange(p.size) @ p)


def fit_poisson_prior(tank_counts, pile_counts, cap: int = DEFAULT_CAP) -> CountPrior:
    """Independent Poisson prior with maximum-likelihood rates.

    The Poisson MLE is the histogram mean; the product pmf is truncated
    at ``cap`` and renormalized.
    """
    lam_t = _hist_mean(_hist_to_array(tank_counts, cap))
    lam_p = _hist_mean(_hist_to_array(pile_counts, cap))
    ks = np.arange(cap + 1)
    pmf_t = np.array([poisson_pmf(int(k), lam_t) for k in ks])
    pmf_p = np.array([poisson_pmf(int(k), lam_p) for k in ks])
    table = np.outer(pmf_t, pmf_p)
    table /= table.sum()
    return CountPrior(
        kind="poisson_independent",
        table=table,
        cap=cap,
        params={"lam_t": lam_t, "lam_p": lam_p},
    )


def fit_bivariate_poisson_prior(joint_counts, cap: int = DEFAULT_CAP) -> CountPrior:
    """Bivariate Poisson prior by moment matching.

    ``joint_counts`` is a 2-d histogram over (tank count, pile count).
    The shared rate is the sample covariance, clamped into
    [0, min(means)] since the distribution cannot represent negative
    correlation; the marginal rates absorb the rest.
    """
    joint = np.asarray(joint_counts, dtype=np.float64)
    if joint.ndim != 2:
        raise FitError("joint histogram must be 2-d")
    if np.any(joint < 0):
        raise FitError("negative mass in joint histogram")
    total = joint.sum()
    if total <= 0.0:
        raise FitError("histogram has no mass")
    joint = joint / total
    nt = np.arange(joint.shape[0])
    npi = np.arange(joint.shape[1])
    p_t = joint.sum(axis=1)
    p_p = joint.sum(axis=0)
    mean_t = float(nt @ p_t)
    mean_p = float(npi @ p_p)
    mean_tp = float(nt @ joint @ npi)
    cov = mean_tp - mean_t * mean_p
    lam_c = min(max(cov, 0.0), mean_t, mean_p)
    lam_t = mean_t - lam_c
    lam_p = mean_p - lam_c
    table = np.empty((cap + 1, cap + 1))
    for x in range(cap + 1):
        for y in range(cap + 1):
            table[x, y] = bivariate_poisson_pmf(x, y, lam_t, lam_p, lam_c)
    table /= table.sum()
    return CountPrior(
        kind="bivariate_poisson",
        table=table,
        cap=cap,
        params={"lam_t": lam_t, "lam_p": lam_p, "lam_c": lam_c},
    )


def bayes_posterior_prior(
    positive: CountPrior, background: CountPrior, positive_rate: float = 0.5
) -> CountPrior:
    """Optional Bayes mode: turn a positive-class count pmf into a posterior
    P(site | counts) against a background count pmf.

    Off the default path; the fitted positive-class table is used directly
    as the fusion weight unless this is requested explicitly.
    """
    if not 0.0 < positive_rate < 1.0:
        raise DomainError("positive_rate must be strictly inside (0, 1)")
    if positive.cap != background.cap:
        raise ValidationError("priors must share a cap")
    num = positive_rate * positive.table
    den = num + (1.0 - positive_rate) * background.table
    with np.errstate(invalid="ignore", divide="ignore"):
        table = np.where(den > 0.0, num / den, 0.0)
    return CountPrior(kind=positive.kind, table=table, cap=positive.cap)


def extract_evidence(site: Detection, parts, containment: str = "center_in") -> SiteEvidence:
    """Collect the score vectors of the parts contained in a site box.

    ``center_in`` keeps a part whose center lies in the site box (robust
    to parts clipped at the boundary); ``box_in`` requires all four of the
    part's corners inside.
    """
    if containment not in CONTAINMENT_MODES:
        raise ValidationError(f"unknown containment mode {containment!r}")
    if site.cls != "site":
        raise ValidationError(f"evidence extraction needs a site detection, got {site.cls!r}")
    p_t, p_p = [], []
    for part in parts:
        if part.cls == "site":
            continue
        if containment == "center_in":
            inside = contains_point(site.box, part.center)
        else:
            inside = all(
                contains_point(site.box, corner)
                for corner in _box_corner_points(part.box)
            )
        if inside:
            (p_t if part.cls == "tank" else p_p).append(part.score)
    return SiteEvidence(site=site, p_b=site.score, p_t=tuple(p_t), p_p=tuple(p_p))


def _box_corner_points(box):
    return [GeoPoint(float(x), float(y)) for x, y in box.corner_array()]


def fused_score(ev: SiteEvidence, prior: CountPrior) -> float:
    """Fuse a site score with its part-count evidence under a prior."""
    pmf_t = poisson_binomial(ev.p_t).pmf
    pmf_p = poisson_binomial(ev.p_p).pmf
    nt = min(pmf_t.size - 1, prior.cap)
    npi = min(pmf_p.size - 1, prior.cap)
    acc = pmf_t[: nt + 1] @ prior.table[: nt + 1, : npi + 1] @ pmf_p[: npi + 1]
    return float(ev.p_b * acc)


def _assign_parts(
    site_cx,
    site_cy,
    site_cos,
    site_sin,
    site_hw,
    site_hh,
    site_scores,
    site_rank,
    part_points,
    part_of_point,
    n_parts,
):
    """Map each part to the single containing site with the highest score.

    ``part_points`` are the probe points (centers for center_in; all four
    corners for box_in, flagged through ``part_of_point``). Candidate
    (point, site) pairs are generated with a uniform grid over site
    centers so the join stays near-linear in the input size.
    """
    n_sites = site_cx.size
    if n_sites == 0 or n_parts == 0:
        return np.full(n_parts, -1, dtype=np.int64)
    radius = float(np.max(np.hypot(site_hw, site_hh)))
    cell = max(radius, 1e-6)
    sx_cell = np.floor(site_cx / cell).astype(np.int64)
    sy_cell = np.floor(site_cy / cell).astype(np.int64)
    px_cell = np.floor(part_points[:, 0] / cell).astype(np.int64)
    py_cell = np.floor(part_points[:, 1] / cell).astype(np.int64)

    # collision-free cell key: shift both axes to >= 0 (with margin for the
    # +/-1 probe offsets) and flatten row-major
    min_y = int(min(sy_cell.min(), py_cell.min())) - 1
    n_y = int(max(sy_cell.max(), py_cell.max())) - min_y + 3

    def key_of(ix, iy):
        return ix * n_y + (iy - min_y)

    site_key = key_of(sx_cell, sy_cell)
    site_order = np.argsort(site_key, kind="stable")
    sorted_keys = site_key[site_order]

    pair_point = []
    pair_site = []
    n_points = part_points.shape[0]
    point_idx = np.arange(n_points)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            probe = key_of(px_cell + dx, py_cell + dy)
            left = np.searchsorted(sorted_keys, probe, side="left")
            right = np.searchsorted(sorted_keys, probe, side="right")
            counts = right - left
            if not counts.any():
                continue
            total = int(counts.sum())
            starts = np.repeat(left, counts)
            offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
            pair_site.append(site_order[starts + offs])
            pair_point.append(np.repeat(point_idx, counts))
    if not pair_point:
        return np.full(n_parts, -1, dtype=np.int64)
    pp = np.concatenate(pair_point)
    ss = np.concatenate(pair_site)

    dx = part_points[pp, 0] - site_cx[ss]
    dy = part_points[pp, 1] - site_cy[ss]
    u = dx * site_cos[ss] + dy * site_sin[ss]
    v = -dx * site_sin[ss] + dy * site_cos[ss]
    tol = 1e-9
    inside = (np.abs(u) <= site_hw[ss] + tol) & (np.abs(v) <= site_hh[ss] + tol)
    pp, ss = pp[inside], ss[inside]
    if pp.size == 0:
        return np.full(n_parts, -1, dtype=np.int64)

    part_idx = part_of_point[pp]
    points_per_part = np.bincount(part_of_point, minlength=n_parts)
    # box_in: a (part, site) pair must hold for all of the part's probe points
    if np.any(points_per_part > 1):
        key = part_idx.astype(np.int64) * (len(site_cx) + 1) + ss
        uniq, cnt = np.unique(key, return_counts=True)
        full = uniq[cnt == points_per_part[(uniq // (len(site_cx) + 1)).astype(np.int64)]]
        part_idx = (full // (len(site_cx) + 1)).astype(np.int64)
        ss = (full % (len(site_cx) + 1)).astype(np.int64)
    if part_idx.size == 0:
        return np.full(n_parts, -1, dtype=np.int64)

    # highest-scoring containing site wins; ties broken by site id order
    order = np.lexsort((site_rank[ss], -site_scores[ss], part_idx))
    part_sorted = part_idx[order]
    first = np.ones(part_sorted.size, dtype=bool)
    first[1:] = part_sorted[1:] != part_sorted[:-1]
    assignment = np.full(n_parts, -1, dtype=np.int64)
    assignment[part_sorted[first]] = ss[order][first]
    return assignment


def rescore_region(
    sites, parts, prior: CountPrior, containment: str = "center_in", threads: int | None = None
):
    """Fuse every site detection in a region with its contained parts.

    A part contained in several site boxes contributes only to the
    highest-scoring one. Returns (site, fused score) pairs sorted by
    descending fused score (ties by id); the original score stays on the
    detection.
    """
    if containment not in CONTAINMENT_MODES:
        raise ValidationError(f"unknown containment mode {containment!r}")
    sites = list(sites)
    for det in sites:
        if det.cls != "site":
            raise ValidationError(f"rescore_region: non-site detection {det.id!r} in sites")
    if not sites:
        return []

    site_cx = np.array([d.box.center.x for d in sites])
    site_cy = np.array([d.box.center.y for d in sites])
    angles = np.array([d.box.angle for d in sites])
    site_cos = np.cos(angles)
    site_sin = np.sin(angles)
    site_hw = np.array([0.5 * d.box.width for d in sites])
    site_hh = np.array([0.5 * d.box.height for d in sites])
    site_scores = np.array([d.score for d in sites])
    site_rank = np.empty(len(sites), dtype=np.int64)
    site_rank[np.argsort(np.array([d.id for d in sites]), kind="stable")] = np.arange(len(sites))

    part_list = [p for p in parts if p.cls != "site"]
    n_parts = len(part_list)
    if n_parts:
        if containment == "center_in":
            pts = np.array([(p.box.center.x, p.box.center.y) for p in part_list])
            owner = np.arange(n_parts, dtype=np.int64)
        else:
            pts = np.concatenate([p.box.corner_array() for p in part_list])
            owner = np.repeat(np.arange(n_parts, dtype=np.int64), 4)
        assignment = _assign_parts(
            site_cx, site_cy, site_cos, site_sin, site_hw, site_hh,
            site_scores, site_rank, pts, owner, n_parts,
        )
        part_scores = np.array([p.score for p in part_list])
        is_tank = np.array([p.cls == "tank" for p in part_list])
    else:
        assignment = np.empty(0, dtype=np.int64)
        part_scores = np.empty(0)
        is_tank = np.empty(0, dtype=bool)

    tank_scores, tank_start, tank_count = _group_scores(
        assignment[is_tank], part_scores[is_tank], len(sites)
    )
    pile_scores, pile_start, pile_count = _group_scores(
        assignment[~is_tank], part_scores[~is_tank], len(sites)
    )

    n_threads = threads if threads is not None else int(os.environ.get("PARTSCORE_THREADS", "1"))
    if n_threads > 1 and len(sites) > 1:
        chunks = np.array_split(np.arange(len(sites)), n_threads)
        fused = np.empty(len(sites))

        def run(idx):
            fused[idx] = _kernels.fused_scores_batch(
                site_scores[idx],
                tank_scores, tank_start[idx], tank_count[idx],
                pile_scores, pile_start[idx], pile_count[idx],
                prior.table,
            )

        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(run, [c for c in chunks if c.size]))
    else:
        fused = _kernels.fused_scores_batch(
            site_scores, tank_scores, tank_start, tank_count,
            pile_scores, pile_start, pile_count, prior.table,
        )

    order = sorted(range(len(sites)), key=lambda i: (-fused[i], sites[i].id))
    return [(sites[i], float(fused[i])) for i in order]


def _group_scores(assignment, scores, n_sites):
    """Flatten per-site score lists into (values, start, count) arrays."""
    keep = assignment >= 0
    assignment = assignment[keep]
    scores = scores[keep]
    order = np.argsort(assignment, kind="stable")
    values = np.ascontiguousarray(scores[order])
    count = np.bincount(assignment, minlength=n_sites).astype(np.int64)
    start = np.zeros(n_sites, dtype=np.int64)
    np.cumsum(count[:-1], out=start[1:])
    return values, start, count
