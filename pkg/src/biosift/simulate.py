"""Synthetic scenarios for desk-scale verification.

Generates ground-truth site layouts with part counts drawn from a count
prior, plus simulated detector output: true detections with configurable
recall, score laws and center jitter, and false detections from a spatial
Poisson process. False site detections carry few or no parts (background
count law concentrated at zero), which is exactly the regime where fused
rescoring separates them from real sites.

Also hosts the exact subset-enumeration form of the success-count
distribution, kept as a test oracle for the O(n^2) production kernel.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import refdata
from .detections import Detection, GroundTruthSite
from .errors import DomainError, FormatError, GenerationError
from .fusion import CountDistribution, CountPrior, fit_empirical_prior
from .geom import GeoPoint, OrientedBox

MIN_SITE_SEPARATION_M = 500.0
ENUMERATION_LIMIT = 12

DEFAULT_CRS = "EPSG:2154"
TILE_SIZE_M = 1000.0


@dataclass(frozen=True)
class DetectorModel:
    """Error model of the simulated detector."""

    site_tpr: float = 0.95
    part_tpr: float = 0.8
    fp_rate_per_km2: float = 0.05
    tp_score_a: float = 5.0
    tp_score_b: float = 2.0
    fp_score_a: float = 2.0
    fp_score_b: float = 5.0
    jitter_sigma_m: float = 20.0

    def __post_init__(self):
        for name in ("site_tpr", "part_tpr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must be in [0, 1], got {v}")
        if self.fp_rate_per_km2 < 0 or self.jitter_sigma_m < 0:
            raise DomainError("rates and jitter must be >= 0")
        for name in ("tp_score_a", "tp_score_b", "fp_score_a", "fp_score_b"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be > 0")


@dataclass(frozen=True)
class Scenario:
    seed: int
    region_width_m: float
    region_height_m: float
    n_sites: int
    count_prior: CountPrior
    detector: DetectorModel = field(default_factory=DetectorModel)

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "region_width_m": self.region_width_m,
            "region_height_m": self.region_height_m,
            "n_sites": self.n_sites,
            "detector": asdict(self.detector),
            "count_prior": json.loads(self.count_prior.to_json()),
        }
        return json.dumps(doc, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        doc = json.loads(text)
        try:
            return cls(
                seed=int(doc["seed"]),
                region_width_m=float(doc["region_width_m"]),
                region_height_m=float(doc["region_height_m"]),
                n_sites=int(doc["n_sites"]),
                count_prior=CountPrior.from_json(json.dumps(doc["count_prior"])),
                detector=DetectorModel(**doc.get("detector", {})),
            )
        except KeyError as exc:
            raise FormatError(f"scenario file missing field {exc}") from exc

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def standard_scenario(seed: int = 42) -> Scenario:
    """The fixture scenario: 50 sites over 50 x 50 km with the prior fitted
    from the training-split count histograms."""
    prior = fit_empirical_prior(refdata.TANK_COUNT_FREQ, refdata.PILE_COUNT_FREQ)
    return Scenario(
        seed=seed,
        region_width_m=50_000.0,
        region_height_m=50_000.0,
        n_sites=50,
        count_prior=prior,
    )


def enumerate_poisson_binomial(p, limit: int = ENUMERATION_LIMIT) -> CountDistribution:
    """Exact success-count pmf by enumerating all 2^n outcomes.

    Deliberately exponential; refused beyond ``limit`` trials. This is the
    independent oracle the fast convolution is checked against.
    """
    p = list(p)
    n = len(p)
    if n > limit:
        raise DomainError(f"subset enumeration is oracle-only; {n} > {limit} trials")
    pmf = np.zeros(n + 1)
    for successes in itertools.product((0, 1), repeat=n):
        prob = 1.0
        for pi, s in zip(p, successes):
            prob *= pi if s else (1.0 - pi)
        pmf[sum(successes)] += prob
    return CountDistribution(pmf)


def _sample_counts(rng, prior: CountPrior, size: int):
    table = prior.table / prior.table.sum()
    flat = rng.choice(table.size, size=size, p=table.ravel())
    return np.unravel_index(flat, table.shape)


def _background_part_count(rng) -> int:
    # false sites rarely show convincing parts: P(0) = 0.9, geometric tail
    if rng.random() < 0.9:
        return 0
    return int(rng.geometric(0.5))


def _place_sites(rng, sc: Scenario):
    """Uniform placement with rejection below the minimum separation; a
    cell grid keeps the neighbor check O(1) per attempt."""
    positions: list[tuple[float, float]] = []
    grid: dict[tuple[int, int], list[int]] = {}
    cell = MIN_SITE_SEPARATION_M
    min_d2 = cell * cell
    attempts = 0
    max_attempts = max(1000, 200 * sc.n_sites)
    while len(positions) < sc.n_sites:
        if attempts >= max_attempts:
            raise GenerationError(
                f"could not place {sc.n_sites} sites at {MIN_SITE_SEPARATION_M} m "
                f"separation in {sc.region_width_m} x {sc.region_height_m} m"
            )
        attempts += 1
        x = rng.uniform(0.0, sc.region_width_m)
        y = rng.uniform(0.0, sc.region_height_m)
        ci, cj = int(x // cell), int(y // cell)
        ok = True
        for ni in (ci - 1, ci, ci + 1):
            for nj in (cj - 1, cj, cj + 1):
                for k in grid.get((ni, nj), ()):
                    px, py = positions[k]
                    if (x - px) ** 2 + (y - py) ** 2 < min_d2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            grid.setdefault((ci, cj), []).append(len(positions))
            positions.append((x, y))
    return positions


def _tile_id(x: float, y: float) -> str:
    return f"t{int(math.floor(x / TILE_SIZE_M)):04d}_{int(math.floor(y / TILE_SIZE_M)):04d}"


class _IdGen:
    def __init__(self, prefix):
        self.prefix = prefix
        self.n = 0

    def __call__(self):
        self.n += 1
        return f"{self.prefix}{self.n:06d}"


_PART_DIMS = {"tank": (16.0, 16.0), "pile": (40.0, 12.0)}


def _scene_parts(rng, site_box, n_tanks, n_piles):
    """True part boxes laid out inside a site box (central region, so part
    centers stay inside the jittered detection box at typical jitter)."""
    c, s = math.cos(site_box.angle), math.sin(site_box.angle)
    out = []
    for cls in ["tank"] * n_tanks + ["pile"] * n_piles:
        w, h = _PART_DIMS[cls]
        u = rng.uniform(-0.3, 0.3) * site_box.width
        v = rng.uniform(-0.3, 0.3) * site_box.height
        px = site_box.center.x + u * c - v * s
        py = site_box.center.y + u * s + v * c
        out.append((cls, OrientedBox(GeoPoint(px, py), w, h, rng.uniform(-math.pi / 2, math.pi / 2))))
    return out


def _observe(rng, det_ids, dets, cls, true_box, tpr, score_law, jitter):
    """Detector pass over one true object; emits nothing when it misses."""
    if rng.random() >= tpr:
        return
    score = float(rng.beta(*score_law))
    jx, jy = rng.normal(0.0, jitter, size=2) if jitter > 0 else (0.0, 0.0)
    center = GeoPoint(true_box.center.x + jx, true_box.center.y + jy)
    dets.append(
        Detection(
            id=det_ids(),
            cls=cls,
            score=score,
            box=OrientedBox(center, true_box.width, true_box.height, true_box.angle),
            tile_id=_tile_id(true_box.center.x, true_box.center.y),
            crs=DEFAULT_CRS,
        )
    )


def generate(sc: Scenario):
    """Realize a scenario: (ground-truth sites, detector output).

    Two child streams are spawned from the seed: one drives the true scene
    and its observation (site layout, part counts and geometry, detector
    misses, scores, jitter), the other drives the false-alarm process.
    Keeping the streams separate means changing the false-alarm rate never
    reshuffles the true-scene realization, so ablations compare like with
    like. Identical seeds give bit-identical output.
    """
    scene_seed, fp_seed = np.random.SeedSequence(sc.seed).spawn(2)
    rng = np.random.default_rng(scene_seed)
    rng_fp = np.random.default_rng(fp_seed)
    det = sc.detector
    det_ids = _IdGen("d")

    # scene
    positions = _place_sites(rng, sc)
    counts_t, counts_p = _sample_counts(rng, sc.count_prior, len(positions))
    gts: list[GroundTruthSite] = []
    scene: list[tuple[OrientedBox, list]] = []
    for i, (x, y) in enumerate(positions):
        site_box = OrientedBox(
            GeoPoint(x, y),
            rng.uniform(120.0, 200.0),
            rng.uniform(100.0, 170.0),
            rng.uniform(-math.pi / 2, math.pi / 2),
        )
        parts = _scene_parts(rng, site_box, int(counts_t[i]), int(counts_p[i]))
        gts.append(
            GroundTruthSite(
                id=f"gt{i + 1:05d}",
                location=site_box.center,
                source="initial_db",
                boxes=(("site", site_box),),
            )
        )
        scene.append((site_box, parts))

    # detector sweep over the scene
    dets: list[Detection] = []
    tp_law = (det.tp_score_a, det.tp_score_b)
    for site_box, parts in scene:
        _observe(rng, det_ids, dets, "site", site_box, det.site_tpr, tp_law, det.jitter_sigma_m)
        for cls, box in parts:
            _observe(rng, det_ids, dets, cls, box, det.part_tpr, tp_law, det.jitter_sigma_m)

    # false alarms: independent spatial Poisson process per class; false
    # sites carry background-law part counts (almost always none)
    fp_law = (det.fp_score_a, det.fp_score_b)
    area_km2 = sc.region_width_m * sc.region_height_m / 1e6
    lam = det.fp_rate_per_km2 * area_km2
    n_fp_sites = int(rng_fp.poisson(lam)) if lam > 0 else 0
    for _ in range(n_fp_sites):
        x = rng_fp.uniform(0.0, sc.region_width_m)
        y = rng_fp.uniform(0.0, sc.region_height_m)
        fp_box = OrientedBox(
            GeoPoint(x, y),
            rng_fp.uniform(120.0, 200.0),
            rng_fp.uniform(100.0, 170.0),
            rng_fp.uniform(-math.pi / 2, math.pi / 2),
        )
        dets.append(
            Detection(
                id=det_ids(),
                cls="site",
                score=float(rng_fp.beta(*fp_law)),
                box=fp_box,
                tile_id=_tile_id(x, y),
                crs=DEFAULT_CRS,
            )
        )
        for cls, box in _scene_parts(
            rng_fp, fp_box, _background_part_count(rng_fp), _background_part_count(rng_fp)
        ):
            _observe(rng_fp, det_ids, dets, cls, box, 1.0, fp_law, det.jitter_sigma_m)
    for cls in ("tank", "pile"):
        w, h = _PART_DIMS[cls]
        n_fp = int(rng_fp.poisson(lam)) if lam > 0 else 0
        for _ in range(n_fp):
            x = rng_fp.uniform(0.0, sc.region_width_m)
            y = rng_fp.uniform(0.0, sc.region_height_m)
            dets.append(
                Detection(
                    id=det_ids(),
                    cls=cls,
                    score=float(rng_fp.beta(*fp_law)),
                    box=OrientedBox(
                        GeoPoint(x, y), w, h, rng_fp.uniform(-math.pi / 2, math.pi / 2)
                    ),
                    tile_id=_tile_id(x, y),
                    crs=DEFAULT_CRS,
                )
            )
    return gts, dets
