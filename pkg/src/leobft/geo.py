"""Constellation geometry: Poisson deployments, footprints, detection rates.

Satellites and ground sensors are homogeneous Poisson point processes on the
Earth sphere: the point count is Poisson(density * surface area) and the
positions are independently uniform. A beam from altitude h with half-angle
theta covers a ground circle of radius r = h * tan(theta) around the
sub-satellite point; two beams on the same sub-band interfere when their
centres are closer than 2r along a great circle.

A spot-beam incident at x goes undetected by an operator with sensor density
lambda exactly when its footprint circle around x is empty, which has
probability exp(-lambda * pi * r^2); detection by every honest operator is
the product of the complements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

R_EARTH_KM = 6371.0
EARTH_AREA_KM2 = 4.0 * math.pi * R_EARTH_KM**2


@dataclass(frozen=True)
class BeamGeometry:
    altitude_km: float = 550.0
    half_angle_deg: float = 1.75

    @property
    def footprint_radius_km(self) -> float:
        return self.altitude_km * math.tan(math.radians(self.half_angle_deg))


def sphere_points(count: int, rng: np.random.Generator) -> np.ndarray:
    """Unit vectors uniform on the sphere, shape (count, 3)."""
    z = rng.uniform(-1.0, 1.0, count)
    phi = rng.uniform(0.0, 2.0 * math.pi, count)
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def deploy_poisson(density_per_km2: float, rng: np.random.Generator) -> np.ndarray:
    """One Poisson point process realisation on the Earth sphere."""
    if density_per_km2 < 0:
        raise ValueError("density must be >= 0")
    count = int(rng.poisson(density_per_km2 * EARTH_AREA_KM2))
    return sphere_points(count, rng)


@dataclass
class Constellation:
    beam: BeamGeometry
    satellites: Dict[int, np.ndarray]       # operator -> unit vectors (n, 3)
    subbands: Dict[int, np.ndarray]         # operator -> sub-band id per satellite
    n_subbands: int


def build_constellation(operator_ids: Sequence[int], density_per_km2: float,
                        n_subbands: int, rng: np.random.Generator,
                        beam: Optional[BeamGeometry] = None) -> Constellation:
    """Independent Poisson constellations with uniform random sub-bands."""
    if n_subbands < 1:
        raise ValueError("need at least one sub-band")
    beam = beam or BeamGeometry()
    satellites = {}
    subbands = {}
    for op in operator_ids:
        pts = deploy_poisson(density_per_km2, rng)
        satellites[op] = pts
        if n_subbands == 1:
            subbands[op] = np.zeros(len(pts), dtype=np.int64)
        else:
            subbands[op] = rng.integers(0, n_subbands, len(pts))
    return Constellation(beam, satellites, subbands, n_subbands)


def count_interference(constellation: Constellation, chunk: int = 2048) -> int:
    """Unordered cross-operator pairs with overlapping same-band footprints.

    Footprints of radius r overlap exactly when the great-circle distance of
    their centres is below 2r.
    """
    two_r = 2.0 * constellation.beam.footprint_radius_km
    cos_threshold = math.cos(two_r / R_EARTH_KM)
    ops = sorted(constellation.satellites)
    total = 0
    for i, a in enumerate(ops):
        pts_a = constellation.satellites[a]
        sb_a = constellation.subbands[a]
        if len(pts_a) == 0:
            continue
        for b in ops[i + 1:]:
            pts_b = constellation.satellites[b]
            sb_b = constellation.subbands[b]
            if len(pts_b) == 0:
                continue
            for lo in range(0, len(pts_a), chunk):
                dots = pts_a[lo:lo + chunk] @ pts_b.T
                mask = dots > cos_threshold
                mask &= sb_a[lo:lo + chunk, None] == sb_b[None, :]
                total += int(np.count_nonzero(mask))
    return total


def interference_sweep(densities_per_million_km2: Sequence[float], n_operators: int,
                       n_subbands: int, trials: int, seed: int,
                       beam: Optional[BeamGeometry] = None) -> List[Tuple[float, float]]:
    """Mean incident count per density, averaged over independent trials."""
    beam = beam or BeamGeometry()
    rows = []
    for di, density in enumerate(densities_per_million_km2):
        counts = []
        for t in range(trials):
            rng = np.random.default_rng(_substream(seed, "sweep", di, t))
            constellation = build_constellation(
                range(1, n_operators + 1), density / 1e6, n_subbands, rng, beam
            )
            counts.append(count_interference(constellation))
        rows.append((density, sum(counts) / len(counts)))
    return rows


class CellGrid:
    """Fixed longitude/latitude grid used to localise incidents (200 x 100)."""

    def __init__(self, azimuth_bins: int = 200, polar_bins: int = 100):
        if azimuth_bins < 1 or polar_bins < 1:
            raise ValueError("grid needs at least one bin per axis")
        self.azimuth_bins = azimuth_bins
        self.polar_bins = polar_bins

    @property
    def n_cells(self) -> int:
        return self.azimuth_bins * self.polar_bins

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        """Cell index per unit vector, in [0, n_cells)."""
        pts = np.atleast_2d(points)
        azimuth = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * math.pi)
        polar = np.arccos(np.clip(pts[:, 2], -1.0, 1.0))
        ia = np.minimum((azimuth / (2.0 * math.pi) * self.azimuth_bins).astype(np.int64),
                        self.azimuth_bins - 1)
        ip = np.minimum((polar / math.pi * self.polar_bins).astype(np.int64),
                        self.polar_bins - 1)
        return ia * self.polar_bins + ip


def detection_probability_theory(sensor_densities_per_km2: Sequence[float],
                                 beam: Optional[BeamGeometry] = None) -> float:
    """Probability that every listed operator has a sensor in the footprint."""
    beam = beam or BeamGeometry()
    area = math.pi * beam.footprint_radius_km**2
    p = 1.0
    for lam in sensor_densities_per_km2:
        if lam < 0:
            raise ValueError("sensor density must be >= 0")
        p *= 1.0 - math.exp(-lam * area)
    return p


@dataclass
class DetectionSample:
    detected: np.ndarray       # bool per incident
    incident_cells: np.ndarray
    rate: float


def simulate_detection(sensor_fields: Dict[int, np.ndarray], incidents: np.ndarray,
                       beam: Optional[BeamGeometry] = None,
                       grid: Optional[CellGrid] = None) -> DetectionSample:
    """Check, per incident, whether every operator has a sensor within the footprint.

    Membership uses the chord radius equivalent to the great-circle footprint
    radius, so the footprint is an exact spherical cap.
    """
    beam = beam or BeamGeometry()
    grid = grid or CellGrid()
    angle = beam.footprint_radius_km / R_EARTH_KM
    chord = 2.0 * math.sin(angle / 2.0)
    detected = np.ones(len(incidents), dtype=bool)
    for op in sorted(sensor_fields):
        field = sensor_fields[op]
        if len(field) == 0:
            detected[:] = False
            break
        tree = cKDTree(field)
        counts = tree.query_ball_point(incidents, chord, return_length=True, workers=-1)
        detected &= counts > 0
    rate = float(np.count_nonzero(detected)) / len(incidents) if len(incidents) else 0.0
    return DetectionSample(detected, grid.cell_of(incidents), rate)


def detection_sweep(densities_per_10k_km2: Sequence[float], n_honest: int,
                    trials: int, seed: int,
                    beam: Optional[BeamGeometry] = None) -> List[Tuple[float, float, float]]:
    """(density, empirical rate, theory rate) per sensor density.

    Each of the `trials` incidents is a freshly sampled adversarial satellite
    position; honest sensor fields are one Poisson realisation per density.
    """
    beam = beam or BeamGeometry()
    rows = []
    for di, density in enumerate(densities_per_10k_km2):
        lam = density / 1e4
        fields = {
            op: deploy_poisson(lam, np.random.default_rng(_substream(seed, "field", di, op)))
            for op in range(1, n_honest + 1)
        }
        incidents = sphere_points(trials, np.random.default_rng(_substream(seed, "incident", di)))
        sample = simulate_detection(fields, incidents, beam)
        theory = detection_probability_theory([lam] * n_honest, beam)
        rows.append((density, sample.rate, theory))
    return rows


def _substream(seed: int, *labels) -> int:
    from .auth import derive_seed

    return derive_seed(seed, "geo", *labels)
