"""
Road geometry fine-tuning by 2D rigid ICP.

OSM centerlines are densified and aligned against the near-ground band of a
LiDAR cloud with one global rotation plus translation.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .errors import DegenerateInputError, NoOverlapError, PreconditionError
from .geo_ingest import RoadEdge, RoadGraph
from .templating import render
from .terrain import Dem, PointCloud, sample_heights

logger = logging.getLogger(__name__)

NEIGHBOR_CANDIDATES = 8


@dataclass(frozen=True)
class RigidTransform2D:
    """Maps p to R(theta) p + (tx, ty)."""
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @classmethod
    def identity(cls) -> "RigidTransform2D":
        return cls(0.0, 0.0, 0.0)

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def matrix(self) -> np.ndarray:
        m = np.eye(3)
        m[:2, :2] = self.rotation()
        m[:2, 2] = (self.tx, self.ty)
        return m

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        return points @ self.rotation().T + np.array([self.tx, self.ty])

    def apply_point(self, x: float, y: float) -> Tuple[float, float]:
        px, py = self.apply([(x, y)])[0]
        return float(px), float(py)

    def compose(self, other: "RigidTransform2D") -> "RigidTransform2D":
        """self after other: p -> self(other(p))."""
        tx, ty = self.rotation() @ np.array([other.tx, other.ty]) + np.array([self.tx, self.ty])
        return RigidTransform2D(self.theta + other.theta, float(tx), float(ty))

    def inverse(self) -> "RigidTransform2D":
        tx, ty = -(self.rotation().T @ np.array([self.tx, self.ty]))
        return RigidTransform2D(-self.theta, float(tx), float(ty))


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    convergence_tol: float = 1e-4
    max_correspondence_dist: float = 5.0
    resample_step: float = 2.0

    def __post_init__(self):
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise PreconditionError("max_iterations must be an integer >= 1")
        for name in ("convergence_tol", "max_correspondence_dist", "resample_step"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class IcpReport:
    transform: RigidTransform2D
    rms_history: List[float]
    iterations: int
    converged: bool
    pre_solve_rms: List[float] = field(default_factory=list)
    correspondence_counts: List[int] = field(default_factory=list)
    source_count: int = 0
    target_count: int = 0

    def iteration_table(self) -> pd.DataFrame:
        return pd.DataFrame({
            "iteration": range(1, self.iterations + 1),
            "correspondences": self.correspondence_counts,
            "rms_before": self.pre_solve_rms,
            "rms_after": self.rms_history,
        })


def resample_polyline(polyline: Sequence[Tuple[float, float]], step: float) -> np.ndarray:
    """
    Densify a polyline at fixed arc-length spacing.

    Args:
        polyline: At least 2 (x, y) vertices
        step: Spacing in meters

    Returns:
        (n, 2) array of points at s = 0, step, 2*step, ... plus the last vertex
    """
    if not step > 0:
        raise PreconditionError("resample step must be positive")
    points = np.asarray(polyline, dtype=float).reshape(-1, 2)
    if len(points) < 2:
        raise PreconditionError("polyline needs at least 2 vertices")
    cumulative = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(points, axis=0).T))])
    length = cumulative[-1]
    stations = np.arange(int(math.floor(length / step)) + 1) * step
    stations = stations[stations < length - 1e-12]
    stations = np.append(stations, length)
    return np.column_stack([
        np.interp(stations, cumulative, points[:, 0]),
        np.interp(stations, cumulative, points[:, 1]),
    ])


def _solve_arrays(source: np.ndarray, target: np.ndarray) -> RigidTransform2D:
    if len(source) < 2:
        raise DegenerateInputError(f"need at least 2 pairs, got {len(source)}")
    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    a = source - source_mean
    b = target - target_mean
    if np.max(np.hypot(a[:, 0], a[:, 1])) < 1e-12:
        raise DegenerateInputError("source points are all coincident")
    sin_sum = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    cos_sum = float(np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]))
    theta = math.atan2(sin_sum, cos_sum)
    rotated = RigidTransform2D(theta).apply(source_mean[None, :])[0]
    tx, ty = target_mean - rotated
    return RigidTransform2D(theta, float(tx), float(ty))


def solve_rigid_2d(pairs) -> RigidTransform2D:
    """
    Closed-form least-squares rigid transform between corresponded points.

    Args:
        pairs: Sequence of (source_point, target_point)

    Returns:
        Transform minimising the sum of squared residuals
    """
    pairs = np.asarray(pairs, dtype=float)
    if pairs.size == 0:
        raise DegenerateInputError("need at least 2 pairs, got 0")
    pairs = pairs.reshape(-1, 2, 2)
    return _solve_arrays(pairs[:, 0, :], pairs[:, 1, :])


class TargetIndex:
    """Nearest-neighbour index over target xy points."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float).reshape(-1, 2)
        self.tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def find_correspondences(
        self,
        queries: np.ndarray,
        max_dist: float,
        workers: int = 1,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Nearest target per query within max_dist.

        Equidistant neighbours resolve to the lowest target index, so the
        result does not depend on workers.

        Returns:
            (query indices, target indices, distances) of surviving pairs
        """
        n = len(self.points)
        k = min(NEIGHBOR_CANDIDATES, n)
        distances, indices = self.tree.query(
            queries, k=k, distance_upper_bound=max_dist * (1 + 1e-9), workers=workers
        )
        distances = np.asarray(distances).reshape(len(queries), k)
        indices = np.asarray(indices).reshape(len(queries), k)

        best = distances[:, :1]
        tied = (distances == best) & (indices < n)
        chosen = np.where(tied, indices, n).min(axis=1)
        nearest = best[:, 0]
        # every candidate tied: more equidistant targets may lie beyond k
        saturated = np.flatnonzero(tied[:, -1])
        for row in saturated:
            found = self.tree.query_ball_point(queries[row], r=float(nearest[row]))
            chosen[row] = min(found)
        keep = (chosen < n) & (nearest <= max_dist)
        return np.flatnonzero(keep), chosen[keep], nearest[keep]


def icp_align(
    source,
    target: Union[PointCloud, np.ndarray],
    params: Optional[IcpParams] = None,
    workers: int = 1,
) -> IcpReport:
    """
    Point-to-point ICP in the plane.

    Each iteration pairs every transformed source point with its nearest
    target, drops pairs beyond max_correspondence_dist, solves the rigid step
    and composes it. Stops once |previous rms - rms after solve| falls below
    convergence_tol; the first iteration compares against its own pre-solve
    rms.

    Args:
        source: (n, 2) source points
        target: Target cloud (xy used) or (m, 2) array
        params: ICP parameters
        workers: Threads for the correspondence search

    Returns:
        IcpReport with the cumulative transform and per-iteration history
    """
    params = params or IcpParams()
    source = np.asarray(source, dtype=float).reshape(-1, 2)
    target_xy = target.xy if isinstance(target, PointCloud) else np.asarray(target, dtype=float)[:, :2]
    if len(source) < 2:
        raise PreconditionError("ICP needs at least 2 source points")
    if len(target_xy) < 2:
        raise PreconditionError("ICP needs at least 2 target points")

    index = TargetIndex(target_xy)
    transform = RigidTransform2D.identity()
    history: List[float] = []
    pre_solve: List[float] = []
    counts: List[int] = []
    previous: Optional[float] = None
    converged = False

    for iteration in range(1, params.max_iterations + 1):
        moved = transform.apply(source)
        src_idx, tgt_idx, distances = index.find_correspondences(
            moved, params.max_correspondence_dist, workers
        )
        if len(src_idx) < 2:
            raise NoOverlapError(
                f"iteration {iteration}: {len(src_idx)} correspondence(s) within "
                f"{params.max_correspondence_dist} m"
            )
        matched_source = moved[src_idx]
        matched_target = target_xy[tgt_idx]
        rms_before = float(np.sqrt(np.mean(distances ** 2)))

        step = _solve_arrays(matched_source, matched_target)
        transform = step.compose(transform)
        residual = step.apply(matched_source) - matched_target
        rms_after = float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))

        history.append(rms_after)
        pre_solve.append(rms_before)
        counts.append(len(src_idx))
        logger.debug(f"ICP iteration {iteration}: {len(src_idx)} pairs, "
                     f"rms {rms_before:.6f} -> {rms_after:.6f}")

        reference = rms_before if previous is None else previous
        if abs(reference - rms_after) < params.convergence_tol:
            converged = True
            break
        previous = rms_after

    if not converged:
        logger.warning(f"ICP did not converge in {params.max_iterations} iterations")

    return IcpReport(
        transform=transform,
        rms_history=history,
        iterations=len(history),
        converged=converged,
        pre_solve_rms=pre_solve,
        correspondence_counts=counts,
        source_count=len(source),
        target_count=len(target_xy),
    )


def ground_band(cloud: PointCloud, dem: Dem, band: float = 0.3) -> np.ndarray:
    """xy of cloud points within +-band meters of the DEM surface."""
    if len(cloud) == 0:
        return np.zeros((0, 2))
    heights = sample_heights(dem, cloud.points[:, 0], cloud.points[:, 1], strict=False)
    with np.errstate(invalid="ignore"):
        near = np.isfinite(heights) & (np.abs(cloud.points[:, 2] - heights) <= band)
    return cloud.xy[near]


def transform_graph(graph: RoadGraph, transform: RigidTransform2D) -> RoadGraph:
    """Apply one rigid transform to every vertex and node of a graph."""
    edges = []
    for edge in graph.edges:
        moved = transform.apply(edge.polyline)
        edges.append(RoadEdge(
            id=edge.id,
            polyline=tuple((float(x), float(y)) for x, y in moved),
            tags=dict(edge.tags),
            node_ids=edge.node_ids,
        ))
    nodes = {}
    if graph.nodes:
        node_ids = list(graph.nodes)
        moved = transform.apply([graph.nodes[n] for n in node_ids])
        nodes = {n: (float(x), float(y)) for n, (x, y) in zip(node_ids, moved)}
    return RoadGraph(edges=tuple(edges), nodes=nodes, frame=graph.frame)


def fine_tune_graph(
    graph: RoadGraph,
    ground: PointCloud,
    dem: Dem,
    params: Optional[IcpParams] = None,
    band: float = 0.3,
    workers: int = 1,
) -> Tuple[RoadGraph, IcpReport]:
    """
    Align a road graph to the near-ground band of a cloud.

    Args:
        graph: Road graph to adjust
        ground: LiDAR cloud in the graph's frame
        dem: Ground surface used to select the near-ground band
        params: ICP parameters
        band: Half-height of the ground band in meters
        workers: Threads for the correspondence search

    Returns:
        (adjusted graph, ICP report)
    """
    params = params or IcpParams()
    if len(graph.edges) == 0:
        raise PreconditionError("road graph is empty")
    if len(ground) == 0:
        raise PreconditionError("ground cloud is empty")

    target = ground_band(ground, dem, band)
    if len(target) < 2:
        raise NoOverlapError(f"only {len(target)} cloud point(s) within {band} m of the DEM")

    source = np.vstack([
        resample_polyline(edge.polyline, params.resample_step)
        for edge in sorted(graph.edges, key=lambda e: e.id)
    ])
    logger.info(f"Fine-tuning {len(graph.edges)} edges: "
                f"{len(source)} source points, {len(target)} ground-band points")
    report = icp_align(source, target, params, workers)
    t = report.transform
    logger.info(f"Recovered transform theta={t.theta:.6f} rad, tx={t.tx:.4f} m, ty={t.ty:.4f} m")
    return transform_graph(graph, report.transform), report


def render_report(report: IcpReport) -> str:
    """Plain-text fine-tuning report."""
    table = report.iteration_table().to_string(
        index=False,
        float_format=lambda v: f"{v:.9f}",
    )
    return render("finetune_report.txt.j2", report=report, table=table)
