"""Point-cloud ingestion and surface-feature extraction.

A surface feature is a point with a body-fixed frame (principal direction
``k1``, ``normal x k1``, ``normal``) and the pair of principal curvature
magnitudes ``r = (r1, r2)`` with ``r1 >= r2 >= 0``.

Normals come from PCA over the k nearest neighbors. Curvatures come from a
least-squares quadric height field fitted in the PCA tangent frame.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    CloudParseError,
    DegenerateNeighborhoodError,
    EmptyCloudError,
    FitFailureError,
    NoContactError,
)
from .geom import Pose, matrix_to_quat

logger = logging.getLogger(__name__)

DEFAULT_K = 30
DEDUP_TOL = 1e-9
# r1 - r2 below max(abs, rel * r1) counts as umbilic; k1 then follows world x
UMBILIC_ABS = 0.05
UMBILIC_REL = 0.1
MAX_FIT_COND = 1e10

OK, DEGENERATE, FIT_FAILURE = 0, 1, 2


@dataclass(frozen=True, eq=False)
class SurfaceFeature:
    pose: Pose
    r: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(2)
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @property
    def normal(self) -> np.ndarray:
        return self.pose.rotation()[:, 2]


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Per-point features of a whole cloud, as parallel arrays.

    Rows whose ``status`` is not ``OK`` carry NaN geometry.
    """

    positions: np.ndarray
    quats: np.ndarray
    curvatures: np.ndarray
    normals: np.ndarray
    k1: np.ndarray
    status: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.status == OK

    def feature(self, i: int) -> SurfaceFeature:
        if self.status[i] == DEGENERATE:
            raise DegenerateNeighborhoodError(f"point {i}: neighborhood does not span a surface")
        if self.status[i] == FIT_FAILURE:
            raise FitFailureError(f"point {i}: quadric fit is ill-conditioned")
        return SurfaceFeature(Pose(self.positions[i], self.quats[i]), self.curvatures[i])


class PointCloud:
    """An immutable set of 3-D points with an optional sensor viewpoint.

    Exact duplicates (within 1e-9 m) are dropped on construction, keeping the
    first occurrence. ``orient_outward`` orients normals away from the
    centroid when no viewpoint is given, which suits closed objects.
    """

    def __init__(self, points, viewpoint=None, orient_outward: bool = False, dedup: bool = True):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyCloudError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        if dedup and len(pts) > 1:
            pairs = cKDTree(pts).query_pairs(DEDUP_TOL, output_type="ndarray")
            if len(pairs):
                keep = np.ones(len(pts), dtype=bool)
                keep[pairs.max(axis=1)] = False
                pts = pts[keep]
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        self._points = pts
        self.viewpoint = None if viewpoint is None else np.asarray(viewpoint, dtype=float).reshape(3)
        self.orient_outward = orient_outward
        self._tree = None
        self._features: dict[int, FeatureTable] = {}

    @property
    def points(self) -> np.ndarray:
        return self._points

    def __len__(self):
        return len(self._points)

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self._points)
        return self._tree

    @property
    def centroid(self) -> np.ndarray:
        return self._points.mean(axis=0)

    def features(self, k: int = DEFAULT_K) -> FeatureTable:
        """Features for every point, computed once per neighbor count and cached."""
        if k not in self._features:
            self._features[k] = compute_features(self, np.arange(len(self)), k)
        return self._features[k]

    def transformed(self, pose: Pose, scale: float = 1.0) -> "PointCloud":
        vp = None if self.viewpoint is None else pose.apply(scale * self.viewpoint)
        return PointCloud(pose.apply(scale * self._points), viewpoint=vp,
                          orient_outward=self.orient_outward, dedup=False)


# ---------------------------------------------------------------- file I/O

def _parse_float(tok: str, path, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise CloudParseError(f"{path}:{lineno}: cannot parse number {tok!r}") from None
    if not math.isfinite(v):
        raise CloudParseError(f"{path}:{lineno}: non-finite coordinate {tok!r}")
    return v


def _read_xyz(path, lines):
    pts = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 3:
            raise CloudParseError(f"{path}:{lineno}: expected 3 values, found {len(toks)}")
        pts.append([_parse_float(t, path, lineno) for t in toks])
    return pts


def _read_ply(path, lines):
    if not lines or lines[0].strip() != "ply":
        raise CloudParseError(f"{path}:1: missing 'ply' magic line")
    elements = []  # (name, count, [(prop_name, is_list)])
    fmt_seen = False
    body_start = None
    for lineno, raw in enumerate(lines[1:], 2):
        toks = raw.split()
        if not toks or toks[0] in ("comment", "obj_info"):
            continue
        if toks[0] == "format":
            if len(toks) < 3 or toks[1] != "ascii":
                raise CloudParseError(f"{path}:{lineno}: only 'format ascii 1.0' is supported")
            fmt_seen = True
        elif toks[0] == "element":
            if len(toks) != 3:
                raise CloudParseError(f"{path}:{lineno}: malformed element line")
            try:
                count = int(toks[2])
            except ValueError:
                raise CloudParseError(f"{path}:{lineno}: bad element count {toks[2]!r}") from None
            elements.append((toks[1], count, []))
        elif toks[0] == "property":
            if not elements:
                raise CloudParseError(f"{path}:{lineno}: property before any element")
            is_list = len(toks) > 1 and toks[1] == "list"
            elements[-1][2].append((toks[-1], is_list))
        elif toks[0] == "end_header":
            body_start = lineno
            break
        else:
            raise CloudParseError(f"{path}:{lineno}: unexpected header line {raw.strip()!r}")
    if not fmt_seen or body_start is None:
        raise CloudParseError(f"{path}: incomplete PLY header")

    pts = []
    cursor = body_start  # index into lines of the first body line
    for name, count, props in elements:
        if name != "vertex":
            cursor += count
            continue
        names = [p[0] for p in props]
        try:
            ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
        except ValueError:
            raise CloudParseError(f"{path}: vertex element lacks x/y/z properties") from None
        if any(is_list for _, is_list in props):
            raise CloudParseError(f"{path}: list properties on vertices are not supported")
        for n in range(count):
            lineno = cursor + n + 1
            if cursor + n >= len(lines):
                raise CloudParseError(f"{path}: expected {count} vertices, file ends at {n}")
            toks = lines[cursor + n].split()
            if len(toks) < len(props):
                raise CloudParseError(f"{path}:{lineno}: vertex {n} has {len(toks)} of {len(props)} values")
            pts.append([_parse_float(toks[i], path, lineno) for i in (ix, iy, iz)])
        cursor += count
    return pts


def load_cloud(path, fmt: str | None = None, viewpoint=None, orient_outward: bool = False) -> PointCloud:
    """Read an ASCII PLY (``ply-ascii``) or whitespace ``xyz-text`` cloud.

    The format is inferred from the suffix when ``fmt`` is None.
    """
    path = Path(path)
    if fmt is None:
        fmt = "ply-ascii" if path.suffix.lower() == ".ply" else "xyz-text"
    try:
        text = path.read_text()
    except OSError as exc:
        raise exc.__class__(f"cannot read cloud {path}: {exc.strerror}") from exc
    lines = text.splitlines()
    if fmt == "ply-ascii":
        pts = _read_ply(path, lines)
    elif fmt == "xyz-text":
        pts = _read_xyz(path, lines)
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")
    if not pts:
        raise EmptyCloudError(f"{path}: no points")
    return PointCloud(np.array(pts), viewpoint=viewpoint, orient_outward=orient_outward)


def save_cloud(path, cloud: PointCloud | np.ndarray, fmt: str | None = None) -> None:
    path = Path(path)
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    if fmt is None:
        fmt = "ply-ascii" if path.suffix.lower() == ".ply" else "xyz-text"
    rows = "\n".join(f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in pts)
    if fmt == "ply-ascii":
        header = (f"ply\nformat ascii 1.0\nelement vertex {len(pts)}\n"
                  "property float x\nproperty float y\nproperty float z\nend_header\n")
        path.write_text(header + rows + "\n")
    else:
        path.write_text(rows + "\n")


# ------------------------------------------------------- feature extraction

def _orient_normals(n, p, cloud: PointCloud):
    if cloud.viewpoint is not None:
        s = np.einsum("ij,ij->i", n, cloud.viewpoint - p)
    elif cloud.orient_outward:
        s = np.einsum("ij,ij->i", n, p - cloud.centroid)
    else:
        # +z hemisphere, ties broken toward +x then +y
        s = np.where(np.abs(n[:, 2]) > 1e-9, n[:, 2],
                     np.where(np.abs(n[:, 0]) > 1e-9, n[:, 0], n[:, 1]))
    return np.where((s < 0)[:, None], -n, n)


def _tangent_reference(n):
    """World +x projected onto the tangent plane, or +y where x is near-normal."""
    ref = np.where((np.abs(n[:, 0]) < 0.9)[:, None], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    t = ref - np.einsum("ij,ij->i", ref, n)[:, None] * n
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def compute_features(cloud: PointCloud, indices, k: int = DEFAULT_K) -> FeatureTable:
    """Batched normal, curvature and frame estimation at ``indices``."""
    idx = np.asarray(indices, dtype=int).reshape(-1)
    pts = cloud.points
    if k < 6:
        raise ValueError("need k >= 6 neighbors for the quadric fit")
    if len(pts) < k:
        raise DegenerateNeighborhoodError(f"cloud has {len(pts)} points, fewer than k={k}")
    m = len(idx)
    p = pts[idx]
    _, nbr = cloud.tree.query(p, k=k)
    nb = pts[nbr]  # (m, k, 3)

    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = (evals[:, 2] <= 1e-24) | (evals[:, 1] <= 1e-10 * scale)

    n = _orient_normals(evecs[:, :, 0], p, cloud)
    e1 = evecs[:, :, 2]
    e1 = e1 - np.einsum("ij,ij->i", e1, n)[:, None] * n
    e1 /= np.maximum(np.linalg.norm(e1, axis=1, keepdims=True), 1e-300)
    e2 = np.cross(n, e1)

    d = nb - p[:, None, :]
    u = np.einsum("mki,mi->mk", d, e1)
    v = np.einsum("mki,mi->mk", d, e2)
    h = np.einsum("mki,mi->mk", d, n)
    s = np.maximum(np.max(np.hypot(u, v), axis=1), 1e-300)[:, None]
    us, vs = u / s, v / s
    A = np.stack([us * us, us * vs, vs * vs, us, vs, np.ones_like(us)], axis=-1)
    U, sv, Vt = np.linalg.svd(A, full_matrices=False)
    cond = sv[:, 0] / np.maximum(sv[:, -1], 1e-300)
    fit_fail = ~degenerate & (cond > MAX_FIT_COND)
    sv_inv = np.where(sv > sv[:, :1] / MAX_FIT_COND, 1.0 / np.maximum(sv, 1e-300), 0.0)
    coef = np.einsum("mji,mj,mkj,mk->mi", Vt, sv_inv, U, h)
    s1 = s[:, 0]
    a, b, c = coef[:, 0] / s1**2, coef[:, 1] / s1**2, coef[:, 2] / s1**2
    gu, gv = coef[:, 3] / s1, coef[:, 4] / s1

    # shape operator I^-1 II of the Monge patch at the origin
    E, F, G = 1 + gu * gu, gu * gv, 1 + gv * gv
    W = np.sqrt(1 + gu * gu + gv * gv)
    L2, M2, N2 = 2 * a / W, b / W, 2 * c / W
    det_i = E * G - F * F
    S = np.empty((m, 2, 2))
    S[:, 0, 0] = (G * L2 - F * M2) / det_i
    S[:, 0, 1] = (G * M2 - F * N2) / det_i
    S[:, 1, 0] = (E * M2 - F * L2) / det_i
    S[:, 1, 1] = (E * N2 - F * M2) / det_i
    S = np.nan_to_num(S)
    lam, vec = np.linalg.eig(S)
    lam, vec = lam.real, vec.real
    order = np.argsort(-np.abs(lam), axis=1)
    rows = np.arange(m)
    lam1, lam2 = lam[rows, order[:, 0]], lam[rows, order[:, 1]]
    dir1 = vec[rows, :, order[:, 0]]  # parameter-space direction (du, dv)
    r = np.stack([np.abs(lam1), np.abs(lam2)], axis=1)

    k1 = dir1[:, :1] * e1 + dir1[:, 1:] * e2
    k1 /= np.maximum(np.linalg.norm(k1, axis=1, keepdims=True), 1e-300)
    umbilic = (r[:, 0] - r[:, 1]) <= np.maximum(UMBILIC_ABS, UMBILIC_REL * r[:, 0])
    k1 = np.where(umbilic[:, None], _tangent_reference(n), k1)
    k1 = k1 - np.einsum("ij,ij->i", k1, n)[:, None] * n
    k1 /= np.maximum(np.linalg.norm(k1, axis=1, keepdims=True), 1e-300)
    flip = np.where(np.abs(k1[:, 0]) > 1e-6, k1[:, 0] < 0, k1[:, 1] < 0)
    k1 = np.where(flip[:, None], -k1, k1)
    k2 = np.cross(n, k1)

    R = np.stack([k1, k2, n], axis=2)
    quats = matrix_to_quat(R)

    status = np.full(m, OK, dtype=np.int8)
    status[fit_fail] = FIT_FAILURE
    status[degenerate] = DEGENERATE
    bad = status != OK
    r[bad] = np.nan
    quats[bad] = np.nan
    k1[bad] = np.nan
    n = n.copy()
    n[degenerate] = np.nan
    return FeatureTable(positions=p, quats=quats, curvatures=r, normals=n, k1=k1, status=status)


def _single(cloud: PointCloud, index: int, k: int) -> FeatureTable:
    if not 0 <= index < len(cloud):
        raise IndexError(f"point index {index} out of range for {len(cloud)} points")
    if k in cloud._features:
        t = cloud._features[k]
        return FeatureTable(t.positions[[index]], t.quats[[index]], t.curvatures[[index]],
                            t.normals[[index]], t.k1[[index]], t.status[[index]])
    return compute_features(cloud, [index], k)


def estimate_normal(cloud: PointCloud, index: int, k: int = DEFAULT_K) -> np.ndarray:
    if k < 3:
        raise ValueError("need k >= 3 neighbors for a normal")
    if len(cloud) < k:
        raise DegenerateNeighborhoodError(f"cloud has {len(cloud)} points, fewer than k={k}")
    _, nbr = cloud.tree.query(cloud.points[index], k=k)
    nb = cloud.points[nbr]
    cov = np.cov(nb.T, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    if evals[2] <= 1e-24 or evals[1] <= 1e-10 * evals[2]:
        raise DegenerateNeighborhoodError(f"point {index}: neighborhood does not span a surface")
    return _orient_normals(evecs[None, :, 0], cloud.points[None, index], cloud)[0]


def principal_curvatures(cloud: PointCloud, index: int, k: int = DEFAULT_K):
    """Return ``(k1_dir, k2_dir, r)`` at a point; ``r = (r1, r2)`` with r1 >= r2."""
    t = _single(cloud, index, k)
    feat = t.feature(0)
    R = feat.pose.rotation()
    return R[:, 0], R[:, 1], feat.r


def surface_feature(cloud: PointCloud, index: int, k: int = DEFAULT_K) -> SurfaceFeature:
    return _single(cloud, index, k).feature(0)


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_contact_indices(cloud: PointCloud, center, contact_radius: float, n: int,
                           k: int = DEFAULT_K, seed=None) -> np.ndarray:
    center = np.asarray(center, dtype=float).reshape(3)
    cand = np.array(sorted(cloud.tree.query_ball_point(center, contact_radius)), dtype=int)
    if len(cand):
        cand = cand[cloud.features(k).valid[cand]]
    if len(cand) == 0:
        raise NoContactError(
            f"no usable cloud point within {contact_radius} m of {np.round(center, 4).tolist()}")
    rng = _as_rng(seed)
    return rng.choice(cand, size=n, replace=len(cand) < n)


def sample_contact_region(cloud: PointCloud, link_pose: Pose, contact_radius: float = 0.05,
                          n: int = 500, k: int = DEFAULT_K, seed=None) -> list[SurfaceFeature]:
    """Uniformly sample ``n`` features among points within ``contact_radius`` of the link."""
    idx = sample_contact_indices(cloud, link_pose.p, contact_radius, n, k, seed)
    table = cloud.features(k)
    return [table.feature(i) for i in idx]


def sample_task_indices(cloud: PointCloud, n: int, k: int = DEFAULT_K, seed=None,
                        max_retries: int = 10) -> np.ndarray:
    rng = _as_rng(seed)
    valid = cloud.features(k).valid
    idx = rng.integers(0, len(cloud), size=n)
    for _ in range(max_retries):
        bad = ~valid[idx]
        if not bad.any():
            break
        idx[bad] = rng.integers(0, len(cloud), size=int(bad.sum()))
    bad = ~valid[idx]
    if bad.any():
        logger.warning("skipping %d degenerate task features after %d retries", bad.sum(), max_retries)
        idx = idx[~bad]
    return idx


def sample_task_features(cloud: PointCloud, n: int = 50, k: int = DEFAULT_K, seed=None,
                         max_retries: int = 10) -> list[SurfaceFeature]:
    """``n`` features at uniformly random points; degenerate draws are redrawn."""
    table = cloud.features(k)
    return [table.feature(i) for i in sample_task_indices(cloud, n, k, seed, max_retries)]
