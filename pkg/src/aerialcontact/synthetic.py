"""Synthetic payload clouds and demonstrations for tests and demos."""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud
from .geom import Pose


def fibonacci_sphere(n: int, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    pts = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    return radius * pts + np.asarray(center, dtype=float)


def cylinder(n: int, radius: float, height: float, seed=0) -> np.ndarray:
    """Uniform random samples on the lateral surface of a z-axis cylinder."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-height / 2, height / 2, n)
    return np.stack([radius * np.cos(theta), radius * np.sin(theta), z], axis=1)


def plane_grid(size_x: float, size_y: float, spacing: float, z: float = 0.0) -> np.ndarray:
    xs = np.arange(-size_x / 2, size_x / 2 + 1e-12, spacing)
    ys = np.arange(-size_y / 2, size_y / 2 + 1e-12, spacing)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), np.full(X.size, z)], axis=1)


def open_box(size_x: float, size_y: float, height: float, spacing: float = 0.01,
             bottom: bool = False) -> np.ndarray:
    """Top face plus the four side walls of an axis-aligned box (top at z = 0).

    This is the view a camera above the payload gets; ``bottom`` closes it.
    """
    nx = max(int(round(size_x / spacing)), 1)
    ny = max(int(round(size_y / spacing)), 1)
    nz = max(int(round(height / spacing)), 1)
    xs = np.linspace(-size_x / 2, size_x / 2, nx + 1)
    ys = np.linspace(-size_y / 2, size_y / 2, ny + 1)
    zs = np.linspace(-height, 0.0, nz + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    faces = [np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)]
    if bottom:
        faces.append(np.stack([X.ravel(), Y.ravel(), np.full(X.size, -height)], axis=1))
    XZ, ZX = np.meshgrid(xs, zs[:-1], indexing="ij")
    for y in (-size_y / 2, size_y / 2):
        faces.append(np.stack([XZ.ravel(), np.full(XZ.size, y), ZX.ravel()], axis=1))
    YZ, ZY = np.meshgrid(ys[1:-1], zs[:-1], indexing="ij")
    for x in (-size_x / 2, size_x / 2):
        faces.append(np.stack([np.full(YZ.size, x), YZ.ravel(), ZY.ravel()], axis=1))
    return np.concatenate(faces)


def triangle_plate(side: float, thickness: float, spacing: float = 0.01) -> np.ndarray:
    """Equilateral triangular plate (top face and rim), centroid at the origin, top at z = 0."""
    verts = triangle_vertices(side)
    # barycentric grid over the top face
    n = max(int(round(side / spacing)), 1)
    pts = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            a, b = i / n, j / n
            pts.append(verts[0] + a * (verts[1] - verts[0]) + b * (verts[2] - verts[0]))
    top = np.array(pts)
    zs = np.linspace(-thickness, 0.0, max(int(round(thickness / spacing)), 1) + 1)[:-1]
    rim = []
    for a, b in ((0, 1), (1, 2), (2, 0)):
        t = np.linspace(0, 1, n + 1)[:-1]
        edge = verts[a] + t[:, None] * (verts[b] - verts[a])
        for z in zs:
            rim.append(edge + np.array([0.0, 0.0, z]))
    return np.concatenate([top, np.concatenate(rim)])


def triangle_vertices(side: float) -> np.ndarray:
    rad = side / np.sqrt(3.0)
    ang = np.deg2rad([90.0, 210.0, 330.0])
    return np.stack([rad * np.cos(ang), rad * np.sin(ang), np.zeros(3)], axis=1)


def hanging_drone(link: Pose, cable_length: float = 0.5) -> Pose:
    """Drone pose directly above its gripper link, level, at ``cable_length``."""
    return Pose(link.p + np.array([0.0, 0.0, cable_length]), [1.0, 0.0, 0.0, 0.0])


def box_top_demo(size=(0.4, 0.3, 0.1), spacing: float = 0.01, cable_length: float = 0.5):
    """A flat central contact on the top face of an open box.

    Returns ``(cloud, [(drone, link)])``.
    """
    cloud = PointCloud(open_box(*size, spacing=spacing))
    link = Pose([0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0])
    return cloud, [(hanging_drone(link, cable_length), link)]


def triangle_demo(side: float = 0.8, thickness: float = 0.05, inset: float = 0.2,
                  spacing: float = 0.01, cable_length: float = 0.5):
    """Three links near the corners of a triangular plate; returns ``(cloud, links)``."""
    cloud = PointCloud(triangle_plate(side, thickness, spacing))
    verts = triangle_vertices(side)
    links = []
    for v in verts:
        p = v - inset * v / np.linalg.norm(v)
        link = Pose(p, [1.0, 0.0, 0.0, 0.0])
        links.append((hanging_drone(link, cable_length), link))
    return cloud, links
