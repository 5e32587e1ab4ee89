"""Polygons: validation, generators and file I/O."""

import csv
import json
from pathlib import Path

import numpy as np


class Polygon:
    """A simple polygon with counterclockwise complex vertices.

    Clockwise input is reversed on construction; ``reversed`` records that so
    callers can map indices back to the file order.
    """

    def __init__(self, vertices, check_simple=True):
        z = np.asarray(vertices)
        if z.ndim == 2 and z.shape[1] == 2:
            z = z[:, 0] + 1j * z[:, 1]
        z = np.asarray(z, dtype=complex).ravel()
        if z.size >= 2 and z[0] == z[-1]:
            z = z[:-1]
        if z.size < 4:
            raise ValueError(f"polygon needs at least 4 vertices, got {z.size}")
        if np.any(np.abs(np.roll(z, -1) - z) == 0):
            raise ValueError("consecutive vertices must be distinct")
        self.reversed = signed_area(z) < 0
        if self.reversed:
            z = z[::-1].copy()
        if check_simple and not is_simple(z):
            raise ValueError("polygon is self-intersecting")
        self.vertices = z

    def __len__(self):
        return self.vertices.size

    @property
    def area(self):
        return signed_area(self.vertices)

    def subset(self, idx):
        return Polygon(self.vertices[np.asarray(idx)], check_simple=False)

    def transformed(self, scale=1.0, rotation=0.0, shift=0.0):
        """Similarity image c e^{i rotation} z + shift."""
        return Polygon(scale * np.exp(1j * rotation) * self.vertices + shift, check_simple=False)


def signed_area(z):
    x, y = z.real, z.imag
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_cross(p1, p2, p3, p4):
    """Proper intersection test for segments p1p2 and p3p4 (vectorised over p3, p4)."""
    def orient(a, b, c):
        return np.sign(((b - a).conjugate() * (c - a)).imag)

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def is_simple(z):
    """True when no two non-adjacent edges cross."""
    n = z.size
    a, b = z, np.roll(z, -1)
    for i in range(n):
        # edges j not adjacent to edge i
        j = np.array([k for k in range(n) if k not in (i, (i - 1) % n, (i + 1) % n)])
        if j.size and np.any(_segments_cross(a[i], b[i], a[j], b[j])):
            return False
    return True


def ellipse(aspect, n=100, rotation=0.0, semi_minor=1.0):
    """Ellipse with semi-axes (aspect * semi_minor, semi_minor) sampled uniformly in parameter.

    Vertex m is R e^{i rotation} (a cos t_m + i b sin t_m) with t_m = 2 pi m / n;
    the rotation is about the centre.
    """
    t = 2.0 * np.pi * np.arange(n) / n
    z = aspect * semi_minor * np.cos(t) + 1j * semi_minor * np.sin(t)
    return Polygon(np.exp(1j * rotation) * z, check_simple=False)


def regular_polygon(n, radius=1.0, phase=0.0):
    t = 2.0 * np.pi * np.arange(n) / n + phase
    return Polygon(radius * np.exp(1j * t), check_simple=False)


def read_shape(path):
    """Read vertices from CSV (x, y per line) or JSON ([[x, y], ...])."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text)
        if isinstance(data, dict):
            data = data["vertices"]
        pts = np.asarray(data, dtype=float)
    else:
        rows = []
        for row in csv.reader(text.splitlines()):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(row[0]), float(row[1])])
            except (ValueError, IndexError):
                # header line
                if rows:
                    raise
        pts = np.asarray(rows, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"{path}: expected rows of (x, y)")
    return Polygon(pts)


def write_shape(path, poly):
    path = Path(path)
    pts = np.column_stack([poly.vertices.real, poly.vertices.imag])
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(pts.tolist()))
    else:
        np.savetxt(path, pts, delimiter=",", header="x,y", comments="")
