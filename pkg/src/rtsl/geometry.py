"""Grid mathematics: distances, shape rasterization, vision discs, pathfinding.

The board is a grid of unit cells; cell ``(i, j)`` spans ``[i, i+1) x [j, j+1)``
with the origin at the top-left corner, x growing rightward and y downward.  A
cell belongs to a shape iff the cell's center point lies inside or on the
boundary of the shape.  Oriented shapes (rectangle, cones) take a heading, the
unit vector from the acting entity toward its aim point; point, circle, and
square ignore it (squares stay axis-aligned).

Cones: the forward cone is the triangle with its apex at the cast center and
its base, of the given length, at ``height`` along the heading; the backward
cone is the same triangle reflected through the cast center.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Iterable

from rtsl.definition import ShapeSpec

__all__ = [
    "Cell",
    "OrientedShape",
    "distance",
    "containing_cell",
    "cell_center",
    "cells_in_shape",
    "cells_in_vision",
    "find_path",
    "find_path_cells",
]

Cell = tuple[int, int]
Point = tuple[float, float]

_EPS = 1e-9
SQRT2 = math.sqrt(2.0)


def distance(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def containing_cell(pos: Point) -> Cell:
    # a grid box is identified by its lowest x and y coordinate
    return (math.floor(pos[0]), math.floor(pos[1]))


def cell_center(cell: Cell) -> Point:
    return (cell[0] + 0.5, cell[1] + 0.5)


@dataclass(frozen=True)
class OrientedShape:
    spec: ShapeSpec
    center: Point
    heading: Point = (1.0, 0.0)


def _unit(vec: Point) -> Point:
    norm = math.hypot(vec[0], vec[1])
    if norm < _EPS:
        return (1.0, 0.0)
    return (vec[0] / norm, vec[1] / norm)


def _cells_in_box(lo_x: float, lo_y: float, hi_x: float, hi_y: float) -> Iterable[Cell]:
    for i in range(math.floor(lo_x - 1), math.ceil(hi_x) + 1):
        for j in range(math.floor(lo_y - 1), math.ceil(hi_y) + 1):
            yield (i, j)


def _in_triangle(p: Point, a: Point, b: Point, c: Point, eps: float) -> bool:
    def cross(o: Point, u: Point, v: Point) -> float:
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])

    s1 = cross(a, b, p)
    s2 = cross(b, c, p)
    s3 = cross(c, a, p)
    return (s1 >= -eps and s2 >= -eps and s3 >= -eps) or (s1 <= eps and s2 <= eps and s3 <= eps)


def cells_in_shape(shape: OrientedShape) -> set[Cell]:
    """All cells whose center lies inside or on the boundary of the shape."""
    spec = shape.spec
    cx, cy = shape.center
    kind = spec.kind

    if kind == ShapeSpec.POINT:
        return {containing_cell(shape.center)}

    if kind == ShapeSpec.CIRCLE:
        r = spec.dims[0]
        out = set()
        for cell in _cells_in_box(cx - r, cy - r, cx + r, cy + r):
            if distance(cell_center(cell), shape.center) <= r + _EPS:
                out.add(cell)
        return out

    if kind == ShapeSpec.SQUARE:
        half = spec.dims[0] / 2.0
        out = set()
        for cell in _cells_in_box(cx - half, cy - half, cx + half, cy + half):
            ux, uy = cell_center(cell)
            if abs(ux - cx) <= half + _EPS and abs(uy - cy) <= half + _EPS:
                out.add(cell)
        return out

    u = _unit(shape.heading)
    v = (-u[1], u[0])

    if kind == ShapeSpec.RECTANGLE:
        # first size number: the side facing the actor (along v); second: depth
        across, along = spec.dims
        corners = [
            (cx + sv * v[0] * across / 2 + su * u[0] * along / 2,
             cy + sv * v[1] * across / 2 + su * u[1] * along / 2)
            for sv in (-1, 1)
            for su in (-1, 1)
        ]
        lo_x, hi_x = min(p[0] for p in corners), max(p[0] for p in corners)
        lo_y, hi_y = min(p[1] for p in corners), max(p[1] for p in corners)
        eps = _EPS * max(1.0, across, along)
        out = set()
        for cell in _cells_in_box(lo_x, lo_y, hi_x, hi_y):
            px, py = cell_center(cell)
            dx, dy = px - cx, py - cy
            if abs(dx * v[0] + dy * v[1]) <= across / 2 + eps and abs(dx * u[0] + dy * u[1]) <= along / 2 + eps:
                out.add(cell)
        return out

    if kind in (ShapeSpec.F_CONE, ShapeSpec.B_CONE):
        height, base = spec.dims
        direction = u if kind == ShapeSpec.F_CONE else (-u[0], -u[1])
        apex = (cx, cy)
        base_mid = (cx + direction[0] * height, cy + direction[1] * height)
        b1 = (base_mid[0] + v[0] * base / 2, base_mid[1] + v[1] * base / 2)
        b2 = (base_mid[0] - v[0] * base / 2, base_mid[1] - v[1] * base / 2)
        lo_x = min(apex[0], b1[0], b2[0])
        hi_x = max(apex[0], b1[0], b2[0])
        lo_y = min(apex[1], b1[1], b2[1])
        hi_y = max(apex[1], b1[1], b2[1])
        eps = _EPS * max(1.0, height, base)
        out = set()
        for cell in _cells_in_box(lo_x, lo_y, hi_x, hi_y):
            if _in_triangle(cell_center(cell), apex, b1, b2, eps):
                out.add(cell)
        return out

    raise ValueError(f"unknown shape kind {kind!r}")


def cells_in_vision(center: Point, vision: float) -> set[Cell]:
    """Cells inside the vision disc; monotone in the vision radius."""
    return cells_in_shape(OrientedShape(ShapeSpec(ShapeSpec.CIRCLE, (vision,)), center))


# --- pathfinding -------------------------------------------------------------------

_STEPS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def find_path_cells(
    passable: Callable[[Cell], bool], start: Cell, goal: Cell
) -> tuple[list[Cell], float] | None:
    """Shortest 8-connected cell path with sqrt(2) diagonals.

    Diagonal steps may not cut corners: both orthogonal neighbors must be
    passable.  Ties between equal-cost frontier cells break toward the
    lexicographically smallest (x, y), making the result deterministic.
    Returns (cells from start to goal inclusive, total cost), or None when the
    goal is unreachable.  The start cell's own passability is not checked, so
    an entity may leave a cell it could not re-enter.
    """
    if start == goal:
        return [start], 0.0
    if not passable(goal):
        return None

    def heuristic(cell: Cell) -> float:
        dx, dy = abs(cell[0] - goal[0]), abs(cell[1] - goal[1])
        return max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)

    dist: dict[Cell, float] = {start: 0.0}
    parent: dict[Cell, Cell] = {}
    heap: list[tuple[float, int, int]] = [(heuristic(start), start[0], start[1])]
    closed: set[Cell] = set()
    while heap:
        _, x, y = heapq.heappop(heap)
        cell = (x, y)
        if cell in closed:
            continue
        closed.add(cell)
        if cell == goal:
            path = [cell]
            while path[-1] != start:
                path.append(parent[path[-1]])
            path.reverse()
            return path, dist[goal]
        base = dist[cell]
        for dx, dy in _STEPS:
            nxt = (x + dx, y + dy)
            if nxt in closed or not passable(nxt):
                continue
            if dx and dy and not (passable((x + dx, y)) and passable((x, y + dy))):
                continue
            cost = base + (SQRT2 if dx and dy else 1.0)
            if cost < dist.get(nxt, math.inf) - _EPS:
                dist[nxt] = cost
                parent[nxt] = cell
                heapq.heappush(heap, (cost + heuristic(nxt), nxt[0], nxt[1]))
    return None


def find_path(
    passable: Callable[[Cell], bool], start: Point, goal: Point
) -> list[Point] | None:
    """Waypoints from a start position to a goal position, or None if unreachable.

    Intermediate waypoints are cell centers; the final waypoint is the exact
    goal position.  An empty list means the entity is already there.
    """
    if start == goal:
        return []
    start_cell = containing_cell(start)
    goal_cell = containing_cell(goal)
    if start_cell == goal_cell:
        return [goal]
    found = find_path_cells(passable, start_cell, goal_cell)
    if found is None:
        return None
    cells, _ = found
    waypoints: list[Point] = [cell_center(c) for c in cells[1:-1]]
    waypoints.append(goal)
    return waypoints
