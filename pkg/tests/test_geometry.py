"""Tests for grid geometry: rasterization, vision, pathfinding.

The rasterization oracle scans every cell of the board and asks shapely (for
polygonal shapes) or exact lattice arithmetic (for discs) whether the cell
center is covered, independently of the production bbox-scan implementation.
"""

from __future__ import annotations

import heapq
import math
import random

import pytest
from shapely.geometry import Point as ShapelyPoint
from shapely.geometry import Polygon

from rtsl.definition import ShapeSpec
from rtsl.geometry import (
    OrientedShape,
    cells_in_shape,
    cells_in_vision,
    containing_cell,
    distance,
    find_path,
    find_path_cells,
)

SQRT2 = math.sqrt(2)


class TestDistance:
    def test_3_4_5(self):
        assert distance((0, 0), (3, 4)) == 5

    def test_identity(self):
        assert distance((2, 2), (2, 2)) == 0

    def test_diagonal(self):
        assert distance((0, 0), (1, 1)) == pytest.approx(math.sqrt(2), abs=1e-9)


class TestShapeExamples:
    def test_point_covers_containing_cell(self):
        shape = OrientedShape(ShapeSpec(ShapeSpec.POINT), (4.5, 4.5))
        assert cells_in_shape(shape) == {(4, 4)}

    def test_square_5_any_heading(self):
        expected = {(i, j) for i in range(8, 13) for j in range(8, 13)}
        for heading in [(1, 0), (0, 1), (0.6, 0.8), (-1, -1)]:
            shape = OrientedShape(ShapeSpec(ShapeSpec.SQUARE, (5,)), (10.5, 10.5), heading)
            assert cells_in_shape(shape) == expected

    def test_circle_radius_5_is_81_cells(self):
        shape = OrientedShape(ShapeSpec(ShapeSpec.CIRCLE, (5,)), (10.5, 10.5))
        assert len(cells_in_shape(shape)) == 81


class TestVision:
    def test_zero_vision_self_cell(self):
        assert cells_in_vision((3.5, 3.5), 0) == {(3, 3)}

    def test_vision_one_plus_shape(self):
        cells = cells_in_vision((120.5, 120.5), 1)
        assert cells == {(120, 120), (119, 120), (121, 120), (120, 119), (120, 121)}

    def test_vision_five_is_81(self):
        assert len(cells_in_vision((64.5, 64.5), 5)) == 81

    def test_monotone_in_radius(self):
        rng = random.Random(3)
        for _ in range(30):
            center = (rng.uniform(5, 20), rng.uniform(5, 20))
            r1 = rng.uniform(0, 6)
            r2 = r1 + rng.uniform(0, 4)
            assert cells_in_vision(center, r1) <= cells_in_vision(center, r2)


def _oracle_cells(shape: OrientedShape, board: int = 64) -> set[tuple[int, int]]:
    spec, (cx, cy) = shape.spec, shape.center
    if spec.kind == ShapeSpec.POINT:
        return {containing_cell(shape.center)} & {(i, j) for i in range(board) for j in range(board)}
    if spec.kind == ShapeSpec.CIRCLE:
        r = spec.dims[0]
        return {
            (i, j)
            for i in range(board)
            for j in range(board)
            if (i + 0.5 - cx) ** 2 + (j + 0.5 - cy) ** 2 <= r * r + 1e-9
        }
    norm = math.hypot(*shape.heading) or 1.0
    u = (shape.heading[0] / norm, shape.heading[1] / norm)
    v = (-u[1], u[0])
    if spec.kind == ShapeSpec.SQUARE:
        half = spec.dims[0] / 2
        poly = Polygon(
            [(cx - half, cy - half), (cx + half, cy - half), (cx + half, cy + half), (cx - half, cy + half)]
        )
    elif spec.kind == ShapeSpec.RECTANGLE:
        across, along = spec.dims
        poly = Polygon(
            [
                (cx + sv * v[0] * across / 2 + su * u[0] * along / 2,
                 cy + sv * v[1] * across / 2 + su * u[1] * along / 2)
                for sv, su in [(-1, -1), (-1, 1), (1, 1), (1, -1)]
            ]
        )
    else:
        height, base = spec.dims
        d = u if spec.kind == ShapeSpec.F_CONE else (-u[0], -u[1])
        mid = (cx + d[0] * height, cy + d[1] * height)
        poly = Polygon(
            [
                (cx, cy),
                (mid[0] + v[0] * base / 2, mid[1] + v[1] * base / 2),
                (mid[0] - v[0] * base / 2, mid[1] - v[1] * base / 2),
            ]
        )
    fat = poly.buffer(1e-9)
    return {
        (i, j) for i in range(board) for j in range(board) if fat.covers(ShapelyPoint(i + 0.5, j + 0.5))
    }


class TestRasterizationOracle:
    def test_500_random_shapes_match_oracle(self):
        rng = random.Random(42)
        board = {(i, j) for i in range(64) for j in range(64)}
        kinds = [
            ShapeSpec.POINT,
            ShapeSpec.SQUARE,
            ShapeSpec.CIRCLE,
            ShapeSpec.RECTANGLE,
            ShapeSpec.F_CONE,
            ShapeSpec.B_CONE,
        ]
        for i in range(500):
            kind = kinds[i % len(kinds)]
            if kind == ShapeSpec.POINT:
                dims: tuple[float, ...] = ()
            elif kind in (ShapeSpec.SQUARE, ShapeSpec.CIRCLE):
                dims = (rng.uniform(0.5, 9),)
            else:
                dims = (rng.uniform(0.5, 9), rng.uniform(0.5, 9))
            angle = rng.uniform(0, 2 * math.pi)
            shape = OrientedShape(
                ShapeSpec(kind, dims),
                (rng.uniform(10, 54), rng.uniform(10, 54)),
                (math.cos(angle), math.sin(angle)),
            )
            assert cells_in_shape(shape) & board == _oracle_cells(shape), f"shape #{i}: {shape}"


def _rot90(cell, center):
    # +90 degrees about an integer-aligned center maps cell centers to cell centers
    cx, cy = center
    x, y = cell[0] + 0.5, cell[1] + 0.5
    return containing_cell((cx - (y - cy), cy + (x - cx)))


class TestOrientationProperties:
    @pytest.mark.parametrize("kind", [ShapeSpec.RECTANGLE, ShapeSpec.F_CONE])
    def test_rotating_heading_rotates_cells(self, kind):
        rng = random.Random(17)
        for _ in range(40):
            center = (float(rng.randint(20, 40)), float(rng.randint(20, 40)))
            dims = (rng.uniform(1, 8), rng.uniform(1, 8))
            base = cells_in_shape(OrientedShape(ShapeSpec(kind, dims), center, (1, 0)))
            rotated = cells_in_shape(OrientedShape(ShapeSpec(kind, dims), center, (0, 1)))
            assert {_rot90(c, center) for c in base} == rotated

    def test_backward_cone_is_reflected_forward_cone(self):
        rng = random.Random(23)
        for _ in range(40):
            center = (float(rng.randint(20, 40)), float(rng.randint(20, 40)))
            dims = (rng.uniform(1, 8), rng.uniform(1, 8))
            angle = rng.choice([0, math.pi / 2, math.pi / 4, 1.1])
            heading = (math.cos(angle), math.sin(angle))
            fwd = cells_in_shape(OrientedShape(ShapeSpec(ShapeSpec.F_CONE, dims), center, heading))
            back = cells_in_shape(OrientedShape(ShapeSpec(ShapeSpec.B_CONE, dims), center, heading))
            reflected = {
                containing_cell((2 * center[0] - (c[0] + 0.5), 2 * center[1] - (c[1] + 0.5))) for c in fwd
            }
            assert back == reflected


class TestFindPath:
    def test_already_there(self):
        assert find_path(lambda c: True, (0.5, 0.5), (0.5, 0.5)) == []

    def test_same_cell_different_point(self):
        assert find_path(lambda c: True, (0.2, 0.2), (0.8, 0.8)) == [(0.8, 0.8)]

    def test_open_3x3_diagonal(self):
        passable = lambda c: 0 <= c[0] < 3 and 0 <= c[1] < 3
        path = find_path(passable, (0.5, 0.5), (2.5, 2.5))
        assert path == [(1.5, 1.5), (2.5, 2.5)]
        cells, cost = find_path_cells(passable, (0, 0), (2, 2))
        assert cost == pytest.approx(2 * SQRT2, abs=1e-9)

    def test_unreachable_destination(self):
        passable = lambda c: 0 <= c[0] < 3 and 0 <= c[1] < 3 and c != (2, 2)
        assert find_path(passable, (0.5, 0.5), (2.5, 2.5)) is None

    def test_no_corner_cutting(self):
        # wall splits the 3x3 board except for a gap at (1, 2)
        blocked = {(1, 0), (1, 1)}
        passable = lambda c: 0 <= c[0] < 3 and 0 <= c[1] < 3 and c not in blocked
        found = find_path_cells(passable, (0, 0), (2, 0))
        assert found is not None
        cells, cost = found
        assert (1, 2) in cells
        # with corner cutting this would be 2 + 2*sqrt(2); the rule forces 6 steps
        assert cost == pytest.approx(6.0, abs=1e-9)

    def test_deterministic(self):
        rng = random.Random(9)
        blocked = {(rng.randrange(16), rng.randrange(16)) for _ in range(60)}
        passable = lambda c: 0 <= c[0] < 16 and 0 <= c[1] < 16 and c not in blocked
        one = find_path_cells(passable, (0, 0), (15, 15))
        two = find_path_cells(passable, (0, 0), (15, 15))
        assert one == two


def _dijkstra_cost(passable, start, goal) -> float | None:
    dist = {start: 0.0}
    heap = [(0.0, start)]
    seen = set()
    while heap:
        d, cell = heapq.heappop(heap)
        if cell in seen:
            continue
        seen.add(cell)
        if cell == goal:
            return d
        x, y = cell
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if not dx and not dy:
                    continue
                nxt = (x + dx, y + dy)
                if not passable(nxt):
                    continue
                if dx and dy and not (passable((x + dx, y)) and passable((x, y + dy))):
                    continue
                step = SQRT2 if dx and dy else 1.0
                if d + step < dist.get(nxt, math.inf) - 1e-12:
                    dist[nxt] = d + step
                    heapq.heappush(heap, (d + step, nxt))
    return None


class TestPathOptimality:
    def test_matches_dijkstra_on_200_random_boards(self):
        rng = random.Random(77)
        for _ in range(200):
            blocked = {(rng.randrange(16), rng.randrange(16)) for _ in range(rng.randint(20, 90))}
            blocked.discard((0, 0))
            passable = lambda c: 0 <= c[0] < 16 and 0 <= c[1] < 16 and c not in blocked
            goal = (rng.randrange(16), rng.randrange(16))
            expected = None if goal in blocked else _dijkstra_cost(passable, (0, 0), goal)
            found = find_path_cells(passable, (0, 0), goal)
            if expected is None:
                assert found is None
            else:
                assert found is not None
                assert found[1] == pytest.approx(expected, abs=1e-9)
