"""Marching Cubes case tables (classic corner/edge numbering).

Cube corners (unit cell, x fastest):

      7--------6          z
     /|       /|          |
    4--------5 |          +--y
    | 3------|-2         /
    |/       |/         x
    0--------1

corner 0=(0,0,0) 1=(1,0,0) 2=(1,1,0) 3=(0,1,0) 4=(0,0,1) 5=(1,0,1)
6=(1,1,1) 7=(0,1,1); edges 0..11 connect the corner pairs in EDGE_CORNERS.

Case index bit i is set when corner i's value is below the isolevel
("inside"). Instead of transcribing the published 256x16 listing, the table
is generated here by marching-squares segmentation of each cube face chained
into oriented loops; on every face both adjacent cells derive the same
segments from the same four corner signs, so extraction is crack-free by
construction, including the ambiguous saddle faces. Triangles are wound so
that right-hand-rule normals point toward the positive (outside) region.
"""

from __future__ import annotations

import numpy as np

CORNER_POS = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
], dtype=np.int64)

EDGE_CORNERS = np.array([
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
], dtype=np.int64)

# corners of each face in counterclockwise order seen from outside the cube
_FACES = (
    (0, 3, 2, 1),   # z = 0
    (4, 5, 6, 7),   # z = 1
    (0, 1, 5, 4),   # y = 0
    (2, 3, 7, 6),   # y = 1
    (0, 4, 7, 3),   # x = 0
    (1, 2, 6, 5),   # x = 1
)

_EDGE_OF_PAIR = {}
for _e, (_a, _b) in enumerate(EDGE_CORNERS):
    _EDGE_OF_PAIR[(int(_a), int(_b))] = _e
    _EDGE_OF_PAIR[(int(_b), int(_a))] = _e


def _face_segments(face, inside):
    """Directed crossing-to-crossing segments of one face (inside kept left)."""
    crossings = []  # (edge id, is_exit) in ccw boundary order
    for i in range(4):
        a, b = face[i], face[(i + 1) % 4]
        if inside[a] != inside[b]:
            crossings.append((_EDGE_OF_PAIR[(a, b)], inside[a]))
    # crossing kinds alternate along the boundary; an exit pairs with the
    # enter immediately before it (clockwise neighbor)
    segments = []
    m = len(crossings)
    for i, (edge, is_exit) in enumerate(crossings):
        if is_exit:
            prev_edge, prev_exit = crossings[(i - 1) % m]
            assert not prev_exit
            segments.append((edge, prev_edge))
    return segments


def _loops_for_case(case: int):
    inside = [(case >> i) & 1 == 1 for i in range(8)]
    start_of = {}
    for face in _FACES:
        for s, e in _face_segments(face, inside):
            start_of[s] = e
    loops = []
    seen = set()
    for s in sorted(start_of):
        if s in seen:
            continue
        loop = [s]
        seen.add(s)
        nxt = start_of[s]
        while nxt != s:
            loop.append(nxt)
            seen.add(nxt)
            nxt = start_of[nxt]
        loops.append(loop)
    return loops


def _build_tables():
    tri_rows = []
    for case in range(256):
        tris = []
        for loop in _loops_for_case(case):
            for i in range(1, len(loop) - 1):
                tris.extend((loop[0], loop[i + 1], loop[i]))
        row = tris + [-1] * (16 - len(tris))
        tri_rows.append(row)
    tri = np.asarray(tri_rows, dtype=np.int8)
    edge = np.zeros(256, dtype=np.int32)
    for case in range(256):
        for e in tri[case]:
            if e >= 0:
                edge[case] |= 1 << int(e)
    return edge, tri


EDGE_TABLE, TRI_TABLE = _build_tables()
