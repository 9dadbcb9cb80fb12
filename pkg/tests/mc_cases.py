"""A crafted 20-line trajectory with hand-derived MC1/MC2/MC3 classifications.

B is a single point at the origin of its frame; each line translates it to the
centre of an isolated cluster of A points whose distances from that centre are
chosen by hand. All radii are 1, so the bounds are: collision 1.5, MC1 1.7,
MC2 2.0, MC3 2.8, active upper 2.9.
"""
import numpy as np

from ucvol.core import PointSet

AXES = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
SPACING = 40.0

# per cluster: (direction, distance) of each A point, id = 10 * cluster + k
CLUSTERS = [
    [1.6],                                                   # 0
    [1.8],                                                   # 1
    [1.6, 1.9, 2.5],                                         # 2
    [1.55, 1.6, 1.62, 1.64, 1.66, 1.68, 1.69, 1.58],         # 3: eight inside MC1
    [1.4, 1.6],                                              # 4: collision
    [3.0],                                                   # 5: outside every interval
    [2.85],                                                  # 6
    [2.1, 2.05],                                             # 7
    [1.6, 1.6],                                              # 8: tie
    [1.75, 1.8, 1.85, 1.9, 1.95, 2.1, 2.2],                  # 9
    ["diag", 1.6875, 1.6875, 1.6875, 1.6875, 1.6875, 1.6875],  # 10: seven-way exact tie
    [2.5, 2.7, 1.95],                                        # 11
    [10.0],                                                  # 12: far from everything
]
DIAG = (0.5625, 1.125, 1.125)  # length exactly 1.6875

LINES = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 2, 3, 9, 0, 7, 11, 8]


def _ids(c, ks):
    return tuple((10 * c + k, 0) for k in ks)


# hand classification; "collision" / "interval" mark rejected lines
EXPECTED = {
    0: {"MC1": _ids(0, [0]), "MC2": _ids(0, [0]), "MC3": _ids(0, [0])},
    1: {"MC1": _ids(1, [0]), "MC2": _ids(1, [0]), "MC3": _ids(1, [0])},
    2: {"MC1": _ids(2, [0]), "MC2": _ids(2, [0, 1]), "MC3": _ids(2, [0, 1, 2])},
    3: {v: _ids(3, [0, 7, 1, 2, 3, 4]) for v in ("MC1", "MC2", "MC3")},
    4: {v: "collision" for v in ("MC1", "MC2", "MC3")},
    5: {v: "interval" for v in ("MC1", "MC2", "MC3")},
    6: {"MC1": _ids(6, [0]), "MC2": _ids(6, [0]), "MC3": _ids(6, [0])},
    7: {"MC1": _ids(7, [1]), "MC2": _ids(7, [1]), "MC3": _ids(7, [0, 1])},
    8: {v: _ids(8, [0, 1]) for v in ("MC1", "MC2", "MC3")},
    9: {"MC1": _ids(9, [0]), "MC2": _ids(9, [0, 1, 2, 3, 4]), "MC3": _ids(9, [0, 1, 2, 3, 4, 5])},
    10: {v: _ids(10, [0, 1, 2, 3, 4, 5]) for v in ("MC1", "MC2", "MC3")},
    11: {"MC1": _ids(11, [2]), "MC2": _ids(11, [2]), "MC3": _ids(11, [0, 1, 2])},
    12: {v: "interval" for v in ("MC1", "MC2", "MC3")},
}


def build():
    pos, ids = [], []
    for c, dists in enumerate(CLUSTERS):
        centre = np.array([SPACING * c, 0.0, 0.0])
        axis = 0
        for k, d in enumerate(dists):
            if d == "diag":
                pos.append(centre + DIAG)
            else:
                pos.append(centre + d * np.array(AXES[axis % 6], dtype=float))
                axis += 1
            ids.append(10 * c + k)
    A = PointSet.from_arrays("A", np.array(pos), 1.0, ids=ids)
    B = PointSet.from_arrays("B", [[0.0, 0.0, 0.0]], 1.0)
    rng = np.random.default_rng(7)
    poses = np.array([[SPACING * c, 0.0, 0.0, *rng.uniform(0, 6.28, 3)] for c in LINES])
    return A, B, poses


def trajectory_text(poses) -> str:
    return "".join(" ".join(repr(float(x)) for x in p) + "\n" for p in poses)
