"""Primitive object models with surface samples and symmetry descriptors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError
from ..geometry import axis_angle

CLASS_COLORS = np.array(
    [
        [220, 60, 50],
        [60, 170, 70],
        [60, 90, 220],
        [230, 200, 40],
        [200, 80, 200],
        [60, 200, 210],
        [240, 140, 40],
        [150, 150, 150],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class Symmetry:
    """Rotational symmetry about ``axis`` (object frame).

    ``order`` is an integer n >= 2 for an n-fold discrete symmetry, or None
    for a continuous one.
    """

    axis: tuple[float, float, float]
    order: int | None = None

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64)
        if a.shape != (3,) or abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise InputError(f"symmetry axis {self.axis} must be a unit 3-vector")
        if self.order is not None and (int(self.order) != self.order or self.order < 2):
            raise InputError(f"discrete symmetry order must be an integer >= 2, got {self.order}")
        object.__setattr__(self, "axis", tuple(float(v) for v in a))

    @property
    def continuous(self) -> bool:
        return self.order is None

    def to_dict(self) -> dict:
        return {"axis": list(self.axis), "order": self.order}

    @classmethod
    def from_dict(cls, d: dict) -> Symmetry:
        return cls(tuple(d["axis"]), d.get("order"))


def symmetry_group(symmetries) -> list[np.ndarray]:
    """Finite group generated by the discrete symmetries (always contains I)."""
    gens = [axis_angle(s.axis, 2 * np.pi / s.order) for s in symmetries if not s.continuous]
    group = [np.eye(3)]
    frontier = [np.eye(3)]
    while frontier:
        nxt = []
        for g in frontier:
            for h in gens:
                m = g @ h
                if not any(np.allclose(m, e, atol=1e-9) for e in group):
                    group.append(m)
                    nxt.append(m)
        frontier = nxt
        if len(group) > 120:
            raise InputError("discrete symmetries do not generate a finite group")
    return group


@dataclass
class ObjectModel:
    class_id: int
    name: str
    kind: str
    params: dict
    points: np.ndarray
    normals: np.ndarray
    symmetries: list[Symmetry] = field(default_factory=list)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
            raise InputError("object model needs at least 4 points")
        centered = pts - pts.mean(0)
        if np.linalg.matrix_rank(centered, tol=1e-9) < 3:
            raise InputError("object model points are coplanar")

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.points, axis=1).max())

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def symmetry_group(self) -> list[np.ndarray]:
        return symmetry_group(self.symmetries)

    def spec(self) -> dict:
        return {
            "class_id": self.class_id,
            "name": self.name,
            "kind": self.kind,
            "params": dict(self.params),
            "symmetries": [s.to_dict() for s in self.symmetries],
        }


def _face_grid(n: int) -> np.ndarray:
    s = (np.arange(n) + 0.5) / n - 0.5
    u, v = np.meshgrid(s, s, indexing="ij")
    return np.stack([u.ravel(), v.ravel()], axis=1)


def _box_surface(dims, n: int) -> tuple[np.ndarray, np.ndarray]:
    dims = np.asarray(dims, dtype=np.float64)
    uv = _face_grid(n)
    pts, nrm = [], []
    for ax in range(3):
        others = [i for i in range(3) if i != ax]
        for sign in (-1.0, 1.0):
            p = np.zeros((len(uv), 3))
            p[:, others[0]] = uv[:, 0] * dims[others[0]]
            p[:, others[1]] = uv[:, 1] * dims[others[1]]
            p[:, ax] = sign * dims[ax] / 2
            nv = np.zeros(3)
            nv[ax] = sign
            pts.append(p)
            nrm.append(np.tile(nv, (len(p), 1)))
    return np.concatenate(pts), np.concatenate(nrm)


def box(class_id: int, dims=(0.16, 0.10, 0.06), n: int = 9, name: str = "box") -> ObjectModel:
    pts, nrm = _box_surface(dims, n)
    syms = [Symmetry((1.0, 0.0, 0.0), 2), Symmetry((0.0, 1.0, 0.0), 2), Symmetry((0.0, 0.0, 1.0), 2)]
    return ObjectModel(class_id, name, "box", {"dims": list(map(float, dims)), "n": n}, pts, nrm, syms)


def cube(class_id: int, side: float = 0.09, n: int = 9, name: str = "cube") -> ObjectModel:
    pts, nrm = _box_surface((side, side, side), n)
    syms = [Symmetry((1.0, 0.0, 0.0), 4), Symmetry((0.0, 1.0, 0.0), 4), Symmetry((0.0, 0.0, 1.0), 4)]
    return ObjectModel(class_id, name, "cube", {"side": float(side), "n": n}, pts, nrm, syms)


def cylinder(class_id: int, radius: float = 0.045, height: float = 0.14, n: int = 24, name: str = "cylinder") -> ObjectModel:
    theta = 2 * np.pi * np.arange(n) / n
    zs = ((np.arange(n // 2) + 0.5) / (n // 2) - 0.5) * height
    th, z = np.meshgrid(theta, zs, indexing="ij")
    side = np.stack([radius * np.cos(th).ravel(), radius * np.sin(th).ravel(), z.ravel()], 1)
    side_n = np.stack([np.cos(th).ravel(), np.sin(th).ravel(), np.zeros(th.size)], 1)
    rr = radius * (np.arange(3) + 0.5) / 3
    r2, t2 = np.meshgrid(rr, theta, indexing="ij")
    disc = np.stack([(r2 * np.cos(t2)).ravel(), (r2 * np.sin(t2)).ravel()], 1)
    caps, caps_n = [], []
    for sign in (-1.0, 1.0):
        caps.append(np.column_stack([disc, np.full(len(disc), sign * height / 2)]))
        caps_n.append(np.tile([0.0, 0.0, sign], (len(disc), 1)))
    pts = np.concatenate([side] + caps)
    nrm = np.concatenate([side_n] + caps_n)
    syms = [Symmetry((0.0, 0.0, 1.0), None), Symmetry((1.0, 0.0, 0.0), 2)]
    params = {"radius": float(radius), "height": float(height), "n": n}
    return ObjectModel(class_id, name, "cylinder", params, pts, nrm, syms)


def bracket(class_id: int, length: float = 0.15, leg: float = 0.11, width: float = 0.05,
            thickness: float = 0.03, n: int = 7, name: str = "bracket") -> ObjectModel:
    """L-shaped bracket: a horizontal slab plus a vertical leg at one end."""
    p1, n1 = _box_surface((length, width, thickness), n)
    p2, n2 = _box_surface((thickness, width, leg), n)
    p2 = p2 + np.array([length / 2 - thickness / 2, 0.0, leg / 2 + thickness / 2])
    pts = np.concatenate([p1, p2])
    pts = pts - pts.mean(0)
    params = {"length": float(length), "leg": float(leg), "width": float(width), "thickness": float(thickness), "n": n}
    return ObjectModel(class_id, name, "bracket", params, pts, np.concatenate([n1, n2]), [])


_BUILDERS = {"box": box, "cube": cube, "cylinder": cylinder, "bracket": bracket}
_ORDER = ("box", "cylinder", "bracket", "cube")


def build_model(spec: dict) -> ObjectModel:
    """Rebuild a model from :meth:`ObjectModel.spec` output."""
    kind = spec["kind"]
    if kind not in _BUILDERS:
        raise InputError(f"unknown primitive kind {kind!r}")
    model = _BUILDERS[kind](spec["class_id"], name=spec.get("name", kind), **spec.get("params", {}))
    if "symmetries" in spec:
        model.symmetries = [Symmetry.from_dict(s) for s in spec["symmetries"]]
    return model


def default_library(n_classes: int = 4) -> dict[int, ObjectModel]:
    """Class id -> model; kinds cycle box, cylinder, bracket, cube, later
    cycles scaled up slightly so every class is geometrically distinct."""
    lib = {}
    for cid in range(n_classes):
        kind = _ORDER[cid % len(_ORDER)]
        scale = 1.0 + 0.15 * (cid // len(_ORDER))
        if kind == "box":
            m = box(cid, dims=tuple(scale * np.array([0.16, 0.10, 0.06])), name=f"box{cid}")
        elif kind == "cylinder":
            m = cylinder(cid, radius=0.045 * scale, height=0.14 * scale, name=f"cylinder{cid}")
        elif kind == "bracket":
            m = bracket(cid, length=0.15 * scale, leg=0.11 * scale, name=f"bracket{cid}")
        else:
            m = cube(cid, side=0.09 * scale, name=f"cube{cid}")
        lib[cid] = m
    return lib

