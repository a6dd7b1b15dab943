"""Association file format: bearings, candidate edges, optional ground truth.

A single self-describing JSON document with an explicit version field.
Bearing components are stored as decimal strings produced by ``repr(float)``,
which round-trip bit-exactly through JSON.  Camera blocks may carry pixel
coordinates with intrinsics instead of (or in addition to) bearings; pixels
are converted on load via ``normalize(K^-1 @ [u, v, 1])``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .assoc import AssociationGraph, Edge, GroundTruth
from .geometry import RelativePose

FORMAT_VERSION = 1

logger = logging.getLogger(__name__)


class InputFormatError(ValueError):
    """Malformed association file; carries the offending field path."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass
class CameraBlock:
    bearings: np.ndarray | None = None
    pixels: np.ndarray | None = None
    intrinsics: dict | None = None

    def resolve_bearings(self, where: str) -> np.ndarray:
        if self.bearings is not None:
            return self.bearings
        if self.pixels is None or self.intrinsics is None:
            raise InputFormatError(
                where, "camera needs bearings, or pixels with intrinsics")
        K = np.array([
            [self.intrinsics["fx"], 0.0, self.intrinsics["cx"]],
            [0.0, self.intrinsics["fy"], self.intrinsics["cy"]],
            [0.0, 0.0, 1.0],
        ])
        homog = np.column_stack([self.pixels, np.ones(len(self.pixels))])
        rays = homog @ np.linalg.inv(K).T
        return rays / np.linalg.norm(rays, axis=1, keepdims=True)


@dataclass
class AssociationFile:
    left: CameraBlock
    right: CameraBlock
    edges: list[tuple[int, int, float]]
    gt_rotation: np.ndarray | None = None
    gt_translation: np.ndarray | None = None
    gt_matches: list[tuple[int, int]] | None = None
    version: int = FORMAT_VERSION

    def to_graph(self) -> AssociationGraph:
        lb = self.left.resolve_bearings("cameras.left")
        rb = self.right.resolve_bearings("cameras.right")
        edges = [Edge(i, j, s) for i, j, s in self.edges]
        return AssociationGraph(lb, rb, edges)

    def ground_truth(self) -> GroundTruth | None:
        if self.gt_rotation is None and self.gt_matches is None:
            return None
        pose = None
        if self.gt_rotation is not None:
            pose = RelativePose(self.gt_rotation, self.gt_translation)
        return GroundTruth(pose=pose,
                           matches=frozenset(self.gt_matches or []))


def _bearings_to_json(bearings: np.ndarray) -> list[list[str]]:
    return [[repr(float(c)) for c in row] for row in bearings]


def _camera_to_json(block: CameraBlock) -> dict:
    out: dict = {}
    if block.bearings is not None:
        out["bearings"] = _bearings_to_json(block.bearings)
    if block.pixels is not None:
        out["pixels"] = [[float(u), float(v)] for u, v in block.pixels]
    if block.intrinsics is not None:
        out["intrinsics"] = {k: float(block.intrinsics[k])
                             for k in ("fx", "fy", "cx", "cy")}
    return out


def save_association_file(path, afile: AssociationFile) -> None:
    doc = {
        "version": afile.version,
        "cameras": {
            "left": _camera_to_json(afile.left),
            "right": _camera_to_json(afile.right),
        },
        "edges": [[int(i), int(j), float(s)] for i, j, s in afile.edges],
    }
    if afile.gt_rotation is not None or afile.gt_matches is not None:
        gt: dict = {}
        if afile.gt_rotation is not None:
            gt["rotation"] = [repr(float(c)) for c in
                              np.asarray(afile.gt_rotation).ravel()]
            gt["translation"] = [repr(float(c)) for c in
                                 np.asarray(afile.gt_translation).ravel()]
        if afile.gt_matches is not None:
            gt["matches"] = [[int(i), int(j)] for i, j in afile.gt_matches]
        doc["ground_truth"] = gt
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _parse_bearings(raw, where: str) -> np.ndarray:
    try:
        arr = np.array([[float(c) for c in row] for row in raw], dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputFormatError(where, f"bad bearing entry ({exc})") from None
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputFormatError(where, "bearings must be rows of 3 components")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0.0):
        raise InputFormatError(where, "zero-norm bearing")
    drift = float(np.max(np.abs(norms - 1.0)))
    if drift > 1e-6:
        logger.warning("%s: bearings off unit norm by %.3e, renormalizing",
                       where, drift)
    if drift <= 1e-12:
        # Already unit to machine precision; dividing would perturb the
        # stored values and break bit-exact round trips.
        return arr
    return arr / norms[:, None]


def _parse_camera(raw, where: str) -> CameraBlock:
    if not isinstance(raw, dict):
        raise InputFormatError(where, "camera block must be an object")
    block = CameraBlock()
    if "bearings" in raw:
        block.bearings = _parse_bearings(raw["bearings"], where + ".bearings")
    if "pixels" in raw:
        try:
            block.pixels = np.array(raw["pixels"], dtype=float).reshape(-1, 2)
        except ValueError as exc:
            raise InputFormatError(where + ".pixels", str(exc)) from None
    if "intrinsics" in raw:
        intr = raw["intrinsics"]
        missing = [k for k in ("fx", "fy", "cx", "cy") if k not in intr]
        if missing:
            raise InputFormatError(where + ".intrinsics",
                                   f"missing {', '.join(missing)}")
        block.intrinsics = {k: float(intr[k]) for k in ("fx", "fy", "cx", "cy")}
    if block.bearings is None and block.pixels is None:
        raise InputFormatError(where, "camera has neither bearings nor pixels")
    return block


def load_association_file(path) -> AssociationFile:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputFormatError("document", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputFormatError("document", "top level must be an object")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise InputFormatError("version", f"unsupported version {version!r}")
    cams = doc.get("cameras")
    if not isinstance(cams, dict) or "left" not in cams or "right" not in cams:
        raise InputFormatError("cameras", "need 'left' and 'right' blocks")
    left = _parse_camera(cams["left"], "cameras.left")
    right = _parse_camera(cams["right"], "cameras.right")

    n_left = len(left.bearings if left.bearings is not None else left.pixels)
    n_right = len(right.bearings if right.bearings is not None else right.pixels)
    edges = []
    raw_edges = doc.get("edges")
    if not isinstance(raw_edges, list):
        raise InputFormatError("edges", "must be a list")
    for idx, row in enumerate(raw_edges):
        where = f"edges[{idx}]"
        try:
            i, j, s = int(row[0]), int(row[1]), float(row[2])
        except (TypeError, ValueError, IndexError):
            raise InputFormatError(where, "expected [i, j, similarity]") from None
        if not 0 <= i < n_left:
            raise InputFormatError(where, f"left index {i} out of range")
        if not 0 <= j < n_right:
            raise InputFormatError(where, f"right index {j} out of range")
        if not -1.0 - 1e-9 <= s <= 1.0 + 1e-9:
            raise InputFormatError(where, f"similarity {s} outside [-1, 1]")
        edges.append((i, j, s))

    gt_rot = gt_t = gt_matches = None
    if "ground_truth" in doc:
        gt = doc["ground_truth"]
        if "rotation" in gt:
            try:
                gt_rot = np.array([float(c) for c in gt["rotation"]],
                                  dtype=float).reshape(3, 3)
                gt_t = np.array([float(c) for c in gt["translation"]],
                                dtype=float).reshape(3)
            except (TypeError, ValueError, KeyError) as exc:
                raise InputFormatError("ground_truth", str(exc)) from None
        if "matches" in gt:
            gt_matches = [(int(i), int(j)) for i, j in gt["matches"]]
            for i, j in gt_matches:
                if not (0 <= i < n_left and 0 <= j < n_right):
                    raise InputFormatError("ground_truth.matches",
                                           f"pair ({i}, {j}) out of range")
    return AssociationFile(left=left, right=right, edges=edges,
                           gt_rotation=gt_rot, gt_translation=gt_t,
                           gt_matches=gt_matches, version=version)
