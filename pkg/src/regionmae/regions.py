"""Graph-based image segmentation and binary region maps.

Segmentation follows the classic greedy sorted-edge scheme: an 8-connected
grid graph with Euclidean RGB edge weights, merged with a size-adaptive
threshold min(Int(C1) + scale/|C1|, Int(C2) + scale/|C2|), then a post-pass
that absorbs components below min_size. Edge order is tie-broken by
(weight, source, target) so results are platform-deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter


@dataclass
class FhParams:
    scale: float
    min_size: int = 1
    sigma: float = 0.8

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.min_size < 1:
            raise ValueError(f"min_size must be >= 1, got {self.min_size}")


@dataclass
class LabelMap:
    labels: np.ndarray  # [H, W] int32, contiguous ids 0..num_components-1

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def num_components(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0


@dataclass
class RegionSet:
    maps: list  # list of [H, W] uint8 binary masks
    source: str = "fh"  # "fh" | "external"
    scales: list = field(default_factory=list)


class DisjointSet:
    def __init__(self, n):
        self.parent = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


def grid_edges(image):
    """8-connected edges as (weight, source, target) with source < target,
    weights = Euclidean RGB distance. Returned sorted by (weight, src, tgt)."""
    img = np.asarray(image, dtype=np.float64)
    H, W, _ = img.shape
    ids = np.arange(H * W).reshape(H, W)
    pairs = []
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        ys, ye = (0, H - dy) if dy else (0, H)
        xs, xe = (max(0, -dx), min(W, W - dx))
        a = ids[ys:ye, xs:xe].reshape(-1)
        b = ids[ys + dy : ye + dy, xs + dx : xe + dx].reshape(-1)
        diff = img.reshape(-1, 3)[a] - img.reshape(-1, 3)[b]
        w = np.sqrt((diff * diff).sum(axis=1))
        src = np.minimum(a, b)
        tgt = np.maximum(a, b)
        pairs.append(np.stack([w, src.astype(np.float64), tgt.astype(np.float64)], axis=1))
    edges = np.concatenate(pairs, axis=0)
    order = np.lexsort((edges[:, 2], edges[:, 1], edges[:, 0]))
    return edges[order]


def fh_segment(image, params: FhParams, rng=None) -> LabelMap:
    """Segment an RGB image (values in [0,1]) into connected components."""
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ValueError("empty image")
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    H, W, _ = img.shape
    if params.sigma > 0:
        img = np.stack([gaussian_filter(img[..., c], params.sigma) for c in range(3)], axis=-1)
    edges = grid_edges(img)

    n = H * W
    ds = DisjointSet(n)
    internal = np.zeros(n, dtype=np.float64)  # max internal edge weight per root
    for w, a, b in edges:
        a, b = int(a), int(b)
        ra, rb = ds.find(a), ds.find(b)
        if ra == rb:
            continue
        thr_a = internal[ra] + params.scale / ds.size[ra]
        thr_b = internal[rb] + params.scale / ds.size[rb]
        if w <= min(thr_a, thr_b):
            root = ds.union(ra, rb)
            internal[root] = max(internal[ra], internal[rb], w)

    # absorb undersized components, in the same edge order
    if params.min_size > 1:
        for w, a, b in edges:
            ra, rb = ds.find(int(a)), ds.find(int(b))
            if ra != rb and (ds.size[ra] < params.min_size or ds.size[rb] < params.min_size):
                ds.union(ra, rb)

    roots = np.array([ds.find(i) for i in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return LabelMap(labels=labels.reshape(H, W).astype(np.int32))


def regions_from_labels(lm: LabelMap, min_pixels=1) -> RegionSet:
    """One binary map per component; components below min_pixels are dropped."""
    maps = []
    for lab in range(lm.num_components):
        mask = (lm.labels == lab).astype(np.uint8)
        if int(mask.sum()) >= min_pixels:
            maps.append(mask)
    return RegionSet(maps=maps, source="fh")


def multi_scale_regions(image, scales, rng=None, sigma=0.8) -> RegionSet:
    """Union of per-scale segmentations; min cluster size equals the scale.
    Exact duplicate maps across scales are removed."""
    if not scales:
        raise ValueError("scales must be non-empty")
    maps, seen = [], set()
    for scale in scales:
        lm = fh_segment(image, FhParams(scale=scale, min_size=max(1, int(scale)), sigma=sigma), rng)
        for m in regions_from_labels(lm).maps:
            key = m.tobytes()
            if key not in seen:
                seen.add(key)
                maps.append(m)
    return RegionSet(maps=maps, source="fh", scales=list(scales))


# ---------------------------------------------------------------------------
# file IO: PGM label map + JSON sidecar


def labels_from_regions(rs: RegionSet):
    """Collapse a region set back to a label map (last map wins on overlap)."""
    if not rs.maps:
        raise ValueError("empty RegionSet")
    labels = np.zeros_like(rs.maps[0], dtype=np.int32)
    for i, m in enumerate(rs.maps):
        labels[m > 0] = i
    return labels


def write_region_file(path, rs: RegionSet):
    """P5 PGM holding the label map (16-bit when >255 components) + sidecar."""
    path = Path(path)
    labels = labels_from_regions(rs)
    n = len(rs.maps)
    maxval = 255 if n <= 255 else 65535
    H, W = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n{maxval}\n".encode("ascii"))
        if maxval == 255:
            fh.write(labels.astype(np.uint8).tobytes())
        else:
            fh.write(labels.astype(">u2").tobytes())
    sidecar = {"num_components": n, "source": rs.source, "scales": rs.scales}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def read_region_file(path) -> RegionSet:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise IOError(f"{path}: bad magic {magic!r} at byte 0")
        dims = fh.readline().split()
        maxval = int(fh.readline())
        W, H = int(dims[0]), int(dims[1])
        dtype = np.uint8 if maxval <= 255 else ">u2"
        itemsize = 1 if maxval <= 255 else 2
        offset = fh.tell()
        raw = fh.read(H * W * itemsize)
        if len(raw) != H * W * itemsize:
            raise IOError(f"{path}: truncated pixel data at byte {offset + len(raw)}")
        labels = np.frombuffer(raw, dtype=dtype).reshape(H, W).astype(np.int32)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    n = meta.get("num_components", int(labels.max()) + 1)
    if int(labels.max()) + 1 > n:
        raise IOError(f"{path}: label ids exceed num_components={n}")
    maps = [(labels == i).astype(np.uint8) for i in range(n)]
    maps = [m for m in maps if m.any()]
    return RegionSet(maps=maps, source=meta.get("source", "external"), scales=meta.get("scales", []))
