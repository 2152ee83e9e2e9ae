"""Paired partial/complete grid datasets produced by virtual scanning.

Directory layout::

    <out_dir>/manifest.txt
    <out_dir>/<category>/<model_id>/<view_index>.partial.vxg
    <out_dir>/<category>/<model_id>/<view_index>.full.vxg

``manifest.txt`` starts with ``# key=value`` header lines (format, resolution,
split, digest, config) followed by one tab-separated record per pair::

    partial_path  full_path  category  model_id  view_index  roll  pitch  yaw

Paths are relative to the manifest's directory; angles use ``repr`` so they
round-trip exactly.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import meshscan
from .meshscan import PinholeCamera, ViewPose
from .voxelgrid import dilate, load_grid, save_grid

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"
FORMAT_TAG = "recgan3d-manifest/1"
SPLITS = ("train", "test")
_FIELDS = ("partial_path", "full_path", "category", "model_id", "view_index", "roll", "pitch", "yaw")


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    resolution: int = 32
    n_per_axis: int = 5
    camera: PinholeCamera = field(default_factory=PinholeCamera)
    solid: bool = False

    def canonical(self):
        d = asdict(self)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    @classmethod
    def from_canonical(cls, text):
        d = json.loads(text)
        d["camera"] = PinholeCamera(**d["camera"])
        return cls(**d)


@dataclass(frozen=True)
class SamplePair:
    partial_path: str
    full_path: str
    category: str
    model_id: str
    view_index: int
    angles: ViewPose

    @property
    def key(self):
        return (self.model_id, self.view_index)


@dataclass
class Manifest:
    resolution: int
    split: str
    digest: str
    records: list
    config: SynthConfig | None = None
    root: Path | None = None
    failures: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DatasetError(f"split must be one of {SPLITS}, got {self.split!r}")
        seen = set()
        for r in self.records:
            if r.key in seen:
                raise DatasetError(f"duplicate record {r.key}")
            seen.add(r.key)

    def path_of(self, rel):
        return (self.root or Path(".")) / rel

    def categories(self):
        return sorted({r.category for r in self.records})

    def subset(self, categories):
        keep = set(categories)
        return Manifest(self.resolution, self.split, self.digest,
                        [r for r in self.records if r.category in keep], self.config, self.root)

    def content_hash(self):
        return hashlib.sha256(manifest_text(self).encode()).hexdigest()


# -- manifest I/O -------------------------------------------------------------------


def manifest_text(manifest):
    lines = [f"# format={FORMAT_TAG}",
             f"# resolution={manifest.resolution}",
             f"# split={manifest.split}",
             f"# digest={manifest.digest}"]
    if manifest.config is not None:
        lines.append(f"# config={manifest.config.canonical()}")
    for r in manifest.records:
        a = r.angles
        lines.append("\t".join([r.partial_path, r.full_path, r.category, r.model_id, str(r.view_index),
                                repr(a.roll), repr(a.pitch), repr(a.yaw)]))
    return "\n".join(lines) + "\n"


def write_manifest(manifest, directory):
    path = Path(directory) / MANIFEST_NAME
    path.write_text(manifest_text(manifest))
    return path


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"no manifest at {path}")
    header, records = {}, []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key] = value
            continue
        parts = line.split("\t")
        if len(parts) != len(_FIELDS):
            raise DatasetError(f"{path}:{lineno}: expected {len(_FIELDS)} fields, got {len(parts)}")
        records.append(SamplePair(parts[0], parts[1], parts[2], parts[3], int(parts[4]),
                                  ViewPose(float(parts[5]), float(parts[6]), float(parts[7]))))
    if header.get("format") != FORMAT_TAG:
        raise DatasetError(f"{path}: unrecognized manifest format {header.get('format')!r}")
    config = SynthConfig.from_canonical(header["config"]) if "config" in header else None
    m = Manifest(int(header["resolution"]), header["split"], header["digest"], records, config, path.parent)
    if config is not None and config.digest() != m.digest:
        raise DatasetError(f"{path}: digest {m.digest} does not match its recorded config")
    return m


# -- synthesis ---------------------------------------------------------------------


@dataclass(frozen=True)
class MeshSource:
    """One input model: either an OBJ path or an in-memory mesh."""

    category: str
    model_id: str
    path: str | None = None
    mesh: meshscan.TriangleMesh | None = None

    def load(self):
        mesh = self.mesh if self.mesh is not None else meshscan.read_obj(self.path)
        return meshscan.normalize_mesh(mesh)


def containment_violations(partial, full):
    """Occupied partial voxels lying outside the 1-voxel dilation of ``full``."""
    outside = partial.values.astype(bool) & ~dilate(full, 1).values.astype(bool)
    return int(np.count_nonzero(outside))


def _synthesize_model(src, config, out_dir):
    mesh = src.load()
    rel_dir = Path(src.category) / src.model_id
    (Path(out_dir) / rel_dir).mkdir(parents=True, exist_ok=True)
    records = []
    for view_index, pose in enumerate(meshscan.make_view_poses(config.n_per_axis)):
        _, partial, full = meshscan.scan(mesh, pose, config.camera, config.resolution, solid=config.solid)
        bad = containment_violations(partial, full)
        if bad:
            log.warning("%s/%s view %d: %d partial voxels outside dilated ground truth",
                        src.category, src.model_id, view_index, bad)
        p_rel = (rel_dir / f"{view_index}.partial.vxg").as_posix()
        f_rel = (rel_dir / f"{view_index}.full.vxg").as_posix()
        save_grid(partial, Path(out_dir) / p_rel)
        save_grid(full, Path(out_dir) / f_rel)
        records.append(SamplePair(p_rel, f_rel, src.category, src.model_id, view_index, pose))
    return records


def _synthesize_safe(args):
    src, config, out_dir = args
    try:
        return src, _synthesize_model(src, config, out_dir), None
    except Exception as exc:  # noqa: BLE001 -- broken CAD models must not stop the run
        return src, None, f"{type(exc).__name__}: {exc}"


def synthesize_dataset(sources, split, config, out_dir, jobs=1):
    """Scan every model from every pose and write grids plus ``manifest.txt``.

    A model that fails to load or scan is logged and skipped; if none succeed
    a :class:`DatasetError` is raised.
    """
    if not sources:
        raise DatasetError("no meshes given")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(src, config, str(out_dir)) for src in sources]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_synthesize_safe, tasks))
    else:
        results = [_synthesize_safe(t) for t in tasks]
    records, failures = [], []
    for src, recs, err in results:
        if err is not None:
            log.error("model %s/%s failed: %s", src.category, src.model_id, err)
            failures.append((src.category, src.model_id, err))
        else:
            records.extend(recs)
    if not records:
        raise DatasetError(f"all {len(sources)} models failed; first error: {failures[0][2]}")
    manifest = Manifest(config.resolution, split, config.digest(), records, config, out_dir, failures)
    write_manifest(manifest, out_dir)
    return manifest


def sources_from_dir(mesh_dir, category=None):
    """OBJ files under ``mesh_dir``; the category is the parent directory name
    for nested layouts (``<dir>/<category>/<model>.obj``) or ``category``."""
    mesh_dir = Path(mesh_dir)
    if not mesh_dir.is_dir():
        raise DatasetError(f"mesh directory not found: {mesh_dir}")
    out = []
    for p in sorted(mesh_dir.rglob("*.obj")):
        cat = category or (p.parent.name if p.parent != mesh_dir else "default")
        out.append(MeshSource(cat, p.stem, path=str(p)))
    if not out:
        raise DatasetError(f"no .obj files under {mesh_dir}")
    return out


def procedural_sources(kind, count, seed, prefix=None):
    """``count`` jittered procedural models of one kind; ``seed`` fixes the shapes."""
    rng = np.random.default_rng(seed)
    return [MeshSource(kind, f"{prefix or kind}_{i:04d}",
                       mesh=meshscan.make_procedural_mesh(kind, meshscan.random_params(kind, rng)))
            for i in range(count)]


# -- loading -------------------------------------------------------------------------


def load_batch(manifest, indices):
    """Dense (B, N, N, N) uint8 arrays of partial and full grids, in index order."""
    n = manifest.resolution
    partial = np.zeros((len(indices), n, n, n), dtype=np.uint8)
    full = np.zeros_like(partial)
    for slot, i in enumerate(indices):
        rec = manifest.records[i]
        for arr, rel in ((partial, rec.partial_path), (full, rec.full_path)):
            path = manifest.path_of(rel)
            try:
                grid = load_grid(path)
            except FileNotFoundError:
                raise DatasetError(f"record {i} ({rec.category}/{rec.model_id} view {rec.view_index}): "
                                   f"missing file {path}") from None
            if grid.dims != (n, n, n):
                raise DatasetError(f"{path}: dims {grid.dims} do not match manifest resolution {n}")
            arr[slot] = grid.values
    return partial, full


def load_all(manifest):
    return load_batch(manifest, list(range(len(manifest))))


def shuffled_epoch(manifest, seed):
    n = manifest if isinstance(manifest, int) else len(manifest)
    return np.random.default_rng(seed).permutation(n)
