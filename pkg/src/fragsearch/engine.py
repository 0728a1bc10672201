"""Search engine: fragment registry, distances, thresholds, queries.

Layers on the descriptor pipeline.  A :class:`FragmentStore` keeps a
registry of fragments on disk, computes per-property pairwise distance
matrices from their descriptors, calibrates per-property acceptance
thresholds from those matrices, and answers query-by-example searches
by intersecting the per-property accept sets, with a stepwise
relaxation knob to widen the net.  Every store section is covered by a
content hash so silent corruption is caught on open.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import STORE_FORMAT_VERSION
from .descriptors import (
    ALL_PROPERTIES,
    DESCRIPTOR_VERSION,
    VALID_CLASSES,
    DescribeParams,
    FragmentDescriptors,
    PropertyId,
    describe_fragment,
)
from .errors import (
    CalibrationRequiredError,
    InsufficientDataError,
    IntegrityError,
    PropertyNotEnabledError,
    StaleStoreError,
    StoreLockError,
    UnknownFragmentError,
    VersionMismatchError,
)
from .mesh import TriangleMesh, load_mesh, save_mesh
from .metrics import (
    SHAPE_COMPONENTS,
    combine_shape,
    product_score,
    robust_normalizer,
    shape_distance_components,
    simple_property_distance,
)

log = logging.getLogger(__name__)

DEFAULT_TARGET_FRACTION = 0.05  # nearest fraction a threshold should accept
DEFAULT_STEP_FRACTION = 0.03  # extra fraction admitted per relaxation step
MIN_CALIBRATION_FRAGMENTS = 21
DEFAULT_SHAPE_WEIGHTS = (1.0, 1.0, 1.0, 1.0)  # order of SHAPE_COMPONENTS

MATRIX_MAGIC = b"FRSMATRX"
MATRIX_FORMAT_VERSION = 1

FRAGMENTS_FILE = "fragments.json"
PARAMS_FILE = "params.json"
CALIBRATION_FILE = "calibration.json"
MANIFEST_FILE = "manifest.json"
MESH_DIR = "meshes"
DESC_DIR = "descriptors"
MATRIX_DIR = "matrices"
LOCK_FILE = ".lock"

_ID_PATTERN = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


# ---------------------------------------------------------------------------
# records and gating


@dataclass(frozen=True)
class FragmentRecord:
    """Registry entry for one fragment.

    ``mesh_path`` is relative to the store root and is filled in by
    :meth:`FragmentStore.add_fragment`.  ``group_label`` is free-form
    metadata (e.g. a known vessel assignment) that the engine never
    interprets.
    """

    fragment_id: str
    fragment_class: str
    mesh_path: str = ""
    collection: str = ""
    notes: str = ""
    group_label: str | None = None

    def __post_init__(self):
        if not _ID_PATTERN.match(self.fragment_id):
            raise ValueError(
                f"invalid fragment id {self.fragment_id!r}: use letters, "
                f"digits, '.', '_' or '-', starting with a letter or digit"
            )
        if self.fragment_class not in VALID_CLASSES:
            raise ValueError(
                f"unknown fragment class {self.fragment_class!r}; "
                f"expected one of {VALID_CLASSES}"
            )

    def to_dict(self) -> dict:
        return {
            "fragment_id": self.fragment_id,
            "fragment_class": self.fragment_class,
            "mesh_path": self.mesh_path,
            "collection": self.collection,
            "notes": self.notes,
            "group_label": self.group_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FragmentRecord":
        return cls(
            fragment_id=d["fragment_id"],
            fragment_class=d["fragment_class"],
            mesh_path=d.get("mesh_path", ""),
            collection=d.get("collection", ""),
            notes=d.get("notes", ""),
            group_label=d.get("group_label"),
        )


@lru_cache(maxsize=None)
def _gating_table() -> dict[str, frozenset[PropertyId]]:
    """Class-to-searchable-properties table, loaded from package data.

    The table is configuration, not code: edit ``data/gating.json`` to
    change which properties a fragment class exposes to queries.
    """
    text = (
        resources.files("fragsearch")
        .joinpath("data/gating.json")
        .read_text("utf-8")
    )
    raw = json.loads(text)
    return {
        cls: frozenset(PropertyId(p) for p in props)
        for cls, props in raw.items()
    }


def enabled_properties(fragment_class: str) -> frozenset[PropertyId]:
    """Properties that queries may filter on for this fragment class."""
    table = _gating_table()
    if fragment_class not in table:
        raise ValueError(
            f"unknown fragment class {fragment_class!r}; "
            f"expected one of {sorted(table)}"
        )
    return table[fragment_class]


# ---------------------------------------------------------------------------
# distance matrices


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric pairwise distances for one property over one id set.

    ``absent[i, j]`` marks pairs with no defined comparison (one side
    lacks the measurement).  Masked cells always carry the value 0.0
    and never satisfy a query filter.
    """

    property: PropertyId
    ids: tuple[str, ...]
    values: np.ndarray
    absent: np.ndarray

    def __post_init__(self):
        prop = PropertyId(self.property)
        ids = tuple(str(i) for i in self.ids)
        if len(set(ids)) != len(ids):
            raise ValueError("fragment ids must be unique")
        n = len(ids)
        values = np.ascontiguousarray(np.asarray(self.values, np.float64))
        absent = np.ascontiguousarray(np.asarray(self.absent, bool))
        if values.shape != (n, n) or absent.shape != (n, n):
            raise ValueError(
                f"need ({n}, {n}) values and mask, got "
                f"{values.shape} and {absent.shape}"
            )
        if not np.array_equal(absent, absent.T):
            raise ValueError("absent mask must be symmetric")
        values = np.where(absent, 0.0, values)
        if not np.array_equal(values, values.T, equal_nan=True):
            raise ValueError("distance matrix must be symmetric")
        if np.diag(values).any():
            raise ValueError("diagonal distances must be zero")
        present = values[~absent]
        if not np.isfinite(present).all():
            raise ValueError("unmasked distances must be finite")
        if (present < 0).any():
            raise ValueError("distances must be non-negative")
        values.flags.writeable = False
        absent.flags.writeable = False
        object.__setattr__(self, "property", prop)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "absent", absent)
        object.__setattr__(self, "_index", {f: k for k, f in enumerate(ids)})

    def index(self, fragment_id: str) -> int:
        try:
            return self._index[fragment_id]
        except KeyError:
            raise UnknownFragmentError(
                f"fragment '{fragment_id}' is not in the "
                f"'{self.property}' distance matrix"
            ) from None

    def save(self, path) -> None:
        """Write the matrix in its binary container format.

        Layout: magic, u32 format version, length-prefixed property id,
        u32 N, N length-prefixed fragment ids (strings are u16-length
        utf-8), then N*N little-endian float64 values in row-major
        order, then the absent mask as a packed bit array (row-major,
        least-significant bit first).
        """
        blob = bytearray()
        blob += MATRIX_MAGIC
        blob += struct.pack("<I", MATRIX_FORMAT_VERSION)
        pid = str(self.property).encode("utf-8")
        blob += struct.pack("<H", len(pid)) + pid
        blob += struct.pack("<I", len(self.ids))
        for fid in self.ids:
            b = fid.encode("utf-8")
            blob += struct.pack("<H", len(b)) + b
        blob += self.values.astype("<f8", copy=False).tobytes(order="C")
        flat = self.absent.astype(np.uint8).reshape(-1)
        blob += np.packbits(flat, bitorder="little").tobytes()
        _atomic_write(Path(path), bytes(blob))

    @classmethod
    def load(cls, path) -> "DistanceMatrix":
        path = Path(path)
        buf = path.read_bytes()
        off = 0

        def need(k: int) -> bytes:
            nonlocal off
            if off + k > len(buf):
                raise IntegrityError(
                    f"{path.name}: truncated distance-matrix file"
                )
            chunk = buf[off:off + k]
            off += k
            return chunk

        def text(k: int) -> str:
            try:
                return need(k).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise IntegrityError(f"{path.name}: {exc}") from None

        if need(8) != MATRIX_MAGIC:
            raise IntegrityError(f"{path.name}: not a distance-matrix file")
        (version,) = struct.unpack("<I", need(4))
        if version != MATRIX_FORMAT_VERSION:
            raise VersionMismatchError(
                f"{path.name}: unsupported matrix format version {version}"
            )
        (plen,) = struct.unpack("<H", need(2))
        prop_raw = text(plen)
        try:
            prop = PropertyId(prop_raw)
        except ValueError:
            raise IntegrityError(
                f"{path.name}: unknown property '{prop_raw}'"
            ) from None
        (n,) = struct.unpack("<I", need(4))
        ids = []
        for _ in range(n):
            (ln,) = struct.unpack("<H", need(2))
            ids.append(text(ln))
        values = np.frombuffer(need(n * n * 8), dtype="<f8").reshape(n, n)
        mask_len = (n * n + 7) // 8
        bits = np.unpackbits(
            np.frombuffer(need(mask_len), np.uint8), bitorder="little"
        )[:n * n]
        absent = bits.astype(bool).reshape(n, n)
        if off != len(buf):
            raise IntegrityError(f"{path.name}: trailing bytes")
        try:
            return cls(property=prop, ids=tuple(ids),
                       values=values, absent=absent)
        except ValueError as exc:
            raise IntegrityError(f"{path.name}: {exc}") from None


def build_distance_matrix(
    descriptors: Sequence[FragmentDescriptors], prop: PropertyId
) -> DistanceMatrix:
    """Pairwise distance matrix for one simple (non-composite) property.

    Pairs where either side lacks the measurement (no thickness, no
    color) are masked, as is the diagonal cell of such a fragment.  The
    shape composite needs dataset-level normalizers and has its own
    builder, :func:`build_shape_distance_matrix`.
    """
    prop = PropertyId(prop)
    if prop is PropertyId.SHAPE:
        raise ValueError(
            "the shape composite needs dataset-level normalizers; "
            "use build_shape_distance_matrix"
        )
    descs = list(descriptors)
    ids = tuple(d.fragment_id for d in descs)
    n = len(descs)
    values = np.zeros((n, n))
    absent = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            d = simple_property_distance(prop, descs[i], descs[j])
            if d is None:
                absent[i, j] = absent[j, i] = True
            else:
                values[i, j] = values[j, i] = d
    if prop is PropertyId.THICKNESS:
        missing = [d.thickness is None for d in descs]
    elif prop is PropertyId.COLOR:
        missing = [d.color is None for d in descs]
    else:
        missing = [False] * n
    for i, m in enumerate(missing):
        if m:
            absent[i, i] = True
    return DistanceMatrix(property=prop, ids=ids, values=values,
                          absent=absent)


def build_shape_distance_matrix(
    descriptors: Sequence[FragmentDescriptors],
    weights: Sequence[float] = DEFAULT_SHAPE_WEIGHTS,
) -> tuple[DistanceMatrix, dict[str, float]]:
    """Shape-composite distance matrix plus the normalizers it used.

    The composite mixes ingredients on incompatible scales, so each is
    divided by a robust dataset-level scale (the median of its observed
    pairwise distances) before the weighted mean.  The normalizers are
    returned so they can be persisted next to the thresholds.
    """
    descs = list(descriptors)
    ids = tuple(d.fragment_id for d in descs)
    n = len(descs)
    pair_comps: dict[tuple[int, int], tuple[float, ...]] = {}
    for i in range(n):
        for j in range(i + 1, n):
            comps = shape_distance_components(descs[i], descs[j])
            if comps is not None:
                pair_comps[i, j] = comps
    normalizers = {}
    for k, name in enumerate(SHAPE_COMPONENTS):
        observed = np.array([c[k] for c in pair_comps.values()])
        normalizers[name] = robust_normalizer(observed)
    norm = [normalizers[name] for name in SHAPE_COMPONENTS]
    values = np.zeros((n, n))
    absent = np.ones((n, n), dtype=bool)
    for i, d in enumerate(descs):
        if d.compactness_reliable:
            absent[i, i] = False
    for (i, j), comps in pair_comps.items():
        values[i, j] = values[j, i] = combine_shape(comps, norm, weights)
        absent[i, j] = absent[j, i] = False
    matrix = DistanceMatrix(property=PropertyId.SHAPE, ids=ids,
                            values=values, absent=absent)
    return matrix, normalizers


# ---------------------------------------------------------------------------
# threshold calibration


@dataclass(frozen=True)
class ThresholdCalibration:
    """Auto-calibrated acceptance threshold for one property.

    ``t`` admits roughly the nearest ``target_fraction`` of the
    collection from each fragment's point of view; each relaxation
    step widens that by ``dt``, sized to admit roughly another
    ``step_fraction``.
    """

    property: PropertyId
    t: float
    dt: float
    target_fraction: float
    step_fraction: float
    computed_at: int = DESCRIPTOR_VERSION

    def __post_init__(self):
        object.__setattr__(self, "property", PropertyId(self.property))
        if not (self.t > 0.0):
            raise ValueError(f"threshold must be positive, got {self.t}")
        if self.dt < 0.0:
            raise ValueError(f"step must be non-negative, got {self.dt}")

    def effective(self, relax_level: int) -> float:
        """Accept limit at the given relaxation level."""
        return self.t + relax_level * self.dt

    def to_dict(self) -> dict:
        return {
            "property": str(self.property),
            "t": self.t,
            "dt": self.dt,
            "target_fraction": self.target_fraction,
            "step_fraction": self.step_fraction,
            "computed_at": self.computed_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdCalibration":
        return cls(
            property=PropertyId(d["property"]),
            t=d["t"],
            dt=d["dt"],
            target_fraction=d["target_fraction"],
            step_fraction=d["step_fraction"],
            computed_at=d["computed_at"],
        )


def calibrate_threshold(
    matrix: DistanceMatrix,
    target_fraction: float = DEFAULT_TARGET_FRACTION,
    step_fraction: float = DEFAULT_STEP_FRACTION,
    descriptor_version: int = DESCRIPTOR_VERSION,
) -> ThresholdCalibration:
    """Derive (t, dt) for one property from its distance matrix.

    For each fragment, sort its unmasked distances to the others and
    take the ``ceil(target_fraction * (N - 1))``-th smallest; ``t`` is
    the mean of those per-fragment values, so a threshold filter admits
    roughly the target fraction of the collection on average.  ``dt``
    is built the same way from the gap between that rank and the one
    ``ceil(step_fraction * (N - 1))`` positions further out.  Rows
    with fewer unmasked values than a rank asks for contribute their
    maximum value.  N counts only fragments with at least one unmasked
    comparison; fewer than 21 of them is an error.
    """
    for name, frac in (("target_fraction", target_fraction),
                       ("step_fraction", step_fraction)):
        if not (0.0 < frac < 0.5):
            raise ValueError(f"{name} must lie in (0, 0.5), got {frac}")
    total = len(matrix.ids)
    usable = ~matrix.absent & ~np.eye(total, dtype=bool)
    rows = np.flatnonzero(usable.any(axis=1))
    n = len(rows)
    if n < MIN_CALIBRATION_FRAGMENTS:
        raise InsufficientDataError(
            f"calibrating '{matrix.property}' needs at least "
            f"{MIN_CALIBRATION_FRAGMENTS} fragments with comparable "
            f"values, got {n}"
        )
    n5 = math.ceil(target_fraction * (n - 1))
    n3 = math.ceil(step_fraction * (n - 1))
    t_parts = np.empty(n)
    dt_parts = np.empty(n)
    for out, k in enumerate(rows):
        vals = np.sort(matrix.values[k][usable[k]])
        t_k = vals[min(n5, len(vals)) - 1]
        dt_parts[out] = vals[min(n5 + n3, len(vals)) - 1] - t_k
        t_parts[out] = t_k
    t = float(t_parts.mean())
    dt = float(dt_parts.mean())
    if t <= 0.0:
        raise InsufficientDataError(
            f"calibrating '{matrix.property}' found only zero distances; "
            f"a zero threshold would match nothing"
        )
    return ThresholdCalibration(
        property=matrix.property,
        t=t,
        dt=dt,
        target_fraction=target_fraction,
        step_fraction=step_fraction,
        computed_at=descriptor_version,
    )


# ---------------------------------------------------------------------------
# queries


@dataclass(frozen=True)
class QuerySpec:
    """A query-by-example request.

    ``properties`` are the filters to AND together; duplicates are
    dropped.  ``relax_level`` widens every active threshold by that
    many calibrated steps.
    """

    query_id: str
    properties: tuple[PropertyId, ...]
    relax_level: int = 0

    def __post_init__(self):
        props = tuple(dict.fromkeys(PropertyId(p) for p in self.properties))
        if not props:
            raise ValueError("a query needs at least one property")
        relax = int(self.relax_level)
        if relax < 0:
            raise ValueError(
                f"relax_level must be non-negative, got {relax}"
            )
        object.__setattr__(self, "properties", props)
        object.__setattr__(self, "relax_level", relax)


@dataclass(frozen=True, eq=False)
class QueryMatch:
    """One accepted candidate with its per-property distances."""

    fragment_id: str
    score: float
    distances: dict[PropertyId, float]

    def to_dict(self) -> dict:
        return {
            "fragment_id": self.fragment_id,
            "score": self.score,
            "distances": {str(p): v for p, v in self.distances.items()},
        }


@dataclass(frozen=True, eq=False)
class QueryResult:
    """Ranked matches plus the thresholds that produced them."""

    query_id: str
    relax_level: int
    properties: tuple[PropertyId, ...]
    matches: tuple[QueryMatch, ...]
    thresholds: dict[PropertyId, ThresholdCalibration]

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "relax_level": self.relax_level,
            "properties": [str(p) for p in self.properties],
            "thresholds": {
                str(p): {
                    "t": cal.t,
                    "dt": cal.dt,
                    "effective": cal.effective(self.relax_level),
                }
                for p, cal in self.thresholds.items()
            },
            "matches": [m.to_dict() for m in self.matches],
        }


# ---------------------------------------------------------------------------
# persistence helpers


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


@dataclass(frozen=True)
class DescribeReport:
    """What one describe pass did, fragment id by fragment id."""

    described: tuple[str, ...]
    up_to_date: tuple[str, ...]
    failed: tuple[tuple[str, str], ...]  # (fragment_id, reason)

    @property
    def ok(self) -> bool:
        return not self.failed


class FragmentStore:
    """On-disk home of a fragment collection and its search indexes.

    Layout under the store root::

        fragments.json      registry of FragmentRecords
        params.json         descriptor-pipeline parameters
        meshes/<id>.ply     ingested (decimated) meshes
        descriptors/<id>.json
        matrices/<prop>.bin pairwise distance matrices
        calibration.json    thresholds and shape normalizers
        manifest.json       sha256 of every section, checked on open

    Use :meth:`initialize` to create a store and :meth:`open` for an
    existing one; the constructor itself never touches the disk.
    Mutating operations of concurrent writers are serialized through
    :meth:`lock`.
    """

    def __init__(self, root):
        self.root = Path(root)
        self._records_cache: dict[str, FragmentRecord] | None = None
        self._params_cache: dict | None = None
        self._desc_cache: dict[str, FragmentDescriptors] = {}
        self._matrix_cache: dict[PropertyId, DistanceMatrix] = {}
        self._calibration_cache: dict | None = None
        self._deferred = False

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def initialize(cls, root, describe_params: dict | None = None,
                   exist_ok: bool = False) -> "FragmentStore":
        """Create an empty store.

        ``describe_params`` overrides descriptor-pipeline defaults
        (seed, decimate_target, bin counts...).  The dataset-wide
        ``d2_range_max`` is normally left unset here and fixed
        automatically before the first describe pass.
        """
        root = Path(root)
        if (root / MANIFEST_FILE).exists():
            if exist_ok:
                return cls.open(root)
            raise FileExistsError(f"store already exists at {root}")
        overrides = dict(describe_params or {})
        base = DescribeParams(d2_range_max=0.0).to_dict()
        unknown = set(overrides) - set(base)
        if unknown:
            raise ValueError(
                f"unknown describe parameter(s): {sorted(unknown)}"
            )
        base.update(overrides)
        if "d2_range_max" not in overrides:
            base["d2_range_max"] = None
        root.mkdir(parents=True, exist_ok=True)
        for sub in (MESH_DIR, DESC_DIR, MATRIX_DIR):
            (root / sub).mkdir(exist_ok=True)
        store = cls(root)
        store._write_json(PARAMS_FILE, {
            "descriptor_version": DESCRIPTOR_VERSION,
            "describe": base,
        })
        store._write_records({})
        store._write_manifest()
        return store

    @classmethod
    def open(cls, root, verify: bool = True) -> "FragmentStore":
        """Open an existing store, checking versions and content hashes."""
        root = Path(root)
        if not (root / MANIFEST_FILE).is_file():
            raise FileNotFoundError(f"no fragment store at {root}")
        store = cls(root)
        manifest = store._read_json(MANIFEST_FILE)
        fmt = manifest.get("store_format_version")
        if fmt != STORE_FORMAT_VERSION:
            raise VersionMismatchError(
                f"store format version {fmt} is not supported "
                f"(expected {STORE_FORMAT_VERSION})"
            )
        ver = manifest.get("descriptor_version")
        if ver != DESCRIPTOR_VERSION:
            raise StaleStoreError(
                f"store was built with descriptor version {ver}, current "
                f"is {DESCRIPTOR_VERSION}; rebuild with describe/calibrate"
            )
        if verify:
            store.verify_integrity()
        return store

    @contextmanager
    def lock(self):
        """Hold the store's exclusive writer lock."""
        path = self.root / LOCK_FILE
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreLockError(
                f"store at {self.root} is locked by another writer "
                f"(stale? remove {path})"
            ) from None
        try:
            os.write(fd, f"{os.getpid()}\n".encode("ascii"))
            os.close(fd)
            yield self
        finally:
            path.unlink(missing_ok=True)

    @contextmanager
    def batch(self):
        """Group several mutations into one manifest rewrite."""
        if self._deferred:
            yield self
            return
        self._deferred = True
        try:
            yield self
        finally:
            self._deferred = False
            self._write_manifest()

    # -- registry ----------------------------------------------------------

    def records(self) -> dict[str, FragmentRecord]:
        """Registry as an id-sorted mapping (do not mutate)."""
        if self._records_cache is None:
            payload = self._read_json(FRAGMENTS_FILE)
            recs = [FragmentRecord.from_dict(d) for d in payload["fragments"]]
            self._records_cache = {r.fragment_id: r for r in recs}
        return self._records_cache

    def fragment_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.records()))

    def record(self, fragment_id: str) -> FragmentRecord:
        try:
            return self.records()[fragment_id]
        except KeyError:
            raise UnknownFragmentError(
                f"fragment '{fragment_id}' is not in the store"
            ) from None

    def add_fragment(self, mesh: TriangleMesh,
                     record: FragmentRecord) -> FragmentRecord:
        """Register a fragment and persist its mesh.

        The mesh is written as binary PLY under the store root and the
        record's ``mesh_path`` is pointed at it.  The caller is
        expected to hand over the already-validated, already-decimated
        mesh it wants searched and served.
        """
        records = dict(self.records())
        if record.fragment_id in records:
            raise ValueError(
                f"duplicate fragment id '{record.fragment_id}'"
            )
        rel = f"{MESH_DIR}/{record.fragment_id}.ply"
        save_mesh(mesh, self.root / rel)
        record = replace(record, mesh_path=rel)
        records[record.fragment_id] = record
        self._write_records(records)
        self._write_manifest()
        return record

    def mesh_file(self, fragment_id: str) -> Path:
        return self.root / self.record(fragment_id).mesh_path

    def load_fragment_mesh(self, fragment_id: str) -> TriangleMesh:
        return load_mesh(self.mesh_file(fragment_id))

    # -- descriptor pipeline ----------------------------------------------

    def describe_params(self) -> DescribeParams | None:
        """Current pipeline parameters, or None until the dataset-wide
        pair-distance range has been fixed by a describe pass."""
        d = self._params_payload()["describe"]
        if d.get("d2_range_max") is None:
            return None
        return DescribeParams.from_dict(d)

    def decimate_budget(self) -> int:
        """Vertex budget meshes are decimated to before ingestion.

        Available from store creation on, unlike :meth:`describe_params`
        which stays None until the pair-distance range is fixed.
        """
        return int(self._params_payload()["describe"]["decimate_target"])

    def describe_all(self, threads: int = 1) -> DescribeReport:
        """Compute descriptors for every fragment that needs them.

        Fragments whose stored descriptors already match the current
        parameters are skipped.  Per-fragment failures are recorded and
        do not abort the pass.  Output bytes are identical for any
        thread count: each fragment's descriptors depend only on its
        mesh, its id and the shared parameters.
        """
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        records = self.records()
        ids = sorted(records)
        params = self._ensure_d2_range(ids)
        if params is None:  # empty store
            self._write_manifest()
            return DescribeReport((), (), ())
        fingerprint = self.params_fingerprint()
        todo, fresh = [], []
        for fid in ids:
            if self._descriptor_fresh(fid, fingerprint):
                fresh.append(fid)
            else:
                todo.append(fid)

        def job(fid: str) -> FragmentDescriptors:
            mesh = load_mesh(self.root / records[fid].mesh_path)
            return describe_fragment(mesh, fid, records[fid].fragment_class,
                                     params)

        done, failed = [], []

        def finish(fid: str, outcome) -> None:
            if isinstance(outcome, Exception):
                log.warning("describing %s failed: %s", fid, outcome)
                failed.append((fid, str(outcome)))
                return
            self._write_json(f"{DESC_DIR}/{fid}.json", {
                "params_fingerprint": fingerprint,
                "descriptors": outcome.to_dict(),
            })
            done.append(fid)

        if threads == 1 or len(todo) <= 1:
            for fid in todo:
                try:
                    finish(fid, job(fid))
                except Exception as exc:  # per-fragment isolation
                    finish(fid, exc)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futures = [(fid, pool.submit(job, fid)) for fid in todo]
                for fid, fut in futures:
                    try:
                        finish(fid, fut.result())
                    except Exception as exc:
                        finish(fid, exc)
        self._desc_cache.clear()
        self._write_manifest()
        return DescribeReport(tuple(done), tuple(fresh), tuple(failed))

    def load_descriptors(self, fragment_id: str) -> FragmentDescriptors:
        """Stored descriptors for one fragment."""
        if fragment_id not in self._desc_cache:
            self.record(fragment_id)  # raise UnknownFragmentError first
            _, desc = self._read_descriptor(fragment_id)
            self._desc_cache[fragment_id] = desc
        return self._desc_cache[fragment_id]

    # -- calibration -------------------------------------------------------

    def calibrate(
        self,
        target_fraction: float = DEFAULT_TARGET_FRACTION,
        step_fraction: float = DEFAULT_STEP_FRACTION,
    ) -> dict[PropertyId, ThresholdCalibration | None]:
        """Build all distance matrices and calibrate every threshold.

        A property whose matrix lacks enough comparable pairs (for
        example color in an uncolored collection) is left uncalibrated
        with a warning; querying it later raises
        CalibrationRequiredError.
        """
        ids = self.fragment_ids()
        if len(ids) < MIN_CALIBRATION_FRAGMENTS:
            raise InsufficientDataError(
                f"calibration needs at least {MIN_CALIBRATION_FRAGMENTS} "
                f"fragments, got {len(ids)}"
            )
        fingerprint = self.params_fingerprint()
        descs = []
        for fid in ids:
            fp, desc = self._read_descriptor(fid)
            if fp != fingerprint:
                raise StaleStoreError(
                    f"descriptors for '{fid}' were built with different "
                    f"parameters; run describe before calibrate"
                )
            descs.append(desc)
        thresholds: dict[PropertyId, ThresholdCalibration | None] = {}
        shape_normalizers = None
        for prop in ALL_PROPERTIES:
            if prop is PropertyId.SHAPE:
                matrix, shape_normalizers = build_shape_distance_matrix(descs)
            else:
                matrix = build_distance_matrix(descs, prop)
            matrix.save(self.root / MATRIX_DIR / f"{prop}.bin")
            try:
                cal = calibrate_threshold(matrix, target_fraction,
                                          step_fraction)
            except InsufficientDataError as exc:
                log.warning("property %s not calibrated: %s", prop, exc)
                cal = None
            thresholds[prop] = cal
        self._write_json(CALIBRATION_FILE, {
            "descriptor_version": DESCRIPTOR_VERSION,
            "params_fingerprint": fingerprint,
            "target_fraction": target_fraction,
            "step_fraction": step_fraction,
            "shape_weights": list(DEFAULT_SHAPE_WEIGHTS),
            "shape_normalizers": shape_normalizers,
            "thresholds": {
                str(p): None if c is None else c.to_dict()
                for p, c in thresholds.items()
            },
        })
        self._matrix_cache.clear()
        self._calibration_cache = None
        self._write_manifest()
        return thresholds

    def matrix(self, prop: PropertyId) -> DistanceMatrix:
        """Load (and cache) one property's distance matrix."""
        prop = PropertyId(prop)
        if prop not in self._matrix_cache:
            path = self.root / MATRIX_DIR / f"{prop}.bin"
            if not path.is_file():
                raise CalibrationRequiredError(
                    f"no distance matrix for '{prop}'; run calibrate first"
                )
            self._matrix_cache[prop] = DistanceMatrix.load(path)
        return self._matrix_cache[prop]

    def calibration(self, prop: PropertyId) -> ThresholdCalibration:
        """Calibrated threshold for one property."""
        prop = PropertyId(prop)
        payload = self._calibration_payload()
        raw = payload["thresholds"].get(str(prop))
        if raw is None:
            raise CalibrationRequiredError(
                f"property '{prop}' has no calibrated threshold "
                f"(not enough comparable data at calibration time)"
            )
        return ThresholdCalibration.from_dict(raw)

    # -- queries -----------------------------------------------------------

    def query(self, spec: QuerySpec) -> QueryResult:
        """Answer one query-by-example request.

        Candidates come from every class; the gating table restricts
        only which properties the query fragment itself may filter on.
        A candidate must pass every active property's threshold —
        masked (undefined) comparisons never pass.  Matches are ranked
        by the product of their per-property distances, ascending, with
        ties broken by fragment id.
        """
        record = self.record(spec.query_id)
        enabled = enabled_properties(record.fragment_class)
        for prop in spec.properties:
            if prop not in enabled:
                raise PropertyNotEnabledError(
                    prop, record.fragment_class, enabled
                )
        active = []
        for prop in spec.properties:
            cal = self.calibration(prop)
            mat = self.matrix(prop)
            if tuple(mat.ids) != self.fragment_ids():
                raise StaleStoreError(
                    f"the '{prop}' matrix does not cover the current "
                    f"registry; run calibrate again"
                )
            qi = mat.index(spec.query_id)
            active.append((prop, mat, qi, cal.effective(spec.relax_level)))
        matches = []
        for fid in self.fragment_ids():
            if fid == spec.query_id:
                continue
            distances: dict[PropertyId, float] = {}
            for prop, mat, qi, limit in active:
                j = mat.index(fid)
                if mat.absent[qi, j]:
                    break
                d = float(mat.values[qi, j])
                if d > limit:
                    break
                distances[prop] = d
            else:
                matches.append(QueryMatch(
                    fragment_id=fid,
                    score=product_score(distances.values()),
                    distances=distances,
                ))
        matches.sort(key=lambda m: (m.score, m.fragment_id))
        return QueryResult(
            query_id=spec.query_id,
            relax_level=spec.relax_level,
            properties=spec.properties,
            matches=tuple(matches),
            thresholds={p: self.calibration(p) for p in spec.properties},
        )

    # -- integrity ---------------------------------------------------------

    def verify_integrity(self) -> None:
        """Re-hash every recorded section; mismatch raises IntegrityError."""
        manifest = self._read_json(MANIFEST_FILE)
        for rel, digest in manifest.get("files", {}).items():
            path = self.root / rel
            if not path.is_file():
                raise IntegrityError(f"{rel}: recorded section is missing")
            actual = hashlib.sha256(path.read_bytes()).hexdigest()
            if actual != digest:
                raise IntegrityError(
                    f"{rel}: contents do not match the recorded hash"
                )

    # -- internals ---------------------------------------------------------

    def _write_json(self, rel: str, obj) -> None:
        _atomic_write(self.root / rel, _dump_json(obj))

    def _read_json(self, rel: str) -> dict:
        path = self.root / rel
        try:
            return json.loads(path.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"{rel}: invalid JSON ({exc})") from None

    def _write_records(self, records: dict[str, FragmentRecord]) -> None:
        self._write_json(FRAGMENTS_FILE, {
            "store_format_version": STORE_FORMAT_VERSION,
            "fragments": [records[fid].to_dict()
                          for fid in sorted(records)],
        })
        self._records_cache = dict(sorted(records.items()))

    def _params_payload(self) -> dict:
        if self._params_cache is None:
            self._params_cache = self._read_json(PARAMS_FILE)
        return self._params_cache

    def params_fingerprint(self) -> str:
        """Digest of the pipeline parameters current descriptors carry.

        Stored inside every descriptor file and in calibration.json;
        a mismatch against the live parameters marks those sections
        stale.
        """
        payload = self._params_payload()
        blob = _dump_json({
            "descriptor_version": DESCRIPTOR_VERSION,
            "describe": payload["describe"],
        })
        return hashlib.sha256(blob).hexdigest()

    def _ensure_d2_range(self, ids: Sequence[str]) -> DescribeParams | None:
        """Fix the dataset-wide pair-distance histogram range once.

        The first describe pass sets it to the largest axis-aligned
        bounding-box diagonal in the collection, which bounds every
        within-fragment point-pair distance.  It then stays frozen so
        descriptors remain comparable as fragments are re-described.
        """
        payload = self._params_payload()
        describe = dict(payload["describe"])
        if describe.get("d2_range_max") is None:
            if not ids:
                return None
            records = self.records()
            diag = 0.0
            for fid in ids:
                mesh = load_mesh(self.root / records[fid].mesh_path)
                diag = max(diag, float(np.linalg.norm(
                    mesh.bounding_extent())))
            if diag <= 0.0:
                raise InsufficientDataError(
                    "every fragment has zero extent; cannot fix the "
                    "pair-distance histogram range"
                )
            describe["d2_range_max"] = diag
            payload = {**payload, "describe": describe}
            self._write_json(PARAMS_FILE, payload)
            self._params_cache = payload
            log.info("pair-distance range fixed at %.6g mm", diag)
        return DescribeParams.from_dict(describe)

    def _descriptor_file(self, fragment_id: str) -> Path:
        return self.root / DESC_DIR / f"{fragment_id}.json"

    def _descriptor_fresh(self, fragment_id: str, fingerprint: str) -> bool:
        path = self._descriptor_file(fragment_id)
        if not path.is_file():
            return False
        try:
            payload = json.loads(path.read_text("utf-8"))
        except (OSError, json.JSONDecodeError):
            return False
        return (
            payload.get("params_fingerprint") == fingerprint
            and payload.get("descriptors", {}).get("descriptor_version")
            == DESCRIPTOR_VERSION
        )

    def _read_descriptor(self, fragment_id: str
                         ) -> tuple[str, FragmentDescriptors]:
        path = self._descriptor_file(fragment_id)
        if not path.is_file():
            raise StaleStoreError(
                f"no descriptors for fragment '{fragment_id}'; "
                f"run describe first"
            )
        payload = self._read_json(f"{DESC_DIR}/{fragment_id}.json")
        desc = FragmentDescriptors.from_dict(payload["descriptors"])
        if desc.descriptor_version != DESCRIPTOR_VERSION:
            raise StaleStoreError(
                f"descriptors for '{fragment_id}' carry version "
                f"{desc.descriptor_version}, current is "
                f"{DESCRIPTOR_VERSION}; run describe again"
            )
        return payload["params_fingerprint"], desc

    def _calibration_payload(self) -> dict:
        if self._calibration_cache is None:
            path = self.root / CALIBRATION_FILE
            if not path.is_file():
                raise CalibrationRequiredError(
                    "store has no calibration; run calibrate first"
                )
            payload = self._read_json(CALIBRATION_FILE)
            ver = payload.get("descriptor_version")
            if ver != DESCRIPTOR_VERSION:
                raise StaleStoreError(
                    f"calibration was computed at descriptor version "
                    f"{ver}, current is {DESCRIPTOR_VERSION}; recalibrate"
                )
            if payload.get("params_fingerprint") != \
                    self.params_fingerprint():
                raise StaleStoreError(
                    "calibration no longer matches the descriptor "
                    "parameters; run describe and calibrate again"
                )
            self._calibration_cache = payload
        return self._calibration_cache

    def _write_manifest(self) -> None:
        if self._deferred:
            return
        files = {}
        for path in sorted(self.root.rglob("*")):
            if not path.is_file():
                continue
            rel = path.relative_to(self.root).as_posix()
            if rel in (MANIFEST_FILE, LOCK_FILE) or rel.endswith(".tmp"):
                continue
            files[rel] = hashlib.sha256(path.read_bytes()).hexdigest()
        self._write_json(MANIFEST_FILE, {
            "store_format_version": STORE_FORMAT_VERSION,
            "descriptor_version": DESCRIPTOR_VERSION,
            "files": files,
        })
