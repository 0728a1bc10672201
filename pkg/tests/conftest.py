"""Shared mesh builders for the test suite.

These are deliberately hand-rolled (not reusing package generators) so
tests exercise package code against independently constructed inputs.
"""

import numpy as np
import pytest

from fragsearch.descriptors import (
    ColorHistogram,
    FragmentDescriptors,
    Histogram,
)
from fragsearch.mesh import TriangleMesh
from fragsearch.spharm import DESCRIPTOR_LENGTH

# 12 triangles of a cube with outward (counter-clockwise from outside)
# winding; vertex i has coordinates from the bits of i (x=bit0 y=bit1 z=bit2)
CUBE_FACES = np.array([
    (0, 2, 1), (1, 2, 3),   # z-
    (4, 5, 6), (5, 7, 6),   # z+
    (0, 1, 4), (1, 5, 4),   # y-
    (2, 6, 3), (3, 6, 7),   # y+
    (0, 4, 2), (2, 4, 6),   # x-
    (1, 3, 5), (3, 7, 5),   # x+
], dtype=np.int64)


def cube_vertices(size=1.0, center=(0.0, 0.0, 0.0)):
    h = size / 2.0
    corners = np.array(
        [[(i >> 0) & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)],
        dtype=np.float64,
    )
    return (corners * 2.0 - 1.0) * h + np.asarray(center, dtype=np.float64)


def make_cube(size=1.0, center=(0.0, 0.0, 0.0), colors=None):
    return TriangleMesh(
        vertices=cube_vertices(size, center),
        faces=CUBE_FACES.copy(),
        colors=colors,
    )


def make_box(extents, center=(0.0, 0.0, 0.0), colors=None):
    """Axis-aligned box with the given (ex, ey, ez) edge lengths."""
    v = cube_vertices(1.0, (0, 0, 0)) * np.asarray(extents, dtype=np.float64)
    return TriangleMesh(
        vertices=v + np.asarray(center, dtype=np.float64),
        faces=CUBE_FACES.copy(),
        colors=colors,
    )


def make_icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0),
                   colors=None):
    """Geodesic sphere: subdivided icosahedron projected to the radius."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.array(verts[i]) + np.array(verts[j])
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(vertices=v, faces=np.asarray(faces, dtype=np.int64),
                        colors=colors)


def make_grid_patch(nx=20, ny=20, spacing=1.0, height_fn=None):
    """Open rectangular height-field patch, +z-facing winding.

    ``height_fn(x, y)`` gives z (default flat z=0).
    """
    xs = (np.arange(nx) - (nx - 1) / 2.0) * spacing
    ys = (np.arange(ny) - (ny - 1) / 2.0) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    gz = height_fn(gx, gy) if height_fn else np.zeros_like(gx)
    verts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = (i + 1) * ny + j
            faces += [(a, b, a + 1), (b, b + 1, a + 1)]
    return TriangleMesh(vertices=verts, faces=np.asarray(faces, dtype=np.int64))


def make_closed_cylinder(radius=1.0, height=2.0, segments=48, rings=8):
    """Closed cylinder along z, caps fan-triangulated, outward winding."""
    ang = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    zs = np.linspace(-height / 2.0, height / 2.0, rings + 1)
    verts = []
    for z in zs:
        for a in ang:
            verts.append((radius * np.cos(a), radius * np.sin(a), z))
    bottom_c = len(verts)
    verts.append((0.0, 0.0, -height / 2.0))
    top_c = len(verts)
    verts.append((0.0, 0.0, height / 2.0))
    faces = []
    for r in range(rings):
        for s in range(segments):
            s1 = (s + 1) % segments
            a = r * segments + s
            b = r * segments + s1
            c = (r + 1) * segments + s
            d = (r + 1) * segments + s1
            faces += [(a, b, c), (b, d, c)]
    for s in range(segments):
        s1 = (s + 1) % segments
        faces.append((bottom_c, s1, s))
        faces.append((top_c, rings * segments + s, rings * segments + s1))
    return TriangleMesh(vertices=np.asarray(verts, dtype=np.float64),
                        faces=np.asarray(faces, dtype=np.int64))


def subdivided_slab(width=50.0, thickness=4.0, n=14):
    """Closed slab with gridded top and bottom so many probes exist."""
    top = make_grid_patch(n, n, spacing=width / (n - 1))
    nv = top.vertex_count
    verts = np.vstack([
        top.vertices + [0, 0, thickness / 2.0],
        top.vertices - [0, 0, thickness / 2.0],
    ])
    faces = [top.faces, top.faces[:, [0, 2, 1]] + nv]
    # stitch the rim
    def rim_indices():
        idx = []
        for i in range(n):
            idx.append(i * n + 0)
        for j in range(1, n):
            idx.append((n - 1) * n + j)
        for i in range(n - 2, -1, -1):
            idx.append(i * n + (n - 1))
        for j in range(n - 2, 0, -1):
            idx.append(0 * n + j)
        return idx

    ring = rim_indices()  # counterclockwise seen from +z
    side = []
    for a, b in zip(ring, ring[1:] + ring[:1]):
        # outward winding: walk the ring backwards on the top layer
        side += [(b, a, a + nv), (b, a + nv, b + nv)]
    faces.append(np.asarray(side, dtype=np.int64))
    return TriangleMesh(vertices=verts, faces=np.vstack(faces))


def constant_colors(n, rgb):
    return np.tile(np.asarray(rgb, dtype=np.uint8), (n, 1))


def delta_hist(lo, hi, bins, bin_idx, mass=1.0):
    counts = np.zeros(bins)
    counts[bin_idx] = mass
    return Histogram(lo=lo, hi=hi, counts=counts)


def make_descriptors(fragment_id="frag", **overrides):
    """Hand-built descriptor set with every field overridable."""
    base = dict(
        fragment_id=fragment_id,
        fragment_class="sherd",
        size_diagonal=50.0,
        size_aspect_ratio=0.10,
        thickness=5.0,
        roughness_k=delta_hist(-2.0, 2.0, 200, 100),
        roughness_si=delta_hist(-1.0, 1.0, 200, 150),
        color=ColorHistogram(
            l=delta_hist(0.0, 100.0, 100, 50),
            a=delta_hist(-110.0, 110.0, 100, 50),
            b=delta_hist(-110.0, 110.0, 100, 60),
        ),
        d2=delta_hist(0.0, 100.0, 128, 30),
        compactness=0.20,
        compactness_reliable=True,
        sh_energy=np.zeros(DESCRIPTOR_LENGTH),
        source_vertex_count=1000,
        source_face_count=2000,
    )
    base.update(overrides)
    return FragmentDescriptors(**base)


# ---------------------------------------------------------------------------
# session-wide corpora and stores
#
# Generating a corpus and describing every fragment dominates test time,
# so whole-pipeline artifacts are built once per session and shared.


def small_recipe() -> dict:
    """A 22-fragment recipe: coarse meshes, quick to describe.

    Large enough for threshold calibration (which needs 21 fragments),
    with both classes present so gating is exercisable.
    """
    return {
        "name": "cli-small",
        "seed": 29,
        "fragments": [
            {"kind": "slab", "prefix": "t", "count": 12, "class": "sherd",
             "group_label": "tiles", "lab": [55, 18, 20], "lab_jitter": 3.0,
             "resolution_mm": 3.0, "width_mm": [24, 34], "depth_mm": [18, 26],
             "thickness_mm": {"stratify": [2, 10], "shuffle": 3},
             "roughness_mm": [0.1, 0.25]},
            {"kind": "cap", "prefix": "b", "count": 6, "class": "sherd",
             "group_label": "bowls", "lab": [48, -15, 12], "lab_jitter": 3.0,
             "resolution_mm": 3.0, "chord_mm": [30, 40],
             "curvature_ratio": [1.3, 2.5], "thickness_mm": [3.5, 5.5],
             "roughness_mm": [0.1, 0.2]},
            {"kind": "solid", "prefix": "r", "count": 4, "class": "non-sherd",
             "group_label": "stones", "lab": [72, 3, 4], "lab_jitter": 2.0,
             "shape": "sphere", "diameter_mm": [16, 24]},
        ],
    }


SMALL_STORE_SEED = 5
SMALL_STORE_DESCRIBE = {"seed": SMALL_STORE_SEED, "ray_count": 6,
                        "d2_pairs": 4000}


@pytest.fixture(scope="session")
def packaged_corpus(tmp_path_factory):
    """The built-in 60-fragment corpus, generated once per session.

    Returns ``(recipe, summary, elapsed_seconds)``.
    """
    from importlib import resources
    import time

    from fragsearch.synth import generate_corpus, load_recipe

    source = resources.files("fragsearch") / "data" / "corpus60.json"
    with resources.as_file(source) as path:
        recipe = load_recipe(path)
    out = tmp_path_factory.mktemp("corpus60")
    start = time.perf_counter()
    summary = generate_corpus(recipe, out)
    elapsed = time.perf_counter() - start
    return recipe, summary, elapsed


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Generated meshes and manifests for the 22-fragment recipe."""
    from fragsearch.synth import generate_corpus

    out = tmp_path_factory.mktemp("small_corpus")
    return generate_corpus(small_recipe(), out)


@pytest.fixture(scope="session")
def small_store(small_corpus, tmp_path_factory):
    """A described, calibrated store over the small corpus, built by CLI.

    Returns a namespace with the store path, corpus summary, config file
    path, and captured stdout of each build stage.
    """
    import contextlib
    import io
    import json as json_mod
    from types import SimpleNamespace

    from fragsearch import cli

    root = tmp_path_factory.mktemp("small_store")
    store = root / "store"
    config = root / "fragsearch.cfg"
    config.write_text(
        "# test store configuration\n"
        f"store_path = {store}\n"
        "threads = 2\n"
        f"seed = {SMALL_STORE_SEED}\n"
        f"ray_count = {SMALL_STORE_DESCRIBE['ray_count']}\n"
        f"d2_pairs = {SMALL_STORE_DESCRIBE['d2_pairs']}\n",
        encoding="utf-8",
    )
    rows = json_mod.loads(small_corpus.classes_path.read_text())["fragments"]
    meshes = [str(small_corpus.out_dir / row["path"]) for row in rows]

    def run(argv):
        out = io.StringIO()
        with contextlib.redirect_stdout(out):
            rc = cli.main(argv)
        text = out.getvalue()
        assert rc == 0, f"cli {argv[:2]} failed ({rc}):\n{text}"
        return text

    base = ["--config", str(config)]
    out_ingest = run(base + ["ingest", "--classes",
                             str(small_corpus.classes_path)] + meshes)
    out_describe = run(base + ["describe"])
    out_calibrate = run(base + ["calibrate"])
    return SimpleNamespace(
        store=store,
        config=config,
        corpus=small_corpus,
        out_ingest=out_ingest,
        out_describe=out_describe,
        out_calibrate=out_calibrate,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260825)


@pytest.fixture
def unit_cube():
    return make_cube(1.0)


@pytest.fixture
def cm_cube():
    return make_cube(10.0)


# ---------------------------------------------------------------------------
# acceptance reporting

_CRITERION_TITLES = {
    1: "slab thickness",
    2: "sphere curvature and compactness",
    3: "cube size and pair distances",
    4: "white color histograms",
    5: "histogram distance vs transport oracle",
    6: "calibration ranks and coverage",
    7: "AND semantics",
    8: "relaxation nesting",
    9: "gating rejections",
    10: "cluster recovery",
    11: "deterministic rebuild",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per numbered acceptance criterion."""
    import re

    pattern = re.compile(r"test_criterion_(\d+)")
    results = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            match = pattern.search(getattr(report, "nodeid", ""))
            if match:
                number = int(match.group(1))
                ok = outcome == "passed"
                results[number] = results.get(number, True) and ok
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title = _CRITERION_TITLES.get(number, "")
        verdict = "PASS" if results[number] else "FAIL"
        terminalreporter.write_line(
            f"criterion {number:2d} ({title}): {verdict}")
