"""Operator command line: ingest, describe, calibrate, query, synth, serve.

The tool drives one fragment store per invocation.  Mutating commands
(ingest, describe, calibrate) take the store lock; query is read-only.
Exit codes follow one policy everywhere: 0 for success (including empty
query results), 1 when some per-file work failed but the run completed,
2 for usage, configuration, or store-state errors.

A configuration file may supply defaults for any flag-less setting; it
is a flat ``key = value`` text file (``#`` starts a comment)::

    store_path = /data/shards
    threads = 4
    seed = 107
    target_fraction = 0.05
    ray_count = 10

Keys are the :class:`Config` fields plus any descriptor-pipeline
parameter.  Descriptor parameters only take effect when a store is
created (ingest on a fresh path); an existing store keeps the
parameters it was built with.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields as dataclass_fields
from importlib import resources
from pathlib import Path

from .descriptors import DescribeParams, PropertyId
from .engine import (
    DEFAULT_STEP_FRACTION,
    DEFAULT_TARGET_FRACTION,
    FragmentRecord,
    FragmentStore,
    QuerySpec,
)
from .errors import ConfigError, FragsearchError
from .mesh import decimate, load_mesh, validate
from .synth import generate_corpus, load_recipe, validate_recipe

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2

DEFAULT_RECIPE = "corpus60.json"
VALID_PROPERTY_NAMES = tuple(str(p) for p in PropertyId)

# Descriptor parameters accepted in config files, with their value types
# taken from the pipeline defaults (d2_range_max is dataset-derived and
# never configured by hand).
_DESCRIBE_FIELD_TYPES = {
    f.name: type(getattr(DescribeParams(d2_range_max=1.0), f.name))
    for f in dataclass_fields(DescribeParams)
    if f.name != "d2_range_max"
}


@dataclass(frozen=True)
class Config:
    """Settings shared by every command.

    Attributes:
        store_path: Store directory; flag ``--store`` overrides.
        threads: Worker count for the describe pass.
        seed: Descriptor sampling seed, fixed into a store at creation.
        target_fraction: Calibration fraction for the base threshold.
        step_fraction: Calibration fraction for one relaxation step.
        describe: Descriptor-parameter overrides applied when a new
            store is initialized.
    """

    store_path: Path | None = None
    threads: int = 1
    seed: int | None = None
    target_fraction: float = DEFAULT_TARGET_FRACTION
    step_fraction: float = DEFAULT_STEP_FRACTION
    describe: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("target_fraction", "step_fraction"):
            value = getattr(self, name)
            if not 0.0 < value < 0.5:
                raise ConfigError(
                    f"{name} must be in (0, 0.5), got {value}"
                )
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")


def _coerce(key: str, raw: str, kind: type):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(
            f"config key '{key}' needs a {kind.__name__}, got {raw!r}"
        ) from None
    return raw


def load_config(path) -> Config:
    """Parse a flat ``key = value`` configuration file.

    Raises:
        ConfigError: on unreadable files, malformed lines, unknown
            keys, or out-of-range values.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    plain: dict = {}
    describe: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigError(
                f"{path}:{lineno}: expected 'key = value', got {line!r}"
            )
        if key == "store_path":
            plain[key] = Path(raw)
        elif key == "threads":
            plain[key] = _coerce(key, raw, int)
        elif key == "seed":
            plain[key] = _coerce(key, raw, int)
        elif key in ("target_fraction", "step_fraction"):
            plain[key] = _coerce(key, raw, float)
        elif key in _DESCRIBE_FIELD_TYPES:
            describe[key] = _coerce(key, raw, _DESCRIBE_FIELD_TYPES[key])
        else:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
    return Config(describe=describe, **plain)


def _resolve_store_path(args, config: Config) -> Path:
    path = getattr(args, "store", None) or config.store_path
    if path is None:
        raise ConfigError(
            "no store path given; use --store or set store_path in the "
            "config file"
        )
    return Path(path)


def _describe_overrides(args, config: Config) -> dict:
    overrides = dict(config.describe)
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = config.seed
    if seed is not None:
        overrides["seed"] = seed
    return overrides


def _parse_properties(raw_lists: list[str]) -> tuple[PropertyId, ...]:
    names: list[str] = []
    for chunk in raw_lists:
        names.extend(n.strip() for n in chunk.split(",") if n.strip())
    props = []
    for name in names:
        try:
            props.append(PropertyId(name))
        except ValueError:
            raise ConfigError(
                f"unknown property '{name}'; valid properties: "
                f"{', '.join(VALID_PROPERTY_NAMES)}"
            ) from None
    if not props:
        raise ConfigError("--props needs at least one property name")
    return tuple(props)


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args, config: Config) -> int:
    classes_path = Path(args.classes)
    try:
        payload = json.loads(classes_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read class file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"class file {classes_path} is not valid JSON: {exc}"
        ) from exc
    rows = payload.get("fragments")
    if not isinstance(rows, list):
        raise ConfigError(
            f"class file {classes_path} must contain a 'fragments' list"
        )
    by_name: dict = {}
    for row in rows:
        if not isinstance(row, dict) or "path" not in row:
            raise ConfigError("every class entry needs a 'path'")
        by_name[Path(row["path"]).name] = row

    mesh_paths = [Path(p) for p in args.meshes]
    # Hard gate before touching the store: every mesh must have a class.
    jobs = []
    for path in mesh_paths:
        row = by_name.get(path.name)
        if row is None:
            raise ConfigError(
                f"class file has no entry for '{path.name}'; "
                f"refusing to ingest anything"
            )
        try:
            record = FragmentRecord(
                fragment_id=row.get("fragment_id", path.stem),
                fragment_class=row.get("class", ""),
                collection=row.get("collection", ""),
                group_label=row.get("group_label"),
            )
        except ValueError as exc:
            raise ConfigError(f"bad class entry for '{path.name}': {exc}"
                              ) from exc
        jobs.append((path, record))

    store_path = _resolve_store_path(args, config)
    if (store_path / "manifest.json").exists():
        store = FragmentStore.open(store_path)
    else:
        store = FragmentStore.initialize(
            store_path, describe_params=_describe_overrides(args, config)
        )
    budget = store.decimate_budget()

    failures: list[tuple[str, str]] = []
    ingested = 0
    with store.lock(), store.batch():
        for path, record in jobs:
            try:
                mesh = load_mesh(path)
            except (FragsearchError, OSError) as exc:
                failures.append((path.name, str(exc)))
                print(f"{path.name}: FAILED ({exc})")
                continue
            report = validate(mesh)
            summary = (f"{path.name}: {report.vertex_count} vertices, "
                       f"{report.face_count} faces")
            if not report.clean:
                failures.append(
                    (path.name, "; ".join(report.issues))
                )
                print(f"{summary} -- REJECTED: {'; '.join(report.issues)}")
                continue
            work = mesh
            if mesh.vertex_count > budget:
                work = decimate(mesh, budget)
                summary += f", decimated to {work.vertex_count}"
            try:
                store.add_fragment(work, record)
            except ValueError as exc:
                failures.append((path.name, str(exc)))
                print(f"{summary} -- FAILED: {exc}")
                continue
            print(f"{summary} -- ok ({record.fragment_class})")
            ingested += 1

    print(f"ingested {ingested} of {len(jobs)} fragment(s) into "
          f"{store_path}")
    if failures:
        for name, reason in failures:
            log.error("ingest failed for %s: %s", name, reason)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_describe(args, config: Config) -> int:
    store = FragmentStore.open(_resolve_store_path(args, config))
    threads = args.threads or config.threads
    with store.lock(), store.batch():
        report = store.describe_all(threads=threads)
    if not report.described and not report.failed:
        print(f"descriptors up to date ({len(report.up_to_date)} "
              f"fragment(s))")
        return EXIT_OK
    print(f"described {len(report.described)} fragment(s), "
          f"{len(report.up_to_date)} already up to date")
    if report.failed:
        for fid, reason in report.failed:
            print(f"{fid}: FAILED ({reason})")
        return EXIT_PARTIAL
    return EXIT_OK


def _calibration_fresh(store: FragmentStore) -> bool:
    """True when stored thresholds already match the current store."""
    try:
        matrix = store.matrix(PropertyId.SIZE_DIAGONAL)
        store.calibration(PropertyId.SIZE_DIAGONAL)
    except FragsearchError:
        return False
    return matrix.ids == store.fragment_ids()


def cmd_calibrate(args, config: Config) -> int:
    store = FragmentStore.open(_resolve_store_path(args, config))
    if _calibration_fresh(store):
        print("calibration up to date")
        return EXIT_OK
    with store.lock(), store.batch():
        thresholds = store.calibrate(
            target_fraction=config.target_fraction,
            step_fraction=config.step_fraction,
        )
    for prop, cal in thresholds.items():
        if cal is None:
            print(f"{prop}: not calibrated (insufficient data)")
        else:
            print(f"{prop}: t={cal.t:.6g} dt={cal.dt:.6g}")
    return EXIT_OK


def cmd_query(args, config: Config) -> int:
    store = FragmentStore.open(_resolve_store_path(args, config))
    try:
        spec = QuerySpec(
            query_id=args.query_id,
            properties=_parse_properties(args.props),
            relax_level=args.relax,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = store.query(spec)
    if args.json:
        print(json.dumps(result.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    props = result.properties
    print(f"query {result.query_id} "
          f"[{', '.join(str(p) for p in props)}] "
          f"relax={result.relax_level}")
    for prop in props:
        cal = result.thresholds[prop]
        print(f"  {prop}: t={cal.t:.6g} dt={cal.dt:.6g} "
              f"effective={cal.effective(result.relax_level):.6g}")
    if not result.matches:
        print("no matches")
        return EXIT_OK
    header = ["rank", "fragment", "score"] + [str(p) for p in props]
    rows = [
        [str(i + 1), m.fragment_id, f"{m.score:.6g}"]
        + [f"{m.distances[p]:.6g}" for p in props]
        for i, m in enumerate(result.matches)
    ]
    widths = [max(len(r[c]) for r in [header] + rows)
              for c in range(len(header))]
    for row in [header] + rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return EXIT_OK


def cmd_synth(args, config: Config) -> int:
    if args.recipe is not None:
        recipe = load_recipe(args.recipe)
    else:
        source = resources.files("fragsearch") / "data" / DEFAULT_RECIPE
        recipe = json.loads(source.read_text(encoding="utf-8"))
        validate_recipe(recipe)
    seed = args.seed if args.seed is not None else config.seed
    summary = generate_corpus(recipe, args.out, seed=seed)
    print(f"generated {len(summary.fragment_ids)} fragment(s) in "
          f"{summary.out_dir} (seed {summary.seed})")
    print(f"class manifest: {summary.classes_path}")
    print(f"ground truth:   {summary.ground_truth_path}")
    return EXIT_OK


def cmd_serve(args, config: Config) -> int:
    from .service import run_service

    run_service(
        _resolve_store_path(args, config),
        host=args.host,
        port=args.port,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fragsearch",
        description="Similarity search over 3D fragment scans.",
    )
    parser.add_argument("--config", type=Path, metavar="FILE",
                        help="flat key=value configuration file")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_store(p):
        p.add_argument("--store", type=Path, metavar="DIR",
                       help="fragment store directory")

    p = sub.add_parser("ingest", help="load meshes into a store")
    add_store(p)
    p.add_argument("--classes", required=True, metavar="FILE",
                   help="JSON file assigning a class to every mesh")
    p.add_argument("--seed", type=int,
                   help="descriptor seed for a newly created store")
    p.add_argument("meshes", nargs="+", metavar="MESH",
                   help="mesh files to ingest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("describe", help="compute missing descriptors")
    add_store(p)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default from config)")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("calibrate",
                       help="build distance matrices and thresholds")
    add_store(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("query", help="query by example")
    add_store(p)
    p.add_argument("query_id", metavar="FRAGMENT_ID")
    p.add_argument("--props", action="append", required=True,
                   metavar="P1,P2,...",
                   help="properties to filter on (AND semantics)")
    p.add_argument("--relax", type=int, default=0, metavar="N",
                   help="relaxation level (default 0)")
    p.add_argument("--json", action="store_true",
                   help="emit the result as JSON")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--recipe", type=Path, metavar="FILE",
                   help="recipe file (default: built-in 60-fragment corpus)")
    p.add_argument("--out", required=True, type=Path, metavar="DIR",
                   help="output directory")
    p.add_argument("--seed", type=int, help="override the recipe seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="serve the HTTP API and console")
    add_store(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else Config()
        return args.func(args, config)
    except FragsearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
