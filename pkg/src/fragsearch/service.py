"""Read-only HTTP facade over a fragment store.

Endpoints under ``/api`` expose the fragment listing, per-fragment
property gating, query execution, and raw mesh bytes; the built web
console is served from the package ``static/`` directory at ``/``.

The service never mutates a store.  Each request is answered from an
immutable snapshot keyed by the store manifest's content hash; when the
manifest changes on disk (the command-line tool finished a build), the
next request atomically swaps in a fresh snapshot.  Error responses
always carry the JSON body ``{"error": ..., "detail": ...}``.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, ConfigDict, Field
from starlette.exceptions import HTTPException as StarletteHTTPException

from .descriptors import PropertyId
from .engine import (
    MANIFEST_FILE,
    FragmentStore,
    QuerySpec,
    enabled_properties,
)
from .errors import (
    FragsearchError,
    PropertyNotEnabledError,
    UnknownFragmentError,
)

MESH_MEDIA_TYPE = "model/ply"
VALID_PROPERTY_NAMES = tuple(str(p) for p in PropertyId)


class ApiError(Exception):
    """An HTTP error carrying the service's uniform JSON body."""

    def __init__(self, status: int, error: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.error = error
        self.detail = detail


class ApiQueryRequest(BaseModel):
    """Wire form of an engine query."""

    model_config = ConfigDict(extra="forbid")

    query_id: str = Field(min_length=1)
    properties: list[str] = Field(min_length=1)
    relax_level: int = Field(default=0, ge=0)


@dataclass(frozen=True)
class StoreSnapshot:
    """One consistent view of the store, shared across requests."""

    key: str
    store: FragmentStore
    listing: tuple[dict, ...]


class StoreGateway:
    """Loads store snapshots and swaps them atomically on change."""

    def __init__(self, root):
        self.root = Path(root)
        self._lock = threading.Lock()
        self._snapshot: StoreSnapshot | None = None

    def snapshot(self) -> StoreSnapshot:
        key = self._manifest_key()
        with self._lock:
            snap = self._snapshot
            if snap is None or snap.key != key:
                snap = self._load(key)
                self._snapshot = snap
            return snap

    def _manifest_key(self) -> str:
        try:
            payload = (self.root / MANIFEST_FILE).read_bytes()
        except OSError:
            raise ApiError(503, "store_unavailable",
                           f"no fragment store at {self.root}") from None
        return hashlib.sha256(payload).hexdigest()

    def _load(self, key: str) -> StoreSnapshot:
        try:
            store = FragmentStore.open(self.root)
        except (FileNotFoundError, FragsearchError) as exc:
            raise ApiError(503, "store_unavailable", str(exc)) from exc
        listing = tuple(self._entry(store, fid)
                        for fid in store.fragment_ids())
        return StoreSnapshot(key=key, store=store, listing=listing)

    @staticmethod
    def _entry(store: FragmentStore, fragment_id: str) -> dict:
        record = store.records()[fragment_id]
        try:
            desc = store.load_descriptors(fragment_id)
            summary = {
                "size_diagonal": desc.size_diagonal,
                "size_aspect_ratio": desc.size_aspect_ratio,
                "thickness": desc.thickness,
                "compactness": desc.compactness,
                "vertex_count": desc.source_vertex_count,
            }
        except (FragsearchError, OSError):
            summary = None  # ingested but not yet described
        return {
            "id": fragment_id,
            "class": record.fragment_class,
            "collection": record.collection,
            "group_label": record.group_label,
            "summary": summary,
        }


def create_app(store_path) -> FastAPI:
    """Build the service application bound to one store directory."""
    gateway = StoreGateway(store_path)
    app = FastAPI(title="fragsearch", docs_url=None, redoc_url=None,
                  openapi_url=None)

    @app.exception_handler(ApiError)
    async def on_api_error(request, exc: ApiError):
        return JSONResponse({"error": exc.error, "detail": exc.detail},
                            status_code=exc.status)

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request, exc: RequestValidationError):
        return JSONResponse(
            {"error": "validation_error", "detail": str(exc)},
            status_code=422)

    @app.exception_handler(StarletteHTTPException)
    async def on_http_error(request, exc: StarletteHTTPException):
        return JSONResponse(
            {"error": "http_error", "detail": str(exc.detail)},
            status_code=exc.status_code)

    @app.get("/api/fragments")
    def list_fragments():
        return list(gateway.snapshot().listing)

    @app.get("/api/fragments/{fragment_id}/properties")
    def fragment_properties(fragment_id: str):
        snap = gateway.snapshot()
        try:
            record = snap.store.record(fragment_id)
        except UnknownFragmentError as exc:
            raise ApiError(404, "not_found", str(exc)) from exc
        enabled = enabled_properties(record.fragment_class)
        return {
            "class": record.fragment_class,
            "enabled": [str(p) for p in PropertyId if p in enabled],
        }

    @app.post("/api/query")
    def run_query(request: ApiQueryRequest):
        snap = gateway.snapshot()
        unknown = [n for n in request.properties
                   if n not in VALID_PROPERTY_NAMES]
        if unknown:
            raise ApiError(
                400, "unknown_property",
                f"unknown property name(s): {', '.join(unknown)}; "
                f"valid properties: {', '.join(VALID_PROPERTY_NAMES)}")
        try:
            spec = QuerySpec(
                query_id=request.query_id,
                properties=tuple(PropertyId(n) for n in request.properties),
                relax_level=request.relax_level,
            )
        except ValueError as exc:
            raise ApiError(400, "bad_request", str(exc)) from exc
        try:
            result = snap.store.query(spec)
        except UnknownFragmentError as exc:
            raise ApiError(404, "not_found", str(exc)) from exc
        except PropertyNotEnabledError as exc:
            raise ApiError(400, "property_disabled", str(exc)) from exc
        except FragsearchError as exc:
            # descriptors or calibration not built yet
            raise ApiError(503, "store_not_ready", str(exc)) from exc
        return result.to_dict()

    @app.get("/api/fragments/{fragment_id}/mesh")
    def fragment_mesh(fragment_id: str):
        snap = gateway.snapshot()
        try:
            path = snap.store.mesh_file(fragment_id)
        except UnknownFragmentError as exc:
            raise ApiError(404, "not_found", str(exc)) from exc
        if not path.is_file():
            raise ApiError(404, "not_found",
                           f"mesh file for '{fragment_id}' is missing")
        return FileResponse(path, media_type=MESH_MEDIA_TYPE)

    static_root = Path(__file__).resolve().parent / "static"
    if static_root.is_dir():
        app.mount("/", StaticFiles(directory=static_root, html=True),
                  name="console")
    return app


def run_service(store_path, host: str = "127.0.0.1",
                port: int = 8765) -> None:
    """Serve the API and console over HTTP until interrupted."""
    import uvicorn

    uvicorn.run(create_app(store_path), host=host, port=port)
