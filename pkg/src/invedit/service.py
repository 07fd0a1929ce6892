"""HTTP service exposing inversion and editing to the studio UI.

JSON in, JSON out; images travel as base64-encoded PNG strings.  Sessions
cache (source, latent, distortion map) keyed by a digest of the request, so
identical requests against identical checkpoints produce byte-identical
responses (timing fields aside) and a repeated invert reuses its session.
"""

from __future__ import annotations

import base64
import hashlib
import io
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .editing import invert, load_directions
from .errors import ConfigError, ValidationError
from .evaluation import run_edit
from .metrics import mae, ssim
from .models import ModelBundle
from .scenes import SceneDataset


@dataclass
class ServiceConfig:
    checkpoint_dir: str = ""
    directions_dir: str = ""
    host: str = "127.0.0.1"
    port: int = 8321
    max_sessions: int = 64
    session_idle_seconds: float = 1800.0
    gallery_n: int = 64
    gallery_seed: int = 4242
    max_image_bytes: int = 2_000_000
    static_dir: str = ""


def encode_image(img: torch.Tensor) -> str:
    from PIL import Image as PILImage

    arr = ((img.detach().numpy().transpose(1, 2, 0) + 1.0) * 127.5)
    arr = arr.round().clip(0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image(data: str, resolution: int) -> torch.Tensor:
    from PIL import Image as PILImage

    try:
        raw = base64.b64decode(data, validate=True)
        pil = PILImage.open(io.BytesIO(raw)).convert("RGB")
    except Exception as exc:
        raise ValidationError(f"undecodable image payload: {exc}") from exc
    if pil.size != (resolution, resolution):
        raise ValidationError(
            f"image must be {resolution}x{resolution}, got {pil.size[0]}x{pil.size[1]}"
        )
    arr = np.asarray(pil, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr.transpose(2, 0, 1))


@dataclass
class Session:
    source: torch.Tensor
    latent: torch.Tensor
    delta: torch.Tensor
    use_consultation: bool
    inversion: torch.Tensor
    last_used: float = field(default_factory=time.monotonic)


class SessionStore:
    """LRU-bounded, idle-expiring session cache."""

    def __init__(self, max_entries: int, idle_seconds: float):
        self.max_entries = max_entries
        self.idle_seconds = idle_seconds
        self._lock = threading.Lock()
        self._entries: OrderedDict[str, Session] = OrderedDict()

    def _sweep(self, now: float) -> None:
        stale = [k for k, s in self._entries.items()
                 if now - s.last_used > self.idle_seconds]
        for k in stale:
            del self._entries[k]

    def put(self, key: str, session: Session) -> None:
        with self._lock:
            now = time.monotonic()
            self._sweep(now)
            session.last_used = now
            self._entries[key] = session
            self._entries.move_to_end(key)
            while len(self._entries) > self.max_entries:
                self._entries.popitem(last=False)

    def get(self, key: str) -> Session | None:
        with self._lock:
            now = time.monotonic()
            self._sweep(now)
            session = self._entries.get(key)
            if session is None:
                return None
            session.last_used = now
            self._entries.move_to_end(key)
            return session

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def _error(code: str, message: str, status: int):
    return JSONResponse(status_code=status,
                        content={"error": {"code": code, "message": message}})


def create_app(bundle: ModelBundle | None, directions: dict, config: ServiceConfig):
    """Build the FastAPI app; `bundle` may be None (everything answers 503)."""
    app = FastAPI(title="invedit service")
    sessions = SessionStore(config.max_sessions, config.session_idle_seconds)
    app.state.sessions = sessions
    app.state.bundle = bundle
    app.state.directions = directions

    gallery: SceneDataset | None = None
    if bundle is not None:
        gallery = SceneDataset(config.gallery_n, config.gallery_seed,
                               bundle.resolution)

    def session_key(image_b64: str, use_consultation: bool) -> str:
        digest = hashlib.sha256()
        digest.update(image_b64.encode("ascii"))
        digest.update(b"consult" if use_consultation else b"plain")
        return digest.hexdigest()[:32]

    @app.get("/api/health")
    def health():
        if bundle is None:
            return _error("models_not_loaded", "no checkpoints loaded", 503)
        return {"status": "ok", "checkpoints": bundle.checkpoint_ids(),
                "resolution": bundle.resolution}

    @app.get("/api/directions")
    def list_directions():
        if bundle is None:
            return _error("models_not_loaded", "no checkpoints loaded", 503)
        return [{"name": d.name, "scale_hint": d.scale_hint}
                for d in directions.values()]

    @app.get("/api/gallery")
    def get_gallery(n: int = 12):
        if bundle is None or gallery is None:
            return _error("models_not_loaded", "no checkpoints loaded", 503)
        n = max(1, min(n, len(gallery)))
        items = [
            {"id": f"gallery_{i:04d}", "image": encode_image(gallery.images[i])}
            for i in range(n)
        ]
        return {"items": items}

    def resolve_image(body: dict):
        image_b64 = body.get("image")
        gallery_id = body.get("gallery_id")
        if image_b64 is not None:
            if len(image_b64) > config.max_image_bytes:
                raise _PayloadTooLarge()
            return image_b64
        if gallery_id is not None and gallery is not None:
            try:
                idx = int(str(gallery_id).split("_")[-1])
                img = gallery.images[idx]
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"unknown gallery id {gallery_id!r}") from exc
            return encode_image(img)
        raise ValidationError("request needs `image` or `gallery_id`")

    class _PayloadTooLarge(Exception):
        pass

    @app.post("/api/invert")
    async def invert_endpoint(request: Request):
        if bundle is None:
            return _error("models_not_loaded", "no checkpoints loaded", 503)
        try:
            body = await request.json()
        except Exception:
            return _error("bad_json", "request body is not valid JSON", 400)
        try:
            use_consultation = bool(body.get("use_consultation", True))
            image_b64 = resolve_image(body)
            x = decode_image(image_b64, bundle.resolution)
        except _PayloadTooLarge:
            return _error("image_too_large", "image payload exceeds the limit", 413)
        except ValidationError as exc:
            return _error("bad_request", str(exc), 400)
        if use_consultation and bundle.consult is None:
            return _error("models_not_loaded", "consultation checkpoint missing", 503)

        result = invert(x, bundle, use_consultation)
        key = session_key(image_b64, use_consultation)
        sessions.put(key, Session(source=x, latent=result.latent, delta=result.delta,
                                  use_consultation=use_consultation,
                                  inversion=result.image))
        return {
            "session_id": key,
            "inversion": encode_image(result.image),
            "metrics": {"mae": float(mae(x, result.image)),
                        "ssim": float(ssim(x, result.image))},
        }

    @app.post("/api/edit")
    async def edit_endpoint(request: Request):
        if bundle is None:
            return _error("models_not_loaded", "no checkpoints loaded", 503)
        try:
            body = await request.json()
        except Exception:
            return _error("bad_json", "request body is not valid JSON", 400)

        name = body.get("direction")
        if name not in directions:
            return _error("unknown_direction", f"no direction named {name!r}", 400)
        direction = directions[name]
        try:
            alpha = float(body.get("alpha", 0.0))
        except (TypeError, ValueError):
            return _error("bad_request", "alpha must be a number", 400)

        backend = body.get("backend")
        use_consultation = bool(body.get("use_consultation", True))
        if backend is None:
            backend = "consult" if use_consultation else "lowrate"
        if backend not in ("lowrate", "consult", "naive"):
            return _error("bad_request", f"unknown backend {backend!r}", 400)
        if backend == "consult" and bundle.consult is None:
            return _error("models_not_loaded", "consultation checkpoint missing", 503)
        if backend == "naive" and bundle.naive is None:
            return _error("models_not_loaded", "naive checkpoint missing", 503)

        session_id = body.get("session_id")
        if session_id is not None:
            session = sessions.get(str(session_id))
            if session is None:
                return _error("unknown_session", f"session {session_id!r} not found", 404)
            x = session.source
        else:
            try:
                image_b64 = resolve_image(body)
                x = decode_image(image_b64, bundle.resolution)
            except _PayloadTooLarge:
                return _error("image_too_large", "image payload exceeds the limit", 413)
            except ValidationError as exc:
                return _error("bad_request", str(exc), 400)

        t0 = time.perf_counter()
        edited = run_edit(backend, x, direction, alpha, bundle)
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        return {"edited": encode_image(edited), "response_ms": elapsed_ms}

    if config.static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.static_dir, html=True),
                  name="studio")

    return app


def load_service(config: ServiceConfig):
    """Load bundle + directions (missing checkpoints leave the app degraded)."""
    bundle = None
    directions: dict = {}
    try:
        bundle = ModelBundle.load(config.checkpoint_dir)
    except (ConfigError, FileNotFoundError):
        bundle = None
    if config.directions_dir:
        try:
            directions = load_directions(config.directions_dir)
        except FileNotFoundError:
            directions = {}
    return create_app(bundle, directions, config)


def serve(config: ServiceConfig) -> None:
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    app = load_service(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
