"""Model registry and inference client for pluggable CV model services.

Two backends: builtin reference models (deterministic test doubles that
exercise the whole pipeline without weights) and remote HTTP services
implementing the fixed-schema REST contract:

    POST {base_url}/infer
        {"task_kind": "depth"|"lighting", "rgb": <Base64 PNG>,
         "intrinsics": {...}, "extras": {...}}
    -> depth:    {"model_id": ..., "latency_ms": ...,
                  "depth": {"data": <Base64 raw16 LE mm>, "width": W, "height": H}}
    -> lighting: {"model_id": ..., "latency_ms": ...,
                  "lighting": {"env_map": <Base64 PFM>, "width": W, "height": H}}
    GET {base_url}/health -> {"status": "ok"}

Depth responses stay at the model's native resolution; the gateway never
resizes. Depth payloads are uint16 millimeters, so adapters quantize.
"""

from __future__ import annotations

import threading
import time
import urllib.parse
from dataclasses import dataclass, field

import httpx
import numpy as np

from . import lighting, pfm, wire
from .core import ArbenchError, DepthMap, EnvironmentMap, Frame, SessionManifest

DEFAULT_TIMEOUT_MS = 5000

TASK_KINDS = ("depth", "lighting")


class GatewayError(ArbenchError):
    code = "GatewayError"


class DuplicateModel(GatewayError):
    code = "DuplicateModel"


class BadDescriptor(GatewayError):
    code = "BadDescriptor"


class NoSuchModel(GatewayError):
    code = "NoSuchModel"


class ModelTimeout(GatewayError):
    code = "ModelTimeout"


class ModelError(GatewayError):
    code = "ModelError"


class SchemaMismatch(GatewayError):
    code = "SchemaMismatch"


@dataclass(frozen=True)
class ModelDescriptor:
    model_id: str
    task_kind: str
    backend: str  # "builtin" | "remote"
    builtin_name: str | None = None
    params: dict = field(default_factory=dict)
    base_url: str | None = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def to_json_dict(self):
        d = {
            "model_id": self.model_id,
            "task_kind": self.task_kind,
            "backend": self.backend,
            "timeout_ms": self.timeout_ms,
        }
        if self.backend == "builtin":
            d["builtin_name"] = self.builtin_name
            d["params"] = dict(self.params)
        else:
            d["base_url"] = self.base_url
        return d

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            model_id=d["model_id"],
            task_kind=d["task_kind"],
            backend=d["backend"],
            builtin_name=d.get("builtin_name"),
            params=dict(d.get("params", {})),
            base_url=d.get("base_url"),
            timeout_ms=int(d.get("timeout_ms", DEFAULT_TIMEOUT_MS)),
        )


def builtin_model(model_id, builtin_name, task_kind="depth", params=None, timeout_ms=DEFAULT_TIMEOUT_MS):
    return ModelDescriptor(
        model_id=model_id,
        task_kind=task_kind,
        backend="builtin",
        builtin_name=builtin_name,
        params=dict(params or {}),
        timeout_ms=timeout_ms,
    )


def remote_model(model_id, base_url, task_kind="depth", timeout_ms=DEFAULT_TIMEOUT_MS):
    return ModelDescriptor(
        model_id=model_id,
        task_kind=task_kind,
        backend="remote",
        base_url=base_url,
        timeout_ms=timeout_ms,
    )


# -- builtin reference models ----------------------------------------------


def _builtin_sensor_passthrough(frame, manifest, params):
    return frame.depth


def _builtin_constant(frame, manifest, params):
    meters = float(params.get("c", 1.0))
    mm = int(round(meters * 1000.0))
    if not 0 < mm <= 65535:
        raise BadDescriptor(f"constant depth {meters} m out of the uint16 range")
    values = np.full((frame.depth.height, frame.depth.width), mm, dtype=np.uint16)
    return DepthMap(values)


def _builtin_scale(frame, manifest, params):
    k = float(params.get("k", 1.0))
    if k <= 0:
        raise BadDescriptor("scale factor must be > 0")
    scaled = np.rint(frame.depth.values.astype(np.float64) * k)
    out = np.clip(scaled, 0, 65535).astype(np.uint16)
    out[frame.depth.values == 0] = 0  # invalid stays invalid
    return DepthMap(out)


def _builtin_plane_sweep(frame, manifest, params):
    a = float(params.get("a", 0.5))
    b = float(params.get("b", 1.0))
    h, w = frame.depth.height, frame.depth.width
    rows = a + b * np.arange(h, dtype=np.float64) / h
    meters = np.repeat(rows[:, None], w, axis=1)
    return DepthMap.from_meters(meters)


def _builtin_gray_lit(frame, manifest, params):
    radiance = params.get("l", 1.0)
    w = int(params.get("width", 128))
    h = int(params.get("height", 64))
    rgb = np.asarray(radiance, dtype=np.float32)
    if rgb.ndim == 0:
        rgb = np.full(3, float(rgb), dtype=np.float32)
    values = np.broadcast_to(rgb, (h, w, 3)).copy()
    return EnvironmentMap(values)


def _builtin_rotate_env(frame, manifest, params):
    delta = float(params.get("delta_deg", 0.0))
    if "env" in params:
        src = params["env"]
    elif "src" in params:
        src = EnvironmentMap(pfm.decode_pfm(open(params["src"], "rb").read()))
    else:
        raise BadDescriptor("rotate-env needs 'src' (PFM path) or 'env' (map object)")
    return lighting.rotate_env(src, delta)


BUILTIN_MODELS = {
    "sensor-passthrough": ("depth", _builtin_sensor_passthrough),
    "constant": ("depth", _builtin_constant),
    "scale": ("depth", _builtin_scale),
    "plane-sweep": ("depth", _builtin_plane_sweep),
    "gray-lit": ("lighting", _builtin_gray_lit),
    "rotate-env": ("lighting", _builtin_rotate_env),
}


# -- registry ----------------------------------------------------------------


class ModelRegistry:
    """Read-mostly registry; registration is exclusive, inference concurrent."""

    def __init__(self):
        self._models: dict[str, ModelDescriptor] = {}
        self._lock = threading.Lock()
        self.latency_log: dict[str, list] = {}

    def validate(self, d: ModelDescriptor):
        if not d.model_id:
            raise BadDescriptor("model_id must be nonempty")
        if d.task_kind not in TASK_KINDS:
            raise BadDescriptor(f"task_kind must be one of {TASK_KINDS}")
        if d.timeout_ms <= 0:
            raise BadDescriptor("timeout_ms must be positive")
        if d.backend == "builtin":
            if d.builtin_name not in BUILTIN_MODELS:
                raise BadDescriptor(f"unknown builtin {d.builtin_name!r}")
            builtin_kind = BUILTIN_MODELS[d.builtin_name][0]
            if builtin_kind != d.task_kind:
                raise BadDescriptor(
                    f"builtin {d.builtin_name!r} is a {builtin_kind} model, not {d.task_kind}"
                )
        elif d.backend == "remote":
            parsed = urllib.parse.urlparse(d.base_url or "")
            if parsed.scheme not in ("http", "https") or not parsed.netloc:
                raise BadDescriptor(f"base_url {d.base_url!r} is not a usable http(s) URL")
        else:
            raise BadDescriptor(f"unknown backend {d.backend!r}")

    def register(self, d: ModelDescriptor):
        self.validate(d)
        with self._lock:
            if d.model_id in self._models:
                raise DuplicateModel(d.model_id)
            self._models[d.model_id] = d
            self.latency_log[d.model_id] = []

    def get(self, model_id) -> ModelDescriptor:
        with self._lock:
            if model_id not in self._models:
                raise NoSuchModel(model_id)
            return self._models[model_id]

    def model_ids(self):
        with self._lock:
            return sorted(self._models)

    def has(self, model_id):
        with self._lock:
            return model_id in self._models

    def infer(self, model_id, frame: Frame, manifest: SessionManifest):
        """Run one model on one frame; returns a DepthMap or EnvironmentMap."""
        d = self.get(model_id)
        started = time.perf_counter()
        if d.backend == "builtin":
            result = BUILTIN_MODELS[d.builtin_name][1](frame, manifest, d.params)
        else:
            result = self._infer_remote(d, frame, manifest)
        self.latency_log[model_id].append((time.perf_counter() - started) * 1000.0)
        return result

    def _infer_remote(self, d: ModelDescriptor, frame, manifest):
        request = {
            "task_kind": d.task_kind,
            "rgb": wire.encode_rest_image(wire.encode_png(frame.rgb)),
            "intrinsics": manifest.intrinsics.to_json_dict(),
            "extras": {},
        }
        try:
            resp = httpx.post(
                d.base_url.rstrip("/") + "/infer",
                json=request,
                timeout=d.timeout_ms / 1000.0,
            )
        except httpx.TimeoutException as exc:
            raise ModelTimeout(f"{d.model_id}: no response within {d.timeout_ms} ms") from exc
        except httpx.HTTPError as exc:
            raise ModelError(f"{d.model_id}: {exc}") from exc
        if resp.status_code != 200:
            raise ModelError(f"{d.model_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise ModelError(f"{d.model_id}: non-JSON response: {exc}") from exc
        return parse_inference_response(body, d.task_kind)

    def health(self, model_id) -> bool:
        d = self.get(model_id)
        if d.backend == "builtin":
            return True
        try:
            resp = httpx.get(d.base_url.rstrip("/") + "/health", timeout=d.timeout_ms / 1000.0)
        except httpx.HTTPError:
            return False
        return resp.status_code == 200 and resp.json().get("status") == "ok"


def parse_inference_response(body: dict, task_kind: str):
    """Validate a response document against the fixed schema and decode it."""
    if task_kind == "depth":
        payload = body.get("depth")
        if not isinstance(payload, dict):
            raise SchemaMismatch("response lacks a 'depth' object")
        try:
            w, h = int(payload["width"]), int(payload["height"])
            raw = wire.decode_rest_image(payload["data"])
        except (KeyError, wire.EncodingFailure) as exc:
            raise SchemaMismatch(f"bad depth payload: {exc}") from None
        if w <= 0 or h <= 0:
            raise SchemaMismatch(f"non-positive depth dimensions {w}x{h}")
        if len(raw) != w * h * 2:
            raise SchemaMismatch(f"depth data is {len(raw)} bytes for {w}x{h}")
        return wire.decode_depth_payload(raw, w, h)

    payload = body.get("lighting")
    if not isinstance(payload, dict):
        raise SchemaMismatch("response lacks a 'lighting' object")
    try:
        w, h = int(payload["width"]), int(payload["height"])
        raw = wire.decode_rest_image(payload["env_map"])
        env = EnvironmentMap(pfm.decode_pfm(raw))
    except (KeyError, wire.EncodingFailure, pfm.PfmError) as exc:
        raise SchemaMismatch(f"bad lighting payload: {exc}") from None
    if (env.width, env.height) != (w, h):
        raise SchemaMismatch(f"env map is {env.width}x{env.height}, declared {w}x{h}")
    return env


def encode_inference_response(model_id, result, latency_ms=0.0) -> dict:
    """Build a response document from a DepthMap or EnvironmentMap."""
    if isinstance(result, DepthMap):
        raw = np.asarray(result.values, dtype="<u2").tobytes()
        return {
            "model_id": model_id,
            "latency_ms": latency_ms,
            "depth": {
                "data": wire.encode_rest_image(raw),
                "width": result.width,
                "height": result.height,
            },
        }
    return {
        "model_id": model_id,
        "latency_ms": latency_ms,
        "lighting": {
            "env_map": wire.encode_rest_image(pfm.encode_pfm(result.values)),
            "width": result.width,
            "height": result.height,
        },
    }
