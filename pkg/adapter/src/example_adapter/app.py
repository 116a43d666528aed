"""Example model service implementing the gateway's REST contract.

POST /infer takes {"task_kind": "depth", "rgb": <Base64 PNG>, ...} and
returns a raw16 depth map where every pixel is

    depth_mm = round(1000 * (0.5 + luminance))

with Rec.601 luminance in [0, 1] from the decoded RGB. The prediction is
deliberately wrong; its value is that it is deterministic and exercises
the whole remote path: real models replace `infer` and keep the contract.

GET /health answers {"status": "ok"} once the (simulated) model load has
finished, and 503 before that, mirroring services with slow weight loads.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import io
import os
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image

MODEL_ID = "luminance-pseudo-depth"

# Rec.601 luma weights; stated here because the gateway-side integration
# test recomputes the same formula independently.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def luminance_depth_mm(rgb: np.ndarray) -> np.ndarray:
    """round(1000 * (0.5 + luminance)) as uint16 millimeters."""
    r, g, b = (rgb[..., i].astype(np.float64) for i in range(3))
    luminance = (LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b) / 255.0
    return np.round(1000.0 * (0.5 + luminance)).astype(np.uint16)


def infer(rgb_png: bytes) -> dict:
    image = Image.open(io.BytesIO(rgb_png))
    image.load()
    if image.mode not in ("RGB", "RGBA"):
        image = image.convert("RGB")
    rgb = np.asarray(image)[..., :3]
    depth = luminance_depth_mm(rgb)
    h, w = depth.shape
    return {
        "model_id": MODEL_ID,
        "latency_ms": 0.0,
        "depth": {
            "data": base64.b64encode(depth.astype("<u2").tobytes()).decode("ascii"),
            "width": w,
            "height": h,
        },
    }


def create_app(warmup_s: float = 0.0) -> FastAPI:
    app = FastAPI(title="arbench example adapter", docs_url=None, redoc_url=None)
    app.state.ready_at = time.monotonic() + warmup_s

    def schema_error(message):
        return JSONResponse(status_code=400, content={"code": "SchemaMismatch", "message": message})

    @app.get("/health")
    def health():
        if time.monotonic() < app.state.ready_at:
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {"status": "ok"}

    @app.post("/infer")
    async def infer_endpoint(request: Request):
        if time.monotonic() < app.state.ready_at:
            return JSONResponse(status_code=503, content={"status": "loading"})
        try:
            body = await request.json()
        except Exception:
            return schema_error("request body is not JSON")
        if body.get("task_kind") != "depth":
            return schema_error(f"unsupported task_kind {body.get('task_kind')!r}")
        encoded = body.get("rgb")
        if not isinstance(encoded, str):
            return schema_error("missing Base64 'rgb' field")
        try:
            rgb_png = base64.b64decode(encoded.encode("ascii"), validate=True)
        except (binascii.Error, UnicodeEncodeError) as exc:
            return schema_error(f"invalid Base64: {exc}")
        try:
            started = time.perf_counter()
            response = infer(rgb_png)
            response["latency_ms"] = (time.perf_counter() - started) * 1000.0
        except Exception as exc:
            return schema_error(f"undecodable PNG: {exc}")
        return response

    return app


def main(argv=None):
    import uvicorn

    parser = argparse.ArgumentParser(description="run the example inference adapter")
    parser.add_argument("--host", default="0.0.0.0")
    parser.add_argument("--port", type=int, default=int(os.environ.get("ADAPTER_PORT", "9707")))
    parser.add_argument(
        "--warmup-s", type=float, default=float(os.environ.get("ADAPTER_WARMUP_S", "0"))
    )
    args = parser.parse_args(argv)
    uvicorn.run(create_app(args.warmup_s), host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    main()
