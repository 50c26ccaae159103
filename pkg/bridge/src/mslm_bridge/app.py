"""Embedding/codegen service speaking the remote-provider wire protocol.

Endpoints: /health, /embed/text, /embed/pixels, /embed/global, /embed/audio,
/codegen.  Embedding responses carry a base64 little-endian float32 payload
plus its dims; /health declares the feature dimension every embedding response
honors.  In echo mode the service wraps the deterministic mock provider, so
responses are byte-deterministic for a given seed and integration tests need
no model weights.
"""

import base64
import binascii
import time
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from mslm.errors import MslmError
from mslm.providers import MockProvider

MAX_PAYLOAD_BYTES = 8 << 20


@dataclass(frozen=True)
class BridgeConfig:
    """Service configuration; echo mode is the only CI-supported backend."""

    feature_dim: int = 32
    seed: int = 0
    noise_sigma: float = 0.0
    mode: str = "echo"
    max_payload_bytes: int = MAX_PAYLOAD_BYTES

    @property
    def model_id(self) -> str:
        return f"echo-mock-seed{self.seed}-c{self.feature_dim}"


class PayloadTooLarge(Exception):
    pass


class TextRequest(BaseModel):
    labels: list


class PixelsRequest(BaseModel):
    raster: str
    rasterDims: list
    labels: list


class ArrayRequest(BaseModel):
    payload: str
    dims: list


class AudioRequest(BaseModel):
    payload: str
    sampleRate: float
    classes: list


class CodegenRequest(BaseModel):
    prompt: str


def _decode_b64(payload: str, dtype: str, dims, limit: int) -> np.ndarray:
    if len(payload) * 3 // 4 > limit:
        raise PayloadTooLarge(f"payload exceeds {limit} bytes")
    try:
        raw = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ValueError(f"payload is not valid base64: {exc}") from exc
    arr = np.frombuffer(raw, dtype=dtype)
    shape = tuple(int(d) for d in dims)
    try:
        return arr.reshape(shape)
    except ValueError as exc:
        raise ValueError(f"dims {shape} do not match payload size") from exc


def _embedding_response(arr: np.ndarray, config: BridgeConfig,
                        started: float) -> dict:
    out = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
    return {
        "payload": base64.b64encode(out.tobytes()).decode(),
        "dims": list(out.shape),
        "modelId": config.model_id,
        "latencyMs": (time.perf_counter() - started) * 1000.0,
    }


def create_app(config: BridgeConfig = None) -> FastAPI:
    config = config or BridgeConfig()
    if config.mode != "echo":
        raise ValueError(f"unsupported serving mode {config.mode!r}")
    app = FastAPI(title="mslm-bridge")

    # A fresh provider per request: no state can leak across requests.
    def provider() -> MockProvider:
        return MockProvider(feature_dim=config.feature_dim, seed=config.seed,
                            noise_sigma=config.noise_sigma)

    @app.exception_handler(PayloadTooLarge)
    async def _too_large(request, exc):
        return JSONResponse(status_code=413, content={"error": str(exc)})

    @app.exception_handler(MslmError)
    async def _model_error(request, exc):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    @app.exception_handler(ValueError)
    async def _bad_request(request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "featureDim": config.feature_dim,
            "mode": config.mode,
            "modelIds": {
                "text": config.model_id,
                "pixels": config.model_id,
                "global": config.model_id,
                "audio": config.model_id,
                "codegen": config.model_id,
            },
        }

    @app.post("/embed/text")
    def embed_text(req: TextRequest):
        started = time.perf_counter()
        if not req.labels:
            raise ValueError("labels must be non-empty")
        vecs = provider().embed_text([str(l) for l in req.labels])
        return _embedding_response(vecs, config, started)

    @app.post("/embed/pixels")
    def embed_pixels(req: PixelsRequest):
        started = time.perf_counter()
        raster = _decode_b64(req.raster, "<i4", req.rasterDims,
                             config.max_payload_bytes)
        feats = provider().embed_pixels(raster, [str(l) for l in req.labels])
        return _embedding_response(feats, config, started)

    @app.post("/embed/global")
    def embed_global(req: ArrayRequest):
        started = time.perf_counter()
        image = _decode_b64(req.payload, "<f4", req.dims,
                            config.max_payload_bytes)
        vec = provider().embed_global(image.astype(np.float64))
        return _embedding_response(vec, config, started)

    @app.post("/embed/audio")
    def embed_audio(req: AudioRequest):
        started = time.perf_counter()
        samples = _decode_b64(req.payload, "<f4", [-1],
                              config.max_payload_bytes)
        vec = provider().embed_audio(samples.astype(np.float64),
                                     req.sampleRate,
                                     [str(c) for c in req.classes])
        return _embedding_response(vec, config, started)

    @app.post("/codegen")
    def codegen(req: CodegenRequest):
        started = time.perf_counter()
        if len(req.prompt.encode()) > config.max_payload_bytes:
            raise PayloadTooLarge(
                f"prompt exceeds {config.max_payload_bytes} bytes")
        text = provider().codegen(req.prompt)
        return {
            "text": text,
            "modelId": config.model_id,
            "latencyMs": (time.perf_counter() - started) * 1000.0,
        }

    return app


def main(argv=None):
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(prog="mslm-bridge")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8777)
    parser.add_argument("--feature-dim", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--noise-sigma", type=float, default=0.0)
    args = parser.parse_args(argv)
    app = create_app(BridgeConfig(feature_dim=args.feature_dim,
                                  seed=args.seed,
                                  noise_sigma=args.noise_sigma))
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
