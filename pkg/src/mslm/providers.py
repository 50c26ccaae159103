"""Embedding/codegen backends: deterministic mock, precomputed files, remote bridge.

The mock provider stands in for the pretrained encoders: a class name maps to
a seeded-hash unit vector, pixel embeddings are the class vector of the
ground-truth class at each pixel plus optional Gaussian noise, and audio
embeddings are recovered from the dominant tone frequency of a segment.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ProviderError

DEFAULT_FEATURE_DIM = 512


def _seed_int(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:16], "little")


def label_vector(label: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector for a class name (float64)."""
    rng = np.random.default_rng(_seed_int(seed, "label", label))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def tone_frequency(label: str, lo: float = 300.0, hi: float = 3000.0) -> float:
    """Deterministic per-class tone frequency used by the synthetic harness."""
    step = 25.0
    n = int((hi - lo) / step)
    return lo + (_seed_int("tone", label) % n) * step


class MockProvider:
    """Pure, seeded provider; identical inputs always give identical outputs."""

    kind = "mock"

    def __init__(self, feature_dim: int = DEFAULT_FEATURE_DIM, seed: int = 0,
                 noise_sigma: float = 0.0):
        self.feature_dim = feature_dim
        self.seed = seed
        self.noise_sigma = noise_sigma

    def embed_text(self, labels) -> np.ndarray:
        return np.stack([label_vector(l, self.feature_dim, self.seed)
                         for l in labels])

    def embed_pixels(self, class_raster: np.ndarray, class_names) -> np.ndarray:
        """Dense pixel embeddings from a ground-truth class-index raster."""
        raster = np.asarray(class_raster)
        if raster.max(initial=0) >= len(class_names):
            raise ProviderError("raster references unknown class index")
        table = self.embed_text(class_names)
        feats = table[raster]
        if self.noise_sigma > 0:
            rng = np.random.default_rng(
                _seed_int(self.seed, "pixnoise", raster.tobytes())
            )
            feats = feats + rng.standard_normal(feats.shape) * self.noise_sigma
        return feats

    def embed_global(self, image) -> np.ndarray:
        """Whole-image descriptor; hash of the raw content."""
        if isinstance(image, str):
            payload = image.encode()
        else:
            payload = np.ascontiguousarray(image).tobytes()
        rng = np.random.default_rng(_seed_int(self.seed, "global", payload))
        v = rng.standard_normal(self.feature_dim)
        return v / np.linalg.norm(v)

    def embed_audio(self, samples: np.ndarray, sample_rate: float,
                    sound_classes) -> np.ndarray:
        """Audio embedding via dominant-frequency matching against known classes.

        The synthetic harness emits each sound class as a pure tone at
        :func:`tone_frequency`; the mock recovers the class from the spectrum
        peak and returns that class's text vector.
        """
        samples = np.asarray(samples, dtype=np.float64)
        if samples.size == 0 or not sound_classes:
            raise ProviderError("cannot embed empty audio segment")
        spectrum = np.abs(np.fft.rfft(samples))
        freqs = np.fft.rfftfreq(samples.size, d=1.0 / sample_rate)
        peak = freqs[int(np.argmax(spectrum))]
        best = min(sound_classes,
                   key=lambda c: (abs(tone_frequency(c) - peak), c))
        vec = label_vector(best, self.feature_dim, self.seed)
        if self.noise_sigma > 0:
            rng = np.random.default_rng(
                _seed_int(self.seed, "audnoise", samples.tobytes())
            )
            vec = vec + rng.standard_normal(vec.shape) * self.noise_sigma
            vec = vec / np.linalg.norm(vec)
        return vec

    def codegen(self, prompt: str) -> str:
        from .instruct import rule_based_codegen

        return rule_based_codegen(prompt)


def write_blob(path, arr: np.ndarray):
    """Descriptor blob: u32 ndim, ndim x u32 dims, float32 payload (LE)."""
    arr = np.asarray(arr)
    with open(path, "wb") as f:
        f.write(struct.pack("<I", arr.ndim))
        f.write(np.array(arr.shape, dtype="<u4").tobytes())
        f.write(arr.astype("<f4").tobytes())


def read_blob(path) -> np.ndarray:
    with open(path, "rb") as f:
        (ndim,) = struct.unpack("<I", f.read(4))
        dims = np.frombuffer(f.read(4 * ndim), dtype="<u4")
        data = np.frombuffer(f.read(), dtype="<f4")
    return data.reshape(tuple(int(d) for d in dims)).astype(np.float64)


class FileProvider:
    """Precomputed embeddings from a manifest-indexed blob directory."""

    kind = "file"

    def __init__(self, root):
        self.root = root
        manifest = os.path.join(root, "manifest.json")
        try:
            with open(manifest) as f:
                self.manifest = json.load(f)
        except OSError as exc:
            raise ProviderError(f"cannot read provider manifest: {exc}") from exc
        self.feature_dim = int(self.manifest["featureDim"])

    def _load(self, key: str) -> np.ndarray:
        entry = self.manifest["entries"].get(key)
        if entry is None:
            raise ProviderError(f"no precomputed embedding for {key!r}")
        arr = read_blob(os.path.join(self.root, entry))
        if arr.shape[-1] != self.feature_dim:
            raise DimensionMismatchError(
                f"blob for {key!r} has dim {arr.shape[-1]}, manifest says "
                f"{self.feature_dim}"
            )
        return arr

    def embed_text(self, labels) -> np.ndarray:
        rows = [self._load(f"text:{l}") for l in labels]
        return np.stack([r.reshape(-1) for r in rows])


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode()


def _from_b64(payload: str, dims) -> np.ndarray:
    data = np.frombuffer(base64.b64decode(payload), dtype="<f4")
    return data.reshape(tuple(int(d) for d in dims)).astype(np.float64)


class RemoteProvider:
    """Client for the embedding-bridge wire protocol."""

    kind = "remote"

    def __init__(self, endpoint=None, timeout: float = 30.0):
        import httpx

        self.endpoint = (endpoint or os.environ.get("MSLM_BRIDGE_URL")
                         or "http://127.0.0.1:8777").rstrip("/")
        self._client = httpx.Client(timeout=timeout)
        health = self._request("GET", "/health")
        self.feature_dim = int(health["featureDim"])

    def _request(self, method: str, path: str, payload=None):
        import httpx

        try:
            resp = self._client.request(method, self.endpoint + path, json=payload)
        except httpx.HTTPError as exc:
            raise ProviderError(f"bridge unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(
                f"bridge error {resp.status_code}: {resp.text[:200]}"
            )
        return resp.json()

    def embed_text(self, labels) -> np.ndarray:
        out = self._request("POST", "/embed/text", {"labels": list(labels)})
        return _from_b64(out["payload"], out["dims"])

    def embed_pixels(self, class_raster, class_names) -> np.ndarray:
        raster = np.asarray(class_raster, dtype="<i4")
        out = self._request("POST", "/embed/pixels", {
            "raster": base64.b64encode(raster.tobytes()).decode(),
            "rasterDims": list(raster.shape),
            "labels": list(class_names),
        })
        return _from_b64(out["payload"], out["dims"])

    def embed_global(self, image) -> np.ndarray:
        arr = np.asarray(image, dtype="<f4")
        out = self._request("POST", "/embed/global", {
            "payload": _b64(arr), "dims": list(arr.shape),
        })
        return _from_b64(out["payload"], out["dims"]).reshape(-1)

    def embed_audio(self, samples, sample_rate, sound_classes) -> np.ndarray:
        out = self._request("POST", "/embed/audio", {
            "payload": _b64(np.asarray(samples, dtype="<f4")),
            "sampleRate": float(sample_rate),
            "classes": list(sound_classes),
        })
        return _from_b64(out["payload"], out["dims"]).reshape(-1)

    def codegen(self, prompt: str) -> str:
        out = self._request("POST", "/codegen", {"prompt": prompt})
        return out["text"]


def make_provider(kind: str, **kwargs):
    if kind == "mock":
        return MockProvider(**kwargs)
    if kind == "file":
        return FileProvider(**kwargs)
    if kind == "remote":
        return RemoteProvider(**kwargs)
    raise ValueError(f"unknown provider kind {kind!r}")
