"""HTTP inference service: hallucination and landmark-driven prior editing.

The model is loaded once and used read-only; every request is stateless
and responses carry the checkpoint id they were produced with.
"""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from PIL import Image as PILImage
from pydantic import BaseModel

from . import __version__
from .data import LR_SIZE, OCCLUSION_FILL, Landmarks
from .evalkit import heatmap_peaks
from .generator import ProgressiveGenerator, load_generator


class HallucinateRequest(BaseModel):
    lr_png_base64: str
    mask_png_base64: str | None = None


class EditRequest(BaseModel):
    lr_png_base64: str
    landmarks: list[list[float]]
    stages: list[int] = [1, 2, 3]


def _decode_png(b64: str, mode: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        img = PILImage.open(io.BytesIO(raw))
        img = img.convert(mode)
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"undecodable PNG payload: {exc}") from exc
    arr = np.asarray(img)
    if mode == "RGB":
        arr = arr.transpose(2, 0, 1)
    return (arr.astype(np.float64) / 255.0).astype(np.float32)


def _encode_png(img: np.ndarray) -> str:
    arr = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    pil = PILImage.fromarray(arr.transpose(1, 2, 0), mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class ModelBundle:
    def __init__(self, generator: ProgressiveGenerator, ckpt_id: str):
        self.generator = generator.eval()
        self.ckpt_id = ckpt_id

    @staticmethod
    def from_checkpoint(path: str | Path) -> "ModelBundle":
        gen, _ = load_generator(path)
        return ModelBundle(gen, ckpt_id=Path(path).name)


def create_app(bundle: ModelBundle | None) -> FastAPI:
    app = FastAPI(title="faceup", version=__version__)

    def require_model() -> ModelBundle:
        if bundle is None:
            raise HTTPException(status_code=503, detail="no model loaded")
        return bundle

    def run_and_respond(lr: np.ndarray, fn) -> dict:
        b = require_model()
        if lr.shape != (3, LR_SIZE, LR_SIZE):
            raise HTTPException(
                status_code=400,
                detail=f"input must be {LR_SIZE}x{LR_SIZE} RGB, got {lr.shape[-2:]}",
            )
        lr_t = torch.from_numpy(lr).unsqueeze(0)
        with torch.no_grad():
            out = fn(b.generator, lr_t)
        peaks = heatmap_peaks(out.heatmaps[-1].squeeze(0))
        return {
            "hr_png_base64": _encode_png(out.final.squeeze(0).numpy()),
            "stages": [_encode_png(img.squeeze(0).numpy()) for img in out.images],
            "landmarks": [[float(x), float(y)] for x, y in peaks],
            "ckpt": b.ckpt_id,
        }

    @app.get("/v1/model")
    def model_info():
        b = require_model()
        return {
            "K": b.generator.config.landmark_count,
            "ckpt": b.ckpt_id,
            "version": __version__,
        }

    @app.post("/v1/hallucinate")
    def hallucinate(req: HallucinateRequest):
        lr = _decode_png(req.lr_png_base64, "RGB")
        if req.mask_png_base64 is not None:
            mask = _decode_png(req.mask_png_base64, "L")
            if mask.shape != (LR_SIZE, LR_SIZE):
                raise HTTPException(
                    status_code=400, detail=f"mask must be {LR_SIZE}x{LR_SIZE}, got {mask.shape}"
                )
            lr = lr.copy()
            lr[:, mask > 0.5] = OCCLUSION_FILL
        return run_and_respond(lr, lambda gen, t: gen(t))

    @app.post("/v1/edit")
    def edit(req: EditRequest):
        b = require_model()
        k = b.generator.config.landmark_count
        if len(req.landmarks) != k or any(len(p) != 2 for p in req.landmarks):
            raise HTTPException(status_code=400, detail=f"expected {k} [x, y] landmark pairs")
        pts = np.asarray(req.landmarks, dtype=np.float64)
        if not np.isfinite(pts).all():
            raise HTTPException(status_code=400, detail="landmark coordinates must be finite")
        stages = set(req.stages)
        if not stages or not stages <= {1, 2, 3}:
            raise HTTPException(status_code=400, detail="stages must be a nonempty subset of {1,2,3}")
        lr = _decode_png(req.lr_png_base64, "RGB")
        edited = Landmarks(points=pts)
        return run_and_respond(
            lr, lambda gen, t: gen.hallucinate_with_prior_override(t, edited, stages)
        )

    return app


def serve(ckpt: str | Path, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    app = create_app(ModelBundle.from_checkpoint(ckpt))
    uvicorn.run(app, host=host, port=port, log_level="warning")
