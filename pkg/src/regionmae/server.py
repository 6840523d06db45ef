"""HTTP service exposing interactive region completion.

Stateless per request: weights are loaded once and read-only; the data
directory is only ever read.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .completion import PromptError, complete_from_prompts
from .trainer import load_checkpoint


def load_image(path):
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return img


def create_app(checkpoint_dir, data_dir, frontend_dir=None) -> FastAPI:
    model, _ = load_checkpoint(checkpoint_dir)
    data_dir = Path(data_dir)
    cfg = model.cfg
    app = FastAPI(title="region completion service")

    def image_path(image_id):
        path = data_dir / f"{image_id}.png"
        return path if path.exists() else None

    @app.get("/images")
    def list_images():
        ids = sorted(p.stem for p in data_dir.glob("*.png"))
        return {"ids": ids}

    @app.get("/image/{image_id}")
    def get_image(image_id: str):
        path = image_path(image_id)
        if path is None:
            return JSONResponse({"error": f"unknown image id {image_id!r}"}, status_code=404)
        return FileResponse(path, media_type="image/png")

    @app.get("/meta/{image_id}")
    def get_meta(image_id: str):
        path = image_path(image_id)
        if path is None:
            return JSONResponse({"error": f"unknown image id {image_id!r}"}, status_code=404)
        img = load_image(path)
        h, w = img.shape[:2]
        return {"h": h, "w": w, "patch": cfg.patch, "n": cfg.num_patches}

    @app.post("/segment")
    async def segment(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "malformed JSON body"}, status_code=400)
        if not isinstance(body, dict) or "id" not in body or "prompts" not in body:
            return JSONResponse({"error": "body must contain 'id' and 'prompts'"},
                                status_code=400)
        path = image_path(body["id"])
        if path is None:
            return JSONResponse({"error": f"unknown image id {body['id']!r}"}, status_code=404)
        image = load_image(path)
        if image.shape[0] != cfg.image_size or image.shape[1] != cfg.image_size:
            return JSONResponse({"error": "image geometry does not match the model"},
                                status_code=400)
        try:
            result = complete_from_prompts(model, image, body["prompts"])
        except (PromptError, TypeError, KeyError) as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        return {
            "probs": result["probs"].tolist(),
            "binary": result["binary"].tolist(),
            "threshold": result["threshold"],
        }

    if frontend_dir and Path(frontend_dir).exists():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="frontend")
    return app


def io_buffer_png(image):
    """Encode a float [0,1] RGB array as PNG bytes."""
    buf = io.BytesIO()
    Image.fromarray((np.clip(image, 0, 1) * 255).astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()
