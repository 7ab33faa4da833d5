"""Local HTTP service for interactive part-based editing.

Sessions hold a GeneratedShape plus its edit history; models are frozen
snapshots shared across sessions. Voxel payloads travel as base64 VOXB.
"""

import base64
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import voxb
from .assembler import assemble, predict_transforms
from .genops import EMPTY_MIN_VOXELS, DegenerateSample, crossover, sample_shape
from .voxgrid import SCALE_MAX, SCALE_MIN, PartTransform, apply_transform, trans_limit

SESSION_CAP = 64


@dataclass
class EditSession:
    shape: object  # GeneratedShape
    history: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class TransformBody(BaseModel):
    scale: list
    translate: list


class GenerateBody(BaseModel):
    seed: int = None
    anchor: str = None


class EditBody(BaseModel):
    session_id: str
    anchor: str
    transform: TransformBody


class ResampleBody(BaseModel):
    session_id: str
    part: str
    seed: int


class CrossoverBody(BaseModel):
    session_a: str
    session_b: str
    parts: list


def shape_payload(bundle, shape):
    return {
        "voxb_b64": base64.b64encode(voxb.encode(shape.assembled)).decode("ascii"),
        "transforms": [
            {"scale": list(t.scale), "translate": list(t.translation)}
            for t in shape.transforms
        ],
        "code": [float(v) for v in shape.code],
        "anchor": int(shape.anchor),
        "anchor_label": bundle.labels[shape.anchor],
    }


def create_app(bundle, session_cap=SESSION_CAP, static_dir=None):
    app = FastAPI(title="partforge edit service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )
    sessions = OrderedDict()
    registry_lock = threading.Lock()
    t_max = trans_limit(bundle.resolution)

    def new_session(shape):
        sid = uuid.uuid4().hex
        with registry_lock:
            sessions[sid] = EditSession(shape)
            sessions.move_to_end(sid)
            while len(sessions) > session_cap:
                sessions.popitem(last=False)
        return sid

    def get_session(sid):
        with registry_lock:
            sess = sessions.get(sid)
            if sess is None:
                raise HTTPException(404, f"unknown session {sid}")
            sessions.move_to_end(sid)
            return sess

    def label_index(label):
        try:
            return bundle.labels.index(label)
        except ValueError:
            raise HTTPException(400, f"unknown part label {label!r}")

    @app.get("/api/category")
    def category():
        return {
            "labels": list(bundle.labels),
            "resolution": bundle.resolution,
            "latent_dim": bundle.latent_dim,
            "scale_range": [SCALE_MIN, SCALE_MAX],
            "translate_range": [-t_max, t_max],
        }

    @app.post("/api/generate")
    def generate(body: GenerateBody):
        seed = body.seed
        if seed is None:
            seed = int(np.random.default_rng().integers(0, 2 ** 31))
        anchor = None if body.anchor is None else label_index(body.anchor)
        try:
            shape = sample_shape(bundle, seed, anchor=anchor)
        except DegenerateSample as exc:
            raise HTTPException(409, str(exc))
        except ValueError as exc:
            raise HTTPException(409, str(exc))
        sid = new_session(shape)
        return {"session_id": sid, "shape": shape_payload(bundle, shape)}

    def parse_transform(body: TransformBody):
        if len(body.scale) != 3 or len(body.translate) != 3:
            raise HTTPException(400, "transform needs 3 scale and 3 translate entries")
        t = PartTransform(tuple(body.scale), tuple(body.translate))
        try:
            t.validate(bundle.resolution)
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        return t

    @app.post("/api/edit")
    def edit(body: EditBody):
        sess = get_session(body.session_id)
        k = label_index(body.anchor)
        user_t = parse_transform(body.transform)
        with sess.lock:
            shape = sess.shape
            moved = apply_transform(shape.parts[k], user_t)
            if moved.occupied_count() < 1:
                raise HTTPException(409, f"anchor part {body.anchor!r} is empty after edit")
            parts = list(shape.parts)
            parts[k] = moved
            try:
                transforms = predict_transforms(bundle.assembler, parts, k)
            except ValueError as exc:
                raise HTTPException(409, str(exc))
            assembled = assemble(parts, transforms, bundle.labels)
            shape.parts = parts
            shape.transforms = transforms
            shape.assembled = assembled
            shape.anchor = k
            sess.history.append({"anchor": body.anchor,
                                 "scale": list(user_t.scale),
                                 "translate": list(user_t.translation)})
            return {"session_id": body.session_id,
                    "shape": shape_payload(bundle, shape),
                    "history_length": len(sess.history)}

    @app.post("/api/resample-part")
    def resample_part(body: ResampleBody):
        sess = get_session(body.session_id)
        k = label_index(body.part)
        with sess.lock:
            shape = sess.shape
            rng = np.random.default_rng(body.seed)
            section = rng.standard_normal(bundle.latent_dim).astype(np.float32)
            code = shape.code.copy()
            code[k * bundle.latent_dim:(k + 1) * bundle.latent_dim] = section
            parts = list(shape.parts)
            parts[k] = bundle.decode_code(code)[k]
            anchor = shape.anchor
            if parts[anchor].occupied_count() < EMPTY_MIN_VOXELS:
                raise HTTPException(409, "anchor part is empty after resampling")
            try:
                transforms = predict_transforms(bundle.assembler, parts, anchor)
            except ValueError as exc:
                raise HTTPException(409, str(exc))
            shape.code = code
            shape.parts = parts
            shape.transforms = transforms
            shape.assembled = assemble(parts, transforms, bundle.labels)
            sess.history.append({"resample": body.part, "seed": body.seed})
            return {"session_id": body.session_id,
                    "shape": shape_payload(bundle, shape)}

    @app.post("/api/crossover")
    def crossover_endpoint(body: CrossoverBody):
        sess_a = get_session(body.session_a)
        sess_b = get_session(body.session_b)
        indices = {label_index(lbl) for lbl in body.parts}
        with sess_a.lock:
            code_a = sess_a.shape.code.copy()
        with sess_b.lock:
            code_b = sess_b.shape.code.copy()
        try:
            child = crossover(bundle, code_a, code_b, sorted(indices))
        except DegenerateSample as exc:
            raise HTTPException(409, str(exc))
        sid = new_session(child)
        return {"session_id": sid, "shape": shape_payload(bundle, child)}

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
