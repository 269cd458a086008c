"""HTTP backend for the rating study.

Serves the blinded bundle to the browser UI and persists submitted ratings in
an append-only line-delimited log. A rating is acknowledged only after the
record has been flushed and fsynced, and on startup the log is replayed, so a
crash between ack and the next request loses nothing. Sessions are derived
deterministically from the rater id (presentation order is a permutation
salted by the rater), which makes them resumable across restarts for free.

No response payload ever contains a method identity; the item -> method key
stays on disk next to the bundle and is only used when writing rating records
for later aggregation.

Endpoints:
    GET  /health
    GET  /session/{rater_id}            create or resume a session
    GET  /session/{session_id}/next     next unrated item (or completion)
    POST /session/{session_id}/rating   submit {"item_id", "score"}
    /images/references/*, /images/items/*   bundle images
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .study import StudyBundle, load_method_key, load_study


class RatingSubmission(BaseModel):
    item_id: str
    score: int


class _Store:
    """Append-only rating log with write-then-ack durability.

    Ratings go to ``ratings_path`` (pure RatingRecord lines, the exact schema
    the aggregation CLI reads); session-open markers go to a sibling
    ``<name>.sessions.jsonl`` so the ratings file stays schema-clean.
    """

    def __init__(self, ratings_path: Path):
        self.ratings_path = ratings_path
        self.sessions_path = ratings_path.parent / (ratings_path.stem + ".sessions.jsonl")
        self.lock = threading.Lock()
        self.rated: dict[tuple[str, str], int] = {}  # (session_id, item_id) -> score
        self.sessions: dict[str, str] = {}  # session_id -> rater_id
        if self.sessions_path.exists():
            for line in self.sessions_path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self.sessions[rec["session_id"]] = rec["rater_id"]
        if ratings_path.exists():
            for line in ratings_path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self.rated[(rec["session_id"], rec["item_id"])] = rec["score"]

    @staticmethod
    def _append(path: Path, rec: dict) -> None:
        with open(path, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def open_session(self, session_id: str, rater_id: str) -> None:
        with self.lock:
            if session_id in self.sessions:
                return
            self._append(self.sessions_path, {"session_id": session_id, "rater_id": rater_id})
            self.sessions[session_id] = rater_id

    def add_rating(self, rec: dict) -> bool:
        """Persist one rating; False when the item was already rated (first write wins)."""
        key = (rec["session_id"], rec["item_id"])
        with self.lock:
            if key in self.rated:
                return False
            self._append(self.ratings_path, rec)
            self.rated[key] = rec["score"]
            return True

    def done_count(self, session_id: str) -> int:
        return sum(1 for sid, _ in self.rated if sid == session_id)


def _session_id(seed: int, rater_id: str) -> str:
    digest = hashlib.sha256(f"{seed}:{rater_id}".encode()).hexdigest()
    return f"s-{digest[:16]}"


def _session_order(bundle: StudyBundle, seed: int, rater_id: str) -> list[str]:
    items = [it.item_id for it in bundle.items]
    salt = int.from_bytes(hashlib.sha256(f"order:{seed}:{rater_id}".encode()).digest()[:8], "big")
    perm = np.random.default_rng(salt).permutation(len(items))
    return [items[i] for i in perm]


def create_app(
    study_dir: str | Path,
    ratings_path: str | Path,
    session_seed: int = 0,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    bundle = load_study(study_dir)
    method_key = load_method_key(study_dir)
    items_by_id = {it.item_id: it for it in bundle.items}
    reference_of = {
        c["item_id"]: img["reference"] for img in bundle.images for c in img["candidates"]
    }

    ratings_path = Path(ratings_path)
    ratings_path.parent.mkdir(parents=True, exist_ok=True)
    store = _Store(ratings_path)
    orders: dict[str, list[str]] = {}
    raters: dict[str, str] = dict(store.sessions)
    for sid, rater in raters.items():
        orders[sid] = _session_order(bundle, session_seed, rater)

    app = FastAPI(title="semisr rating study")

    @app.get("/health")
    def health():
        return {"status": "ok", "items": len(items_by_id)}

    @app.get("/session/{rater_id}")
    def open_session(rater_id: str):
        sid = _session_id(session_seed, rater_id)
        if sid not in orders:
            orders[sid] = _session_order(bundle, session_seed, rater_id)
            store.open_session(sid, rater_id)
            raters[sid] = rater_id
        return {
            "session_id": sid,
            "rater_id": rater_id,
            "total": len(orders[sid]),
            "done": store.done_count(sid),
        }

    @app.get("/session/{session_id}/next")
    def next_item(session_id: str):
        order = orders.get(session_id)
        if order is None:
            raise HTTPException(status_code=404, detail="unknown session")
        done = store.done_count(session_id)
        for pos, item_id in enumerate(order):
            if (session_id, item_id) in store.rated:
                continue
            it = items_by_id[item_id]
            return {
                "session_id": session_id,
                "item_id": item_id,
                "position": pos,
                "total": len(order),
                "done": done,
                "reference_url": f"/images/{reference_of[item_id]}",
                "candidate_url": f"/images/{it.file}",
            }
        return {"session_id": session_id, "complete": True, "total": len(order), "done": done}

    @app.post("/session/{session_id}/rating")
    def submit_rating(session_id: str, body: RatingSubmission):
        order = orders.get(session_id)
        if order is None:
            raise HTTPException(status_code=404, detail="unknown session")
        if body.item_id not in items_by_id or body.item_id not in order:
            raise HTTPException(status_code=422, detail="item does not belong to this session")
        if not 1 <= body.score <= 5:
            raise HTTPException(status_code=422, detail="score must be an integer in 1..5")
        it = items_by_id[body.item_id]
        rec = {
            "rater_id": raters[session_id],
            "image_id": it.image_id,
            "method_id": method_key[body.item_id],
            "score": body.score,
            "presented_at": datetime.now(timezone.utc).isoformat(),
            "session_id": session_id,
            "item_id": body.item_id,
            "position": order.index(body.item_id),
        }
        if not store.add_rating(rec):
            raise HTTPException(status_code=409, detail="item already rated; first write wins")
        return {"status": "ok", "done": store.done_count(session_id), "total": len(order)}

    app.mount("/images/references", StaticFiles(directory=bundle.root / "references"), name="references")
    app.mount("/images/items", StaticFiles(directory=bundle.root / "items"), name="items")
    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
