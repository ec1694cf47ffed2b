"""HTTP curation service: predictions + explanations in, decisions out.

The review queue holds one item per query entity (its top-1 predicted
counterpart).  Expert decisions append to a JSONL log; the in-memory
view is last-wins per (pair_id, annotator), so restarting the service
reconstructs identical state from the log alone.  Accepted pairs export
as a seed-alignment TSV ready for retraining.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse

from . import checkpoint as ck
from .alignment import predict
from .explain import Explainer
from .kg import GraphPair, KnowledgeGraph, SeedAlignment, _escape

DECISIONS = ("accept", "reject", "unsure")


@dataclass
class ReviewItem:
    pair_id: str
    entity_a: int
    entity_b: int
    label_a: str
    label_b: str
    score: float


@dataclass
class CurationState:
    explainer: Explainer
    items: list[ReviewItem]
    log_path: str
    top_n: int = 5
    by_id: dict[str, ReviewItem] = field(default_factory=dict)
    # (pair_id, annotator) -> latest decision record
    active: dict[tuple[str, str], dict] = field(default_factory=dict)
    _seq: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self):
        self.by_id = {it.pair_id: it for it in self.items}
        if os.path.exists(self.log_path):
            with open(self.log_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._apply(json.loads(line))

    def _apply(self, rec: dict) -> None:
        self.active[(rec["pair_id"], rec["annotator"])] = rec
        self._seq = max(self._seq, rec.get("seq", 0))

    def record(self, pair_id: str, decision: str, confident: bool,
               annotator: str) -> dict:
        with self._lock:
            self._seq += 1
            rec = {
                "pair_id": pair_id,
                "decision": decision,
                "confident": bool(confident),
                "annotator": annotator,
                "ts": time.time(),
                "seq": self._seq,
            }
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._apply(rec)
            return rec

    # -- views ------------------------------------------------------------------

    def status_of(self, pair_id: str) -> str:
        return "decided" if any(pid == pair_id for pid, _ in self.active) else "pending"

    def latest_decision(self, pair_id: str) -> dict | None:
        recs = [r for (pid, _), r in self.active.items() if pid == pair_id]
        if not recs:
            return None
        return max(recs, key=lambda r: r["seq"])

    def accepted_pairs(self) -> list[ReviewItem]:
        """Items whose latest active decision is accept, deduplicated so
        no entity appears twice (a valid seed-alignment file needs that);
        higher-score items win the dedup."""
        out = []
        for it in self.items:
            latest = self.latest_decision(it.pair_id)
            if latest is not None and latest["decision"] == "accept":
                out.append(it)
        out.sort(key=lambda it: -it.score)
        seen_a: set[int] = set()
        seen_b: set[int] = set()
        kept = []
        for it in out:
            if it.entity_a in seen_a or it.entity_b in seen_b:
                continue
            seen_a.add(it.entity_a)
            seen_b.add(it.entity_b)
            kept.append(it)
        kept.sort(key=lambda it: it.pair_id)
        return kept

    def stats(self) -> dict:
        latest_by_pair = {}
        for it in self.items:
            rec = self.latest_decision(it.pair_id)
            if rec is not None:
                latest_by_pair[it.pair_id] = rec
        counts = {d: 0 for d in DECISIONS}
        for rec in latest_by_pair.values():
            counts[rec["decision"]] += 1
        n_active = len(self.active)
        confident = sum(1 for r in self.active.values() if r["confident"])
        return {
            "total": len(self.items),
            "pending": len(self.items) - len(latest_by_pair),
            "decided": len(latest_by_pair),
            "counts": counts,
            "confidence_rate": (confident / n_active) if n_active else 0.0,
        }


def build_review_items(explainer: Explainer,
                       queries: list[int] | None = None,
                       candidates: list[int] | None = None) -> list[ReviewItem]:
    """Top-1 prediction per query entity, one review item each."""
    pair = explainer.pair
    if queries is None:
        queries = list(range(len(pair.a.entities)))
    if candidates is None:
        candidates = list(range(len(pair.b.entities)))
    ta, tb = explainer.tables()
    preds = predict(ta, tb, queries, candidates, k=1)
    items = []
    for i, p in enumerate(preds):
        vb = p.candidates[0]
        items.append(ReviewItem(
            pair_id=f"p{i:05d}",
            entity_a=p.query,
            entity_b=vb,
            label_a=pair.a.entities.name(p.query),
            label_b=pair.b.entities.name(vb),
            score=p.scores[0],
        ))
    return items


def load_state(ckpt_dir: str, kg_a: KnowledgeGraph, kg_b: KnowledgeGraph,
               log_path: str, seeds: SeedAlignment | None = None,
               top_n: int = 5) -> CurationState:
    """Stand up curation state: review queue = entities outside the train
    seeds (the pairs an expert still needs to look at)."""
    ckpt = ck.load_checkpoint(ckpt_dir)
    pair = GraphPair(kg_a, kg_b)
    explainer = Explainer.from_checkpoint(ckpt, pair)
    queries = candidates = None
    if seeds is not None:
        known_a = {va for va, _ in seeds.train_pairs()}
        known_b = {vb for _, vb in seeds.train_pairs()}
        queries = [v for v in range(len(kg_a.entities)) if v not in known_a]
        candidates = [v for v in range(len(kg_b.entities)) if v not in known_b]
    items = build_review_items(explainer, queries, candidates)
    return CurationState(explainer=explainer, items=items, log_path=log_path,
                         top_n=top_n)


def _item_json(state: CurationState, it: ReviewItem) -> dict:
    return {
        "pair_id": it.pair_id,
        "a": it.label_a,
        "b": it.label_b,
        "score": it.score,
        "status": state.status_of(it.pair_id),
    }


def create_app(state: CurationState, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="kgalign curation")

    @app.get("/api/pairs")
    def list_pairs(status: str | None = None, offset: int = 0, limit: int = 50,
                   order: str = "asc"):
        if status not in (None, "pending", "decided"):
            return JSONResponse({"error": "status must be pending or decided"},
                                status_code=400)
        items = list(state.items)
        if status is not None:
            items = [it for it in items if state.status_of(it.pair_id) == status]
        # lowest-confidence predictions first so experts review them first
        items.sort(key=lambda it: (it.score, it.pair_id),
                   reverse=(order == "desc"))
        page = items[offset:offset + limit]
        return {
            "total": len(items),
            "offset": offset,
            "limit": limit,
            "items": [_item_json(state, it) for it in page],
        }

    @app.get("/api/pairs/{pair_id}")
    def get_pair(pair_id: str):
        it = state.by_id.get(pair_id)
        if it is None:
            return JSONResponse({"error": f"unknown pair {pair_id}"}, status_code=404)
        expl = state.explainer.explain_pair(it.entity_a, it.entity_b,
                                            top_n=state.top_n, pair_id=it.pair_id)
        body = expl.to_json()
        body["labels"] = {"a": it.label_a, "b": it.label_b}
        body["status"] = state.status_of(it.pair_id)
        latest = state.latest_decision(it.pair_id)
        body["decision"] = latest and {
            "decision": latest["decision"],
            "confident": latest["confident"],
            "annotator": latest["annotator"],
        }
        return body

    @app.post("/api/pairs/{pair_id}/decision")
    async def post_decision(pair_id: str, request: Request):
        it = state.by_id.get(pair_id)
        if it is None:
            return JSONResponse({"error": f"unknown pair {pair_id}"}, status_code=404)
        try:
            body = json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        if not isinstance(body, dict):
            return JSONResponse({"error": "body must be a JSON object"}, status_code=400)
        decision = body.get("decision")
        annotator = body.get("annotator")
        confident = body.get("confident", False)
        if decision is None or annotator is None or not isinstance(annotator, str) \
                or not annotator or not isinstance(confident, bool):
            return JSONResponse(
                {"error": "body needs decision, annotator, optional confident flag"},
                status_code=400)
        if decision not in DECISIONS:
            return JSONResponse(
                {"error": f"decision must be one of {', '.join(DECISIONS)}"},
                status_code=422)
        state.record(pair_id, decision, confident, annotator)
        return Response(status_code=204)

    @app.get("/api/export/accepted")
    def export_accepted():
        lines = [
            _escape(it.label_a) + "\t" + _escape(it.label_b)
            for it in state.accepted_pairs()
        ]
        text = "\n".join(lines) + ("\n" if lines else "")
        return PlainTextResponse(text, media_type="text/tab-separated-values")

    @app.get("/api/stats")
    def get_stats():
        return state.stats()

    if static_dir and os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
