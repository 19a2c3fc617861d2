"""Stateless HTTP scoring endpoint.

POST /score takes one admission (demographics, transfers, events and prior
admissions) and scores it at the time of its latest event, using the same
feature code as the offline pipeline. GET /health reports the loaded model.

Request body:

    {"admission": {"admission_id", "patient_id", "facility_cd",
                   "admit_ts", "age", "gender"},
     "transfers": [{"ward_name", "ward_type", "in_ts", "out_ts"?}],
     "events":    [{"kind", "code", "value", "unit", "ts"}],
     "history":   [{"admission_id", "admit_ts", "discharge_ts",
                    "disposition", "diagnoses": ["I50", ...]}]}

Timestamps are epoch seconds or ISO-8601 strings (UTC when no offset).
Response: {"score", "alert", "threshold", "model_version", "scored_at",
"n_events"}.
"""
from __future__ import annotations

import json
import logging
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

import numpy as np
import pandas as pd

from .emr import GENDERS, WARD_TYPES, Dataset, format_ts, from_frames, parse_ts
from .features.build import AdmissionContext, FeatureConfig, admission_rows
from .gbdt import GbdtModel

log = logging.getLogger(__name__)

MAX_BODY = 16 * 1024 * 1024


class RequestError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _obj(value, field: str) -> dict:
    if not isinstance(value, dict):
        raise RequestError(field, "expected an object")
    return value


def _list(value, field: str) -> list:
    if value is None:
        return []
    if not isinstance(value, list):
        raise RequestError(field, "expected a list")
    return value


def _ts(value, field: str) -> int:
    if isinstance(value, bool):
        raise RequestError(field, "malformed timestamp")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        t = parse_ts(value)
        if t is not None:
            return t
    raise RequestError(field, "malformed timestamp")


def _str(d: dict, key: str, field: str, default: str | None = None) -> str:
    v = d.get(key, default)
    if not isinstance(v, str) or (default is None and not v):
        raise RequestError(f"{field}.{key}", "expected a non-empty string")
    return v


def _value_text(v, field: str) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        raise RequestError(field, "expected a number or text")
    if isinstance(v, (int, float)):
        if not math.isfinite(v):
            raise RequestError(field, "non-finite value")
        return repr(float(v))
    if isinstance(v, str):
        return v
    raise RequestError(field, "expected a number or text")


def parse_request(body: Any) -> tuple[AdmissionContext, int]:
    """Validate a request; returns the admission context and the scoring time."""
    req = _obj(body, "body")
    a = _obj(req.get("admission"), "admission")
    aid = _str(a, "admission_id", "admission")
    pid = _str(a, "patient_id", "admission")
    fac = _str(a, "facility_cd", "admission", "")
    admit = _ts(a.get("admit_ts"), "admission.admit_ts")
    age = a.get("age")
    if isinstance(age, bool) or not isinstance(age, (int, float)) or not age >= 0:
        raise RequestError("admission.age", "expected a nonnegative number")
    gender = a.get("gender", "U")
    if gender not in GENDERS:
        raise RequestError("admission.gender", f"expected one of {', '.join(GENDERS)}")

    ev_rows = []
    for i, e in enumerate(_list(req.get("events"), "events")):
        f = f"events[{i}]"
        e = _obj(e, f)
        ev_rows.append((aid, _str(e, "kind", f), _str(e, "code", f),
                        _value_text(e.get("value"), f"{f}.value"), _str(e, "unit", f, ""),
                        _ts(e.get("ts"), f"{f}.ts")))
    t = max([r[5] for r in ev_rows], default=admit)
    if t < admit:
        raise RequestError("events", "event before admit_ts")

    tr_raw = _list(req.get("transfers"), "transfers")
    tr_rows = []
    for i, r in enumerate(tr_raw):
        f = f"transfers[{i}]"
        r = _obj(r, f)
        wtype = _str(r, "ward_type", f)
        if wtype not in WARD_TYPES:
            raise RequestError(f"{f}.ward_type", f"unknown ward type {wtype}")
        t_in = _ts(r.get("in_ts"), f"{f}.in_ts")
        out = r.get("out_ts")
        t_out = None if out is None else _ts(out, f"{f}.out_ts")
        tr_rows.append([aid, _str(r, "ward_name", f), wtype, t_in, t_out])
    tr_rows.sort(key=lambda r: r[3])
    # the open segment runs until the scoring time
    horizon = max([t + 1] + [r[4] for r in tr_rows if r[4] is not None])
    for k, r in enumerate(tr_rows):
        if r[4] is None:
            if k != len(tr_rows) - 1:
                raise RequestError(f"transfers[{k}].out_ts", "only the last segment may be open")
            r[4] = max(horizon, r[3] + 1)
    discharge = max([horizon] + [r[4] for r in tr_rows])

    adm_rows = [(aid, pid, fac, admit, discharge, "other", float(age), gender)]
    dx_rows = []
    for i, h in enumerate(_list(req.get("history"), "history")):
        f = f"history[{i}]"
        h = _obj(h, f)
        hid = _str(h, "admission_id", f)
        if hid == aid:
            raise RequestError(f"{f}.admission_id", "repeats the scored admission")
        h_admit = _ts(h.get("admit_ts"), f"{f}.admit_ts")
        h_dis = _ts(h.get("discharge_ts"), f"{f}.discharge_ts")
        if h_dis < h_admit:
            raise RequestError(f"{f}.discharge_ts", "before admit_ts")
        adm_rows.append((hid, pid, fac, h_admit, h_dis, _str(h, "disposition", f, "other"),
                         float(age), gender))
        for j, d in enumerate(_list(h.get("diagnoses"), f"{f}.diagnoses")):
            if isinstance(d, str):
                dx_rows.append((hid, d, j + 1))
            else:
                d = _obj(d, f"{f}.diagnoses[{j}]")
                rank = d.get("rank", j + 1)
                if isinstance(rank, bool) or not isinstance(rank, int):
                    raise RequestError(f"{f}.diagnoses[{j}].rank", "expected an integer")
                dx_rows.append((hid, _str(d, "icd10_code", f"{f}.diagnoses[{j}]"), rank))

    frames = {
        "admissions": pd.DataFrame(adm_rows, columns=["admission_id", "patient_id", "facility_cd",
                                                      "admit_ts", "discharge_ts", "disposition",
                                                      "age", "gender"]),
        "transfers": pd.DataFrame(tr_rows, columns=["admission_id", "ward_name", "ward_type",
                                                    "in_ts", "out_ts"]),
        "events": pd.DataFrame(ev_rows, columns=["admission_id", "kind", "code", "value_text",
                                                 "unit", "ts"]),
        "diagnoses": pd.DataFrame(dx_rows, columns=["admission_id", "icd10_code", "rank"]),
    }
    for name, cols in (("admissions", ("admit_ts", "discharge_ts")),
                       ("transfers", ("in_ts", "out_ts")), ("events", ("ts",))):
        for c in cols:
            frames[name][c] = frames[name][c].astype(np.int64)
    ds: Dataset = from_frames(frames)
    if ds.violations:
        v = ds.violations[0]
        raise RequestError(v.table, f"{v.reason} ({v.key})")
    adm = ds[aid]
    return AdmissionContext(adm, tuple(ds.history(adm))), int(t)


def request_for(admission, history, t: int) -> dict:
    """Request replaying an admission's record as known at time t."""
    ev = admission.events.until(t)
    transfers = []
    for r in sorted(admission.transfers, key=lambda r: r.in_ts):
        if r.in_ts > t:
            break
        seg = {"ward_name": r.ward_name, "ward_type": r.ward_type, "in_ts": r.in_ts}
        if r.out_ts <= t:
            seg["out_ts"] = r.out_ts
        transfers.append(seg)
    return {
        "admission": {"admission_id": admission.admission_id, "patient_id": admission.patient_id,
                      "facility_cd": admission.facility_cd, "admit_ts": admission.admit_ts,
                      "age": admission.age, "gender": admission.gender},
        "transfers": transfers,
        "events": [{"kind": k, "code": c, "value": None if np.isnan(v) else float(v), "unit": u,
                    "ts": int(ts)} for k, c, v, u, ts in zip(ev.kind, ev.code, ev.value, ev.unit,
                                                             ev.ts)],
        "history": [{"admission_id": h.admission_id, "admit_ts": h.admit_ts,
                     "discharge_ts": h.discharge_ts, "disposition": h.discharge_disposition,
                     "diagnoses": [{"icd10_code": c, "rank": r} for c, r in h.diagnoses]}
                    for h in history],
    }


class ScoringService:
    """Scores requests against one immutable model (thread-safe)."""

    def __init__(self, model: GbdtModel | None, threshold: float | None = None):
        self.model = model
        self.config = None
        self.threshold = threshold
        if model is not None:
            if model.feature_config is None:
                raise ValueError("model has no feature configuration")
            self.config = FeatureConfig.from_dict(model.feature_config)
            if threshold is None:
                op = model.metadata.get("operating_point") or {}
                self.threshold = op.get("threshold", math.inf)
            self.version = model.version

    @property
    def ready(self) -> bool:
        return self.model is not None

    def features(self, body: Any) -> tuple[np.ndarray, int]:
        ctx, t = parse_request(body)
        row = admission_rows(ctx, np.array([t], dtype=np.int64), self.config)
        return row, t

    def score(self, body: Any) -> dict:
        if self.model is None:
            raise RuntimeError("no model loaded")
        row, t = self.features(body)
        p = float(self.model.predict_proba(row)[0])
        return {"score": p, "alert": bool(p >= self.threshold), "threshold": self.threshold,
                "model_version": self.version, "scored_at": format_ts(t),
                "n_events": len(_list(body.get("events"), "events"))}


def serve_score(service: ScoringService, body: Any) -> tuple[int, dict]:
    """(HTTP status, JSON payload) for one request body."""
    if not service.ready:
        return 503, {"error": "no model loaded"}
    try:
        return 200, service.score(body)
    except RequestError as e:
        return 400, {"error": str(e), "field": e.field}


def _dump(payload: dict) -> bytes:
    if isinstance(payload.get("threshold"), float) and math.isinf(payload["threshold"]):
        payload = {**payload, "threshold": None}
    return json.dumps(payload, sort_keys=True).encode()


def make_handler(service: ScoringService):
    class Handler(BaseHTTPRequestHandler):
        server_version = "icuwarn"

        def _send(self, status: int, payload: dict) -> None:
            data = _dump(payload)
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path != "/health":
                return self._send(404, {"error": f"no route {self.path}"})
            if not service.ready:
                return self._send(503, {"status": "no model"})
            self._send(200, {"status": "ok", "model_version": service.version,
                             "threshold": service.threshold})

        def do_POST(self):
            if self.path != "/score":
                return self._send(404, {"error": f"no route {self.path}"})
            try:
                n = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                return self._send(400, {"error": "body: bad Content-Length", "field": "body"})
            if n > MAX_BODY:
                return self._send(413, {"error": "body: too large", "field": "body"})
            raw = self.rfile.read(n)
            try:
                body = json.loads(raw)
            except (json.JSONDecodeError, UnicodeDecodeError) as e:
                return self._send(400, {"error": f"body: malformed JSON ({e})", "field": "body"})
            status, payload = serve_score(service, body)
            self._send(status, payload)

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

    return Handler


def make_server(service: ScoringService, host: str = "127.0.0.1", port: int = 8080
                ) -> ThreadingHTTPServer:
    return ThreadingHTTPServer((host, port), make_handler(service))


def start_background(service: ScoringService, host: str = "127.0.0.1", port: int = 0):
    """Start a server thread; returns (server, thread). Port 0 picks a free port."""
    srv = make_server(service, host, port)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    return srv, th
