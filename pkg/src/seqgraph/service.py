"""Session-based HTTP API for interactive trial monitoring.

Each session wraps one design and accumulates stage observations. A stage
submission runs the full analysis battery — both stagewise tests, the
closed-test retest, compatible bounds, and the informative brackets with
their adjustment — and freezes the results as an immutable snapshot.

Persistence is an append-only, length-prefixed record log per session
(JSON payloads). Replaying a log reproduces the session state exactly: the
iteration budget actually spent on each bracket is recorded in the stage
event, so a bracket cut short by the request timeout is replayed with the
same budget and yields the same (conservative, still valid) result.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import time
import uuid
import warnings
from dataclasses import replace

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query

from .boundaries import PValueFamily
from .compatible import compatible_bounds, compatible_bounds_adjustment
from .design_io import ValidatedDesign, design_from_dict, serialize_design
from .engine import advance_stage, apply_stop_decisions, efficient_multiple_adjustment, new_trial
from .errors import InvalidStartVector, SeqGraphError
from .graph import initial_state
from .informative import default_start_vectors, isci_efficient_adjustment, primary_algorithm

_HEADER = struct.Struct(">Q")
_CHUNK_ITERS = 25


class ServiceError(Exception):
    def __init__(self, status, detail):
        super().__init__(detail)
        self.status = status
        self.detail = detail


def _append_record(path, obj):
    payload = json.dumps(obj, sort_keys=True).encode()
    with open(path, "ab") as fh:
        fh.write(_HEADER.pack(len(payload)))
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())


def _read_records(path):
    out = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(_HEADER.size)
            if not head:
                break
            (n,) = _HEADER.unpack(head)
            out.append(json.loads(fh.read(n)))
    return out


def _num(x):
    """JSON-safe number: -inf (no informative bound) maps to None."""
    x = float(x)
    return None if not np.isfinite(x) else x


class Session:
    """One monitored trial: design, observations, and per-stage snapshots."""

    def __init__(self, sid, design: ValidatedDesign, log_path, timeout_ms):
        self.id = sid
        self.design = design
        self.log_path = log_path
        self.timeout_ms = timeout_ms
        self.lock = threading.Lock()
        m, K = design.m, design.n_stages
        self.estimates = np.full((m, K), np.nan)
        self.std_errors = np.full((m, K), np.nan)
        self.state_r = new_trial(design.graph, K)
        self.state_s = new_trial(design.graph, K)
        self.gs_r = initial_state(design.graph)
        self.gs_s = initial_state(design.graph)
        self.prev_bracket = {"r": None, "s": None}
        self.snapshots = []

    @property
    def stage(self):
        return self.state_s.stage

    @property
    def collecting(self):
        return self.state_s.collecting

    def _index(self, name):
        try:
            return self.design.names.index(name)
        except ValueError:
            raise ServiceError(422, f"unknown hypothesis {name!r}")

    def view(self):
        return {
            "session_id": self.id,
            "design": serialize_design(self.design),
            "stage": self.stage,
            "n_stages": self.design.n_stages,
            "collecting": sorted(self.collecting),
            "taus": {str(j): k for j, k in sorted(self.state_s.taus.items())},
            "snapshots": [s["stage"] for s in self.snapshots],
        }

    # -- stage submission ---------------------------------------------------

    def _validate_observations(self, observations):
        design = self.design
        k = self.stage
        if k >= design.n_stages:
            raise ServiceError(409, "all planned stages already analyzed")
        if not isinstance(observations, list) or not observations:
            raise ServiceError(422, "observations must be a non-empty list")
        expected = set(self.collecting)
        seen = {}
        for obs in observations:
            if not isinstance(obs, dict):
                raise ServiceError(422, "each observation must be a mapping")
            j = self._index(obs.get("hypothesis"))
            if j not in expected:
                raise ServiceError(
                    409, f"hypothesis {design.names[j]} stopped data collection"
                )
            if j in seen:
                raise ServiceError(422, f"duplicate observation for {design.names[j]}")
            try:
                est = float(obs["estimate"])
                se = float(obs["std_error"])
                frac = float(obs["info_fraction"])
            except (KeyError, TypeError, ValueError):
                raise ServiceError(
                    422, "observations need numeric estimate, std_error, info_fraction"
                )
            if se <= 0:
                raise ServiceError(422, "std_error must be positive")
            if abs(frac - design.plans[j].fractions[k]) > 1e-9:
                raise ServiceError(
                    409,
                    f"info_fraction {frac} out of order: stage {k + 1} expects "
                    f"{design.plans[j].fractions[k]}",
                )
            seen[j] = (est, se)
        missing = expected - set(seen)
        if missing:
            names = ", ".join(design.names[j] for j in sorted(missing))
            raise ServiceError(422, f"missing observations for {names}")
        return seen

    def _informative(self, lam, stages_vec, fam, deadline, max_iters_cap=None):
        """Bracket with warm starts, chunked so a timeout still returns a
        valid (conservative) bracket; returns the budget actually used."""
        design = self.design
        cfg = design.iteration_config()
        start_lower = None
        prev = self.prev_bracket[lam]
        if prev is not None:
            if lam == "s":
                start_lower = prev.lower.copy()
            else:
                prev_rej = np.flatnonzero(prev.lower >= 0.0)
                if prev_rej.size:
                    start_lower, _ = default_start_vectors(
                        design.graph, fam, stages_vec, lam, design.alpha, cfg.delta(design.alpha, 0)
                    )
                    start_lower[prev_rej] = prev.lower[prev_rej]

        def run(budget):
            c = replace(cfg, max_iters=budget)
            try:
                return primary_algorithm(
                    design.graph, fam, stages_vec, lam, design.alpha, c, start_lower=start_lower
                )
            except InvalidStartVector:
                return primary_algorithm(design.graph, fam, stages_vec, lam, design.alpha, c)

        if max_iters_cap is not None:  # replaying a recorded budget
            return run(max_iters_cap), max_iters_cap
        budget = _CHUNK_ITERS
        while True:
            bracket = run(budget)
            if bracket.converged or budget >= cfg.max_iters or time.monotonic() >= deadline:
                return bracket, budget
            budget = min(budget + _CHUNK_ITERS, cfg.max_iters)

    def submit_stage(self, observations, replay_budgets=None):
        seen = self._validate_observations(observations)
        design = self.design
        k = self.stage
        for j, (est, se) in seen.items():
            self.estimates[j, k] = est
            self.std_errors[j, k] = se
        fam = PValueFamily(design.plans, self.estimates, self.std_errors)
        alpha = design.alpha
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.state_r, self.gs_r, _ = advance_stage(
                self.state_r, self.gs_r, fam, "r", alpha, allow_collect_after_reject=True
            )
            self.state_s, self.gs_s, _ = advance_stage(self.state_s, self.gs_s, fam, "s", alpha)
        m = design.m
        stages_vec = np.array([self.state_s.last_data_stage(j) for j in range(m)])
        p_r = np.array([fam.repeated(j, stages_vec[j]) for j in range(m)])
        r_s = set(self.state_s.rejected)
        r_c = efficient_multiple_adjustment(design.graph, r_s, stages_vec, p_r, alpha)
        cb = {
            "r": compatible_bounds(design.graph, self.state_r, fam, "r", alpha),
            "s": compatible_bounds(design.graph, self.state_s, fam, "s", alpha),
        }
        cb_c = compatible_bounds_adjustment(design.graph, r_s, r_c, stages_vec, fam, alpha)

        deadline = time.monotonic() + self.timeout_ms / 1000.0
        budgets = {}
        informative = {}
        for lam in ("r", "s"):
            cap = None if replay_budgets is None else replay_budgets[lam]
            bracket, budgets[lam] = self._informative(lam, stages_vec, fam, deadline, cap)
            self.prev_bracket[lam] = bracket
            informative[lam] = {
                "lower": [_num(x) for x in bracket.lower],
                "upper": [_num(x) for x in bracket.upper],
                "gap": _num(bracket.gap),
                "converged": bool(bracket.converged),
                "timed_out": not bracket.converged,
                "rejected": sorted(np.flatnonzero(bracket.lower >= 0.0).tolist()),
            }
        lower_ic, rej_ic = isci_efficient_adjustment(
            design.graph, fam, self.prev_bracket["s"].lower, stages_vec, alpha, design.q
        )
        informative["c"] = {
            "lower": [_num(x) for x in lower_ic],
            "rejected": sorted(rej_ic),
        }
        snapshot = {
            "stage": k + 1,
            "data_stages": stages_vec.tolist(),
            "rejected": {
                "r": sorted(self.state_r.rejected),
                "s": sorted(r_s),
                "c": sorted(r_c),
            },
            "compatible": {
                lam: {"lower": [_num(x) for x in cb[lam].lower], "rejected": sorted(cb[lam].rejected)}
                for lam in ("r", "s")
            }
            | {"c": {"lower": [_num(x) for x in cb_c.lower], "rejected": sorted(cb_c.rejected)}},
            "informative": informative,
            "stop_on_reject_hint": sorted(self.state_r.rejected & self.state_r.collecting),
        }
        self.snapshots.append(snapshot)
        return snapshot, budgets

    def apply_decisions(self, stop):
        if self.stage == 0:
            raise ServiceError(409, "no stage analyzed yet")
        if not isinstance(stop, list):
            raise ServiceError(422, "stop must be a list of hypothesis names")
        idx = {self._index(name) for name in stop}
        try:
            self.state_r = apply_stop_decisions(self.state_r, idx, lam="s")
            self.state_s = apply_stop_decisions(self.state_s, idx, lam="s")
        except SeqGraphError as exc:
            raise ServiceError(409, str(exc))
        return self.view()


class SessionStore:
    """All sessions plus the on-disk event logs."""

    def __init__(self, data_dir, timeout_ms):
        self.data_dir = data_dir
        self.timeout_ms = timeout_ms
        self.lock = threading.Lock()
        self.sessions = {}
        self.idempotency = {}
        os.makedirs(data_dir, exist_ok=True)
        for name in sorted(os.listdir(data_dir)):
            if name.endswith(".log"):
                self._replay(os.path.join(data_dir, name))

    def _log_path(self, sid):
        return os.path.join(self.data_dir, f"{sid}.log")

    def _replay(self, path):
        records = _read_records(path)
        if not records or records[0].get("type") != "create":
            return
        head = records[0]
        design = design_from_dict(head["design"])
        sid = head["session_id"]
        session = Session(sid, design, path, self.timeout_ms)
        for rec in records[1:]:
            if rec["type"] == "stage":
                session.submit_stage(rec["observations"], replay_budgets=rec["budgets"])
            elif rec["type"] == "decisions":
                session.apply_decisions(rec["stop"])
        self.sessions[sid] = session
        key = head.get("idempotency_key")
        if key:
            self.idempotency[key] = sid

    def create(self, design_doc, idempotency_key=None):
        with self.lock:
            if idempotency_key and idempotency_key in self.idempotency:
                return self.sessions[self.idempotency[idempotency_key]], False
            try:
                design = design_from_dict(design_doc)
            except SeqGraphError as exc:
                raise ServiceError(422, str(exc))
            sid = uuid.uuid4().hex[:16]
            session = Session(sid, design, self._log_path(sid), self.timeout_ms)
            record = {"type": "create", "session_id": sid, "design": serialize_design(design)}
            if idempotency_key:
                record["idempotency_key"] = idempotency_key
                self.idempotency[idempotency_key] = sid
            _append_record(session.log_path, record)
            self.sessions[sid] = session
            return session, True

    def get(self, sid) -> Session:
        session = self.sessions.get(sid)
        if session is None:
            raise ServiceError(404, f"unknown session {sid!r}")
        return session


def create_app(data_dir, timeout_ms=30_000, static_dir=None) -> FastAPI:
    """Build the monitoring application rooted at ``data_dir``."""
    store = SessionStore(data_dir, timeout_ms)
    app = FastAPI(title="seqgraph monitor")
    app.state.store = store

    def _mutate(sid, fn):
        session = store.get(sid)
        if not session.lock.acquire(blocking=False):
            raise ServiceError(409, "another mutation is in progress for this session")
        try:
            return fn(session)
        finally:
            session.lock.release()

    @app.exception_handler(ServiceError)
    async def _service_error(_, exc):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=exc.status, content={"detail": exc.detail})

    @app.post("/sessions", status_code=201)
    def create_session(body: dict = Body(...)):
        design = body.get("design")
        if not isinstance(design, dict):
            raise ServiceError(422, "body must carry a design mapping")
        session, _created = store.create(design, body.get("idempotency_key"))
        return {"session_id": session.id}

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        return store.get(sid).view()

    @app.post("/sessions/{sid}/stages")
    def submit_stage(sid: str, body: dict = Body(...)):
        def run(session):
            snapshot, budgets = session.submit_stage(body.get("observations"))
            _append_record(
                session.log_path,
                {"type": "stage", "observations": body.get("observations"), "budgets": budgets},
            )
            return snapshot

        return _mutate(sid, run)

    @app.post("/sessions/{sid}/decisions")
    def decisions(sid: str, body: dict = Body(...)):
        def run(session):
            view = session.apply_decisions(body.get("stop"))
            _append_record(session.log_path, {"type": "decisions", "stop": body.get("stop")})
            return view

        return _mutate(sid, run)

    @app.get("/sessions/{sid}/bounds")
    def bounds(
        sid: str,
        stage: int = Query(..., ge=1),
        kind: str = Query(..., pattern="^(compatible|informative)$"),
        lam: str = Query(..., alias="lambda", pattern="^(r|s|c)$"),
    ):
        session = store.get(sid)
        if stage > len(session.snapshots):
            raise ServiceError(404, f"stage {stage} not analyzed yet")
        snap = session.snapshots[stage - 1]
        return {"stage": stage, "kind": kind, "lambda": lam, **snap[kind][lam]}

    if static_dir and os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
