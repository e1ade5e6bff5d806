"""Session service: the simulator and assistance loop behind a wire protocol.

A connected console drives one live trial at a time with numpad-style held
keys; the service steps the plant at a fixed tick rate and streams back
self-contained frames (scene, gripper, candidates with scores and live
arbitration costs, the selected plan as a ghost polyline, metrics so far).
The protocol is line-oriented JSON, versioned, and documented message by
message in PROTOCOL.md at the repository root.

The protocol logic is sans-io (`SessionProtocol`): text in, dicts out, no
sockets, no clocks. That is what the golden transcript test runs against.
`build_app`/`serve` wrap it in a websocket endpoint; the tick loop is the
only writer of simulation state and the only sender on the socket, so
network reads just fill a mailbox.
"""

from __future__ import annotations

import json
import math
import os
from collections import deque
from dataclasses import replace
from pathlib import Path

from .density import CandidateGrasp
from .harness import ExperimentConfig, TrialSetup, pinch_demonstration, prepare_trial
from .sim import Session

PROTOCOL_ID = "grasp-console/1"

_DIAG = 1.0 / math.sqrt(2.0)
# numpad layout: 8 up, 2 down, 4 left, 6 right, corners diagonal
KEY_VECTORS = {
    "8": (0.0, 1.0),
    "2": (0.0, -1.0),
    "4": (-1.0, 0.0),
    "6": (1.0, 0.0),
    "7": (-_DIAG, _DIAG),
    "9": (_DIAG, _DIAG),
    "1": (-_DIAG, -_DIAG),
    "3": (_DIAG, -_DIAG),
}
# manual gripper drive; motion keys above are the only spec'd mapping
APERTURE_KEYS = {"5": +1, "0": -1}

_SCAN_LIMIT = 50  # trial indices probed before giving up on a feasible scene


def compose_direction(held, v_limit: float) -> tuple[float, float]:
    """Sum the held keys' unit vectors and rescale to the speed limit.

    Opposed keys cancel to a zero command; any nonzero sum moves at exactly
    v_limit, so diagonals (one corner key, or two adjacent cardinals) run at
    the same speed as a single cardinal.
    """
    sx = sy = 0.0
    for k in held:
        v = KEY_VECTORS.get(k)
        if v is not None:
            sx += v[0]
            sy += v[1]
    n = math.hypot(sx, sy)
    if n <= 1e-12:
        return (0.0, 0.0)
    return (sx / n * v_limit, sy / n * v_limit)


def aperture_key(held) -> int:
    """-1 close, +1 open, 0 when neither (or both) drive keys are held."""
    return sum(APERTURE_KEYS.get(k, 0) for k in held)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class SessionProtocol:
    """Sans-io protocol core: feed client text in, pull frame dicts out.

    handle_message only fills the input mailbox (held keys, pending mode or
    scene change) and returns an error frame for anything malformed; tick()
    applies pending changes at the tick boundary, steps the plant, and emits
    the next frame. Exactly one writer of simulation state either way.
    """

    def __init__(self, cfg: ExperimentConfig | None = None):
        self.cfg = cfg or ExperimentConfig()
        self.model, _ = pinch_demonstration(params=self.cfg.density)
        self.dt = self.cfg.session.dt
        self.mode = "assisted"
        self.records: list[tuple[str, object]] = []  # (reason, TrialRecord)
        self._frame_tick = 0
        self._last_ack: int | None = None
        self._held: tuple[str, ...] = ()
        self._pending_mode: str | None = None
        self._pending_scene: tuple[int, TrialSetup] | None = None
        self._recorded = False
        self._status = "running"
        found = self._scan_feasible(0)
        if found is None:
            raise RuntimeError(
                f"no feasible scene in the first {_SCAN_LIMIT} trial indices")
        self._trial_index, self._setup = found
        self._session = self._new_session()

    # -- trial lifecycle -------------------------------------------------

    def _scan_feasible(self, start_index: int) -> tuple[int, TrialSetup] | None:
        # pure: no protocol state touched, safe to run from the read path
        for index in range(start_index, start_index + _SCAN_LIMIT):
            setup = prepare_trial(self.cfg, self.model, index)
            if setup is not None:
                return index, setup
        return None

    def _new_session(self) -> Session:
        s = self._setup
        assisted = self.mode == "assisted"
        return Session(
            scene=s.scene, gripper=self.model.gripper, target=s.target,
            mode=self.mode, start_pose=s.start_pose,
            start_aperture=self.cfg.start_aperture,
            plans=s.plans if assisted else None,
            params=self.cfg.session,
            assist_params=self.cfg.assist if assisted else None,
            scene_seed=s.scene_seed,
        )

    def _finish(self, reason: str | None = None):
        if self._recorded:
            return
        rec = self._session.record()
        if reason is None:
            reason = "complete" if rec.outcome.success else "failed"
        self.records.append((reason, rec))
        self._recorded = True
        self._status = reason

    def abort(self, reason: str = "aborted"):
        """Close out a still-running trial (disconnect, mode switch, new scene)."""
        self._finish(reason)

    # -- inbound ---------------------------------------------------------

    def handle_message(self, text: str) -> dict | None:
        """Apply one client message to the mailbox.

        Returns an error frame dict for malformed input (the session keeps
        running either way), None when the message was accepted.
        """
        try:
            msg = json.loads(text)
        except (json.JSONDecodeError, UnicodeDecodeError):
            return self._error("unparseable message", None)
        if not isinstance(msg, dict):
            return self._error("message must be an object", None)
        seq = msg.get("seq")
        if not isinstance(seq, int) or isinstance(seq, bool):
            seq = None
        if seq is not None:
            # latest seq wins the ack slot, malformed or not; the sender
            # learns its message arrived even when it gets an error frame
            self._last_ack = seq
        if msg.get("protocol") != PROTOCOL_ID:
            return self._error(f"protocol must be {PROTOCOL_ID!r}", seq)
        kind = msg.get("type")
        if kind == "keys":
            held = msg.get("held")
            if not isinstance(held, list) or not all(isinstance(k, str) for k in held):
                return self._error("held must be a list of key strings", seq)
            bad = [k for k in held if k not in KEY_VECTORS and k not in APERTURE_KEYS]
            if bad:
                return self._error(f"unknown keys {bad}", seq)
            self._held = tuple(held)  # latest-wins within a tick
            return None
        if kind == "mode":
            mode = msg.get("mode")
            if mode not in ("manual", "assisted"):
                return self._error("mode must be 'manual' or 'assisted'", seq)
            self._pending_mode = mode
            return None
        if kind == "new_scene":
            seed = msg.get("seed")
            if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
                return self._error("seed must be an integer", seq)
            # preparing a scene is pure, so it can run here on the read path;
            # only tick() installs the result
            if seed is not None:
                # scene_seed is cfg.seed + 1000*index, so shifting cfg makes
                # index 0 land exactly on the requested seed
                setup = prepare_trial(replace(self.cfg, seed=seed), self.model, 0)
                if setup is None:
                    return self._error(f"scene seed {seed} admits no feasible trial", seq)
                self._pending_scene = (self._trial_index + 1, setup)
            else:
                found = self._scan_feasible(self._trial_index + 1)
                if found is None:
                    return self._error(
                        f"no feasible scene in the next {_SCAN_LIMIT} trial indices", seq)
                self._pending_scene = found
            return None
        return self._error(f"unknown message type {kind!r}", seq)

    def _error(self, message: str, seq: int | None) -> dict:
        return {"protocol": PROTOCOL_ID, "type": "error", "error": message,
                "seq": seq, "tick": self._frame_tick}

    # -- tick ------------------------------------------------------------

    def tick(self) -> dict:
        self._apply_pending()
        sess = self._session
        if not sess.done:
            u = compose_direction(self._held, self.cfg.session.v_limit)
            sess.step(u, aperture_key=aperture_key(self._held))
            if sess.done:
                self._finish()
        frame = self._frame()
        self._frame_tick += 1
        return frame

    def _apply_pending(self):
        rebuild = False
        if self._pending_mode is not None:
            mode = self._pending_mode
            self._pending_mode = None
            if mode != self.mode:
                self.mode = mode
                rebuild = True
        if self._pending_scene is not None:
            self._trial_index, self._setup = self._pending_scene
            self._pending_scene = None
            rebuild = True
        if rebuild:
            self.abort()  # records the old session if it was still running
            self._session = self._new_session()
            self._recorded = False
            self._status = "running"

    # -- outbound --------------------------------------------------------

    def _frame(self) -> dict:
        sess, setup = self._session, self._setup
        pose, ap = sess.state.pose, sess.state.aperture
        gp = setup.target.pose
        planned = {p.grasp.grasp_id for p in (setup.plans or [])}
        costs: dict[int, float] = {}
        selected = None
        if sess.last_debug is not None:
            costs = sess.last_debug["costs"]
            selected = sess.last_debug["selected"]
        ghost = None
        if selected is not None:
            plan = next((p for p in setup.plans if p.grasp.grasp_id == selected), None)
            if plan is not None:
                ghost = [[wp.x, wp.y] for wp, _ in plan.waypoints]
        n_done = len(self.records)
        n_ok = sum(1 for _, rec in self.records if rec.outcome.success)
        return {
            "protocol": PROTOCOL_ID,
            "type": "frame",
            "tick": self._frame_tick,
            "ack": self._last_ack,
            "mode": self.mode,
            "status": self._status if sess.done else "running",
            "dt": self.dt,
            "trial_index": self._trial_index,
            "scene_seed": setup.scene_seed,
            "scene": setup.scene.to_dict(),
            "gripper": {
                "model": self.model.gripper.to_dict(),
                "pose": [pose.x, pose.y, pose.theta],
                "aperture": ap,
            },
            "target": setup.target.grasp_id,
            "candidates": [
                {"grasp": c.to_dict(),
                 "cost": costs.get(c.grasp_id),
                 "planned": c.grasp_id in planned}
                for c in setup.candidates
            ],
            "selected": selected,
            "ghost": ghost,
            "metrics": {
                "sim_tick": sess.state.tick,
                "elapsed": sess.state.tick * self.dt,
                "position_error": math.hypot(pose.x - gp.x, pose.y - gp.y),
                "trials_done": n_done,
                "successes": n_ok,
            },
        }


def run_transcript(proto: SessionProtocol, script: dict[int, list[str]],
                   n_ticks: int) -> list[str]:
    """Drive the sans-io protocol from a scripted transcript.

    script maps a tick index to the client texts delivered before that tick
    runs. Returns every emitted line (error frames interleaved with frames)
    canonically serialized; the golden protocol test diffs this output.
    """
    lines: list[str] = []
    for t in range(n_ticks):
        for text in script.get(t, []):
            err = proto.handle_message(text)
            if err is not None:
                lines.append(canonical_json(err))
        lines.append(canonical_json(proto.tick()))
    return lines


# -- websocket service ---------------------------------------------------

def build_app(cfg: ExperimentConfig | None = None,
              log_dir: Path | str | None = None):
    """FastAPI app: /session websocket, console static assets if present."""
    import asyncio

    from fastapi import FastAPI, WebSocketDisconnect
    from starlette.routing import WebSocketRoute

    app = FastAPI(title="graspassist session service")

    async def _reader(ws, proto: SessionProtocol, outbox: deque):
        while True:
            text = await ws.receive_text()
            err = proto.handle_message(text)
            if err is not None:
                outbox.append(err)

    def _flush_records(proto: SessionProtocol, written: int) -> int:
        if log_dir is None:
            return len(proto.records)
        root = Path(log_dir)
        root.mkdir(parents=True, exist_ok=True)
        for i in range(written, len(proto.records)):
            reason, rec = proto.records[i]
            path = root / f"trial-{i:04d}-{rec.mode}-{reason}.jsonl"
            path.write_text(rec.to_jsonl())
        return len(proto.records)

    # plain starlette route: postponed annotations plus the deferred import
    # break FastAPI's annotation-driven injection for websockets
    async def session_ws(ws):
        await ws.accept()
        proto = SessionProtocol(cfg)
        outbox: deque = deque()
        reader = asyncio.create_task(_reader(ws, proto, outbox))
        written = 0
        try:
            loop = asyncio.get_running_loop()
            next_at = loop.time()
            while True:
                # tick loop is the sole sender; error frames queued by the
                # reader go out just before the frame they precede
                while outbox:
                    await ws.send_text(canonical_json(outbox.popleft()))
                await ws.send_text(canonical_json(proto.tick()))
                written = _flush_records(proto, written)
                next_at += proto.dt
                await asyncio.sleep(max(0.0, next_at - loop.time()))
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            reader.cancel()
            proto.abort("disconnected")
            _flush_records(proto, written)

    app.router.routes.append(WebSocketRoute("/session", session_ws))

    console_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if console_dir.is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(console_dir), html=True),
                  name="console")

    return app


def serve(port: int = 8765, cfg: ExperimentConfig | None = None,
          log_dir: Path | str | None = None, host: str | None = None):
    """Run the session service until interrupted.

    Bind address comes from `host`, else the GRASPASSIST_BIND environment
    variable, else loopback.
    """
    import uvicorn

    host = host or os.environ.get("GRASPASSIST_BIND", "127.0.0.1")
    uvicorn.run(build_app(cfg, log_dir=log_dir), host=host, port=port)
