"""Charging-station daemon.

Binds a fixed address and listening port, then serves charging sessions
strictly one at a time: accept a connection, drive the server state
machine over newline-delimited JSON frames until the session closes,
record the transaction if payment settled, write a session transcript,
and go back to accepting on the same port. Pending clients wait in the
OS accept backlog.

Every session gets a transcript under <data_dir>/transcripts/: a header
line (session id, station id, tariff, id seed) followed by one line per
frame or fault event. Replaying a transcript's inbound side through the
state machine with the recorded seed reproduces the outbound side
exactly, which is what the ledger audit leans on.
"""

from __future__ import annotations

import logging
import random
import re
import socket
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path

from .ids import IdSource
from .netio import recv_line
from .protocol import (
    AwaitFileName,
    Bill,
    Close,
    Closed,
    FileContent,
    FileName,
    InvariantViolation,
    MAX_SESSION_KWH,
    ProtocolMessage,
    ServerSessionState,
    SessionOutcome,
    WireError,
    as_money,
    build_bill,
    decode_message,
    dump_json,
    encode_message,
    server_abort,
    server_step,
)
from .registry import RegistryError, RegistryStore, StationAuthorizer

logger = logging.getLogger(__name__)

DEFAULT_PORT = 7431
DEFAULT_SESSION_TIMEOUT = 30.0

EVENT_TIMEOUT = "timeout"
EVENT_EOF = "eof"
EVENT_BAD_FRAME = "bad_frame"
EVENT_TRANSPORT = "transport_error"
EVENT_RECORD_FAILURE = "record_failure"

_NO_CLOSE_EVENTS = {EVENT_EOF, EVENT_TRANSPORT}


class StationError(Exception):
    """Base class for station failures."""


class BindError(StationError):
    """The configured address/port could not be bound."""


class InvalidAmount(StationError):
    """Requested energy amount is outside (0, MAX_SESSION_KWH]."""


@dataclass(frozen=True)
class StationConfig:
    station_id: str
    tariff: Decimal
    data_dir: Path
    archive_dir: Path
    bind_address: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    session_timeout: float = DEFAULT_SESSION_TIMEOUT

    def __post_init__(self):
        object.__setattr__(self, "tariff", as_money(self.tariff, "tariff"))
        if self.tariff <= 0:
            raise ValueError("tariff must be > 0")
        # port 0 asks the OS for an ephemeral port (simulator use).
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")
        object.__setattr__(self, "data_dir", Path(self.data_dir))
        object.__setattr__(self, "archive_dir", Path(self.archive_dir))


def make_bill(kwh: Decimal, tariff: Decimal, ids: IdSource) -> Bill:
    """Price a metered amount at the station tariff.

    Raises InvalidAmount outside (0, MAX_SESSION_KWH] kWh.
    """
    try:
        kwh = Decimal(str(kwh)) if not isinstance(kwh, Decimal) else kwh
        if not 0 < kwh <= MAX_SESSION_KWH:
            raise InvalidAmount(f"kwh must be in (0, {MAX_SESSION_KWH}], got {kwh}")
        return build_bill(kwh, tariff, bill_id=ids.new_id())
    except InvariantViolation as exc:
        raise InvalidAmount(str(exc)) from exc


def sanitize_file_name(name: str) -> str:
    """Collapse a client-supplied file name to one safe path segment.

    Path separators and parent references are stripped; an empty result
    falls back to "request.json". The result never escapes archive_dir.
    """
    segments = [s for s in re.split(r"[/\\]+", name) if s not in ("", ".", "..")]
    cleaned = "_".join(segments).replace("\x00", "")
    cleaned = cleaned.strip(". ")
    if len(cleaned) > 120:
        cleaned = cleaned[:120]
    return cleaned or "request.json"


def archive_request(archive_dir: Path, session_id: str, file_name: str,
                    raw_content: bytes) -> Path:
    """Store the received request document under the archive directory.

    The file is named <session_id>_<sanitized file_name> so repeated
    file names from different sessions never collide.
    """
    archive_dir = Path(archive_dir)
    archive_dir.mkdir(parents=True, exist_ok=True)
    path = archive_dir / f"{session_id}_{sanitize_file_name(file_name)}"
    path.write_bytes(raw_content)
    return path


# ---------------------------------------------------------------------------
# Transcripts


@dataclass(frozen=True)
class TranscriptHeader:
    session_id: str
    station_id: str
    tariff: Decimal
    id_seed: int


@dataclass(frozen=True)
class TranscriptEntry:
    """One wire frame or fault event, in session order."""

    direction: str  # "in" | "out"
    timestamp: str  # ISO-8601 UTC
    frame: str | None = None  # JSON frame text (no newline)
    event: str | None = None  # fault name when no decodable frame arrived

    def message(self) -> ProtocolMessage:
        return decode_message(self.frame.encode("utf-8") + b"\n")


@dataclass
class Transcript:
    header: TranscriptHeader
    entries: list[TranscriptEntry] = field(default_factory=list)

    def outbound(self) -> list[ProtocolMessage]:
        return [e.message() for e in self.entries if e.direction == "out"]

    def inbound_frames(self) -> list[TranscriptEntry]:
        return [e for e in self.entries if e.direction == "in"]

    def receipt_transaction_id(self) -> str | None:
        for message in self.outbound():
            if message.TYPE == "receipt":
                return message.transaction_id
        return None

    def completed(self) -> bool:
        return self.receipt_transaction_id() is not None


def transcripts_dir(data_dir: Path) -> Path:
    return Path(data_dir) / "transcripts"


def write_transcript(data_dir: Path, transcript: Transcript) -> Path:
    directory = transcripts_dir(data_dir)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{transcript.header.session_id}.jsonl"
    with open(path, "w", encoding="utf-8") as handle:
        header = transcript.header
        handle.write(dump_json({
            "session_id": header.session_id, "station_id": header.station_id,
            "tariff": header.tariff, "id_seed": header.id_seed,
        }) + "\n")
        for entry in transcript.entries:
            obj: dict[str, object] = {"direction": entry.direction,
                                      "timestamp": entry.timestamp}
            if entry.frame is not None:
                obj["frame"] = entry.frame
            if entry.event is not None:
                obj["event"] = entry.event
            handle.write(dump_json(obj) + "\n")
    return path


def read_transcript(path: Path) -> Transcript:
    import json

    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise ValueError(f"empty transcript: {path}")
    head = json.loads(lines[0], parse_float=Decimal)
    header = TranscriptHeader(session_id=head["session_id"], station_id=head["station_id"],
                              tariff=as_money(head["tariff"], "tariff"),
                              id_seed=int(head["id_seed"]))
    entries = []
    for line in lines[1:]:
        obj = json.loads(line)
        entries.append(TranscriptEntry(direction=obj["direction"],
                                       timestamp=obj["timestamp"],
                                       frame=obj.get("frame"),
                                       event=obj.get("event")))
    return Transcript(header=header, entries=entries)


def replay_transcript(transcript: Transcript, auth) -> list[ProtocolMessage]:
    """Re-run the inbound side through the server machine.

    Returns the outbound frames the machine produces; on an untampered
    transcript these equal Transcript.outbound() exactly, because the
    header's id seed replays the same bill and transaction ids.
    """
    ids = IdSource(transcript.header.id_seed)
    state: ServerSessionState = AwaitFileName()
    replayed: list[ProtocolMessage] = []
    for entry in transcript.inbound_frames():
        if entry.event is not None:
            state, frames = server_abort(
                state, entry.event, send_close=entry.event not in _NO_CLOSE_EVENTS
            )
        else:
            state, frames, _ = server_step(
                state, entry.message(), auth, transcript.header.tariff, ids=ids
            )
        replayed.extend(frames)
        if isinstance(state, Closed):
            break
    return replayed


# ---------------------------------------------------------------------------
# The daemon


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class StationServer:
    """One-session-at-a-time TCP server around the session state machine."""

    def __init__(self, config: StationConfig, store: RegistryStore,
                 *, seed: int | None = None):
        if store.get_station(config.station_id) is None:
            raise StationError(
                f"station {config.station_id!r} is not registered; register it first"
            )
        self.config = config
        self.store = store
        self._auth = StationAuthorizer(store=store, station_id=config.station_id)
        self._rng = random.Random(seed)
        self._listener: socket.socket | None = None
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()
        self._session_counter = self._existing_session_count()
        self.sessions_served = 0

    def _existing_session_count(self) -> int:
        directory = transcripts_dir(self.config.data_dir)
        if not directory.exists():
            return 0
        prefix = f"{self.config.station_id}-"
        highest = 0
        for path in directory.glob(f"{prefix}*.jsonl"):
            tail = path.stem[len(prefix):]
            if tail.isdigit():
                highest = max(highest, int(tail))
        return highest

    @property
    def port(self) -> int:
        if self._listener is None:
            raise StationError("station is not listening")
        return self._listener.getsockname()[1]

    def bind(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((self.config.bind_address, self.config.port))
        except OSError as exc:
            listener.close()
            raise BindError(
                f"cannot bind {self.config.bind_address}:{self.config.port}: {exc}"
            ) from exc
        listener.listen(16)
        listener.settimeout(0.2)
        self._listener = listener
        logger.info("station %s listening on %s:%d",
                    self.config.station_id, self.config.bind_address, self.port)

    def start(self) -> None:
        """Bind and serve on a background thread (used by sims and tests)."""
        if self._listener is None:
            self.bind()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True,
                                        name=f"station-{self.config.station_id}")
        self._thread.start()

    def serve_forever(self) -> None:
        """Bind and serve on the calling thread until stop() or KeyboardInterrupt."""
        if self._listener is None:
            self.bind()
        try:
            self._accept_loop()
        except KeyboardInterrupt:
            logger.info("station %s interrupted", self.config.station_id)
        finally:
            self.stop()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(timeout=10)
            self._thread = None
        if self._listener is not None:
            self._listener.close()
            self._listener = None

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break  # listener closed by stop()
            try:
                self._run_session(conn, addr)
            finally:
                conn.close()
                self.sessions_served += 1

    def _next_session_id(self) -> str:
        self._session_counter += 1
        return f"{self.config.station_id}-{self._session_counter:04d}"

    def _run_session(self, conn: socket.socket, addr) -> SessionOutcome:
        config = self.config
        session_id = self._next_session_id()
        id_seed = self._rng.getrandbits(63)
        ids = IdSource(id_seed)
        transcript = Transcript(header=TranscriptHeader(
            session_id=session_id, station_id=config.station_id,
            tariff=config.tariff, id_seed=id_seed,
        ))
        logger.info("session %s: client %s connected", session_id, addr)
        conn.settimeout(config.session_timeout)

        state: ServerSessionState = AwaitFileName()
        buf = bytearray()
        file_name: str | None = None

        def send_frames(messages: list) -> bool:
            for message in messages:
                line = encode_message(message)
                transcript.entries.append(TranscriptEntry(
                    direction="out", timestamp=_utc_now(),
                    frame=line.decode("utf-8").rstrip("\n")))
                try:
                    conn.sendall(line)
                except OSError as exc:
                    logger.warning("session %s: send failed: %s", session_id, exc)
                    return False
            return True

        def abort(event: str) -> None:
            nonlocal state
            transcript.entries.append(TranscriptEntry(
                direction="in", timestamp=_utc_now(), event=event))
            state, frames = server_abort(state, event,
                                         send_close=event not in _NO_CLOSE_EVENTS)
            send_frames(frames)

        while not isinstance(state, Closed):
            try:
                line = recv_line(conn, buf)
            except socket.timeout:
                abort(EVENT_TIMEOUT)
                break
            except WireError:
                abort(EVENT_BAD_FRAME)
                break
            except OSError:
                abort(EVENT_TRANSPORT)
                break
            if line is None:
                abort(EVENT_EOF)
                break
            try:
                msg = decode_message(line)
            except (WireError, InvariantViolation) as exc:
                logger.warning("session %s: undecodable frame: %s", session_id, exc)
                abort(EVENT_BAD_FRAME)
                break
            transcript.entries.append(TranscriptEntry(
                direction="in", timestamp=_utc_now(),
                frame=line.decode("utf-8").rstrip("\n")))
            if isinstance(msg, FileName):
                file_name = msg.name
            if isinstance(msg, FileContent):
                try:
                    archive_request(config.archive_dir, session_id,
                                    file_name or "request.json", line)
                except OSError as exc:
                    logger.warning("session %s: archive failed: %s", session_id, exc)

            state, frames, draft = server_step(state, msg, self._auth,
                                               config.tariff, ids=ids)
            if draft is not None:
                try:
                    self.store.record_transaction(draft)
                except (RegistryError, InvariantViolation) as exc:
                    # Never send a receipt for a transaction the ledger
                    # refused; close with an error instead.
                    logger.error("session %s: failed to record transaction: %s",
                                 session_id, exc)
                    transcript.entries.append(TranscriptEntry(
                        direction="in", timestamp=_utc_now(),
                        event=EVENT_RECORD_FAILURE))
                    state = Closed(SessionOutcome.protocol_error(EVENT_RECORD_FAILURE))
                    send_frames([Close(reason=f"protocol_error: {EVENT_RECORD_FAILURE}")])
                    break
            if not send_frames(frames):
                if not isinstance(state, Closed):
                    abort(EVENT_TRANSPORT)
                break

        outcome = state.outcome if isinstance(state, Closed) else \
            SessionOutcome.protocol_error("session ended in a non-terminal state")
        write_transcript(config.data_dir, transcript)
        logger.info("session %s: %s", session_id, outcome.kind.value)
        return outcome


def serve(config: StationConfig, store: RegistryStore, *, seed: int | None = None) -> None:
    """Run the accept loop on the calling thread until interrupted."""
    StationServer(config, store, seed=seed).serve_forever()
