"""Vehicle-side client: connect to a station and run one charging session.

The vehicle knows the station's fixed address and port, sends its
request document (file name first, then the content), answers the
amount prompt, pays the bill it receives, and reports how the session
ended together with the full frame transcript.
"""

from __future__ import annotations

import json
import logging
import socket
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .netio import recv_line
from .protocol import (
    Bill,
    ChargeRequest,
    ClientSessionState,
    Done,
    InvariantViolation,
    OutcomeKind,
    ProtocolMessage,
    SendFileContent,
    SendFileName,
    SendPayment,
    SessionOutcome,
    WireError,
    WireFrame,
    as_kwh,
    client_step,
    decode_message,
    encode_message,
)

logger = logging.getLogger(__name__)

DEFAULT_CONNECT_TIMEOUT = 5.0
DEFAULT_READ_TIMEOUT = 30.0

# Canonical detail for any mid-session transport or framing failure,
# so replaying a truncated transcript derives the same outcome.
TRANSPORT_ERROR = "transport_error"

_SEND_STATES = (SendFileName, SendFileContent, SendPayment)


class VehicleError(Exception):
    """Base class for vehicle-side failures."""


class ConnectError(VehicleError):
    """The station could not be reached."""


class ParseError(VehicleError):
    """The request document is not valid JSON."""


@dataclass(frozen=True)
class ChargeIntent:
    """Everything one charge() call needs: who, what, where, how much."""

    request: ChargeRequest
    file_name: str
    kwh: Decimal
    station_address: str = "127.0.0.1"
    station_port: int = 7431

    def __post_init__(self):
        if not isinstance(self.file_name, str) or not self.file_name:
            raise InvariantViolation("file_name must be non-empty", field="file_name")
        object.__setattr__(self, "kwh", as_kwh(self.kwh))
        if self.kwh <= 0:
            raise InvariantViolation("kwh must be > 0", field="kwh")


@dataclass
class SessionReport:
    """Outcome of one session plus everything seen on the wire."""

    outcome: SessionOutcome
    bill: Bill | None = None
    receipt_transaction_id: str | None = None
    transcript: list[WireFrame] = field(default_factory=list)

    def __post_init__(self):
        has_receipt = self.receipt_transaction_id is not None
        if (self.outcome.kind is OutcomeKind.COMPLETED) != has_receipt:
            raise InvariantViolation(
                "receipt_transaction_id must be present exactly when the session completed"
            )


def load_charge_request(path: str | Path) -> ChargeRequest:
    """Parse and validate an on-disk request document (e.g. test.json)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    return ChargeRequest.from_wire(obj)


def charge(intent: ChargeIntent, *, connect_timeout: float = DEFAULT_CONNECT_TIMEOUT,
           read_timeout: float = DEFAULT_READ_TIMEOUT) -> SessionReport:
    """Run one charging session against the station in `intent`.

    Opens one TCP connection, drives the client state machine to a
    terminal state, and returns the report. Raises ConnectError when
    the station is unreachable; transport failures mid-session end the
    session with a protocol_error outcome instead of raising.
    """
    try:
        sock = socket.create_connection(
            (intent.station_address, intent.station_port), timeout=connect_timeout
        )
    except OSError as exc:
        raise ConnectError(
            f"cannot reach station at {intent.station_address}:{intent.station_port}: {exc}"
        ) from exc

    state: ClientSessionState = SendFileName()
    transcript: list[WireFrame] = []
    bill: Bill | None = None
    buf = bytearray()

    def send_frames(messages: list) -> bool:
        for message in messages:
            transcript.append(WireFrame("client->server", message))
            try:
                sock.sendall(encode_message(message))
            except OSError as exc:
                logger.warning("send to station failed: %s", exc)
                return False
        return True

    with sock:
        sock.settimeout(read_timeout)
        while not isinstance(state, Done):
            if isinstance(state, _SEND_STATES):
                state, out = client_step(state, None, intent)
                if not send_frames(out):
                    state = Done(SessionOutcome.protocol_error(TRANSPORT_ERROR))
                continue
            try:
                line = recv_line(sock, buf)
            except (socket.timeout, OSError, WireError) as exc:
                logger.warning("session transport failed: %s", exc)
                state = Done(SessionOutcome.protocol_error(TRANSPORT_ERROR))
                break
            if line is None:
                state = Done(SessionOutcome.protocol_error(TRANSPORT_ERROR))
                break
            try:
                msg = decode_message(line)
            except (WireError, InvariantViolation) as exc:
                logger.warning("undecodable frame from station: %s", exc)
                state = Done(SessionOutcome.protocol_error(TRANSPORT_ERROR))
                break
            transcript.append(WireFrame("server->client", msg))
            if isinstance(msg, Bill):
                bill = msg
            state, out = client_step(state, msg, intent)
            if not send_frames(out):
                state = Done(SessionOutcome.protocol_error(TRANSPORT_ERROR))
                break

    outcome = state.outcome
    receipt_id = outcome.transaction_id if outcome.kind is OutcomeKind.COMPLETED else None
    return SessionReport(outcome=outcome, bill=bill,
                         receipt_transaction_id=receipt_id, transcript=transcript)


def replay_report(transcript: list[WireFrame], intent: ChargeIntent) -> SessionOutcome:
    """Derive the session outcome a transcript implies.

    Feeds the received frames back through the client machine; a
    transcript that ends before a terminal state means the transport
    failed, which maps to the same canonical protocol_error outcome
    charge() reports.
    """
    state: ClientSessionState = SendFileName()
    for frame in transcript:
        if isinstance(state, Done):
            break
        while isinstance(state, _SEND_STATES):
            state, _ = client_step(state, None, intent)
        if frame.direction == "server->client" and not isinstance(state, Done):
            state, _ = client_step(state, frame.message, intent)
    while isinstance(state, _SEND_STATES):
        state, _ = client_step(state, None, intent)
    if isinstance(state, Done):
        return state.outcome
    return SessionOutcome.protocol_error(TRANSPORT_ERROR)
