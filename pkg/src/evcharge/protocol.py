"""Wire protocol for vehicle-station charging sessions.

Framing is one message per line: a UTF-8 JSON object with a "type"
discriminator, terminated by a single newline byte (0x0A). Ten message
types cover a whole session:

    file_name, file_content, auth_ok, auth_denied, amount_request,
    amount, bill, payment, receipt, close

Money is exact decimal with 2 fractional digits, energy (kWh) with 3;
a bill's total is kwh * price_per_kwh rounded half-up to 2 digits.
Floating point never touches the wire: decimals are emitted digit-exact
and parsed back as ``decimal.Decimal``.

Both session state machines live here as pure, total step functions.
Out-of-order or unknown input closes the session instead of being
skipped: fail-closed is the only safe default for a billing protocol.
Sockets, storage and timers belong to the station and vehicle modules.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, fields
from datetime import date
from decimal import Decimal, InvalidOperation, ROUND_HALF_UP
from enum import Enum
from typing import TYPE_CHECKING, ClassVar, Protocol, Union

from .ids import IdSource

if TYPE_CHECKING:
    from .vehicle import ChargeIntent

MAX_FRAME_BYTES = 65536
# Largest energy amount a single session may bill (sanity cap).
MAX_SESSION_KWH = Decimal("1000.000")

KWH_STEP = Decimal("0.001")
MONEY_STEP = Decimal("0.01")

_DEFAULT_IDS = IdSource()


class WireError(ValueError):
    """Base class for codec failures."""


class EncodingOverflow(WireError):
    """The serialized frame would exceed MAX_FRAME_BYTES."""


class MalformedFrame(WireError):
    """The frame is not valid UTF-8, not valid JSON, or not an object."""


class UnknownType(WireError):
    """The frame's "type" field is missing or not a known message type."""


class InvariantViolation(ValueError):
    """A value breaks a domain invariant; ``field`` names the culprit."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


# ---------------------------------------------------------------------------
# Decimal handling


def _exact_decimal(value: object, step: Decimal, label: str) -> Decimal:
    """Convert to Decimal, quantized to `step`, rejecting precision loss."""
    if isinstance(value, bool) or not isinstance(value, (Decimal, int, float, str)):
        raise InvariantViolation(f"{label} is not a number: {value!r}", field=label)
    try:
        dec = value if isinstance(value, Decimal) else Decimal(str(value))
    except InvalidOperation:
        raise InvariantViolation(f"{label} is not a number: {value!r}", field=label) from None
    if not dec.is_finite():
        raise InvariantViolation(f"{label} must be finite", field=label)
    if dec < 0:
        raise InvariantViolation(f"{label} must be non-negative, got {dec}", field=label)
    try:
        quantized = dec.quantize(step)
    except InvalidOperation:
        raise InvariantViolation(f"{label} is out of range: {dec}", field=label) from None
    if quantized != dec:
        raise InvariantViolation(
            f"{label} carries more fractional digits than {step}: {dec}", field=label
        )
    return quantized


def as_kwh(value: object, label: str = "kwh") -> Decimal:
    """Normalize an energy amount to 3 fractional digits, non-negative."""
    return _exact_decimal(value, KWH_STEP, label)


def as_money(value: object, label: str = "amount") -> Decimal:
    """Normalize a currency amount to 2 fractional digits, non-negative."""
    return _exact_decimal(value, MONEY_STEP, label)


def money_round(value: Decimal) -> Decimal:
    """Round to 2 fractional digits, half away from zero on ties."""
    return value.quantize(MONEY_STEP, rounding=ROUND_HALF_UP)


def bill_total(kwh: Decimal, price_per_kwh: Decimal) -> Decimal:
    """Price of `kwh` at `price_per_kwh`, rounded half-up to 2 digits."""
    return money_round(kwh * price_per_kwh)


# ---------------------------------------------------------------------------
# Domain documents


def _require_str(label: str, value: object, non_empty: bool = False) -> None:
    if not isinstance(value, str):
        raise InvariantViolation(f"{label} must be a string, got {value!r}", field=label)
    if non_empty and not value:
        raise InvariantViolation(f"{label} must be non-empty", field=label)


@dataclass(frozen=True)
class ChargeRequest:
    """The per-vehicle request document sent at session start.

    Carries the owner's identity (name, email, phone, personal id) and
    the car's identity (id, model name, model year, purchase date).
    """

    owner_id: str
    owner_name: str
    owner_email: str
    owner_phone: str
    car_id: str
    car_model_name: str
    car_model_year: int
    car_date_purchased: str

    def __post_init__(self):
        _require_str("owner_id", self.owner_id, non_empty=True)
        _require_str("owner_name", self.owner_name)
        _require_str("owner_email", self.owner_email)
        _require_str("owner_phone", self.owner_phone)
        _require_str("car_id", self.car_id, non_empty=True)
        _require_str("car_model_name", self.car_model_name)
        if isinstance(self.car_model_year, bool) or not isinstance(self.car_model_year, int):
            raise InvariantViolation(
                f"car_model_year must be an integer, got {self.car_model_year!r}",
                field="car_model_year",
            )
        if not 1900 <= self.car_model_year <= 2200:
            raise InvariantViolation(
                f"car_model_year out of range [1900, 2200]: {self.car_model_year}",
                field="car_model_year",
            )
        _require_str("car_date_purchased", self.car_date_purchased)
        try:
            date.fromisoformat(self.car_date_purchased)
        except ValueError:
            raise InvariantViolation(
                f"car_date_purchased is not an ISO-8601 date: {self.car_date_purchased!r}",
                field="car_date_purchased",
            ) from None

    def to_wire(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_wire(cls, obj: object) -> "ChargeRequest":
        if not isinstance(obj, dict):
            raise InvariantViolation("request must be a JSON object", field="request")
        names = [f.name for f in fields(cls)]
        for name in names:
            if name not in obj:
                raise InvariantViolation(f"missing field {name}", field=name)
        for key in obj:
            if key not in names:
                raise InvariantViolation(f"unknown field {key}", field=key)
        return cls(**{name: obj[name] for name in names})


# ---------------------------------------------------------------------------
# Wire messages


@dataclass(frozen=True)
class FileName:
    TYPE: ClassVar[str] = "file_name"
    name: str

    def __post_init__(self):
        _require_str("name", self.name)


@dataclass(frozen=True)
class FileContent:
    TYPE: ClassVar[str] = "file_content"
    request: ChargeRequest

    def __post_init__(self):
        if not isinstance(self.request, ChargeRequest):
            raise InvariantViolation("request must be a ChargeRequest", field="request")


@dataclass(frozen=True)
class AuthOk:
    TYPE: ClassVar[str] = "auth_ok"
    station_id: str

    def __post_init__(self):
        _require_str("station_id", self.station_id, non_empty=True)


@dataclass(frozen=True)
class AuthDenied:
    TYPE: ClassVar[str] = "auth_denied"
    reason: str

    def __post_init__(self):
        _require_str("reason", self.reason)


@dataclass(frozen=True)
class AmountRequest:
    TYPE: ClassVar[str] = "amount_request"


@dataclass(frozen=True)
class Amount:
    TYPE: ClassVar[str] = "amount"
    kwh: Decimal

    def __post_init__(self):
        object.__setattr__(self, "kwh", as_kwh(self.kwh))


@dataclass(frozen=True)
class Bill:
    TYPE: ClassVar[str] = "bill"
    bill_id: str
    kwh: Decimal
    price_per_kwh: Decimal
    total: Decimal

    def __post_init__(self):
        _require_str("bill_id", self.bill_id, non_empty=True)
        object.__setattr__(self, "kwh", as_kwh(self.kwh))
        object.__setattr__(self, "price_per_kwh", as_money(self.price_per_kwh, "price_per_kwh"))
        object.__setattr__(self, "total", as_money(self.total, "total"))
        expected = bill_total(self.kwh, self.price_per_kwh)
        if self.total != expected:
            raise InvariantViolation(
                f"total {self.total} != kwh * price_per_kwh = {expected}", field="total"
            )


@dataclass(frozen=True)
class Payment:
    TYPE: ClassVar[str] = "payment"
    bill_id: str
    amount: Decimal

    def __post_init__(self):
        _require_str("bill_id", self.bill_id, non_empty=True)
        object.__setattr__(self, "amount", as_money(self.amount))


@dataclass(frozen=True)
class Receipt:
    TYPE: ClassVar[str] = "receipt"
    transaction_id: str
    bill_id: str

    def __post_init__(self):
        _require_str("transaction_id", self.transaction_id, non_empty=True)
        _require_str("bill_id", self.bill_id, non_empty=True)


@dataclass(frozen=True)
class Close:
    TYPE: ClassVar[str] = "close"
    reason: str

    def __post_init__(self):
        _require_str("reason", self.reason)


ProtocolMessage = Union[
    FileName, FileContent, AuthOk, AuthDenied, AmountRequest,
    Amount, Bill, Payment, Receipt, Close,
]

MESSAGE_TYPES: dict[str, type] = {
    cls.TYPE: cls
    for cls in (FileName, FileContent, AuthOk, AuthDenied, AmountRequest,
                Amount, Bill, Payment, Receipt, Close)
}


# ---------------------------------------------------------------------------
# Codec


def dump_json(value: object) -> str:
    """Compact JSON with digit-exact decimals (5.000 stays 5.000).

    The stdlib encoder would route Decimal through float and lose
    trailing digits; this emitter writes them verbatim as JSON numbers.
    Used for wire frames, the event log, and session transcripts.
    Parse the result with json.loads(..., parse_float=Decimal).
    """
    if isinstance(value, Decimal):
        return str(value)
    if isinstance(value, dict):
        return "{" + ",".join(
            f"{json.dumps(k)}:{dump_json(v)}" for k, v in value.items()
        ) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(dump_json(v) for v in value) + "]"
    return json.dumps(value, ensure_ascii=True)


def encode_message(msg: ProtocolMessage) -> bytes:
    """Serialize one message to a newline-terminated UTF-8 JSON line.

    Decimals are written with their exact digits (kWh with 3 fractional
    digits, money with 2), so decode_message(encode_message(m)) == m.
    """
    obj: dict[str, object] = {"type": msg.TYPE}
    for f in fields(msg):
        value = getattr(msg, f.name)
        if isinstance(value, ChargeRequest):
            value = value.to_wire()
        obj[f.name] = value
    line = dump_json(obj).encode("utf-8") + b"\n"
    if len(line) > MAX_FRAME_BYTES:
        raise EncodingOverflow(f"frame is {len(line)} bytes, max {MAX_FRAME_BYTES}")
    return line


def decode_message(line: bytes) -> ProtocolMessage:
    """Parse one newline-terminated frame back into a message.

    Raises MalformedFrame (bad UTF-8/JSON), UnknownType (unrecognized
    "type"), or InvariantViolation (a field breaks its type invariant).
    """
    if len(line) > MAX_FRAME_BYTES:
        raise MalformedFrame(f"frame is {len(line)} bytes, max {MAX_FRAME_BYTES}")
    try:
        text = line.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFrame(f"frame is not valid UTF-8: {exc}") from exc
    text = text.rstrip("\r\n")
    try:
        obj = json.loads(text, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise MalformedFrame(f"frame is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedFrame("frame is not a JSON object")
    tag = obj.get("type")
    if not isinstance(tag, str) or tag not in MESSAGE_TYPES:
        raise UnknownType(f"unrecognized message type: {tag!r}")
    cls = MESSAGE_TYPES[tag]
    names = [f.name for f in fields(cls)]
    for key in obj:
        if key != "type" and key not in names:
            raise InvariantViolation(f"unknown field {key} in {tag}", field=key)
    kwargs: dict[str, object] = {}
    for name in names:
        if name not in obj:
            raise InvariantViolation(f"missing field {name} in {tag}", field=name)
        value = obj[name]
        if cls is FileContent and name == "request":
            value = ChargeRequest.from_wire(value)
        kwargs[name] = value
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# Session outcomes and authorization


class OutcomeKind(str, Enum):
    COMPLETED = "completed"
    DENIED_UNREGISTERED = "denied_unregistered"
    PROTOCOL_ERROR = "protocol_error"
    PAYMENT_MISMATCH = "payment_mismatch"


@dataclass(frozen=True)
class SessionOutcome:
    """How a session ended; Completed carries the ledger transaction id."""

    kind: OutcomeKind
    transaction_id: str = ""
    detail: str = ""

    def __post_init__(self):
        if self.kind is OutcomeKind.COMPLETED and not self.transaction_id:
            raise InvariantViolation("completed outcome requires a transaction_id")

    @classmethod
    def completed(cls, transaction_id: str) -> "SessionOutcome":
        return cls(OutcomeKind.COMPLETED, transaction_id=transaction_id)

    @classmethod
    def denied_unregistered(cls) -> "SessionOutcome":
        return cls(OutcomeKind.DENIED_UNREGISTERED)

    @classmethod
    def protocol_error(cls, detail: str = "") -> "SessionOutcome":
        return cls(OutcomeKind.PROTOCOL_ERROR, detail=detail)

    @classmethod
    def payment_mismatch(cls) -> "SessionOutcome":
        return cls(OutcomeKind.PAYMENT_MISMATCH)


@dataclass(frozen=True)
class AuthDecision:
    granted: bool
    reason: str = ""  # "not-registered" or "detail-mismatch" when denied


class AuthProvider(Protocol):
    """Answers the registry's authorization query for one station."""

    station_id: str

    def authorize(self, request: ChargeRequest) -> AuthDecision: ...


@dataclass(frozen=True)
class StaticAuth:
    """AuthProvider with a fixed answer; handy for tests and tooling."""

    station_id: str
    decision: AuthDecision

    def authorize(self, request: ChargeRequest) -> AuthDecision:
        return self.decision


@dataclass(frozen=True)
class TransactionDraft:
    """A completed, paid session ready to be recorded in the ledger."""

    transaction_id: str
    station_id: str
    car_id: str
    owner_id: str
    kwh: Decimal
    price_per_kwh: Decimal
    total: Decimal


def build_bill(kwh: Decimal, price_per_kwh: Decimal, bill_id: str) -> Bill:
    """Assemble a Bill whose total satisfies the billing formula."""
    kwh = as_kwh(kwh)
    price_per_kwh = as_money(price_per_kwh, "price_per_kwh")
    return Bill(bill_id=bill_id, kwh=kwh, price_per_kwh=price_per_kwh,
                total=bill_total(kwh, price_per_kwh))


# ---------------------------------------------------------------------------
# Server state machine


@dataclass(frozen=True)
class AwaitFileName:
    pass


@dataclass(frozen=True)
class AwaitFileContent:
    pass


@dataclass(frozen=True)
class AwaitAmount:
    request: ChargeRequest


@dataclass(frozen=True)
class AwaitPayment:
    request: ChargeRequest
    bill: Bill


@dataclass(frozen=True)
class Closed:
    outcome: SessionOutcome


ServerSessionState = Union[AwaitFileName, AwaitFileContent, AwaitAmount, AwaitPayment, Closed]

ServerStepResult = tuple[ServerSessionState, list, "TransactionDraft | None"]


def _server_error(detail: str) -> ServerStepResult:
    outcome = SessionOutcome.protocol_error(detail)
    return Closed(outcome), [Close(reason=f"protocol_error: {detail}")], None


def server_step(
    state: ServerSessionState,
    msg: ProtocolMessage,
    auth: AuthProvider,
    tariff: Decimal,
    *,
    ids: IdSource | None = None,
) -> ServerStepResult:
    """Advance the station's session machine by one inbound message.

    Pure and total: every (state, message) pair maps to a result, with
    errors expressed as Closed outcomes rather than exceptions. A
    terminal state is returned unchanged. Returns the new state, the
    frames to send, and a TransactionDraft when payment settled.
    """
    ids = ids or _DEFAULT_IDS
    tariff = as_money(tariff, "tariff")
    if tariff <= 0:
        raise ValueError("tariff must be > 0")

    if isinstance(state, Closed):
        return state, [], None

    if isinstance(state, AwaitFileName) and isinstance(msg, FileName):
        return AwaitFileContent(), [], None

    if isinstance(state, AwaitFileContent) and isinstance(msg, FileContent):
        decision = auth.authorize(msg.request)
        if decision.granted:
            return (AwaitAmount(request=msg.request),
                    [AuthOk(station_id=auth.station_id), AmountRequest()], None)
        return (Closed(SessionOutcome.denied_unregistered()),
                [AuthDenied(reason=decision.reason),
                 Close(reason=OutcomeKind.DENIED_UNREGISTERED.value)], None)

    if isinstance(state, AwaitAmount) and isinstance(msg, Amount):
        if not 0 < msg.kwh <= MAX_SESSION_KWH:
            return _server_error(f"kwh out of range (0, {MAX_SESSION_KWH}]: {msg.kwh}")
        bill = build_bill(msg.kwh, tariff, bill_id=ids.new_id())
        return AwaitPayment(request=state.request, bill=bill), [bill], None

    if isinstance(state, AwaitPayment) and isinstance(msg, Payment):
        bill = state.bill
        if msg.bill_id == bill.bill_id and msg.amount == bill.total:
            transaction_id = ids.new_id()
            draft = TransactionDraft(
                transaction_id=transaction_id,
                station_id=auth.station_id,
                car_id=state.request.car_id,
                owner_id=state.request.owner_id,
                kwh=bill.kwh,
                price_per_kwh=bill.price_per_kwh,
                total=bill.total,
            )
            return (Closed(SessionOutcome.completed(transaction_id)),
                    [Receipt(transaction_id=transaction_id, bill_id=bill.bill_id),
                     Close(reason=OutcomeKind.COMPLETED.value)], draft)
        return (Closed(SessionOutcome.payment_mismatch()),
                [Close(reason=OutcomeKind.PAYMENT_MISMATCH.value)], None)

    return _server_error(f"unexpected {msg.TYPE} in {type(state).__name__}")


def server_abort(
    state: ServerSessionState, detail: str, *, send_close: bool = True
) -> tuple[ServerSessionState, list]:
    """Close a session from outside the message flow (timeout, EOF, ...).

    Pure, so transcript replay can reproduce driver-initiated closes:
    `detail` must be the canonical event name recorded in the
    transcript. send_close=False when the transport is already gone.
    """
    if isinstance(state, Closed):
        return state, []
    frames = [Close(reason=f"protocol_error: {detail}")] if send_close else []
    return Closed(SessionOutcome.protocol_error(detail)), frames


# ---------------------------------------------------------------------------
# Client state machine


@dataclass(frozen=True)
class SendFileName:
    pass


@dataclass(frozen=True)
class SendFileContent:
    pass


@dataclass(frozen=True)
class AwaitAuth:
    pass


@dataclass(frozen=True)
class AwaitAmountRequest:
    pass


@dataclass(frozen=True)
class AwaitBill:
    pass


@dataclass(frozen=True)
class SendPayment:
    bill: Bill


@dataclass(frozen=True)
class AwaitReceipt:
    pass


@dataclass(frozen=True)
class Done:
    outcome: SessionOutcome


ClientSessionState = Union[
    SendFileName, SendFileContent, AwaitAuth, AwaitAmountRequest,
    AwaitBill, SendPayment, AwaitReceipt, Done,
]

ClientStepResult = tuple[ClientSessionState, list]


def outcome_from_close(reason: str) -> SessionOutcome:
    """Map a server Close reason onto the client-side outcome."""
    if reason == OutcomeKind.PAYMENT_MISMATCH.value:
        return SessionOutcome.payment_mismatch()
    if reason == OutcomeKind.DENIED_UNREGISTERED.value:
        return SessionOutcome.denied_unregistered()
    return SessionOutcome.protocol_error(detail=reason)


def client_step(
    state: ClientSessionState,
    msg: ProtocolMessage | None,
    intent: "ChargeIntent",
) -> ClientStepResult:
    """Advance the vehicle's session machine.

    Send-states are stepped with msg=None and emit their frame; await-
    states consume the next inbound message. Total like server_step:
    unexpected input lands in Done with a protocol_error outcome, and a
    terminal state is returned unchanged.
    """
    if isinstance(state, Done):
        return state, []

    if isinstance(state, SendFileName) and msg is None:
        return SendFileContent(), [FileName(name=intent.file_name)]

    if isinstance(state, SendFileContent) and msg is None:
        return AwaitAuth(), [FileContent(request=intent.request)]

    if isinstance(state, AwaitAuth) and isinstance(msg, AuthOk):
        return AwaitAmountRequest(), []

    if isinstance(state, AwaitAuth) and isinstance(msg, AuthDenied):
        return Done(SessionOutcome.denied_unregistered()), []

    if isinstance(state, AwaitAmountRequest) and isinstance(msg, AmountRequest):
        return AwaitBill(), [Amount(kwh=intent.kwh)]

    if isinstance(state, AwaitBill) and isinstance(msg, Bill):
        return AwaitReceipt(), [Payment(bill_id=msg.bill_id, amount=msg.total)]

    if isinstance(state, SendPayment) and msg is None:
        bill = state.bill
        return AwaitReceipt(), [Payment(bill_id=bill.bill_id, amount=bill.total)]

    if isinstance(state, AwaitReceipt) and isinstance(msg, Receipt):
        return Done(SessionOutcome.completed(msg.transaction_id)), []

    if isinstance(msg, Close):
        return Done(outcome_from_close(msg.reason)), []

    what = "nothing" if msg is None else msg.TYPE
    return Done(SessionOutcome.protocol_error(f"unexpected {what} in {type(state).__name__}")), []


# ---------------------------------------------------------------------------
# In-memory composition (the lossless-channel mode)


@dataclass(frozen=True)
class WireFrame:
    """One frame as seen on the wire, labeled with its direction."""

    direction: str  # "client->server" or "server->client"
    message: ProtocolMessage


@dataclass
class ConversationResult:
    client_outcome: SessionOutcome
    server_outcome: SessionOutcome
    transcript: list[WireFrame] = field(default_factory=list)
    drafts: list[TransactionDraft] = field(default_factory=list)


def run_conversation(
    intent: "ChargeIntent",
    auth: AuthProvider,
    tariff: Decimal,
    *,
    ids: IdSource | None = None,
) -> ConversationResult:
    """Compose both machines over a lossless in-memory channel.

    Drives client_step and server_step to their terminal states without
    sockets; useful for property tests and the simulator's fast path.
    """
    server_state: ServerSessionState = AwaitFileName()
    client_state: ClientSessionState = SendFileName()
    to_server: deque = deque()
    to_client: deque = deque()
    transcript: list[WireFrame] = []
    drafts: list[TransactionDraft] = []

    def client_send(messages: list) -> None:
        for m in messages:
            transcript.append(WireFrame("client->server", m))
            to_server.append(m)

    def server_send(messages: list) -> None:
        for m in messages:
            transcript.append(WireFrame("server->client", m))
            to_client.append(m)

    while True:
        if not isinstance(client_state, Done) and isinstance(
            client_state, (SendFileName, SendFileContent, SendPayment)
        ):
            client_state, out = client_step(client_state, None, intent)
            client_send(out)
        elif to_server and not isinstance(server_state, Closed):
            server_state, out, draft = server_step(
                server_state, to_server.popleft(), auth, tariff, ids=ids
            )
            server_send(out)
            if draft is not None:
                drafts.append(draft)
        elif to_client and not isinstance(client_state, Done):
            client_state, out = client_step(client_state, to_client.popleft(), intent)
            client_send(out)
        else:
            break

    if isinstance(client_state, Done):
        client_outcome = client_state.outcome
    else:
        client_outcome = SessionOutcome.protocol_error("conversation stalled")
    if isinstance(server_state, Closed):
        server_outcome = server_state.outcome
    else:
        server_outcome = SessionOutcome.protocol_error("conversation stalled")
    return ConversationResult(client_outcome, server_outcome, transcript, drafts)
