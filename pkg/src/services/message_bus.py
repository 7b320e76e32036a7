"""
Message Bus - simulated synchronous inter-area channel
Mục đích: Round-indexed mailboxes; the only path between area workers

Rules:
- send() during round t, readable by receive() only after barrier() closes round t
- every delivery is logged (stage, round, sender, receiver, kind, floats, bytes)
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

from ..models.estimation_models import FLOAT_BYTES, BoundaryBusMessage, TieLineMessage
from ..utils.exceptions import ProtocolError
from ..utils.logger import get_logger


Message = Union[TieLineMessage, BoundaryBusMessage]


@dataclass(frozen=True)
class Delivery:
    stage: int
    round: int
    sender: int
    receiver: int
    kind: str
    keys: Tuple[int, ...]
    floats: int

    @property
    def bytes(self) -> int:
        return self.floats * FLOAT_BYTES


class MessageBus:
    """
    In-process bulk-synchronous bus
    SRP: Chỉ lo việc deliver messages between rounds
    """

    def __init__(self, logger=None):
        self.logger = logger or get_logger(__name__)
        self.stage = 0
        self.round = 0
        self._outbox: Dict[Tuple[int, int], Message] = {}
        self._inbox: Dict[int, List[Message]] = {}
        self.log: List[Delivery] = []

    def begin_stage(self, stage: int) -> None:
        if self._outbox:
            raise ProtocolError(f"{len(self._outbox)} undelivered messages at end of stage {self.stage}")
        self.stage = stage
        self.round = 0
        self._inbox = {}

    def send(self, message: Message) -> None:
        key = (message.sender, message.receiver)
        if message.sender == message.receiver:
            raise ProtocolError(f"area {message.sender} cannot message itself")
        if key in self._outbox:
            raise ProtocolError(f"area {message.sender} already sent to {message.receiver} in round {self.round}")
        self._outbox[key] = message

    def barrier(self) -> None:
        """Close the current round: move outbox to inboxes and log every delivery"""
        self._inbox = {}
        for (sender, receiver), message in sorted(self._outbox.items()):
            self._inbox.setdefault(receiver, []).append(message)
            self.log.append(Delivery(
                stage=self.stage,
                round=self.round,
                sender=sender,
                receiver=receiver,
                kind=message.kind,
                keys=tuple(sorted(message.values)),
                floats=message.float_count,
            ))
        self._outbox = {}
        self.round += 1

    def receive(self, receiver: int, expected_from: Optional[Tuple[int, ...]] = None) -> Dict[int, Message]:
        """Messages delivered to `receiver` at the last barrier, keyed by sender"""
        received = {message.sender: message for message in self._inbox.get(receiver, [])}
        if expected_from is not None:
            missing = sorted(set(expected_from) - set(received))
            if missing:
                raise ProtocolError(
                    f"area {receiver} is missing messages from {missing} in round {self.round - 1}"
                )
        return received

    def delivery_count(self, stage: Optional[int] = None) -> int:
        return sum(1 for d in self.log if stage is None or d.stage == stage)

    def traffic_summary(self) -> List[Dict[str, int]]:
        """Per (stage, sender, receiver): message count and bytes"""
        totals: Dict[Tuple[int, int, int], List[int]] = {}
        for d in self.log:
            entry = totals.setdefault((d.stage, d.sender, d.receiver), [0, 0])
            entry[0] += 1
            entry[1] += d.bytes
        return [
            {"stage": stage, "from": sender, "to": receiver, "count": count, "bytes": size}
            for (stage, sender, receiver), (count, size) in sorted(totals.items())
        ]
