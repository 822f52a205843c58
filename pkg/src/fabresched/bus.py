"""In-memory ordered message bus used for counting agent communications."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass


@dataclass(frozen=True)
class Message:
    tick: int
    sender: str
    receiver: str
    kind: str  # request, response, inform, removal, query
    size: int = 1


class MessageBus:
    """Delivers in enqueue order. Every message counts as one communication."""

    def __init__(self, keep_trace: bool = False):
        self.queue: deque[Message] = deque()
        self.count = 0
        self.keep_trace = keep_trace
        self.trace: list[Message] = []
        self.tick = 0

    def send(self, sender: str, receiver: str, kind: str, size: int = 1) -> None:
        msg = Message(self.tick, sender, receiver, kind, size)
        self.queue.append(msg)
        self.count += 1
        if self.keep_trace:
            self.trace.append(msg)

    def query(self, sender: str) -> None:
        """A directory lookup: request plus response."""
        self.send(sender, "directory", "query")
        self.send("directory", sender, "response")

    def drain(self) -> list[Message]:
        out = list(self.queue)
        self.queue.clear()
        return out

    def dump(self) -> str:
        return "".join(f"{m.tick}\t{m.sender}\t{m.receiver}\t{m.kind}\t{m.size}\n" for m in self.trace)
