"""Tag protocol for agent transcripts: <think>, <tool_call>, <tool_response>, <answer>.

Parsing keeps the exact raw text of every span so render(parse(text)) == text
for well-formed input; trimmed content is exposed separately for consumers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

THINK = "think"
TOOL_CALL = "tool_call"
TOOL_RESPONSE = "tool_response"
ANSWER = "answer"

TAG_KINDS = (THINK, TOOL_CALL, TOOL_RESPONSE, ANSWER)


class TagError(ValueError):
    """Malformed tag structure or tool-call payload."""


@dataclass
class Segment:
    kind: str
    content: str
    raw: str = ""
    tagged: bool = True
    truncated: bool = False
    tool_name: Optional[str] = None
    tool_arguments: Optional[dict] = None

    def __post_init__(self) -> None:
        if self.kind not in TAG_KINDS:
            raise TagError(f"unknown segment kind {self.kind!r}")
        if not self.raw:
            self.raw = self.content


def _parse_tool_body(body: str, offset: int) -> tuple[str, dict]:
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise TagError(
            f"tool_call body is not valid JSON at offset {offset + exc.pos}: {exc.msg}"
        ) from None
    if not isinstance(payload, dict):
        raise TagError(f"tool_call body at offset {offset} must be a JSON object")
    if "name" not in payload or "arguments" not in payload:
        raise TagError(
            f"tool_call body at offset {offset} needs 'name' and 'arguments' fields"
        )
    name = payload["name"]
    arguments = payload["arguments"]
    if not isinstance(name, str) or not name:
        raise TagError(f"tool_call name at offset {offset} must be a non-empty string")
    if not isinstance(arguments, dict):
        raise TagError(f"tool_call arguments at offset {offset} must be an object")
    return name, arguments


def parse_agent_response(text: str) -> list[Segment]:
    """Split a transcript into tagged segments; untagged spans become free-text thinking."""
    segments: list[Segment] = []
    pos = 0
    n = len(text)
    while pos < n:
        hits = [
            (text.find(f"<{kind}>", pos), kind)
            for kind in TAG_KINDS
            if text.find(f"<{kind}>", pos) != -1
        ]
        if not hits:
            segments.append(
                Segment(THINK, text[pos:].strip(), raw=text[pos:], tagged=False)
            )
            break
        start, kind = min(hits)
        if start > pos:
            gap = text[pos:start]
            segments.append(Segment(THINK, gap.strip(), raw=gap, tagged=False))
        open_tag, close_tag = f"<{kind}>", f"</{kind}>"
        body_start = start + len(open_tag)
        end = text.find(close_tag, body_start)
        if end == -1:
            raise TagError(f"unclosed <{kind}> tag at offset {start}")
        body = text[body_start:end]
        for other in TAG_KINDS:
            if f"<{other}>" in body:
                raise TagError(
                    f"nested <{other}> inside <{kind}> at offset {start}"
                )
        seg = Segment(kind, body.strip(), raw=body)
        if kind == TOOL_CALL:
            seg.tool_name, seg.tool_arguments = _parse_tool_body(body, body_start)
        segments.append(seg)
        pos = end + len(close_tag)
    return segments


def render_segments(segments: list[Segment]) -> str:
    """Inverse of parse_agent_response on well-formed input."""
    parts = []
    for seg in segments:
        if seg.tagged:
            parts.append(f"<{seg.kind}>{seg.raw}</{seg.kind}>")
        else:
            parts.append(seg.raw)
    return "".join(parts)
