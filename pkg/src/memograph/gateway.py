"""Chat-completions transport, the bounded tool loop, and exact-match scoring.

The loop speaks the plain-text tag protocol: the model thinks inside <think>,
requests tools inside <tool_call> (JSON body), receives results inside
<tool_response>, and finishes with <answer>. At most `max_calls` tool
invocations run per question; after that the model gets one forced-answer turn.
"""

from __future__ import annotations

import json
import os
import string
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Sequence

import httpx

from . import tags
from .tags import Segment

DEFAULT_MAX_CALLS = 6
API_KEY_ENV = "MEMOGRAPH_LLM_API_KEY"
FORCED_ANSWER_NUDGE = (
    "You have used all available tool calls. You must answer now: reply with "
    "your final answer inside <answer> and </answer>."
)


class TransportError(Exception):
    pass


class ToolError(Exception):
    pass


@dataclass
class Trajectory:
    question: str
    segments: list[Segment] = field(default_factory=list)
    tool_calls_used: int = 0
    reward: Optional[float] = None
    ref: str = ""

    def answer(self) -> Optional[str]:
        for seg in self.segments:
            if seg.kind == tags.ANSWER:
                return seg.content
        return None

    def validate(self, max_calls: int = DEFAULT_MAX_CALLS) -> None:
        if self.tool_calls_used > max_calls:
            raise ToolError(
                f"{self.tool_calls_used} tool calls exceed the cap of {max_calls}"
            )
        answers = [s for s in self.segments if s.kind == tags.ANSWER]
        if len(answers) > 1:
            raise ToolError("a trajectory may contain at most one answer segment")
        for i, seg in enumerate(self.segments):
            if seg.kind == tags.TOOL_CALL:
                nxt = self.segments[i + 1] if i + 1 < len(self.segments) else None
                if nxt is None or nxt.kind != tags.TOOL_RESPONSE:
                    raise ToolError(
                        f"tool_call at segment {i} lacks its tool_response"
                    )


@dataclass
class Tool:
    name: str
    description: str
    parameters: dict
    fn: Callable[[dict], str]

    def signature(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": self.parameters,
        }


class ToolRegistry:
    def __init__(self) -> None:
        self._tools: dict[str, Tool] = {}

    def register(self, tool: Tool) -> None:
        if tool.name in self._tools:
            raise ToolError(f"tool {tool.name!r} already registered")
        self._tools[tool.name] = tool

    def get(self, name: str) -> Optional[Tool]:
        return self._tools.get(name)

    def signatures(self) -> str:
        return "\n".join(
            json.dumps(t.signature(), indent=2) for t in self._tools.values()
        )

    def dispatch(self, name: str, arguments: dict) -> str:
        tool = self.get(name)
        if tool is None:
            return f"Error: unknown tool {name!r}"
        try:
            return tool.fn(arguments)
        except Exception as exc:
            return f"Error: tool {name!r} failed: {exc}"


def mock_search_tool(corpus: Optional[dict[str, str]] = None) -> Tool:
    """Deterministic exact-key lookup over a bundled fixture corpus."""
    if corpus is None:
        corpus = json.loads(
            resources.files("memograph.assets")
            .joinpath("mock_search_corpus.json")
            .read_text()
        )

    def lookup(arguments: dict) -> str:
        query = arguments.get("query", "")
        topk = arguments.get("topk", 3)
        hit = corpus.get(query)
        body = hit if hit is not None else "No documents found."
        return (
            "Execute the tool search-query_rag successed\n"
            f"  - The args are: {{'query': {query!r}, 'topk': {topk}}}\n"
            f"  - The result is: {body}"
        )

    return Tool(
        name="search-query_rag",
        description=(
            "MCP RAG Query Tool (Synchronous Version)\n"
            "Args:\n    query: query text\n"
            "    topk: The default number of documents returned is 3\n"
            "Returns:\n    str: The formatted query result"
        ),
        parameters={
            "type": "object",
            "properties": {
                "query": {"title": "Query", "type": "string"},
                "topk": {"default": 3, "title": "Topk", "type": "integer"},
            },
            "required": ["query"],
        },
        fn=lookup,
    )


def default_registry() -> ToolRegistry:
    registry = ToolRegistry()
    registry.register(mock_search_tool())
    return registry


class ChatTransport:
    """HTTP chat-completions client with timeout, bounded retry and an audit log.

    The auth token is resolved from the environment at request time and never
    written to the audit log.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        token_env: str = API_KEY_ENV,
        timeout: float = 60.0,
        retry_budget: int = 2,
        client: Optional[httpx.Client] = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.token_env = token_env
        self.timeout = timeout
        self.retry_budget = retry_budget
        self._client = client or httpx.Client(timeout=timeout)
        self.audit_log: list[dict] = []

    def complete(self, messages: Sequence[dict]) -> str:
        payload = {"model": self.model, "messages": list(messages)}
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        attempts = self.retry_budget + 1
        last_error: Optional[str] = None
        for attempt in range(attempts):
            entry = {"endpoint": self.endpoint, "model": self.model,
                     "messages": list(messages), "attempt": attempt}
            try:
                response = self._client.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
            except httpx.HTTPError as exc:
                last_error = f"transport failure: {exc}"
                entry["error"] = last_error
                self.audit_log.append(entry)
                continue
            if response.status_code >= 500:
                last_error = f"server error {response.status_code}"
                entry["error"] = last_error
                self.audit_log.append(entry)
                continue
            if response.status_code >= 400:
                entry["error"] = f"client error {response.status_code}"
                self.audit_log.append(entry)
                raise TransportError(
                    f"chat endpoint rejected the request: {response.status_code}"
                )
            data = response.json()
            try:
                text = data["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError):
                entry["error"] = "malformed completion payload"
                self.audit_log.append(entry)
                raise TransportError("malformed completion payload") from None
            entry["response"] = text
            self.audit_log.append(entry)
            return text
        raise TransportError(f"retry budget exhausted: {last_error}")


class ScriptedTransport:
    """Replays fixture responses in order; raises when the script runs dry."""

    def __init__(self, responses: Sequence[str]):
        self.responses = list(responses)
        self.calls: list[list[dict]] = []

    def complete(self, messages: Sequence[dict]) -> str:
        self.calls.append(list(messages))
        if not self.responses:
            raise TransportError("scripted transport has no responses left")
        return self.responses.pop(0)


def chat(messages: Sequence[dict], transport) -> str:
    """Send a messages array through any transport implementing complete()."""
    if not messages:
        raise TransportError("messages must be non-empty")
    return transport.complete(messages)


def parse_agent_response(text: str) -> list[Segment]:
    return tags.parse_agent_response(text)


def load_prompt(name: str) -> str:
    return resources.files("memograph.assets").joinpath(name).read_text()


def build_loop_messages(question: str, registry: ToolRegistry) -> list[dict]:
    system = load_prompt("tool_loop_system.txt").replace(
        "{{tool_signatures}}", registry.signatures()
    )
    user = load_prompt("tool_loop_user.txt").replace("{{question}}", question)
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": user},
    ]


def run_tool_loop(
    question: str,
    transport,
    tools: Optional[ToolRegistry] = None,
    max_calls: int = DEFAULT_MAX_CALLS,
    guidance: Optional[str] = None,
) -> Trajectory:
    """Alternate model turns and tool dispatches until an answer or the cap."""
    if max_calls < 0:
        raise ToolError("max_calls must be >= 0")
    registry = tools or default_registry()
    messages = build_loop_messages(question, registry)
    if guidance:
        messages[1] = {
            "role": "user",
            "content": f"{guidance}\n\n{messages[1]['content']}",
        }
    trajectory = Trajectory(question=question)
    forced = False
    while True:
        reply = chat(messages, transport)
        messages.append({"role": "assistant", "content": reply})
        segments = tags.parse_agent_response(reply)
        answered = False
        dispatched = 0
        for seg in segments:
            trajectory.segments.append(seg)
            if seg.kind == tags.ANSWER:
                answered = True
                break
            if seg.kind == tags.TOOL_CALL:
                if forced or trajectory.tool_calls_used >= max_calls:
                    trajectory.segments.append(
                        Segment(
                            tags.TOOL_RESPONSE,
                            "[truncated: tool call budget exhausted]",
                            truncated=True,
                        )
                    )
                    continue
                result = registry.dispatch(seg.tool_name, seg.tool_arguments or {})
                trajectory.tool_calls_used += 1
                dispatched += 1
                trajectory.segments.append(
                    Segment(tags.TOOL_RESPONSE, result.strip(), raw=result)
                )
                messages.append(
                    {
                        "role": "user",
                        "content": f"<tool_response>\n{result}\n</tool_response>",
                    }
                )
        if answered:
            break
        if forced:
            # The nudge turn also failed to answer: give up with reward 0.
            trajectory.reward = 0.0
            break
        if trajectory.tool_calls_used >= max_calls or dispatched == 0:
            # Budget gone, or the model neither answered nor called a tool:
            # one last turn demanding an answer.
            messages.append({"role": "user", "content": FORCED_ANSWER_NUDGE})
            forced = True
    trajectory.validate(max_calls)
    return trajectory


_ARTICLES = ("a", "an", "the")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace, drop leading articles."""
    text = text.lower().translate(_PUNCT_TABLE)
    words = text.split()
    while words and words[0] in _ARTICLES:
        words = words[1:]
    return " ".join(words)


def exact_match_reward(prediction: Optional[str], gold: str) -> int:
    if prediction is None:
        return 0
    return 1 if normalize_answer(prediction) == normalize_answer(gold) else 0
