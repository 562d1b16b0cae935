"""Finite state machine over abstract decision states, plus trajectory grounding.

A canonical path is a start-to-terminal walk through the declared transition
table. Grounding turns a tagged agent trajectory into such a path, either by
deterministic rules over the segment kinds or by asking a model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

from . import tags

PATH_ARROW = " -> "


class FsmError(Exception):
    """Malformed machine definition or ungroundable trajectory."""


@dataclass(frozen=True)
class FsmSpec:
    states: frozenset[str]
    transitions: frozenset[tuple[str, str]]
    start_state: str
    terminal_states: frozenset[str]

    def __post_init__(self) -> None:
        if self.start_state not in self.states:
            raise FsmError(f"start state {self.start_state!r} not declared")
        missing = self.terminal_states - self.states
        if missing:
            raise FsmError(f"terminal states not declared: {sorted(missing)}")
        if not self.terminal_states:
            raise FsmError("at least one terminal state is required")
        for src, dst in self.transitions:
            if src not in self.states or dst not in self.states:
                raise FsmError(f"transition ({src!r}, {dst!r}) references unknown state")
        sources = {src for src, _ in self.transitions}
        dead = self.states - self.terminal_states - sources
        if dead:
            raise FsmError(f"non-terminal states without outgoing transitions: {sorted(dead)}")
        # Every terminal must be reachable from the start, else the machine
        # can never accept a path ending there.
        reachable = {self.start_state}
        frontier = [self.start_state]
        while frontier:
            src = frontier.pop()
            for a, b in self.transitions:
                if a == src and b not in reachable:
                    reachable.add(b)
                    frontier.append(b)
        unreachable = self.terminal_states - reachable
        if unreachable:
            raise FsmError(f"unreachable terminal states: {sorted(unreachable)}")

    def successors(self, state: str) -> set[str]:
        return {dst for src, dst in self.transitions if src == state}

    def to_document(self) -> dict:
        return {
            "states": sorted(self.states),
            "transitions": sorted([list(t) for t in self.transitions]),
            "start": self.start_state,
            "terminals": sorted(self.terminal_states),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "FsmSpec":
        try:
            states = doc["states"]
            transitions = doc["transitions"]
            start = doc["start"]
            terminals = doc["terminals"]
        except (KeyError, TypeError) as exc:
            raise FsmError(f"fsm document missing field: {exc}") from None
        return cls(
            states=frozenset(states),
            transitions=frozenset((a, b) for a, b in transitions),
            start_state=start,
            terminal_states=frozenset(terminals),
        )

    def transitions_info(self) -> str:
        return "; ".join(f"{a} -> {b}" for a, b in sorted(self.transitions))


def load_fsm(source) -> FsmSpec:
    """Load and validate a machine from a dict, JSON text, or file path."""
    if isinstance(source, dict):
        return FsmSpec.from_document(source)
    if isinstance(source, str) and source.lstrip().startswith("{"):
        return FsmSpec.from_document(json.loads(source))
    with open(source, "r", encoding="utf-8") as fh:
        return FsmSpec.from_document(json.load(fh))


def default_fsm() -> FsmSpec:
    """The machine shipped with the package (user-replaceable)."""
    text = resources.files("memograph.assets").joinpath("default_fsm.json").read_text()
    return FsmSpec.from_document(json.loads(text))


@dataclass(frozen=True)
class PathValidation:
    ok: bool
    position: Optional[int] = None
    reason: Optional[str] = None


def validate_path(states: Sequence[str], fsm: FsmSpec) -> PathValidation:
    """Check a state sequence against the machine; pinpoints the first violation."""
    states = list(states)
    if not states:
        return PathValidation(False, 0, "empty path")
    if states[0] != fsm.start_state:
        return PathValidation(
            False, 0, f"path must begin at {fsm.start_state!r}, got {states[0]!r}"
        )
    for i in range(1, len(states)):
        if states[i] not in fsm.states:
            return PathValidation(False, i, f"unknown state {states[i]!r}")
        if (states[i - 1], states[i]) not in fsm.transitions:
            return PathValidation(
                False, i, f"no transition {states[i - 1]} -> {states[i]}"
            )
    if states[-1] not in fsm.terminal_states:
        return PathValidation(False, len(states) - 1, "not terminal")
    return PathValidation(True)


def format_path(states: Sequence[str]) -> str:
    return PATH_ARROW.join(states)


def parse_path(text: str) -> list[str]:
    """Parse the CLI's 'A -> B -> C' form; tolerant of surrounding whitespace."""
    parts = [part.strip() for part in text.strip().split("->")]
    if any(not part for part in parts):
        raise FsmError(f"malformed path string {text!r}")
    return parts


class RuleBasedGrounder:
    """Deterministic grounding from segment kinds; no model in the loop.

    The mapping: establish the goal after the opening reasoning, branch on
    whether external lookups happened, one ToolExecution per dispatched call,
    then close via the correct/wrong answer branch chosen by the reward.
    """

    kind = "rule_based"

    def ground(self, trajectory, fsm: FsmSpec) -> list[str]:
        segments = list(trajectory.segments)
        if not segments:
            raise FsmError("empty trajectory: nothing to ground")
        n_tools = sum(1 for s in segments if s.kind == tags.TOOL_CALL)
        states = ["Start", "CorrectGoalEstablished"]
        if n_tools:
            states += ["KnowledgeUncertainGap", "StrategyPlanning"]
            for _ in range(n_tools):
                states += ["ToolExecution", "InformationAnalysis"]
            states.append("DecisionMaking")
        else:
            states += ["KnowledgeSufficient", "DecisionMaking"]
        states.append("AnswerGeneration")
        if trajectory.reward == 1:
            states += ["CorrectAnswer", "End"]
        else:
            states += ["WrongAnswer", "DiagnosisHub", "End"]
        return states


class LlmAssistedGrounder:
    """Asks a model for the state sequence, then validates it like any other path."""

    kind = "llm_assisted"

    def __init__(self, transport, prompt_template: Optional[str] = None):
        self.transport = transport
        if prompt_template is None:
            prompt_template = (
                resources.files("memograph.assets")
                .joinpath("path_grounding.txt")
                .read_text()
            )
        self.prompt_template = prompt_template

    def ground(self, trajectory, fsm: FsmSpec) -> list[str]:
        from .gateway import chat  # local import: gateway depends on tags only

        if not list(trajectory.segments):
            raise FsmError("empty trajectory: nothing to ground")
        transcript = tags.render_segments(list(trajectory.segments))
        prompt = (
            self.prompt_template.replace("{{transitions_info}}", fsm.transitions_info())
            .replace("{{start_state}}", fsm.start_state)
            .replace("{{transcript}}", transcript)
        )
        reply = chat([{"role": "user", "content": prompt}], self.transport)
        return parse_path(reply.strip().splitlines()[-1])


def ground_trajectory(trajectory, fsm: FsmSpec, grounder) -> list[str]:
    """Ground a trajectory and guarantee the result validates."""
    states = grounder.ground(trajectory, fsm)
    check = validate_path(states, fsm)
    if not check.ok:
        raise FsmError(
            f"grounder produced an invalid path at position {check.position} "
            f"({check.reason}): {format_path(states)}"
        )
    return states
