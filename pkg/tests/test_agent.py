import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negatune.agent import (EpisodeConfig, Finish, ToolCall, Unparseable, collect,
                            load_default_icl_examples, parse_step, run_episode)
from negatune.backends import BackendError, MockBackend
from negatune.core import Role, Task, write_raw_trajectories
from negatune.tools import math_toolset
from conftest import make_question


@pytest.mark.parametrize("text, thought, action", [
    ("Thought: compute total\nAction: calculator[16*3]", "compute total",
     ToolCall("calculator", "16*3")),
    ("Action: finish[18]", "", Finish("18")),
    ("Action: calculator[(1+2)*3]", "", ToolCall("calculator", "(1+2)*3")),
    ("Thought: nested\nAction: search[list [of] things]", "nested",
     ToolCall("search", "list [of] things")),
    ("Action: finish[  42 ]", "", Finish("42")),
    ("Thought: multi\nline reasoning\nAction: search[x]", "multi\nline reasoning",
     ToolCall("search", "x")),
    ("Action: finish[a[b[c]]d]", "", Finish("a[b[c]]d")),
])
def test_parse_step_grammar(text, thought, action):
    step = parse_step(text)
    assert step.thought == thought
    assert step.action == action


@pytest.mark.parametrize("text", [
    "The answer is 18.",
    "Action: finish[unbalanced",
    "Action: finish[a]b]",
    "Action: finish[x] trailing words",
    "Preamble without marker\nAction: finish[1]",
    "Action: [noname]",
    "Action:",
    "",
])
def test_parse_step_rejects_off_grammar(text):
    step = parse_step(text)
    assert isinstance(step.action, Unparseable)
    assert step.action.raw_text == text


@given(st.text(max_size=60))
@settings(max_examples=200)
def test_parse_step_is_total(text):
    step = parse_step(text)
    assert isinstance(step.action, (ToolCall, Finish, Unparseable))


def _mock(turns, qtext="question q1", **extra):
    return MockBackend({"episodes": [{"match": qtext, "turns": turns}], **extra})


def test_episode_tool_call_then_finish():
    backend = _mock(["Thought: halve\nAction: calculator[48/2]", "Action: finish[24]"])
    trajectory = run_episode(make_question(), backend, math_toolset(), EpisodeConfig())
    assert trajectory.outcome.kind == "finished"
    assert trajectory.outcome.answer == "24"
    assert trajectory.assistant_turns == 2
    assert trajectory.tool_call_errors == 0
    roles = [m.role for m in trajectory.messages]
    assert roles == [Role.SYSTEM, Role.USER, Role.ASSISTANT, Role.TOOL, Role.ASSISTANT]
    assert trajectory.messages[3].content == "Observation: 24"


def test_episode_turn_limit():
    backend = _mock(["Action: calculator[1+1]"] * 8)
    trajectory = run_episode(make_question(), backend, math_toolset(),
                             EpisodeConfig(max_turns=8))
    assert trajectory.outcome.kind == "turn_limit_exceeded"
    assert trajectory.assistant_turns == 8


def test_episode_tool_error_feeds_back_and_counts():
    backend = _mock(["Action: calculator[1/0]", "Action: finish[0]"])
    trajectory = run_episode(make_question(), backend, math_toolset(), EpisodeConfig())
    assert trajectory.outcome.kind == "finished"
    assert trajectory.tool_call_errors == 1
    assert trajectory.messages[3].content == "Observation: Error: division by zero"


def test_episode_unknown_tool_is_an_error_observation():
    backend = _mock(["Action: wikipedia[cats]", "Action: finish[0]"])
    trajectory = run_episode(make_question(), backend, math_toolset(), EpisodeConfig())
    assert trajectory.tool_call_errors == 1
    assert "unknown tool" in trajectory.messages[3].content


def test_episode_unparseable_feedback_then_recovery():
    backend = _mock(["I will just answer 4.", "Action: finish[4]"])
    trajectory = run_episode(make_question(), backend, math_toolset(), EpisodeConfig())
    assert trajectory.outcome.kind == "finished"
    assert trajectory.tool_call_errors == 1
    assert trajectory.messages[3].content == (
        "Observation: Could not parse action. Use Action: tool[input]."
    )


def test_episode_two_consecutive_unparseable_aborts():
    backend = _mock(["gibberish one", "gibberish two", "Action: finish[1]"])
    trajectory = run_episode(make_question(), backend, math_toolset(), EpisodeConfig())
    assert trajectory.outcome.kind == "parse_failure"
    assert trajectory.assistant_turns == 2
    assert trajectory.tool_call_errors == 2


def test_episode_backend_failure_aborts():
    backend = MockBackend({"episodes": []})  # no turns -> BackendError
    trajectory = run_episode(make_question(), backend, math_toolset(), EpisodeConfig())
    assert trajectory.outcome.kind == "tool_failure_abort"
    assert trajectory.assistant_turns == 0


def test_episode_never_exceeds_max_turns():
    backend = _mock(["gibberish", "Action: calculator[1+1]"] * 10)
    trajectory = run_episode(make_question(), backend, math_toolset(),
                             EpisodeConfig(max_turns=3))
    assert trajectory.assistant_turns <= 3


def test_every_tool_message_preceded_by_assistant():
    backend = _mock(["bad", "Action: calculator[2*3]", "Action: finish[6]"])
    trajectory = run_episode(make_question(), backend, math_toolset(), EpisodeConfig())
    for i, message in enumerate(trajectory.messages):
        if message.role is Role.TOOL:
            previous = trajectory.messages[i - 1]
            assert previous.role is Role.ASSISTANT
            step = parse_step(previous.content)
            assert isinstance(step.action, (ToolCall, Unparseable))


def test_cot_episode_single_completion():
    question = make_question("q1", Task.MATH, "42")
    backend = MockBackend({"episodes": [
        {"match": "question q1", "turns": ["6 times 7 makes 42. The answer is 42."]}
    ]})
    config = EpisodeConfig(mode="cot")
    trajectory = run_episode(question, backend, None, config)
    assert trajectory.outcome.kind == "finished"
    assert trajectory.outcome.answer == "42"
    assert trajectory.assistant_turns == 1
    assert [m.role for m in trajectory.messages] == [Role.SYSTEM, Role.USER, Role.ASSISTANT]


def test_cot_without_marker_is_parse_failure():
    backend = _mock(["it is 42, probably"])
    trajectory = run_episode(make_question(), backend, None, EpisodeConfig(mode="cot"))
    assert trajectory.outcome.kind == "parse_failure"


def test_cot_default_icl_examples_are_three_pairs():
    examples = load_default_icl_examples()
    assert len(examples) == 6
    assert [m.role for m in examples] == [Role.USER, Role.ASSISTANT] * 3


def test_react_config_rejects_icl_examples():
    with pytest.raises(ValueError):
        EpisodeConfig(mode="react", icl_examples=load_default_icl_examples())


def test_collect_counts_questions_times_temperatures(math_questions):
    script = {"episodes": [
        {"match": q.text, "turns": [f"Action: finish[{q.gold.value}]"]} for q in math_questions
    ]}
    trajectories = collect(math_questions, MockBackend(script), math_toolset(),
                           temps=[0.2, 0.5, 0.7])
    assert len(trajectories) == 21
    assert [t.sample_index for t in trajectories[:3]] == [0, 1, 2]
    assert [t.temperature for t in trajectories[:3]] == [0.2, 0.5, 0.7]
    assert all(t.outcome.kind == "finished" for t in trajectories)


def test_collect_is_deterministic_bytes(math_questions):
    script = {"episodes": [
        {"match": q.text, "turns": [f"Action: finish[{q.gold.value}]"]} for q in math_questions
    ]}

    def run() -> bytes:
        trajectories = collect(math_questions, MockBackend(script), math_toolset(),
                               temps=[0.0])
        buffer = io.BytesIO()
        write_raw_trajectories(trajectories, buffer)
        return buffer.getvalue()

    assert run() == run()


def test_collect_never_drops_failures(math_questions):
    # only 4 of 7 questions scripted; the rest fall to an unparseable default
    script = {
        "episodes": [
            {"match": q.text, "turns": [f"Action: finish[{q.gold.value}]"]}
            for q in math_questions[:4]
        ],
        "default_turns": ["no actionable output", "still nothing"],
    }
    trajectories = collect(math_questions, MockBackend(script), math_toolset(),
                           temps=[0.2, 0.5, 0.7])
    assert len(trajectories) == 21
    finished = [t for t in trajectories if t.outcome.kind == "finished"]
    failed = [t for t in trajectories if t.outcome.kind == "parse_failure"]
    assert len(finished) == 12
    assert len(failed) == 9


_turn_text = st.one_of(
    st.just("Action: finish[42]"),
    st.just("Action: calculator[1+1]"),
    st.just("Action: calculator[1/0]"),
    st.just("Action: wikipedia[cats]"),
    st.just("Thought: hm\nAction: calculator[2*3]"),
    st.just("Observation: hallucinated"),  # stop sequence cuts this to nothing
    st.just("Action: finish[7]\nObservation: trailing"),
    st.text(min_size=1, max_size=20).filter(str.strip),  # usually unparseable
)


@given(st.lists(_turn_text, min_size=1, max_size=10), st.integers(1, 8))
@settings(max_examples=120, deadline=None)
def test_any_scripted_episode_serializes_and_round_trips(turns, max_turns):
    """Whatever the model emits, the episode ends in a trajectory that
    satisfies every structural invariant and the file contract."""
    question = make_question()
    backend = MockBackend({"episodes": [{"match": question.text, "turns": turns}]})
    trajectory = run_episode(question, backend, math_toolset(),
                             EpisodeConfig(max_turns=max_turns))

    assert trajectory.assistant_turns <= max_turns
    attempts = sum(
        1 for m in trajectory.messages
        if m.role is Role.ASSISTANT
        and isinstance(parse_step(m.content).action, (ToolCall, Unparseable))
    )
    assert trajectory.tool_call_errors <= attempts
    for i, message in enumerate(trajectory.messages):
        if message.role is Role.TOOL:
            step = parse_step(trajectory.messages[i - 1].content)
            assert isinstance(step.action, (ToolCall, Unparseable))

    buffer = io.BytesIO()
    write_raw_trajectories([trajectory], buffer)
    buffer.seek(0)
    from negatune.core import read_raw_trajectories
    assert read_raw_trajectories(buffer) == [trajectory]


def test_collect_parallel_order_matches_serial(math_questions):
    script = {"episodes": [
        {"match": q.text, "turns": [f"Action: finish[{q.gold.value}]"]} for q in math_questions
    ]}
    serial = collect(math_questions, MockBackend(script), math_toolset(), temps=[0.2, 0.5])
    parallel = collect(math_questions, MockBackend(script), math_toolset(), temps=[0.2, 0.5],
                       max_workers=4)
    assert serial == parallel
