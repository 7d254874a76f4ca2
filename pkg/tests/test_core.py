import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negatune.core import (GoldAnswer, Label, LabeledTrajectory, Message, Outcome,
                           Question, Role, SchemaError, Task, Trajectory,
                           read_questions, read_raw_trajectories, read_trajectories,
                           write_questions, write_raw_trajectories, write_trajectories)
from conftest import make_labeled, make_messages, make_question, make_trajectory

# ---------------------------------------------------------------------------
# Hypothesis strategies for structurally valid trajectories.
# ---------------------------------------------------------------------------

_ident = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-", min_size=1, max_size=12)
_answer = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789. ", min_size=1, max_size=16)
_free_text = st.text(min_size=1, max_size=40).filter(
    lambda s: "Action:" not in s and s.strip())

_middle_step = st.tuples(
    st.one_of(
        _free_text.map(lambda t: f"Thought: plan\nAction: lookup[{t.replace('[', '(').replace(']', ')')}]"),
        _free_text,  # unparseable step
    ),
    _free_text.map(lambda t: f"Observation: {t}"),
)


@st.composite
def trajectories(draw) -> Trajectory:
    task = draw(st.sampled_from(list(Task)))
    steps = [(a, o) for a, o in draw(st.lists(_middle_step, max_size=3))]
    finish = draw(st.booleans())
    if finish:
        answer = draw(_answer).strip() or "0"
        steps.append((f"Action: finish[{answer}]", None))
        outcome = Outcome.finished(answer)
    else:
        end_kind = draw(st.sampled_from(["turn_limit_exceeded", "parse_failure", "tool_failure_abort"]))
        outcome = Outcome(end_kind)
        if draw(st.booleans()):
            steps.append((draw(_free_text), None))
    return Trajectory(
        question_id=draw(_ident),
        task=task,
        messages=make_messages(steps, question_text=draw(_free_text)),
        outcome=outcome,
        model_id=draw(_ident),
        temperature=draw(st.floats(0.0, 2.0, allow_nan=False)),
        sample_index=draw(st.integers(0, 5)),
        tool_call_errors=draw(st.integers(0, 4)),
    )


@st.composite
def labeled_trajectories(draw) -> LabeledTrajectory:
    trajectory = draw(trajectories())
    if trajectory.task is Task.MULTIHOP_QA:
        quality = draw(st.one_of(st.just(1.0), st.floats(0.0, 1.0, allow_nan=False,
                                                         exclude_max=True)))
    else:
        quality = draw(st.sampled_from([0.0, 1.0]))
    label = Label.POSITIVE if quality == 1.0 and draw(st.booleans()) else Label.NEGATIVE
    if label is Label.NEGATIVE and quality == 1.0:
        quality = 0.0
    extracted = draw(st.none() | _answer)
    return LabeledTrajectory(trajectory, label, quality, extracted)


@given(st.lists(labeled_trajectories(), max_size=8))
@settings(max_examples=60, deadline=None)
def test_labeled_round_trip_is_identity(items):
    buffer = io.BytesIO()
    write_trajectories(items, buffer)
    buffer.seek(0)
    assert read_trajectories(buffer) == items


@given(st.lists(trajectories(), max_size=8))
@settings(max_examples=60, deadline=None)
def test_raw_round_trip_is_identity(items):
    buffer = io.BytesIO()
    write_raw_trajectories(items, buffer)
    buffer.seek(0)
    assert read_raw_trajectories(buffer) == items


def test_empty_list_writes_empty_file():
    buffer = io.BytesIO()
    write_trajectories([], buffer)
    assert buffer.getvalue() == b""


def test_single_record_is_one_newline_terminated_line():
    buffer = io.BytesIO()
    write_trajectories([make_labeled()], buffer)
    data = buffer.getvalue()
    assert data.endswith(b"\n")
    assert data.count(b"\n") == 1


def test_fifty_record_round_trip():
    items = [
        make_labeled(qid=f"q{i}", sample_index=i % 3, temperature=[0.2, 0.5, 0.7][i % 3])
        for i in range(50)
    ]
    buffer = io.BytesIO()
    write_trajectories(items, buffer)
    buffer.seek(0)
    assert read_trajectories(buffer) == items


def test_write_read_write_is_byte_identical():
    items = [make_labeled(qid=f"q{i}") for i in range(5)]
    first = io.BytesIO()
    write_trajectories(items, first)
    first.seek(0)
    second = io.BytesIO()
    write_trajectories(read_trajectories(first), second)
    assert first.getvalue() == second.getvalue()


def test_schema_field_order_is_stable():
    buffer = io.BytesIO()
    write_trajectories([make_labeled()], buffer)
    record = json.loads(buffer.getvalue())
    assert list(record) == [
        "question_id", "task", "model_id", "temperature", "sample_index", "outcome",
        "extracted_answer", "label", "quality", "tool_call_errors", "messages",
    ]
    assert list(record["messages"][0]) == ["role", "content"]


def test_quality_out_of_range_is_rejected_with_line_number():
    buffer = io.BytesIO()
    write_trajectories([make_labeled(), make_labeled(qid="q2")], buffer)
    lines = buffer.getvalue().decode().splitlines()
    bad = json.loads(lines[1])
    bad["quality"] = 1.2
    payload = (lines[0] + "\n" + json.dumps(bad) + "\n").encode()
    with pytest.raises(SchemaError, match="quality out of range") as excinfo:
        read_trajectories(io.BytesIO(payload))
    assert excinfo.value.line == 2


def test_truncated_final_line_reports_last_line():
    buffer = io.BytesIO()
    write_trajectories([make_labeled(), make_labeled(qid="q2")], buffer)
    truncated = buffer.getvalue()[:-30]
    with pytest.raises(SchemaError, match="malformed JSON") as excinfo:
        read_trajectories(io.BytesIO(truncated))
    assert excinfo.value.line == 2


def test_nan_quality_is_rejected_on_write():
    lt = make_labeled(label=Label.NEGATIVE, quality=0.0)
    object.__setattr__(lt, "quality", float("nan"))
    with pytest.raises(ValueError):
        write_trajectories([lt], io.BytesIO())


def test_alternation_violation_rejected():
    record = json.loads(_one_record_bytes())
    record["messages"].insert(2, {"role": "user", "content": "second user"})
    data = (json.dumps(record) + "\n").encode()
    with pytest.raises(SchemaError, match="alternation"):
        read_raw_trajectories(io.BytesIO(data))


def test_outcome_must_match_finish_action():
    record = json.loads(_one_record_bytes())
    record["outcome"] = "turn_limit_exceeded"
    data = (json.dumps(record) + "\n").encode()
    with pytest.raises(SchemaError, match="outcome"):
        read_raw_trajectories(io.BytesIO(data))


def _one_record_bytes() -> bytes:
    buffer = io.BytesIO()
    write_raw_trajectories([make_trajectory()], buffer)
    return buffer.getvalue()


def test_unlabeled_line_rejected_by_labeled_reader():
    with pytest.raises(SchemaError, match="unlabeled"):
        read_trajectories(io.BytesIO(_one_record_bytes()))


def test_raw_reader_accepts_labeled_lines():
    buffer = io.BytesIO()
    write_trajectories([make_labeled()], buffer)
    buffer.seek(0)
    assert read_raw_trajectories(buffer) == [make_labeled().trajectory]


# ---------------------------------------------------------------------------
# Domain type invariants.
# ---------------------------------------------------------------------------

def test_question_gold_kind_must_match_task():
    with pytest.raises(ValueError, match="numeric"):
        Question("q1", "text", GoldAnswer("text", "paris"), Task.MATH)
    make_question("q1", Task.MULTIHOP_QA, "paris")


def test_boolean_gold_restricted():
    with pytest.raises(ValueError):
        GoldAnswer("boolean", "maybe")


def test_numeric_gold_is_decimal_string():
    assert GoldAnswer("numeric", "18").as_fraction() == 18
    with pytest.raises(ValueError):
        GoldAnswer("numeric", "1e5")


def test_positive_label_requires_unit_quality():
    with pytest.raises(ValueError, match="quality"):
        make_labeled(label=Label.POSITIVE, quality=0.5,
                     trajectory=make_trajectory(task=Task.MULTIHOP_QA))


def test_negative_label_rejects_unit_quality():
    with pytest.raises(ValueError, match="quality"):
        make_labeled(label=Label.NEGATIVE, quality=1.0,
                     trajectory=make_trajectory(task=Task.MULTIHOP_QA))


def test_math_quality_is_binary():
    with pytest.raises(ValueError):
        make_labeled(label=Label.NEGATIVE, quality=0.5)


def test_empty_assistant_content_rejected():
    with pytest.raises(ValueError):
        Message(Role.ASSISTANT, "")


def test_temperature_range_enforced():
    with pytest.raises(ValueError, match="temperature"):
        make_trajectory(temperature=2.5)


def test_question_files_round_trip_and_reject_duplicates():
    questions = [make_question(f"q{i}", Task.MATH, str(i)) for i in range(5)]
    buffer = io.BytesIO()
    write_questions(questions, buffer)
    buffer.seek(0)
    assert read_questions(buffer) == questions

    buffer = io.BytesIO()
    write_questions([questions[0], questions[0]], buffer)
    buffer.seek(0)
    with pytest.raises(SchemaError, match="duplicate"):
        read_questions(buffer)
