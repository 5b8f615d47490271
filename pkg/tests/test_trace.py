import dataclasses
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orchestra import trace
from orchestra.errors import AlreadyFinalized, IndexGap, MalformedRecord, PendingToolCall
from orchestra.trace import (
    Question,
    ReasoningStep,
    StrategyDescriptor,
    ToolCallRecord,
    TraceStore,
    append_step,
    finalize,
    new_trajectory,
)

Q = Question("q1", "Is it AD?", ("CN", "AD"), "AD", (("mri", "S1"),))
S = StrategyDescriptor("baseline", "", 0.0)


def ok_call(tool="sql", query="SELECT 1", result="1"):
    return ToolCallRecord(tool, query, result, "ok", None, 3.5)


def sample():
    t = new_trajectory(Q, "ctx", S, seed=7)
    t = append_step(t, ReasoningStep(0, "look\n", ok_call()))
    t = append_step(t, ReasoningStep(1, "", ToolCallRecord("web", "q", None, "error", "boom", 1.0)))
    t = append_step(t, ReasoningStep(2, "so"))
    return finalize(t, "AD")


def test_question_prompt_lists_attachments():
    assert Q.prompt() == "Is it AD?\n[attachment] mri: S1"


def test_gold_must_be_in_label_set():
    with pytest.raises(ValueError):
        Question("x", "t", ("A",), "B")


def test_temperature_bounds():
    with pytest.raises(ValueError):
        StrategyDescriptor("s", temperature=2.5)


def test_append_requires_contiguous_index():
    t = new_trajectory(Q, "ctx", S)
    with pytest.raises(IndexGap):
        append_step(t, ReasoningStep(1, "x"))


def test_finalize_once():
    t = sample()
    with pytest.raises(AlreadyFinalized):
        finalize(t, "CN")
    with pytest.raises(AlreadyFinalized):
        append_step(t, ReasoningStep(3, "x"))


def test_finalize_rejects_pending_call():
    t = new_trajectory(Q, "ctx", S)
    t = append_step(t, ReasoningStep(0, "", ToolCallRecord("sql", "q")))
    with pytest.raises(PendingToolCall):
        finalize(t, "AD")


def test_budget_used_and_tool_calls():
    t = sample()
    assert t.budget_used == 3
    assert [c.tool for c in t.tool_calls] == ["sql", "web"]


def test_serialization_round_trip():
    t = sample()
    line = trace.write_trace(t)
    assert "\n" not in line
    assert trace.read_trace(line) == t


def test_read_rejects_bad_status_and_order():
    d = json.loads(trace.write_trace(sample()))
    d["steps"][0]["status"] = "maybe"
    with pytest.raises(MalformedRecord):
        trace.read_trace(json.dumps(d))
    d = json.loads(trace.write_trace(sample()))
    d["steps"][0]["t"] = 5
    with pytest.raises(MalformedRecord):
        trace.read_trace(json.dumps(d))


def test_file_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text(trace.write_trace(sample()) + "\n{not json\n")
    with pytest.raises(MalformedRecord) as exc:
        trace.read_trace_file(p)
    assert exc.value.line == 2 and "line 2" in str(exc.value)


def test_store_appends_in_order(tmp_path):
    store = TraceStore(tmp_path / "sub" / "t.jsonl")
    a, b = sample(), new_trajectory(Q, "ctx2", S)
    store.append(a)
    store.append(b)
    assert store.read() == [a, b]


def test_evidence_text_variants():
    assert trace.evidence_text(ok_call(result="abc")) == "abc"
    assert trace.evidence_text(ToolCallRecord("x", "q", None, "error", "bad")) == "ERROR: bad"
    cut = ToolCallRecord("x", "q", "abcdef", "ok", None, 0.0, 2)
    assert trace.evidence_text(cut) == "ab\n[truncated: showing 2 of 6 chars]"


def test_build_messages_layout():
    t = sample()
    msgs = trace.build_messages("ctx", Q.prompt(), t.steps[:2])
    assert [m["role"] for m in msgs] == ["system", "user", "assistant", "user", "assistant", "user"]
    assert msgs[2]["content"] == "look\n<|begin_sql_query|>\nSELECT 1\n<|end_sql_query|>"
    assert msgs[5]["content"] == "<|begin_web_result|>\nERROR: boom\n<|end_web_result|>"


def test_render_text_clips_long_results():
    t = new_trajectory(Q, "ctx", S)
    t = append_step(t, ReasoningStep(0, "", ok_call(result="x" * 50)))
    t = finalize(append_step(t, ReasoningStep(1, "")), "AD")
    out = trace.render_text(t, max_result_chars=10)
    assert "x" * 10 + "\n[... showing 10 of 50 chars]" in out
    assert out.index("Turn 1") < out.index("Conclusion")


def test_render_text_unfinished():
    t = new_trajectory(Q, "ctx", S)
    out = trace.render_text(dataclasses.replace(t, error="budget exhausted: steps"))
    assert "Unfinished" in out and "budget exhausted" in out


text_st = st.text(max_size=40)


@st.composite
def trajectories(draw):
    t = new_trajectory(Question(draw(st.text(min_size=1, max_size=8)), draw(text_st)), draw(text_st), S, draw(st.integers(0, 99)))
    for i in range(draw(st.integers(0, 4))):
        if draw(st.booleans()):
            call = ToolCallRecord(
                draw(st.from_regex(r"[a-z]{1,6}", fullmatch=True)),
                draw(text_st),
                draw(text_st),
                "ok",
                None,
                draw(st.floats(0, 1e4, allow_nan=False)),
            )
        else:
            call = ToolCallRecord("t", draw(text_st), None, "error", draw(text_st), 0.0)
        t = append_step(t, ReasoningStep(i, draw(text_st), call))
    if draw(st.booleans()):
        t = finalize(t, draw(text_st))
    return t


@settings(max_examples=150, deadline=None)
@given(trajectories())
def test_read_write_identity(t):
    assert trace.read_trace(trace.write_trace(t)) == t


@settings(max_examples=100, deadline=None)
@given(trajectories())
def test_replay_is_pure(t):
    assert trace.replay_hashes(t) == trace.replay_hashes(trace.read_trace(trace.write_trace(t)))
