import pytest

from helpers import (
    FakeClock,
    FakeTestRunner,
    builder_response,
    critic_verdict,
    failing_report,
    make_package,
    passing_report,
    scripted_adapter,
)

from toolsmith.build_loop import (
    BuildConfig,
    BuildExhausted,
    BuildLoop,
    BuildTicket,
    compose_feedback,
    derive_tool_name,
    extract_artifacts,
    make_ticket,
    parse_manifest,
    summarize_context,
    undeclared_imports,
)
from toolsmith.critic import Critic
from toolsmith.parsing import CreateRequest, ToolInvocation
from toolsmith.registry import ToolRegistry


# -- tickets ------------------------------------------------------------


def test_ticket_from_missing_invocation():
    ticket = make_ticket(
        "history text", ToolInvocation("prime_factorize", {"n": 84}), origin_task="task9"
    )
    assert ticket.proposed_name == "prime_factorize"
    assert "n (integer)" in ticket.io_schema_hint
    assert "prime_factorize" in ticket.requirement
    assert ticket.origin_task == "task9"


def test_ticket_from_free_text_request():
    ticket = make_ticket("ctx", CreateRequest("need a unit converter"))
    assert ticket.proposed_name == "unit_converter"
    assert ticket.requirement == "need a unit converter"


def test_two_tickets_same_inputs_distinct_ids():
    invocation = ToolInvocation("adder", {"a": 1})
    first = make_ticket("ctx", invocation, origin_task="t")
    second = make_ticket("ctx", invocation, origin_task="t")
    assert first.id != second.id
    assert (first.context_summary, first.requirement, first.proposed_name) == (
        second.context_summary,
        second.requirement,
        second.proposed_name,
    )


def test_context_summary_bounded():
    summary = summarize_context("word " * 1000)
    assert len(summary) <= 1024
    assert summary.startswith("...")


def test_slug_rules():
    assert derive_tool_name("need a unit converter") == "unit_converter"
    assert derive_tool_name("Please create a tool that computes GCD!!") == "computes_gcd"
    assert derive_tool_name("the a an") == "created_tool"


def test_arg_type_inference_bool_before_int():
    ticket = make_ticket("ctx", ToolInvocation("t", {"flag": True, "n": 3}))
    assert "flag (boolean)" in ticket.io_schema_hint
    assert "n (integer)" in ticket.io_schema_hint


def test_ticket_validation():
    with pytest.raises(ValueError):
        BuildTicket(id="x", context_summary="", requirement="  ", proposed_name="ok")
    with pytest.raises(ValueError):
        BuildTicket(id="x", context_summary="", requirement="r", proposed_name="Bad Name")


# -- artifact extraction and manifest ------------------------------------------------


def test_extract_artifacts_from_builder_response():
    text = builder_response("adder")
    code, tests = extract_artifacts(text)
    assert "def adder" in code
    assert "def test_basic" in tests


def test_extract_artifacts_fenced_fallback():
    text = "```python\ndef t(): pass\n```\n```python\ndef test_t(): pass\n```"
    code, tests = extract_artifacts(text)
    assert "def t" in code and "def test_t" in tests


def test_extract_artifacts_missing_returns_none():
    assert extract_artifacts("no artifacts at all") is None


def test_parse_manifest():
    code = (
        "# tool-description: factors integers\n"
        "# tool-arg: n integer required the number to factor\n"
        "# tool-arg: verbose boolean optional print steps\n"
        "# tool-dep: sympy\n"
        "def f(): pass\n"
    )
    description, args, deps = parse_manifest(code)
    assert description == "factors integers"
    assert args["n"] == {"type": "integer", "required": True, "description": "the number to factor"}
    assert args["verbose"]["required"] is False
    assert deps == ("sympy",)


def test_undeclared_imports_detected():
    code = "import numpy\nimport json\nfrom requests import get\n"
    assert undeclared_imports(code, ("numpy",)) == ["requests"]
    assert undeclared_imports(code, ("numpy", "requests")) == []


# -- the loop ------------------------------------------------------------


def build_env(tmp_path, responses, reports, max_iterations=5):
    adapter = scripted_adapter(responses)
    registry = ToolRegistry(tmp_path / "reg", clock=FakeClock())
    loop = BuildLoop(
        adapter,
        Critic(adapter),
        FakeTestRunner(reports),
        registry,
        BuildConfig(max_iterations=max_iterations),
        clock=FakeClock(),
    )
    return loop, registry


TICKET = BuildTicket(
    id="task1:t1",
    context_summary="ctx",
    requirement="add small integers",
    proposed_name="adder",
    origin_task="task1",
)


def test_first_candidate_accepted(tmp_path):
    loop, registry = build_env(
        tmp_path,
        [builder_response("adder"), critic_verdict(9, True)],
        [passing_report()],
    )
    package = loop.run_build(TICKET)
    assert package.name == "adder"
    assert package.version == 1
    assert loop.last_candidate.iteration == 0
    assert registry.lookup_created("adder") is not None
    assert package.test_results.all_pass


def test_one_refinement_iteration(tmp_path):
    histories = []

    class SpyRunner(FakeTestRunner):
        pass

    responses = [
        builder_response("adder", body="    return None"),
        critic_verdict(3, False, suggestions=["handle the base case"]),
        builder_response("adder"),
        critic_verdict(9, True),
    ]
    loop, registry = build_env(
        tmp_path,
        responses,
        [failing_report(["test_base_case"], "returned None"), passing_report()],
    )
    # intercept the refinement prompt to inspect the composite feedback
    original_complete = loop.adapter.complete

    def spying_complete(history):
        histories.append(list(history))
        return original_complete(history)

    loop.adapter.complete = spying_complete
    package = loop.run_build(TICKET)
    assert loop.last_candidate.iteration == 1
    assert package.name == "adder"
    refinement_prompt = histories[2][-1].content  # builder's second generation call
    assert "test_base_case" in refinement_prompt
    assert "handle the base case" in refinement_prompt
    # sandbox output precedes the critique in the composite feedback
    assert refinement_prompt.index("test_base_case") < refinement_prompt.index(
        "handle the base case"
    )


def test_cap_reached_without_approval(tmp_path):
    responses = [
        builder_response("adder"),
        critic_verdict(2, False),
        builder_response("adder"),
        critic_verdict(2, False),
    ]
    loop, registry = build_env(
        tmp_path, responses, [failing_report(), failing_report()], max_iterations=2
    )
    with pytest.raises(BuildExhausted):
        loop.run_build(TICKET)
    assert registry.created == {}


def test_passing_tests_but_rejection_keeps_registry_unchanged(tmp_path):
    responses = [
        builder_response("adder"),
        critic_verdict(4, False, suggestions=["needs docs"]),
    ]
    loop, registry = build_env(tmp_path, responses, [passing_report()], max_iterations=1)
    with pytest.raises(BuildExhausted):
        loop.run_build(TICKET)
    assert registry.created == {}


def test_missing_artifacts_consumes_iteration_then_recovers(tmp_path):
    responses = [
        "<think>thinking without artifacts</think>",
        builder_response("adder"),
        critic_verdict(9, True),
    ]
    loop, registry = build_env(tmp_path, responses, [passing_report()])
    package = loop.run_build(TICKET)
    assert package.name == "adder"
    assert loop.last_candidate.iteration == 1


def test_undeclared_import_fails_by_policy(tmp_path):
    bad = builder_response("adder", extra_code="\nimport requests\n")
    responses = [
        bad,
        critic_verdict(9, True),  # review of the policy failure
        builder_response("adder"),
        critic_verdict(9, True),
    ]
    # only ONE sandbox run happens: the policy failure skips the runner
    loop, registry = build_env(tmp_path, responses, [passing_report()])
    package = loop.run_build(TICKET)
    assert package.name == "adder"
    assert loop.test_runner.runs, "the clean candidate must reach the sandbox"
    assert len(loop.test_runner.runs) == 1


def test_missing_manifest_fails_by_policy(tmp_path):
    no_manifest = (
        "<artifact path=\"tool.py\">\ndef adder(n=0):\n    return n\n</artifact>\n"
        "<artifact path=\"test_tool.py\">\ndef test_a():\n    assert True\n</artifact>"
    )
    responses = [no_manifest, critic_verdict(9, True)]
    loop, registry = build_env(tmp_path, responses, [], max_iterations=1)
    with pytest.raises(BuildExhausted):
        loop.run_build(TICKET)
    assert loop.test_runner.runs == []


def test_registered_package_has_dual_verification(tmp_path):
    loop, registry = build_env(
        tmp_path,
        [builder_response("adder"), critic_verdict(8, True)],
        [passing_report()],
    )
    package = loop.run_build(TICKET)
    assert package.test_results.all_pass
    assert loop.last_candidate.last_critique.approved
    assert loop.last_candidate.last_sandbox.all_pass


def test_name_collision_at_registration_gets_suffix(tmp_path):
    loop, registry = build_env(
        tmp_path,
        [builder_response("adder"), critic_verdict(9, True)],
        [passing_report()],
    )
    registry.register(make_package("adder"))
    package = loop.run_build(TICKET)
    assert package.name == "adder_2"
    assert registry.lookup_created("adder_2").aliases == ["adder"]


def test_compose_feedback_order_flag():
    report = failing_report(["test_x"], "broke")
    from toolsmith.critic import CritiqueResult

    critique = CritiqueResult(2, False, ("fix",), ())
    default = compose_feedback(report, critique)
    swapped = compose_feedback(report, critique, BuildConfig(sandbox_feedback_first=False))
    assert default.index("test_x") < default.index("fix")
    assert swapped.index("fix") < swapped.index("test_x")
