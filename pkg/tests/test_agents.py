import json

import httpx
import pytest
from hypothesis import given, strategies as st

from drivefusion import codec
from drivefusion.agents import (
    AgentRole,
    AgentRunner,
    BackendKind,
    DeterministicBackend,
    RemoteBackend,
    RetryPolicy,
    invoke,
    make_request,
    parse_structured,
    render_prompt,
    run_rules,
    serialize_structured,
)
from drivefusion.agents import roles
from drivefusion.agents.prompts import CONTEXT_BEGIN, NO_CHANGES, extract_context, extract_role
from drivefusion.agents.stub import StubScript, StubServer
from drivefusion.agents.structured import BEGIN, END
from drivefusion.environment import ChangeReport
from drivefusion.errors import (
    CredentialMissing,
    FieldTypeMismatch,
    InvariantViolation,
    MissingContextField,
    MissingSection,
    SchemaViolation,
    TransportFailure,
)
from drivefusion.trace import Category, ObjectDetection, SensorFrame, Source
from drivefusion.vehicle import DiagnosisFlag, VehicleDiagnosis

from scenarios import role_contexts

CONTEXTS = role_contexts()
FAST = RetryPolicy(attempts=3, backoff=0.0, timeout=2.0)


def no_sleep(_):
    pass


def remote(url, **kw):
    return RemoteBackend(url, "stub-model", api_key="test-key", **kw)


# ---- prompts ---------------------------------------------------------------


def test_vision_prompt_lists_detections_and_schema():
    dets = tuple(
        ObjectDetection(i, "car", Category.FOUR_WHEEL_VEHICLE, (10.0 * i, 0.0, 0.0), Source.CAMERA_FRONT)
        for i in (1, 2)
    )
    ctx = roles.descriptor_context(SensorFrame(0.0, dets), SensorFrame(0.1, dets))
    prompt = render_prompt(AgentRole.VISION_DESCRIPTOR, ctx)
    assert "camera #1 car" in prompt and "camera #2 car" in prompt
    assert "OUTPUT SCHEMA:" in prompt and BEGIN in prompt
    assert extract_role(prompt) is AgentRole.VISION_DESCRIPTOR
    assert extract_context(prompt) == ctx


def test_causal_prompt_with_no_changes():
    ctx = roles.causal_context(ChangeReport(0.0, 1.0, (), {}), {}, 1.0)
    assert NO_CHANGES in render_prompt(AgentRole.CAUSAL_ANALYST, ctx)


@pytest.mark.parametrize("role", list(AgentRole))
def test_prompts_deterministic_and_complete(role):
    a = render_prompt(role, CONTEXTS[role])
    b = render_prompt(role, json.loads(json.dumps(CONTEXTS[role])))
    assert a == b
    assert a.count(CONTEXT_BEGIN) == 1
    for guideline in ("dynamic traffic", "static infrastructure", "objective"):
        assert guideline in a


@pytest.mark.parametrize("role", list(AgentRole))
def test_missing_context_field(role):
    ctx = dict(CONTEXTS[role])
    ctx.pop(roles.REQUIRED_FIELDS[role][0])
    with pytest.raises(MissingContextField):
        render_prompt(role, ctx)
    with pytest.raises(MissingContextField):
        run_rules(role, ctx)


# ---- structured output -----------------------------------------------------


@pytest.mark.parametrize("role", list(AgentRole))
def test_parse_round_trip_all_roles(role):
    typed = run_rules(role, CONTEXTS[role])
    raw = serialize_structured(role, typed, preamble="Here is my analysis.")
    assert parse_structured(role, raw) == typed


def test_diagnosis_payload():
    d = VehicleDiagnosis(1.0, frozenset({1}), {1: 0.0}, frozenset({DiagnosisFlag.OK}))
    assert parse_structured(AgentRole.VEHICLE_ANALYZER, serialize_structured(AgentRole.VEHICLE_ANALYZER, d)) == d


def test_missing_delimiter():
    with pytest.raises(MissingSection):
        parse_structured(AgentRole.FILTRATION, '{"category": "r1"}')


def test_confidence_out_of_range():
    typed = run_rules(AgentRole.CAUSAL_ANALYST, CONTEXTS[AgentRole.CAUSAL_ANALYST])
    data = codec.to_jsonable(typed)
    data[0]["confidence"] = 1.7
    raw = f"{BEGIN}\n{json.dumps(data)}\n{END}\n"
    with pytest.raises(InvariantViolation):
        parse_structured(AgentRole.CAUSAL_ANALYST, raw)


@pytest.mark.parametrize(
    "body",
    [
        "{not json",
        '{"category": "r1", "thresholds": {"angular_velocity_max": NaN, "linear_accel_max": 8, "yaw_rate_max": 10}}',
        '{"category": "r1", "thresholds": {"angular_velocity_max": 1e999, "linear_accel_max": 8, "yaw_rate_max": 10}}',
        '{"category": "r9", "thresholds": {"angular_velocity_max": 10, "linear_accel_max": 8, "yaw_rate_max": 10}}',
        '{"category": "r1", "thresholds": {"angular_velocity_max": 10, "linear_accel_max": 8, "yaw_rate_max": 10}, "x": 1}',
    ],
)
def test_bad_payloads_are_type_errors(body):
    with pytest.raises(FieldTypeMismatch):
        parse_structured(AgentRole.FILTRATION, f"{BEGIN}\n{body}\n{END}")


@given(st.text(max_size=200))
def test_parser_never_crashes_unexpectedly(text):
    from drivefusion.errors import StructuredOutputError

    for raw in (text, f"{BEGIN}\n{text}\n{END}"):
        try:
            parse_structured(AgentRole.RESPONSE_AGGREGATOR, raw)
        except StructuredOutputError:
            pass


# ---- deterministic backend -------------------------------------------------


def test_deterministic_zero_delta_gives_ok():
    ctx = dict(CONTEXTS[AgentRole.VEHICLE_ANALYZER])
    ctx["deltas"] = {k: 0.0 for k in ctx["deltas"]}
    resp = invoke(DeterministicBackend(), make_request(AgentRole.VEHICLE_ANALYZER, ctx))
    assert resp.backend is BackendKind.DETERMINISTIC and not resp.fallback
    assert resp.structured.flags == {DiagnosisFlag.OK}


def test_correlation_ids_unique():
    ids = {make_request(AgentRole.FILTRATION, CONTEXTS[AgentRole.FILTRATION]).correlation_id for _ in range(20)}
    assert len(ids) == 20


# ---- remote backend against the stub ----------------------------------------


@pytest.mark.parametrize("role", list(AgentRole))
def test_valid_stub_matches_deterministic(role):
    with StubServer(StubScript()) as server:
        resp = invoke(remote(server.url), make_request(role, CONTEXTS[role]), FAST, sleep=no_sleep)
    assert resp.backend is BackendKind.REMOTE and not resp.fallback
    assert resp.structured == run_rules(role, CONTEXTS[role])


def test_malformed_three_times_falls_back():
    role = AgentRole.VEHICLE_ANALYZER
    with StubServer(StubScript(default="malformed")) as server:
        resp = invoke(remote(server.url), make_request(role, CONTEXTS[role]), FAST,
                      fallback=DeterministicBackend(), sleep=no_sleep)
        counts = server.mode_counts()
        assert counts["malformed"] == 3 == sum(counts.values())
    assert resp.fallback and resp.backend is BackendKind.DETERMINISTIC
    assert [type(e) for e in resp.errors] == [SchemaViolation] * 3
    assert resp.structured == run_rules(role, CONTEXTS[role])


@pytest.mark.parametrize("role", list(AgentRole))
def test_invariant_violations_fall_back(role):
    with StubServer(StubScript(default="invalid")) as server:
        resp = invoke(remote(server.url), make_request(role, CONTEXTS[role]), FAST,
                      fallback=DeterministicBackend(), sleep=no_sleep)
    assert resp.fallback
    assert all(isinstance(e, SchemaViolation) for e in resp.errors) and len(resp.errors) == 3


def test_negative_delta_rejected():
    role = AgentRole.VEHICLE_ANALYZER
    with StubServer(StubScript(default="invalid")) as server:
        with pytest.raises(SchemaViolation) as exc:
            invoke(remote(server.url), make_request(role, CONTEXTS[role]), FAST, sleep=no_sleep)
    assert "delta" in str(exc.value)


def test_recovers_after_one_bad_reply():
    role = AgentRole.FILTRATION
    with StubServer(StubScript(script=["malformed"])) as server:
        resp = invoke(remote(server.url), make_request(role, CONTEXTS[role]), FAST, sleep=no_sleep)
    assert resp.backend is BackendKind.REMOTE and len(resp.errors) == 1


def test_timeout_becomes_transport_failure():
    role = AgentRole.FILTRATION
    policy = RetryPolicy(attempts=2, backoff=0.0, timeout=0.2)
    with StubServer(StubScript(default="timeout", delay=0.6)) as server:
        resp = invoke(remote(server.url), make_request(role, CONTEXTS[role]), policy,
                      fallback=DeterministicBackend(), sleep=no_sleep)
        with pytest.raises(TransportFailure):
            invoke(remote(server.url), make_request(role, CONTEXTS[role]), policy, sleep=no_sleep)
    assert resp.fallback and [type(e) for e in resp.errors] == [TransportFailure]


def test_http_error_becomes_transport_failure():
    with StubServer(StubScript(default="error")) as server:
        with pytest.raises(TransportFailure):
            invoke(remote(server.url), make_request(AgentRole.FILTRATION, CONTEXTS[AgentRole.FILTRATION]), FAST, sleep=no_sleep)


def test_connection_refused_falls_back():
    backend = remote("http://127.0.0.1:9/v1/chat/completions")
    resp = invoke(backend, make_request(AgentRole.FILTRATION, CONTEXTS[AgentRole.FILTRATION]),
                  RetryPolicy(attempts=1, timeout=0.5), fallback=DeterministicBackend(), sleep=no_sleep)
    assert resp.fallback


def test_missing_credential(no_api_key):
    backend = RemoteBackend("http://127.0.0.1:9/v1", "m")
    request = make_request(AgentRole.FILTRATION, CONTEXTS[AgentRole.FILTRATION])
    with pytest.raises(CredentialMissing):
        invoke(backend, request, FAST, sleep=no_sleep)
    resp = invoke(backend, request, FAST, fallback=DeterministicBackend(), sleep=no_sleep)
    assert resp.fallback and isinstance(resp.errors[0], CredentialMissing)


def test_credential_read_from_environment(api_key):
    assert RemoteBackend("http://x/v1", "m").credential() == api_key


def _mock(handler):
    return remote("http://stub.invalid/v1/chat/completions", transport=httpx.MockTransport(handler))


def test_request_shape_and_headers():
    seen = {}

    def handler(request: httpx.Request):
        seen["auth"] = request.headers["Authorization"]
        seen["cid"] = request.headers["X-Correlation-ID"]
        seen["body"] = json.loads(request.content)
        typed = run_rules(AgentRole.FILTRATION, CONTEXTS[AgentRole.FILTRATION])
        content = serialize_structured(AgentRole.FILTRATION, typed)
        return httpx.Response(200, json={"choices": [{"message": {"content": content}}]},
                              headers={"X-Correlation-ID": seen["cid"]})

    request = make_request(AgentRole.FILTRATION, CONTEXTS[AgentRole.FILTRATION])
    resp = invoke(_mock(handler), request, FAST, sleep=no_sleep)
    assert seen["auth"] == "Bearer test-key" and seen["cid"] == request.correlation_id
    assert seen["body"]["temperature"] == 0.0 and seen["body"]["messages"][0]["content"] == request.instruction
    assert resp.backend is BackendKind.REMOTE


def test_mismatched_correlation_id_is_unusable():
    def handler(request):
        return httpx.Response(200, json={"choices": [{"message": {"content": ""}}]}, headers={"X-Correlation-ID": "other"})

    resp = invoke(_mock(handler), make_request(AgentRole.FILTRATION, CONTEXTS[AgentRole.FILTRATION]), FAST,
                  fallback=DeterministicBackend(), sleep=no_sleep)
    assert resp.fallback and "correlation" in str(resp.errors[0])


def test_non_chat_reply_is_schema_violation():
    resp = invoke(_mock(lambda r: httpx.Response(200, json={"oops": 1})),
                  make_request(AgentRole.FILTRATION, CONTEXTS[AgentRole.FILTRATION]), FAST,
                  fallback=DeterministicBackend(), sleep=no_sleep)
    assert all(isinstance(e, SchemaViolation) for e in resp.errors)


def test_backoff_schedule():
    delays = []

    def handler(request):
        return httpx.Response(503)

    with pytest.raises(TransportFailure):
        invoke(_mock(handler), make_request(AgentRole.FILTRATION, CONTEXTS[AgentRole.FILTRATION]),
               RetryPolicy(attempts=3, backoff=0.5), sleep=delays.append)
    assert delays == [0.5, 1.0]


# ---- runner ----------------------------------------------------------------


def test_runner_map_keeps_order_and_counts():
    role = AgentRole.FILTRATION
    contexts = [roles.filtration_context(s, c) for s in (3.0, 7.0) for c in (0, 1, 2)]
    with StubServer(StubScript(script=["malformed"] * 3)) as server:
        runner = AgentRunner(remote(server.url), policy=FAST, max_in_flight=3, sleep=no_sleep)
        responses = runner.map(role, contexts)
    assert [r.structured for r in responses] == [run_rules(role, c) for c in contexts]
    assert runner.stats.schema_violations == 3
    assert sum(runner.stats.backend_counts.values()) == len(contexts)


def test_runner_fallback_disabled_raises(no_api_key):
    runner = AgentRunner(RemoteBackend("http://127.0.0.1:9/v1", "m"), fallback_enabled=False)
    with pytest.raises(CredentialMissing):
        runner.call(AgentRole.FILTRATION, CONTEXTS[AgentRole.FILTRATION])


def test_runner_counts_credential_fallbacks(no_api_key):
    runner = AgentRunner(RemoteBackend("http://127.0.0.1:9/v1", "m"))
    runner.call(AgentRole.FILTRATION, CONTEXTS[AgentRole.FILTRATION])
    assert runner.stats.as_dict()["credential_missing"] == 1
    assert runner.stats.fallback_count == 1


def test_stub_script_validation():
    with pytest.raises(ValueError):
        StubScript(default="sometimes")
    script = StubScript.from_json('{"roles": {"CausalAnalyst": "invalid"}, "delay": 0.1}')
    assert script.roles == {"CausalAnalyst": "invalid"}
