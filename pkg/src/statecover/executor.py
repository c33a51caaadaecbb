"""Drives generated call sequences against a live service.

Each call is sent with concrete, freshly generated inputs while an emulated
copy of the service state tracks what should exist. Around every request the
operation's contract is evaluated (preconditions and invariants before,
postconditions and, on the last call, invariants again after), and the
combination of verdicts and status code is classified as OK, WARN, or ERR.

A call whose inputs cannot be produced (a foreign id that was never created,
an operation with no usable key) is reported NOT_TESTED rather than guessed
at. A 5xx answer short-circuits classification: the service failed outright,
so postconditions are not evaluated.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Any, Optional

import requests

from .evaluator import EvaluationError, Evaluator, OpContext, TransportFailure
from .glacier import Formula
from .runtime import EmulatedState, InputGenerator, SnapshotStore

OK = "OK"
WARN = "WARN"
ERR = "ERR"
NOT_TESTED = "NOT_TESTED"


def classify(pre: bool, post: bool, inv: bool, status: int) -> str:
    """Verdict table over (precondition, postcondition, invariants, status).

    With the precondition met, the call must succeed and keep every promise:
    anything else is a fault, except a clean 4xx rejection where nothing was
    promised anyway, which is only suspicious (WARN). With the precondition
    unmet, a 4xx rejection is exactly right; succeeding anyway is suspicious;
    and succeeding while breaking invariants, or answering 2xx/3xx/5xx with
    broken promises, is a fault.
    """
    success = 200 <= status < 300
    rejected = 400 <= status < 500
    if pre:
        if post and inv:
            return OK if success else ERR
        if not post and not inv:
            return WARN if rejected else ERR
        return ERR
    if post:
        return WARN if inv else ERR
    return OK if rejected else ERR


@dataclass
class ClauseVerdict:
    value: Optional[bool]  # None: evaluation itself failed
    witness: str = ""

    @property
    def ok(self) -> bool:
        return self.value is True


@dataclass
class CallOutcome:
    sequence_index: int
    call_index: int
    operation_id: str
    request: Optional[dict]
    response: Optional[dict]
    pre: Optional[bool]
    post: Optional[bool]
    inv: Optional[bool]
    classification: str
    reason: str

    def to_json(self) -> dict:
        return {
            "sequenceIndex": self.sequence_index,
            "callIndex": self.call_index,
            "operationId": self.operation_id,
            "request": self.request,
            "response": self.response,
            "pre": self.pre,
            "post": self.post,
            "inv": self.inv,
            "classification": self.classification,
            "reason": self.reason,
        }


class _Skip(Exception):
    """Internal: this call cannot be issued; carries the NOT_TESTED reason."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class _Prepared:
    payload: Optional[dict]  # body to send (None for DELETE)
    clause_body: Any  # what req_body(@) means for this call
    path: str
    bindings: dict
    effect: tuple  # emulator action on 2xx


class SequenceRunner:
    def __init__(
        self,
        spec,
        base_url: str,
        generator: InputGenerator,
        *,
        session=None,
        timeout: float = 5.0,
        budget: int = 256,
    ):
        self.spec = spec
        self.base_url = base_url.rstrip("/")
        self.generator = generator
        self.http = session if session is not None else requests.Session()
        self.timeout = timeout
        self.evaluator = Evaluator(
            self.base_url,
            session=self.http,
            snapshots=SnapshotStore(),
            timeout=timeout,
            budget=budget,
        )

    # -- one sequence --------------------------------------------------------

    def run_sequence(self, calls, sequence_index: int):
        emulator = EmulatedState()
        outcomes = []
        for i, call in enumerate(calls):
            is_last = i == len(calls) - 1
            outcomes.append(
                self._run_call(call, emulator, sequence_index, i, is_last)
            )
        return outcomes, emulator

    def _run_call(self, call, emulator, seq_index, call_index, is_last) -> CallOutcome:
        def skipped(reason: str) -> CallOutcome:
            return CallOutcome(
                seq_index, call_index, call.op, None, None,
                None, None, None, NOT_TESTED, reason,
            )

        if not self.spec.has_operation(call.op):
            return skipped(f"operation {call.op!r} is not in the API description")
        op = self.spec.operation(call.op)
        profile = self.spec.op_profile(call.op)
        try:
            prep = self._prepare(call, profile, emulator)
        except _Skip as skip:
            return skipped(skip.reason)

        inv_verdict = self._eval_clauses(self.spec.invariants, None)
        pre_ctx = OpContext(
            phase="pre", req_body=prep.clause_body, path_args=prep.bindings
        )
        pre_verdict = self._eval_clauses(op.requires, pre_ctx)

        self.evaluator.snapshots.clear()
        capture_error = None
        try:
            self.evaluator.capture_previous(
                [c.formula for c in op.ensures], pre_ctx
            )
        except EvaluationError as exc:
            capture_error = str(exc)

        status, body = self._send(profile.method, prep.path, prep.payload)
        request_info = {
            "method": profile.method,
            "url": prep.path,
            "body": prep.payload,
        }
        response_info = {"status": status, "body": body}

        if 200 <= status < 300:
            self._apply(emulator, prep.effect)

        if status >= 500:
            return CallOutcome(
                seq_index, call_index, call.op, request_info, response_info,
                pre_verdict.value, None, inv_verdict.value, ERR,
                f"server error {status}",
            )

        if capture_error is not None:
            post_verdict = ClauseVerdict(None, f"pre-state capture failed: {capture_error}")
        else:
            post_ctx = OpContext(
                phase="post",
                req_body=prep.clause_body,
                res_code=status,
                res_body=body,
                path_args=prep.bindings,
            )
            post_verdict = self._eval_clauses(op.ensures, post_ctx)
        if is_last:
            inv_verdict = self._eval_clauses(self.spec.invariants, None)

        return self._classified(
            seq_index, call_index, call.op, request_info, response_info,
            pre_verdict, post_verdict, inv_verdict, status,
        )

    def _classified(
        self, seq_index, call_index, op_id, request_info, response_info,
        pre_verdict, post_verdict, inv_verdict, status,
    ) -> CallOutcome:
        verdicts = (pre_verdict, post_verdict, inv_verdict)
        if any(v.value is None for v in verdicts):
            classification = ERR
        else:
            classification = classify(
                pre_verdict.value, post_verdict.value, inv_verdict.value, status
            )
        reason = ""
        if classification != OK:
            for v in (post_verdict, inv_verdict, pre_verdict):  # blame order
                if not v.ok and v.witness:
                    reason = v.witness
                    break
            else:
                reason = f"unexpected status {status}"
        return CallOutcome(
            seq_index, call_index, op_id, request_info, response_info,
            pre_verdict.value, post_verdict.value, inv_verdict.value,
            classification, reason,
        )

    # -- request construction -----------------------------------------------------

    def _prepare(self, call, profile, emulator: EmulatedState) -> _Prepared:
        method = profile.method
        if method == "POST":
            return self._prepare_post(call, profile, emulator)
        if method == "DELETE":
            return self._prepare_delete(call, profile, emulator)
        if method == "PUT":
            return self._prepare_put(call, profile, emulator)
        raise _Skip(f"{method} operations are not driven by this runner")

    def _prepare_post(self, call, profile, emulator) -> _Prepared:
        if profile.own_key is None:
            raise _Skip("operation has no key field to track instances by")
        # the key comes from the API description, not the (serializable) call
        tla = call.params.get(profile.own_key)
        if tla is None:
            raise _Skip(f"no abstract id for key {profile.own_key!r}")
        payload = (
            self.generator.generate(profile.request_schema)
            if profile.request_schema
            else {}
        )
        concrete = self.generator.next_id(profile.own_key)
        payload[profile.own_key] = concrete
        bindings = {profile.own_key: concrete}
        for field_name, _owner in profile.foreign_keys:
            foreign_tla = call.params.get(field_name)
            if foreign_tla is None:
                raise _Skip(f"no abstract id for foreign key {field_name!r}")
            entry = emulator.recycle(foreign_tla)
            if entry is None:
                raise _Skip(
                    f"foreign {field_name}={foreign_tla} was never created"
                )
            payload[field_name] = entry.concrete_id
            bindings[field_name] = entry.concrete_id
        path = self._fill_path(profile.path, bindings)
        effect = ("add", tla, profile.collection or profile.path, payload, concrete)
        return _Prepared(payload, payload, path, bindings, effect)

    def _prepare_delete(self, call, profile, emulator) -> _Prepared:
        entry = self._own_entry(call, profile, emulator)
        bindings = {profile.own_key: entry.concrete_id}
        path = self._fill_path(profile.path, bindings)
        # nothing goes over the wire, but req_body(@) means the stored instance
        return _Prepared(None, entry.data, path, bindings, ("delete", entry.tla_id))

    def _prepare_put(self, call, profile, emulator) -> _Prepared:
        entry = self._own_entry(call, profile, emulator)
        payload = (
            self.generator.generate(profile.request_schema)
            if profile.request_schema
            else {}
        )
        payload[profile.own_key] = entry.concrete_id  # the key itself is immutable
        for field_name, _owner in profile.foreign_keys:
            if field_name in entry.data:
                payload[field_name] = entry.data[field_name]
        bindings = {profile.own_key: entry.concrete_id}
        path = self._fill_path(profile.path, bindings)
        effect = ("update", entry.tla_id, payload)
        return _Prepared(payload, payload, path, bindings, effect)

    def _own_entry(self, call, profile, emulator):
        if profile.own_key is None:
            raise _Skip("operation has no key field to track instances by")
        tla = call.params.get(profile.own_key)
        if tla is None:
            raise _Skip(f"no abstract id for key {profile.own_key!r}")
        entry = emulator.recycle(tla)
        if entry is None:
            raise _Skip(f"{tla} was never created in this sequence")
        return entry

    @staticmethod
    def _fill_path(template: str, bindings: dict) -> str:
        path = template
        for name, value in bindings.items():
            path = path.replace("{" + name + "}", str(value))
        if "{" in path:
            raise _Skip(f"unresolved parameters in path {path!r}")
        return path

    @staticmethod
    def _apply(emulator: EmulatedState, effect: tuple) -> None:
        kind = effect[0]
        if kind == "add":
            _, tla, resource, data, concrete = effect
            emulator.add(tla, resource, data, concrete)
        elif kind == "delete":
            emulator.delete(effect[1])
        elif kind == "update":
            emulator.update(effect[1], effect[2])

    # -- evaluation and transport -------------------------------------------------

    def _eval_clauses(self, clauses, ctx) -> ClauseVerdict:
        for clause in clauses:
            formula: Formula = clause.formula
            try:
                result = self.evaluator.evaluate(formula, ctx)
            except TransportFailure:
                raise
            except EvaluationError as exc:
                return ClauseVerdict(None, f"{clause.text}: cannot evaluate: {exc}")
            if not result.value:
                return ClauseVerdict(False, f"{clause.text}: {result.witness}")
        return ClauseVerdict(True)

    def _send(self, method: str, path: str, payload):
        url = self.base_url + path
        try:
            response = self.http.request(
                method, url, json=payload, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportFailure(f"{method} {path}: {exc}") from exc
        try:
            body = response.json()
        except ValueError:
            body = response.text
        return response.status_code, body


def run_campaign(
    spec,
    sequences,
    base_url: str,
    *,
    seed: int = 0,
    timeout: float = 5.0,
    cleanup: bool = True,
    session=None,
    budget: int = 256,
) -> dict:
    """Execute every sequence against the service and return a report.

    The service is probed once up front so an unreachable target fails fast
    with TransportFailure instead of producing a report full of noise. Unless
    disabled, instances left behind by a sequence are deleted in reverse
    creation order so later sequences start from a clean service.
    """
    started = time.monotonic()
    http = session if session is not None else requests.Session()
    try:
        http.get(base_url.rstrip("/") + "/", timeout=timeout)
    except requests.RequestException as exc:
        raise TransportFailure(f"service probe failed: {exc}") from exc

    generator = InputGenerator(seed)
    runner = SequenceRunner(
        spec, base_url, generator, session=http, timeout=timeout, budget=budget
    )
    outcomes: list[CallOutcome] = []
    for index, sequence in enumerate(sequences):
        calls = getattr(sequence, "calls", sequence)
        seq_outcomes, emulator = runner.run_sequence(calls, index)
        outcomes.extend(seq_outcomes)
        if cleanup:
            for entry in reversed(emulator.entries()):
                try:
                    http.delete(
                        runner.base_url + f"{entry.resource}/{entry.concrete_id}",
                        timeout=timeout,
                    )
                except requests.RequestException:
                    pass  # cleanup is best effort

    counts = {OK: 0, WARN: 0, ERR: 0, NOT_TESTED: 0}
    for outcome in outcomes:
        counts[outcome.classification] += 1
    return {
        "seed": seed,
        "baseUrl": base_url,
        "summary": {
            "ok": counts[OK],
            "warn": counts[WARN],
            "err": counts[ERR],
            "notTested": counts[NOT_TESTED],
            "calls": len(outcomes),
        },
        "outcomes": [o.to_json() for o in outcomes],
        "duration": round(time.monotonic() - started, 3),
    }
