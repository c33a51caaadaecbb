"""Evaluates contract formulas against a running service.

Evaluation is read-only: the only requests it ever issues are GETs, so
checking a clause cannot change the state it is checking. Within one
evaluation every URL is fetched at most once (one consistent observation),
and a budget caps the total number of live requests so quantifiers over
large collections fail loudly instead of hammering the service.

Domain errors in the data (a missing field, a non-JSON body, a quantifier
over a non-array) make the enclosing condition false and produce a witness
string; misuse of the language (referring to '@' with no operation in
flight, 'prev' outside a postcondition) raises EvaluationError; a dead or
unreachable service raises TransportFailure.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Any, Optional

import requests

from .glacier import (
    ApiCall,
    BodyFieldPart,
    BoolChain,
    Comparison,
    FieldSuffix,
    Formula,
    FuncSuffix,
    LitPart,
    Literal,
    ParamPart,
    Prev,
    Quantified,
    _print_call,
    _walk_calls,
)
from .runtime import SnapshotFailure, SnapshotStore


class EvaluationError(RuntimeError):
    """The formula misuses the language; not a verdict about the service."""


class BudgetExceeded(EvaluationError):
    pass


class TransportFailure(RuntimeError):
    """The service could not be reached; distinct from a false formula."""


class _Undefined(Exception):
    """Internal: a value needed by a condition does not exist. The nearest
    condition converts this into False plus a witness."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


_UNSET = object()


@dataclass
class OpContext:
    """The operation under test, as seen by '@'. In the 'pre' phase the
    response fields are not observed yet and touching them is an error."""

    phase: str  # 'pre' | 'post'
    req_body: Any = None
    res_code: Any = _UNSET
    res_body: Any = _UNSET
    path_args: dict = dc_field(default_factory=dict)


@dataclass(frozen=True)
class EvalResult:
    value: bool
    witness: str = ""


@dataclass(frozen=True)
class _NonJsonBody:
    text: str


def _shorten(value, limit: int = 80) -> str:
    text = repr(value)
    return text if len(text) <= limit else text[: limit - 3] + "..."


def json_equal(a, b) -> bool:
    """Structural equality: objects ignore key order, arrays are ordered,
    ints and floats compare by value, booleans only equal booleans."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return float(a) == float(b)
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(json_equal(v, b[k]) for k, v in a.items())
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(json_equal(x, y) for x, y in zip(a, b))
    return type(a) is type(b) and a == b


class Evaluator:
    def __init__(
        self,
        base_url: str,
        *,
        session=None,
        snapshots: Optional[SnapshotStore] = None,
        timeout: float = 5.0,
        budget: int = 256,
    ):
        self.base_url = base_url.rstrip("/")
        self.session = session if session is not None else requests.Session()
        self.snapshots = snapshots if snapshots is not None else SnapshotStore()
        self.timeout = timeout
        self.budget = budget
        self._spent = 0
        self._cache: dict[str, tuple[int, Any]] = {}

    # -- public API ----------------------------------------------------------

    def evaluate(self, formula: Formula, ctx: Optional[OpContext] = None) -> EvalResult:
        self._cache.clear()
        self._spent = 0
        return self._formula(formula, ctx, {})

    def capture_previous(self, formulas, ctx: OpContext) -> None:
        """Fetch and store the current value of every prev(...) call in the
        given formulas. Must run before the operation is sent; transport
        problems are stored as markers and only surface if a clause actually
        reads the snapshot."""
        self._cache.clear()
        self._spent = 0
        for formula in formulas:
            for call, inside_prev in _walk_calls(formula):
                if not inside_prev:
                    continue
                self._validate_prev_inner(call)
                url = self._resolve_url(call, ctx, {})
                key = self._snapshot_key(call, url)
                if self.snapshots.has(key):
                    continue
                try:
                    status, body = self._fetch(url)
                except TransportFailure as failure:
                    self.snapshots.put_failure(key, str(failure))
                    continue
                self.snapshots.put(key, status if call.func == "res_code" else body)

    # -- formulas ------------------------------------------------------------

    def _formula(self, f: Formula, ctx, env: dict) -> EvalResult:
        if isinstance(f, Quantified):
            return self._quantified(f, ctx, env)
        if isinstance(f, BoolChain):
            return self._chain(list(f.items), list(f.ops), ctx, env)
        if isinstance(f, Comparison):
            return self._comparison(f, ctx, env)
        # bare expression: must produce a boolean
        try:
            value = self._expr(f, ctx, env)
        except _Undefined as u:
            return EvalResult(False, u.reason)
        if isinstance(value, bool):
            return EvalResult(value, "" if value else "expression is false")
        raise EvaluationError(f"formula reduced to a non-boolean: {_shorten(value)}")

    def _quantified(self, f: Quantified, ctx, env: dict) -> EvalResult:
        return self._bind(f, list(f.bindings), ctx, dict(env))

    def _bind(self, f: Quantified, remaining, ctx, env: dict) -> EvalResult:
        if not remaining:
            return self._formula(f.body, ctx, env)
        var, call = remaining[0]
        try:
            domain = self._expr(call, ctx, env)
        except _Undefined as u:
            return EvalResult(False, f"domain of {var!r}: {u.reason}")
        if not isinstance(domain, list):
            return EvalResult(
                False, f"domain of {var!r} is not an array: {_shorten(domain)}"
            )
        conjunctive = f.kind == "for"
        for i, element in enumerate(domain):
            env[var] = element
            result = self._bind(f, remaining[1:], ctx, env)
            if conjunctive and not result.value:
                witness = f"{var}[{i}] = {_shorten(element)}: {result.witness}"
                return EvalResult(False, witness)
            if not conjunctive and result.value:
                return EvalResult(True)
        env.pop(var, None)
        if conjunctive:
            return EvalResult(True)  # vacuously true on empty domains
        return EvalResult(False, f"no element of {var!r} satisfies the body")

    def _chain(self, items, ops, ctx, env) -> EvalResult:
        """Flat chain with 'and' over 'or' over '=>'; right-associative
        implication; everything short-circuits left to right."""
        if "=>" in ops:
            i = ops.index("=>")
            antecedent = self._chain(items[: i + 1], ops[:i], ctx, env)
            if not antecedent.value:
                return EvalResult(True)
            return self._chain(items[i + 1 :], ops[i + 1 :], ctx, env)
        if "or" in ops:
            start = 0
            witnesses = []
            ors = [i for i, op in enumerate(ops) if op == "or"]
            for cut in ors + [len(ops)]:
                result = self._chain(items[start : cut + 1], ops[start:cut], ctx, env)
                if result.value:
                    return EvalResult(True)
                witnesses.append(result.witness)
                start = cut + 1
            return EvalResult(False, " | ".join(w for w in witnesses if w))
        for item in items:
            result = self._formula(item, ctx, env)
            if not result.value:
                return result
        return EvalResult(True)

    def _comparison(self, c: Comparison, ctx, env) -> EvalResult:
        try:
            lhs = self._expr(c.lhs, ctx, env)
            rhs = self._expr(c.rhs, ctx, env)
        except _Undefined as u:
            return EvalResult(False, u.reason)
        ok = self._compare(lhs, c.op, rhs)
        if isinstance(ok, str):  # incomparable; the string says why
            return EvalResult(False, ok)
        if ok:
            return EvalResult(True)
        return EvalResult(
            False, f"{_shorten(lhs)} {c.op} {_shorten(rhs)} does not hold"
        )

    def _compare(self, lhs, op: str, rhs):
        if op == "=":
            return json_equal(lhs, rhs)
        if op == "!=":
            return not json_equal(lhs, rhs)
        numeric = lambda v: isinstance(v, (int, float)) and not isinstance(v, bool)
        if numeric(lhs) and numeric(rhs):
            pass
        elif isinstance(lhs, str) and isinstance(rhs, str):
            pass
        else:
            return (
                f"cannot order {_shorten(lhs)} against {_shorten(rhs)}"
            )
        table = {
            "<": lhs < rhs, "<=": lhs <= rhs,
            ">": lhs > rhs, ">=": lhs >= rhs,
        }
        return table[op]

    # -- expressions -----------------------------------------------------------

    def _expr(self, e, ctx, env):
        if isinstance(e, Literal):
            return e.value
        if isinstance(e, Prev):
            return self._prev(e, ctx, env)
        if isinstance(e, ApiCall):
            return self._call(e, ctx, env)
        raise EvaluationError(f"cannot evaluate {type(e).__name__}")

    def _call(self, call: ApiCall, ctx, env):
        if call.is_self():
            value = self._self_value(call, ctx)
        else:
            if call.func == "req_body":
                raise EvaluationError(
                    "req_body is only observable for '@', not for probe calls"
                )
            url = self._resolve_url(call, ctx, env)
            status, body = self._fetch(url)
            if call.func == "res_code":
                value = status
            else:
                value = body
        if isinstance(value, _NonJsonBody):
            raise _Undefined(f"response body is not JSON: {_shorten(value.text)}")
        return self._suffix(call, value)

    def _self_value(self, call: ApiCall, ctx):
        if ctx is None:
            raise EvaluationError("'@' used with no operation in flight")
        if call.func == "req_body":
            return ctx.req_body
        if ctx.phase == "pre":
            raise EvaluationError(
                f"{call.func}(@) is not observable in a precondition"
            )
        value = ctx.res_code if call.func == "res_code" else ctx.res_body
        if value is _UNSET:
            raise EvaluationError(f"{call.func}(@) was never recorded")
        return value

    def _suffix(self, call: ApiCall, value):
        suffix = call.suffix
        if suffix is None:
            return value
        if isinstance(suffix, FieldSuffix):
            if not isinstance(value, dict):
                raise _Undefined(
                    f"{{{suffix.name}}} applied to a non-object: {_shorten(value)}"
                )
            if suffix.name not in value:
                raise _Undefined(f"field {suffix.name!r} missing from {_shorten(value)}")
            return value[suffix.name]
        if isinstance(suffix, FuncSuffix):
            if suffix.name == "len":
                if isinstance(value, (list, str, dict)):
                    return len(value)
                raise _Undefined(f".len applied to {_shorten(value)}")
            raise EvaluationError(f"unknown suffix function {suffix.name!r}")
        raise EvaluationError(f"unhandled suffix {suffix!r}")

    def _prev(self, p: Prev, ctx, env):
        if ctx is None:
            raise EvaluationError("'prev' used with no operation in flight")
        if ctx.phase != "post":
            raise EvaluationError("'prev' is only meaningful in a postcondition")
        self._validate_prev_inner(p.call)
        url = self._resolve_url(p.call, ctx, env)
        key = self._snapshot_key(p.call, url)
        try:
            value = self.snapshots.get(key)
        except KeyError:
            raise EvaluationError(f"no snapshot was captured for {_print_call(p.call)}")
        if isinstance(value, SnapshotFailure):
            raise EvaluationError(f"snapshot unavailable: {value.reason}")
        if isinstance(value, _NonJsonBody):
            raise _Undefined(f"snapshot body is not JSON: {_shorten(value.text)}")
        return self._suffix(p.call, value)

    def _validate_prev_inner(self, call: ApiCall) -> None:
        if call.is_self():
            raise EvaluationError("prev over '@' is not defined")
        if call.func == "req_body":
            raise EvaluationError("prev over req_body is not defined")
        if call.url is not None:
            for seg in call.url.segments:
                for part in seg:
                    if isinstance(part, ParamPart) and part.is_dotted():
                        raise EvaluationError(
                            "prev under a quantifier binder is not supported"
                        )

    def _snapshot_key(self, call: ApiCall, url: str):
        return (call.func, call.method, url)

    # -- URLs and transport ------------------------------------------------------

    def _resolve_url(self, call: ApiCall, ctx, env: dict) -> str:
        segments = []
        for seg in call.url.segments:
            rendered = ""
            for part in seg:
                if isinstance(part, LitPart):
                    rendered += part.text
                elif isinstance(part, BodyFieldPart):
                    if ctx is None:
                        raise EvaluationError(
                            "req_body(@) in a URL with no operation in flight"
                        )
                    body = ctx.req_body
                    if not isinstance(body, dict) or part.field not in body:
                        raise _Undefined(
                            f"request body has no field {part.field!r}"
                        )
                    rendered += str(body[part.field])
                elif part.is_dotted():
                    root, field_name = part.name.split(".", 1)
                    if root not in env:
                        raise EvaluationError(f"unbound quantifier variable {root!r}")
                    element = env[root]
                    if not isinstance(element, dict) or field_name not in element:
                        raise _Undefined(
                            f"{part.name} missing: binder value is {_shorten(element)}"
                        )
                    value = element[field_name]
                    if not isinstance(value, (str, int)):
                        raise _Undefined(f"{part.name} is not usable in a URL")
                    rendered += str(value)
                else:
                    args = ctx.path_args if ctx is not None else {}
                    if part.name not in args:
                        raise EvaluationError(
                            f"no binding for path parameter {{{part.name}}}"
                        )
                    rendered += str(args[part.name])
            segments.append(rendered)
        return "/" + "/".join(segments)

    def _fetch(self, path: str) -> tuple[int, Any]:
        if path in self._cache:
            return self._cache[path]
        if self._spent >= self.budget:
            raise BudgetExceeded(
                f"evaluation exceeded its budget of {self.budget} requests"
            )
        self._spent += 1
        url = self.base_url + path
        try:
            response = self.session.get(url, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportFailure(f"GET {path}: {exc}") from exc
        try:
            body = response.json()
        except ValueError:
            body = _NonJsonBody(response.text)
        self._cache[path] = (response.status_code, body)
        return self._cache[path]
