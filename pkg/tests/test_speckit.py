import pytest
import yaml

from statecover.speckit import (
    Clause,
    SpecError,
    emit_extended,
    fixture_path,
    infer_contracts,
    load_oas,
)

from helpers import TOURNAMENTS_RESOLVER_TABLE


@pytest.fixture
def spec():
    return load_oas(fixture_path("tournaments_oas.yaml"))


def minimal_doc(**paths):
    return {
        "openapi": "3.0.3",
        "info": {"title": "t", "version": "1"},
        "paths": paths,
    }


ITEM_SCHEMA = {
    "type": "object",
    "required": ["wid"],
    "properties": {"wid": {"type": "string"}},
}


def widget_doc():
    """Tiny one-resource service used by the diagnostics tests."""
    return minimal_doc(**{
        "/widgets": {
            "post": {
                "operationId": "postWidget",
                "requestBody": {"content": {"application/json": {"schema": ITEM_SCHEMA}}},
                "responses": {"200": {"description": "ok", "content": {"application/json": {"schema": ITEM_SCHEMA}}}},
            },
        },
        "/widgets/{wid}": {
            "parameters": [{"name": "wid", "in": "path", "required": True, "schema": {"type": "string"}}],
            "get": {"operationId": "getWidget", "responses": {"200": {"description": "ok"}, "404": {"description": "no"}}},
            "delete": {"operationId": "deleteWidget", "responses": {"200": {"description": "ok"}, "404": {"description": "no"}}},
        },
    })


class TestLoad:
    def test_fixture_loads_clean(self, spec):
        assert spec.diagnostics == []
        assert len(spec.operations) == 19
        assert len(spec.doc["paths"]) == 11

    def test_resources(self, spec):
        found = {r.collection: (r.item, r.key) for r in spec.resources()}
        assert found == {
            "/players": ("/players/{pid}", "pid"),
            "/tournaments": ("/tournaments/{tid}", "tid"),
            "/enrolments": ("/enrolments/{eid}", "eid"),
        }
        assert spec.resource_keys()["/players"] == "pid"
        assert spec.key_owners()["tid"] == "/tournaments"

    def test_operation_lookup(self, spec):
        op = spec.operation("deleteTournament")
        assert op.method == "DELETE"
        assert op.path == "/tournaments/{tid}"
        assert op.path_params == ("tid",)
        with pytest.raises(KeyError):
            spec.operation("nope")

    def test_operation_id_alt_spelling(self):
        doc = minimal_doc(**{
            "/a": {"get": {"operationID": "getA", "responses": {"200": {"description": "ok"}}}}
        })
        s = load_oas(doc)
        assert s.has_operation("getA")
        assert not any(d.code == "op-id-missing" for d in s.diagnostics)

    def test_no_paths_rejected(self):
        with pytest.raises(SpecError):
            load_oas({"openapi": "3.0.3"})


class TestDiagnostics:
    def codes(self, doc):
        return [d.code for d in load_oas(doc).diagnostics]

    def test_param_missing(self):
        doc = minimal_doc(**{
            "/xs/{xid}": {"get": {"operationId": "getX", "responses": {"200": {"description": "ok"}}}}
        })
        assert "param-missing" in self.codes(doc)

    def test_param_optional(self):
        doc = minimal_doc(**{
            "/xs/{xid}": {
                "parameters": [{"name": "xid", "in": "path", "schema": {"type": "string"}}],
                "get": {"operationId": "getX", "responses": {"200": {"description": "ok"}}},
            }
        })
        assert "param-optional" in self.codes(doc)

    def test_param_duplicate(self):
        doc = minimal_doc(**{
            "/xs/{xid}": {
                "parameters": [{"name": "xid", "in": "path", "required": True}],
                "get": {
                    "operationId": "getX",
                    "parameters": [{"name": "xid", "in": "path", "required": True}],
                    "responses": {"200": {"description": "ok"}},
                },
            }
        })
        assert "param-duplicate" in self.codes(doc)

    def test_param_undefined(self):
        doc = minimal_doc(**{
            "/xs": {
                "get": {
                    "operationId": "getXs",
                    "parameters": [{"name": "ghost", "in": "path", "required": True}],
                    "responses": {"200": {"description": "ok"}},
                }
            }
        })
        assert "param-undefined" in self.codes(doc)

    def test_schema_unused(self):
        doc = minimal_doc(**{
            "/xs": {"get": {"operationId": "getXs", "responses": {"200": {"description": "ok"}}}}
        })
        doc["components"] = {"schemas": {"Orphan": {"type": "object"}}}
        assert "schema-unused" in self.codes(doc)

    def test_no_responses(self):
        doc = minimal_doc(**{"/xs": {"get": {"operationId": "getXs"}}})
        assert "no-responses" in self.codes(doc)

    def test_post_without_body(self):
        doc = minimal_doc(**{
            "/xs": {"post": {"operationId": "postX", "responses": {"200": {"description": "ok"}}}}
        })
        assert "no-request-body" in self.codes(doc)

    def test_duplicate_operation_id(self):
        doc = minimal_doc(**{
            "/a": {"get": {"operationId": "same", "responses": {"200": {"description": "ok"}}}},
            "/b": {"get": {"operationId": "same", "responses": {"200": {"description": "ok"}}}},
        })
        assert "op-id-duplicate" in self.codes(doc)

    def test_missing_operation_id(self):
        doc = minimal_doc(**{"/a": {"get": {"responses": {"200": {"description": "ok"}}}}})
        s = load_oas(doc)
        assert any(d.code == "op-id-missing" for d in s.diagnostics)
        assert s.has_operation("GET /a")

    def test_diagnostic_str_mentions_location(self):
        doc = minimal_doc(**{"/a": {"get": {"responses": {"200": {"description": "ok"}}}}})
        d = load_oas(doc).diagnostics[0]
        assert "GET /a" in str(d)


class TestInference:
    def test_post_player_clauses(self, spec):
        infer_contracts(spec)
        op = spec.operation("postPlayer")
        assert [c.text for c in op.requires] == [
            "res_code(GET /players/req_body(@){pid}) = 404"
        ]
        assert [c.text for c in op.ensures] == [
            "res_code(GET /players/req_body(@){pid}) = 200",
            "req_body(@) = res_body(@)",
        ]

    def test_delete_player_clauses(self, spec):
        infer_contracts(spec)
        op = spec.operation("deletePlayer")
        assert [c.text for c in op.requires] == ["res_code(GET /players/{pid}) = 200"]
        assert [c.text for c in op.ensures] == [
            "res_code(GET /players/{pid}) = 404",
            "req_body(@) = prev(res_body(GET /players/{pid}))",
        ]

    def test_put_clause_tagged_extra(self, spec):
        infer_contracts(spec)
        op = spec.operation("putTournament")
        assert [c.text for c in op.requires] == ["res_code(GET /tournaments/{tid}) = 200"]
        assert [(c.text, c.extra) for c in op.ensures] == [
            ("req_body(@) = res_body(GET /tournaments/{tid})", True)
        ]

    def test_enrolment_clauses_use_eid(self, spec):
        infer_contracts(spec)
        post = spec.operation("postEnrolment")
        assert post.requires[0].text == "res_code(GET /enrolments/req_body(@){eid}) = 404"
        delete = spec.operation("deleteEnrolment")
        assert delete.ensures[0].text == "res_code(GET /enrolments/{eid}) = 404"

    def test_gets_left_alone(self, spec):
        report = infer_contracts(spec)
        for op in spec.operations:
            if op.method == "GET":
                assert op.requires == () and op.ensures == ()
                assert op.op_id not in report.added
        assert set(report.added) == {
            "postPlayer", "putPlayer", "deletePlayer",
            "postTournament", "putTournament", "deleteTournament",
            "postEnrolment", "deleteEnrolment",
        }

    def test_post_without_item_sibling_skipped(self):
        doc = minimal_doc(**{
            "/jobs": {
                "post": {
                    "operationId": "startJob",
                    "requestBody": {"content": {"application/json": {"schema": {"type": "object"}}}},
                    "responses": {"200": {"description": "ok"}},
                }
            }
        })
        s = load_oas(doc)
        report = infer_contracts(s)
        assert report.added == {}
        assert report.skipped == [("startJob", "POST path /jobs has no /{key} item sibling")]

    def test_echo_only_when_schemas_match(self):
        doc = widget_doc()
        doc["paths"]["/widgets"]["post"]["responses"]["200"]["content"][
            "application/json"
        ]["schema"] = {"type": "object", "properties": {"ok": {"type": "boolean"}}}
        s = load_oas(doc)
        infer_contracts(s)
        texts = [c.text for c in s.operation("postWidget").ensures]
        assert "req_body(@) = res_body(@)" not in texts

    def test_delete_prev_clause_needs_response_schema(self):
        s = load_oas(widget_doc())
        infer_contracts(s)
        texts = [c.text for c in s.operation("deleteWidget").ensures]
        # deleteWidget declares a bodyless 200, so no echo-of-previous clause
        assert texts == ["res_code(GET /widgets/{wid}) = 404"]

    def test_all_inferred_clauses_reparse(self, spec):
        infer_contracts(spec)
        from statecover.glacier import parse, print_formula

        for op in spec.operations:
            for c in op.requires + op.ensures:
                assert print_formula(parse(c.text)) == c.text


class TestEmitLoad:
    def test_round_trip_byte_identical(self, spec):
        infer_contracts(spec)
        spec.invariants = (
            Clause("for t in res_body(GET /tournaments) :- res_body(GET /tournaments/{t.tid}/players).len <= res_body(GET /tournaments/{t.tid}/capacity)"),
        )
        first = emit_extended(spec)
        again = load_oas(yaml.safe_load(first))
        second = emit_extended(again)
        assert first == second

    def test_clauses_survive_reload(self, spec, tmp_path):
        infer_contracts(spec)
        out = tmp_path / "extended.yaml"
        out.write_text(emit_extended(spec))
        again = load_oas(out)
        for op_id in ("postPlayer", "deletePlayer", "putPlayer"):
            a = spec.operation(op_id)
            b = again.operation(op_id)
            assert [c.text for c in a.requires] == [c.text for c in b.requires]
            assert [(c.text, c.extra) for c in a.ensures] == [
                (c.text, c.extra) for c in b.ensures
            ]

    def test_extra_tag_round_trips(self, spec):
        infer_contracts(spec)
        text = emit_extended(spec)
        again = load_oas(yaml.safe_load(text))
        put = again.operation("putPlayer")
        assert put.ensures[0].extra is True

    def test_bare_clause_keys_accepted(self):
        doc = widget_doc()
        doc["paths"]["/widgets"]["post"]["requires"] = ["res_code(GET /widgets/req_body(@){wid}) = 404"]
        doc["paths"]["/widgets"]["post"]["ensures"] = [
            {"clause": "req_body(@) = res_body(@)", "x-inferred-extra": True}
        ]
        doc["invariants"] = ["res_code(GET /widgets) = 200"]
        s = load_oas(doc)
        op = s.operation("postWidget")
        assert op.requires[0].text == "res_code(GET /widgets/req_body(@){wid}) = 404"
        assert op.ensures[0].extra is True
        assert s.invariants[0].text == "res_code(GET /widgets) = 200"
        # emission normalizes to the x- spelling
        emitted = emit_extended(s)
        assert "x-requires" in emitted and "\nrequires" not in emitted
        assert "x-invariants" in emitted

    def test_malformed_clause_entry_rejected(self):
        doc = widget_doc()
        doc["paths"]["/widgets"]["post"]["x-requires"] = [{"oops": 1}]
        with pytest.raises(SpecError, match="clause"):
            load_oas(doc)

    def test_invalid_clause_formula_rejected(self):
        doc = widget_doc()
        doc["paths"]["/widgets"]["post"]["x-requires"] = ["1 = 2 = 3"]
        with pytest.raises(Exception):
            load_oas(doc)


class TestExecutorMetadata:
    def test_call_metadata_matches_reference_table(self, spec):
        table = spec.call_metadata()
        for name, expect in TOURNAMENTS_RESOLVER_TABLE.items():
            assert table[name] == expect

    def test_resolver_callable(self, spec):
        resolve = spec.resolver()
        assert resolve("postEnrolment")["param_names"] == ["eid", "pid", "tid"]
        assert resolve("unknownOp") is None

    def test_put_catalog(self, spec):
        assert spec.put_catalog() == {
            "pid": {"op": "putPlayer", "verb": "PUT", "path": "/players/{pid}"},
            "tid": {"op": "putTournament", "verb": "PUT", "path": "/tournaments/{tid}"},
        }

    def test_op_profile_post_enrolment(self, spec):
        p = spec.op_profile("postEnrolment")
        assert p.own_key == "eid"
        assert p.collection == "/enrolments"
        assert p.item_path == "/enrolments/{eid}"
        assert p.foreign_keys == (("pid", "/players"), ("tid", "/tournaments"))
        assert p.request_schema["properties"]["eid"] == {"type": "string"}

    def test_op_profile_item_op(self, spec):
        p = spec.op_profile("deletePlayer")
        assert p.own_key == "pid"
        assert p.collection == "/players"
        assert p.request_schema is None
        assert p.foreign_keys == ()

    def test_op_profile_plain_get(self, spec):
        p = spec.op_profile("getTournamentCapacity")
        assert p.own_key is None
        assert p.collection is None

    def test_resolved_schema_has_no_refs(self, spec):
        op = spec.operation("getPlayers")
        resolved = spec.resolve_schema(
            op.raw["responses"]["200"]["content"]["application/json"]["schema"]
        )
        assert resolved["type"] == "array"
        assert resolved["items"]["properties"]["pid"] == {"type": "string"}
        assert "$ref" not in str(resolved)

    def test_dangling_ref_rejected(self, spec):
        with pytest.raises(SpecError, match="dangling"):
            spec.resolve_schema({"$ref": "#/components/schemas/Missing"})


def test_fixture_path_exists():
    assert fixture_path("tournaments_oas.yaml").exists()
