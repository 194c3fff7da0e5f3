//! OpenAPI 3.1 description of the HTTP service. Component schemas are plain
//! JSON Schema, so responses can be checked against them directly.

use serde_json::{json, Value};

fn schema(name: &str) -> Value {
    json!({ "$ref": format!("#/components/schemas/{name}") })
}

fn body(name: &str) -> Value {
    json!({ "content": { "application/json": { "schema": schema(name) } } })
}

fn ok(description: &str, name: &str) -> Value {
    let mut v = body(name);
    v["description"] = json!(description);
    v
}

fn object(required: &[&str], properties: Value) -> Value {
    json!({ "type": "object", "required": required, "properties": properties })
}

fn number() -> Value {
    json!({ "type": "number" })
}

fn count() -> Value {
    json!({ "type": "integer", "minimum": 0 })
}

fn array_of(item: Value) -> Value {
    json!({ "type": "array", "items": item })
}

fn schemas() -> Value {
    let named = schema("NamedValue");
    json!({
        "Error": object(&["code", "message"], json!({
            "code": { "type": "string" },
            "message": { "type": "string" }
        })),
        "Progress": object(&["windows_done", "windows_total", "generation", "generations_total"], json!({
            "windows_done": count(),
            "windows_total": count(),
            "generation": count(),
            "generations_total": count()
        })),
        "JobHandle": object(
            &["id", "scenario", "scenario_hash", "seed", "policy", "alpha", "status", "progress"],
            json!({
                "id": count(),
                "scenario": { "type": "string" },
                "scenario_hash": { "type": "string", "pattern": "^[0-9a-f]{64}$" },
                "seed": count(),
                "policy": { "type": "string" },
                "alpha": { "type": "number", "minimum": 0 },
                "status": { "enum": ["queued", "running", "done", "failed"] },
                "progress": schema("Progress"),
                "parent": count(),
                "error": { "type": "string" }
            }),
        ),
        "CostVector": object(&["z1_disutility", "z2_waiting_eur", "z3_crane_eur", "z4_traffic_eur"], json!({
            "z1_disutility": number(),
            "z2_waiting_eur": number(),
            "z3_crane_eur": number(),
            "z4_traffic_eur": number()
        })),
        "NamedValue": object(&["name", "value"], json!({ "name": { "type": "string" }, "value": number() })),
        "Member": object(
            &["index", "objectives", "shifts", "feasible", "terminal_gain_eur", "carrier_disutility"],
            json!({
                "index": count(),
                "objectives": schema("CostVector"),
                "shifts": count(),
                "feasible": { "type": "boolean" },
                "terminal_gain_eur": number(),
                "carrier_disutility": number()
            }),
        ),
        "Window": object(
            &["hour", "requests", "identity", "selected_index", "selected", "members"],
            json!({
                "hour": count(),
                "requests": count(),
                "identity": schema("CostVector"),
                "selected_index": { "type": ["integer", "null"], "minimum": 0 },
                "selected": schema("CostVector"),
                "members": array_of(schema("Member"))
            }),
        ),
        "Front": object(&["id", "crane_cost_eur", "windows"], json!({
            "id": count(),
            "crane_cost_eur": number(),
            "windows": array_of(schema("Window"))
        })),
        "TradeoffPoint": object(&["terminal_gain_eur", "carrier_disutility"], json!({
            "terminal_gain_eur": number(),
            "carrier_disutility": number()
        })),
        "Tradeoff": array_of(schema("TradeoffPoint")),
        "ShiftBreakdown": object(&["shifted", "by_commodity", "by_container_type"], json!({
            "shifted": count(),
            "by_commodity": { "type": "object", "additionalProperties": number() },
            "by_container_type": { "type": "object", "additionalProperties": number() }
        })),
        "SlotRow": object(
            &["terminal", "slot", "base_arrivals", "optimized_arrivals", "base_lanes", "optimized_lanes",
              "base_wait_hours", "optimized_wait_hours", "base_waiting_eur", "optimized_waiting_eur"],
            json!({
                "terminal": { "type": "string" },
                "slot": count(),
                "base_arrivals": number(),
                "optimized_arrivals": number(),
                "base_lanes": count(),
                "optimized_lanes": count(),
                "base_wait_hours": number(),
                "optimized_wait_hours": number(),
                "base_waiting_eur": number(),
                "optimized_waiting_eur": number()
            }),
        ),
        "DayReport": object(
            &["scenario_hash", "seed", "version", "terminal_gain_eur", "trucking_gain_eur", "traffic_gain_eur",
              "total_gain_eur", "gain_share_pct", "carrier_disutility", "requests", "rescheduled",
              "rescheduled_share", "productivity_hours", "base_costs", "optimized_costs", "computation", "slots",
              "shifts"],
            json!({
                "scenario_hash": { "type": "string" },
                "seed": count(),
                "version": { "type": "string" },
                "terminal_gain_eur": array_of(named.clone()),
                "trucking_gain_eur": number(),
                "traffic_gain_eur": array_of(named.clone()),
                "total_gain_eur": number(),
                "gain_share_pct": array_of(named),
                "carrier_disutility": number(),
                "requests": count(),
                "rescheduled": count(),
                "rescheduled_share": { "type": "number", "minimum": 0, "maximum": 1 },
                "productivity_hours": number(),
                "base_costs": schema("CostVector"),
                "optimized_costs": schema("CostVector"),
                "computation": object(&["windows", "evaluations"], json!({ "windows": count(), "evaluations": count() })),
                "slots": array_of(schema("SlotRow")),
                "shifts": schema("ShiftBreakdown")
            }),
        ),
        "Shifts": object(&["requests", "rescheduled", "rescheduled_share", "shifts"], json!({
            "requests": count(),
            "rescheduled": count(),
            "rescheduled_share": number(),
            "shifts": schema("ShiftBreakdown")
        })),
        "Assignment": object(
            &["request_id", "terminal", "container_id", "commodity", "container_type", "requested_slot",
              "assigned_slot", "planning_cost_requested", "planning_cost_assigned"],
            json!({
                "request_id": count(),
                "terminal": count(),
                "container_id": { "type": "string" },
                "commodity": { "type": "string" },
                "container_type": { "type": "string" },
                "requested_slot": count(),
                "assigned_slot": count(),
                "planning_cost_requested": number(),
                "planning_cost_assigned": number()
            }),
        ),
        "CommittedWindow": object(
            &["planning_hour", "assignments", "lanes", "objectives", "identity", "front_size", "evaluations"],
            json!({
                "planning_hour": count(),
                "assignments": array_of(schema("Assignment")),
                "lanes": array_of(array_of(count())),
                "objectives": schema("CostVector"),
                "identity": schema("CostVector"),
                "front_size": count(),
                "evaluations": count()
            }),
        ),
        "ReportDelta": object(
            &["total_gain_eur", "trucking_gain_eur", "terminal_gain_eur", "carrier_disutility", "rescheduled"],
            json!({
                "total_gain_eur": number(),
                "trucking_gain_eur": number(),
                "terminal_gain_eur": number(),
                "carrier_disutility": number(),
                "rescheduled": { "type": "integer" }
            }),
        ),
        "SelectResponse": object(&["committed", "report", "delta"], json!({
            "committed": schema("CommittedWindow"),
            "report": schema("DayReport"),
            "delta": schema("ReportDelta")
        })),
        "RunRequest": {
            "type": "object",
            "required": ["scenario"],
            "additionalProperties": false,
            "properties": {
                "scenario": { "oneOf": [{ "type": "string" }, { "type": "object" }] },
                "seed": count(),
                "policy": { "enum": ["max_monetary_gain", "min_z1", "min_z2", "min_z3", "min_z4"] },
                "alpha": { "type": "number", "minimum": 0 }
            }
        },
        "SelectRequest": {
            "type": "object",
            "additionalProperties": false,
            "properties": {
                "policy": { "enum": ["max_monetary_gain", "min_z1", "min_z2", "min_z3", "min_z4"] },
                "solution_index": count(),
                "hour": count()
            }
        },
        "AlphaRequest": {
            "type": "object",
            "required": ["alpha"],
            "additionalProperties": false,
            "properties": { "alpha": { "type": "number", "minimum": 0 } }
        }
    })
}

/// The document served at `/spec`.
pub fn document() -> Value {
    let err = ok("error", "Error");
    let id = json!([{ "name": "id", "in": "path", "required": true, "schema": count() }]);
    let result = |summary: &str, name: &str| {
        json!({
            "get": {
                "summary": summary,
                "parameters": id,
                "responses": { "200": ok(summary, name), "404": err, "409": err }
            }
        })
    };
    json!({
        "openapi": "3.1.0",
        "info": { "title": "tsms", "version": env!("CARGO_PKG_VERSION") },
        "paths": {
            "/runs": {
                "get": {
                    "summary": "List runs",
                    "responses": { "200": { "description": "run handles", "content": { "application/json": { "schema": array_of(schema("JobHandle")) } } } }
                },
                "post": {
                    "summary": "Start a day run",
                    "requestBody": body("RunRequest"),
                    "responses": { "202": ok("queued run", "JobHandle"), "422": err }
                }
            },
            "/runs/{id}": {
                "get": {
                    "summary": "Run status and progress",
                    "parameters": id,
                    "responses": { "200": ok("run", "JobHandle"), "404": err }
                }
            },
            "/runs/{id}/front": result("Pareto front per planning window", "Front"),
            "/runs/{id}/tradeoff": result("Terminal gain against carrier disutility", "Tradeoff"),
            "/runs/{id}/report": result("Stakeholder report", "DayReport"),
            "/runs/{id}/shifts": result("Shifted requests by commodity and container type", "Shifts"),
            "/runs/{id}/select": {
                "post": {
                    "summary": "Commit a front member or policy in one window and re-plan later windows; the run itself is unchanged",
                    "parameters": id,
                    "requestBody": body("SelectRequest"),
                    "responses": { "200": ok("committed window, resulting report and delta", "SelectResponse"), "404": err, "409": err, "422": err }
                }
            },
            "/runs/{id}/alpha": {
                "post": {
                    "summary": "Re-run with another crane-priority factor",
                    "parameters": id,
                    "requestBody": body("AlphaRequest"),
                    "responses": { "202": ok("queued child run", "JobHandle"), "404": err, "422": err }
                }
            },
            "/spec": { "get": { "summary": "This document", "responses": { "200": { "description": "OpenAPI JSON" } } } }
        },
        "components": { "schemas": schemas() }
    })
}
