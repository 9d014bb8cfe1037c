//! OpenAPI 3.1 description of the HTTP service.

use serde_json::{json, Value};

fn error_responses(codes: &[&str]) -> Value {
    let mut map = serde_json::Map::new();
    for code in codes {
        let description = match *code {
            "400" => "Malformed body, audio or survey",
            "401" => "Missing or wrong admin token",
            "403" => "Endpoint disabled",
            "404" => "Unknown resource",
            "409" => "Phase violation, duplicate or turn already in flight",
            "422" => "No speech detected",
            "502" => "Upstream provider failure; `stage` names the failing pipeline stage",
            other => panic!("no description for {other}"),
        };
        map.insert(
            code.to_string(),
            json!({
                "description": description,
                "content": { "application/json": { "schema": { "$ref": "#/components/schemas/Error" } } }
            }),
        );
    }
    Value::Object(map)
}

fn with_errors(ok: Value, codes: &[&str]) -> Value {
    let mut responses = error_responses(codes);
    if let (Value::Object(all), Value::Object(ok)) = (&mut responses, ok) {
        all.extend(ok);
    }
    responses
}

fn json_body(schema: &str) -> Value {
    json!({
        "required": true,
        "content": { "application/json": { "schema": { "$ref": format!("#/components/schemas/{schema}") } } }
    })
}

fn json_ok(status: &str, description: &str, schema: &str) -> Value {
    json!({
        status: {
            "description": description,
            "content": { "application/json": { "schema": { "$ref": format!("#/components/schemas/{schema}") } } }
        }
    })
}

fn path_param(name: &str, description: &str) -> Value {
    json!({ "name": name, "in": "path", "required": true, "description": description, "schema": { "type": "string" } })
}

fn audio_body() -> Value {
    json!({
        "required": true,
        "description": "WAV (PCM), WebM, Ogg or MP3 bytes",
        "content": {
            "audio/wav": { "schema": { "type": "string", "format": "binary" } },
            "audio/webm": { "schema": { "type": "string", "format": "binary" } },
            "application/octet-stream": { "schema": { "type": "string", "format": "binary" } }
        }
    })
}

pub fn openapi() -> Value {
    let modes = json!(["explicit-feedback", "ai-proxy", "ai-twin"]);
    let phases = json!(["registration", "conversing", "survey", "done"]);
    let stages = json!([
        "opening",
        "voice_clone",
        "transcribe",
        "rephrase",
        "feedback",
        "synthesize_delivered",
        "interlocutor",
        "synthesize_interlocutor",
        "task_tracking"
    ]);
    let pid = path_param("id", "Participant id");
    let sid = path_param("id", "Session id");

    json!({
        "openapi": "3.1.0",
        "info": {
            "title": "aitwin",
            "version": env!("CARGO_PKG_VERSION"),
            "description": "Conversation practice sessions, voice registration, engagement surveys and study export."
        },
        "paths": {
            "/healthz": {
                "get": {
                    "summary": "Liveness and last event sequence number",
                    "responses": { "200": { "description": "Service is up" } }
                }
            },
            "/scenarios": {
                "get": {
                    "summary": "List the role-play scenarios",
                    "responses": {
                        "200": {
                            "description": "Scenarios",
                            "content": { "application/json": { "schema": {
                                "type": "array", "items": { "$ref": "#/components/schemas/Scenario" }
                            } } }
                        }
                    }
                }
            },
            "/participants": {
                "post": {
                    "summary": "Create a participant",
                    "requestBody": json_body("NewParticipant"),
                    "responses": with_errors(json_ok("201", "Created", "Participant"), &["400", "409"])
                }
            },
            "/participants/{id}": {
                "get": {
                    "summary": "Participant with their sessions",
                    "parameters": [pid.clone()],
                    "responses": with_errors(json!({ "200": { "description": "Participant and session summaries" } }), &["404"])
                },
                "delete": {
                    "summary": "Delete a participant, their sessions, surveys and audio",
                    "parameters": [pid.clone()],
                    "security": [{ "adminToken": [] }],
                    "responses": with_errors(json!({ "200": { "description": "Deleted" } }), &["401", "403", "404"])
                }
            },
            "/participants/{id}/voice": {
                "post": {
                    "summary": "Register a voice sample and create the voice clone",
                    "parameters": [
                        pid.clone(),
                        {
                            "name": "duration_secs",
                            "in": "query",
                            "required": false,
                            "description": "Sample length, required for compressed formats",
                            "schema": { "type": "number" }
                        }
                    ],
                    "requestBody": audio_body(),
                    "responses": with_errors(json_ok("201", "Voice registered", "VoiceProfile"), &["400", "404", "502"])
                }
            },
            "/participants/{id}/plan": {
                "post": {
                    "summary": "Deterministic condition order and scenario assignment",
                    "parameters": [pid],
                    "requestBody": json_body("PlanRequest"),
                    "responses": with_errors(json_ok("200", "Plan", "StudyPlan"), &["400", "404"])
                }
            },
            "/sessions": {
                "post": {
                    "summary": "Open a session; the opening question is voiced",
                    "requestBody": json_body("NewSession"),
                    "responses": with_errors(json_ok("201", "Session", "Session"), &["400", "404", "409", "502"])
                }
            },
            "/sessions/{id}": {
                "get": {
                    "summary": "Session state",
                    "parameters": [sid.clone()],
                    "responses": with_errors(json_ok("200", "Session", "Session"), &["404"])
                }
            },
            "/sessions/{id}/turns": {
                "post": {
                    "summary": "Submit one learner utterance",
                    "description": "Runs one pipeline turn. When every goal is met or the turn limit is reached the session moves to the survey phase.",
                    "parameters": [sid.clone()],
                    "requestBody": audio_body(),
                    "responses": with_errors(json_ok("200", "Turn result", "TurnResponse"), &["400", "404", "409", "422", "502"])
                }
            },
            "/sessions/{id}/turns/{n}/audio": {
                "get": {
                    "summary": "Replay stored audio for a turn",
                    "parameters": [
                        sid.clone(),
                        { "name": "n", "in": "path", "required": true, "schema": { "type": "integer", "minimum": 0 } },
                        {
                            "name": "channel",
                            "in": "query",
                            "required": false,
                            "schema": { "type": "string", "enum": ["delivered", "interlocutor"], "default": "interlocutor" }
                        }
                    ],
                    "responses": with_errors(json!({
                        "200": { "description": "Audio bytes", "content": { "audio/*": { "schema": { "type": "string", "format": "binary" } } } }
                    }), &["404"])
                }
            },
            "/sessions/{id}/abandon": {
                "post": {
                    "summary": "End the conversation early and move to the survey",
                    "parameters": [sid.clone()],
                    "responses": with_errors(json_ok("200", "Session", "Session"), &["404", "409"])
                }
            },
            "/sessions/{id}/survey": {
                "post": {
                    "summary": "Submit the 25-item engagement survey",
                    "parameters": [sid],
                    "requestBody": json_body("SurveyBody"),
                    "responses": with_errors(json_ok("200", "Scores", "SurveyResult"), &["400", "404", "409"])
                }
            },
            "/survey/items": {
                "get": {
                    "summary": "Questionnaire items, with the topic filled in when a session is given",
                    "parameters": [{ "name": "session_id", "in": "query", "required": false, "schema": { "type": "string" } }],
                    "responses": with_errors(json!({ "200": { "description": "Items on a 1-6 scale" } }), &["404"])
                }
            },
            "/export/study.csv": {
                "get": {
                    "summary": "Long-format study export",
                    "description": "Columns participant,condition,dim_or_item,value. Item values are reverse coded.",
                    "responses": with_errors(json!({
                        "200": { "description": "CSV", "content": { "text/csv": { "schema": { "type": "string" } } } }
                    }), &["409"])
                }
            }
        },
        "components": {
            "securitySchemes": {
                "adminToken": { "type": "http", "scheme": "bearer" }
            },
            "schemas": {
                "Error": {
                    "type": "object",
                    "required": ["error", "message"],
                    "properties": {
                        "error": { "type": "string" },
                        "message": { "type": "string" },
                        "stage": { "type": "string", "enum": stages }
                    }
                },
                "FeedbackMode": { "type": "string", "enum": modes },
                "Phase": { "type": "string", "enum": phases },
                "Scenario": {
                    "type": "object",
                    "required": ["id", "title", "context", "goals", "initial_question"],
                    "properties": {
                        "id": { "type": "string" },
                        "title": { "type": "string" },
                        "context": { "type": "string" },
                        "goals": { "type": "array", "items": { "type": "string" }, "minItems": 4, "maxItems": 4 },
                        "initial_question": { "type": "string" },
                        "localized_context": { "type": "string" },
                        "localized_goals": { "type": "array", "items": { "type": "string" } }
                    }
                },
                "NewParticipant": {
                    "type": "object",
                    "properties": {
                        "id": { "type": "string" },
                        "first_language": { "type": "string", "default": "ko" },
                        "cefr_level": { "type": "string", "enum": ["A1", "A2", "B1", "B2", "C1", "C2"] }
                    }
                },
                "VoiceProfile": {
                    "type": "object",
                    "required": ["provider_voice_id", "sample_duration_secs", "sample_language", "speed", "stability"],
                    "properties": {
                        "provider_voice_id": { "type": "string" },
                        "sample_duration_secs": { "type": "number" },
                        "sample_language": { "type": "string" },
                        "speed": { "type": "number" },
                        "stability": { "type": "number" }
                    }
                },
                "Participant": {
                    "type": "object",
                    "required": ["id", "first_language"],
                    "properties": {
                        "id": { "type": "string" },
                        "first_language": { "type": "string" },
                        "cefr_level": { "type": "string" },
                        "voice_profile": { "$ref": "#/components/schemas/VoiceProfile" }
                    }
                },
                "PlanRequest": {
                    "type": "object",
                    "required": ["seed"],
                    "properties": { "seed": { "type": "integer", "minimum": 0 } }
                },
                "StudyPlan": {
                    "type": "object",
                    "required": ["participant_id", "condition_order", "scenario_assignment", "seed", "order_label"],
                    "properties": {
                        "participant_id": { "type": "string" },
                        "condition_order": { "type": "array", "items": { "$ref": "#/components/schemas/FeedbackMode" }, "minItems": 3, "maxItems": 3 },
                        "scenario_assignment": { "type": "object", "additionalProperties": { "type": "string" } },
                        "seed": { "type": "integer" },
                        "order_label": { "type": "string" }
                    }
                },
                "NewSession": {
                    "type": "object",
                    "required": ["participant_id", "mode", "scenario_id"],
                    "properties": {
                        "participant_id": { "type": "string" },
                        "mode": { "$ref": "#/components/schemas/FeedbackMode" },
                        "scenario_id": { "type": "string" }
                    }
                },
                "Goal": {
                    "type": "object",
                    "required": ["number", "description", "completed"],
                    "properties": {
                        "number": { "type": "integer", "minimum": 1, "maximum": 4 },
                        "description": { "type": "string" },
                        "completed": { "type": "boolean" }
                    }
                },
                "Turn": {
                    "type": "object",
                    "required": ["index", "interlocutor_text"],
                    "properties": {
                        "index": { "type": "integer", "minimum": 0 },
                        "transcript": { "type": "string" },
                        "delivered_text": { "type": "string", "description": "Rephrased utterance (ai-twin, ai-proxy)" },
                        "delivered_audio_url": { "type": "string" },
                        "feedback_html": { "type": "string", "description": "Sanitized feedback; only <strong> and <br> remain" },
                        "interlocutor_text": { "type": "string" },
                        "interlocutor_audio_url": { "type": "string" }
                    }
                },
                "Session": {
                    "type": "object",
                    "required": ["id", "participant_id", "mode", "scenario_id", "phase", "goals", "turns"],
                    "properties": {
                        "id": { "type": "string" },
                        "participant_id": { "type": "string" },
                        "mode": { "$ref": "#/components/schemas/FeedbackMode" },
                        "scenario_id": { "type": "string" },
                        "scenario_title": { "type": "string" },
                        "context": { "type": "string" },
                        "phase": { "$ref": "#/components/schemas/Phase" },
                        "learner_turns": { "type": "integer" },
                        "max_turns": { "type": "integer" },
                        "complete": { "type": "boolean" },
                        "goals": { "type": "array", "items": { "$ref": "#/components/schemas/Goal" } },
                        "turns": { "type": "array", "items": { "$ref": "#/components/schemas/Turn" } }
                    }
                },
                "TurnResponse": {
                    "type": "object",
                    "required": ["turn", "goals", "phase", "complete", "learner_turns", "timing_ms"],
                    "properties": {
                        "turn": { "$ref": "#/components/schemas/Turn" },
                        "goals": { "type": "array", "items": { "$ref": "#/components/schemas/Goal" } },
                        "phase": { "$ref": "#/components/schemas/Phase" },
                        "complete": { "type": "boolean" },
                        "learner_turns": { "type": "integer" },
                        "goal_warning": { "type": "string" },
                        "timing_ms": { "type": "object", "additionalProperties": { "type": "integer" } }
                    }
                },
                "SurveyBody": {
                    "type": "object",
                    "required": ["answers"],
                    "properties": {
                        "answers": {
                            "oneOf": [
                                { "type": "array", "items": { "type": "integer", "minimum": 1, "maximum": 6 }, "minItems": 25, "maxItems": 25 },
                                { "type": "object", "additionalProperties": { "type": "integer", "minimum": 1, "maximum": 6 } }
                            ]
                        }
                    }
                },
                "SurveyResult": {
                    "type": "object",
                    "required": ["session_id", "phase", "scores"],
                    "properties": {
                        "session_id": { "type": "string" },
                        "phase": { "$ref": "#/components/schemas/Phase" },
                        "scores": {
                            "type": "object",
                            "properties": {
                                "emotional": { "type": "number" },
                                "cognitive": { "type": "number" },
                                "behavioral": { "type": "number" }
                            }
                        }
                    }
                }
            }
        }
    })
}

pub fn openapi_pretty() -> String {
    serde_json::to_string_pretty(&openapi()).expect("openapi serializes") + "\n"
}
