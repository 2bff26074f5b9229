//! JSON wire protocol spoken over the session WebSocket.
//!
//! Every message is one JSON object carrying `"v"` (protocol version),
//! `"sid"` (session id) and `"type"`. Unknown fields are ignored.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::geometry::BBox2D;
use crate::guidance::{GuidanceEvent, Highlights};
use crate::plan::Rotation;
use crate::scene::Action;
use crate::session::{ClientId, Mode, Session, Snapshot};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Display,
    Actor,
    Detector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    Malformed,
    Role,
    Mode,
    Session,
    Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightsBody {
    pub frame: u64,
    #[serde(flatten)]
    pub highlights: Highlights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServerBody {
    Snapshot(Snapshot),
    Highlights(HighlightsBody),
    Event(GuidanceEvent),
    Error(ErrorBody),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub v: u64,
    pub sid: String,
    #[serde(flatten)]
    pub body: ServerBody,
}

impl ServerMessage {
    pub fn new(sid: &str, body: ServerBody) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            sid: sid.to_string(),
            body,
        }
    }

    pub fn error(sid: &str, code: ErrorCode, message: impl Into<String>) -> Self {
        Self::new(
            sid,
            ServerBody::Error(ErrorBody {
                code,
                message: message.into(),
            }),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub cls: String,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Pick,
    Place,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClientBody {
    Hello {
        role: Role,
    },
    Action {
        action: ActionKind,
        id: u32,
        x: Option<i32>,
        y: Option<i32>,
        layer: Option<u32>,
        rot: Option<i64>,
    },
    Detections {
        frame: u64,
        boxes: Vec<WireBox>,
    },
}

/// Per-connection protocol state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientState {
    pub role: Option<Role>,
}

impl ClientState {
    /// Whether the client receives broadcasts.
    pub fn subscribed(&self) -> bool {
        self.role.is_some()
    }

    fn merge_role(&mut self, role: Role) {
        // A display HELLO on an actor connection keeps the actor role.
        self.role = match (self.role, role) {
            (Some(Role::Actor), Role::Display) => Some(Role::Actor),
            (_, r) => Some(r),
        };
    }
}

pub fn highlights_message(sid: &str, frame: u64, highlights: Highlights) -> ServerMessage {
    ServerMessage::new(sid, ServerBody::Highlights(HighlightsBody { frame, highlights }))
}

fn malformed(sid: &str, message: impl Into<String>) -> Vec<ServerMessage> {
    vec![ServerMessage::error(sid, ErrorCode::Malformed, message)]
}

fn decode_action(body: &ClientBody) -> Result<Action, String> {
    let ClientBody::Action {
        action,
        id,
        x,
        y,
        layer,
        rot,
    } = body
    else {
        unreachable!("decode_action called on a non-ACTION body");
    };
    Ok(match action {
        ActionKind::Pick => Action::Pick { id: *id },
        ActionKind::Remove => Action::Remove { id: *id },
        ActionKind::Place => {
            let (Some(x), Some(y), Some(layer), Some(rot)) = (x, y, layer, rot) else {
                return Err("place needs x, y, layer and rot".into());
            };
            let rot = Rotation::from_degrees(*rot).ok_or_else(|| format!("invalid rotation {rot}"))?;
            Action::Place {
                id: *id,
                x: *x,
                y: *y,
                layer: *layer,
                rot,
            }
        }
    })
}

/// Applies one client text frame to the session and returns the direct
/// replies. Actions and detections take effect at the next tick.
pub fn handle_message(
    session: &mut Session,
    client_id: ClientId,
    client: &mut ClientState,
    text: &str,
) -> Vec<ServerMessage> {
    let sid = session.session_id().to_string();
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return malformed(&sid, format!("invalid JSON: {e}")),
    };
    let Some(obj) = value.as_object() else {
        return malformed(&sid, "message must be a JSON object");
    };
    match obj.get("v").and_then(Value::as_u64) {
        Some(PROTOCOL_VERSION) => {}
        Some(v) => return malformed(&sid, format!("unsupported protocol version {v}")),
        None => return malformed(&sid, "missing protocol version `v`"),
    }
    match obj.get("sid").and_then(Value::as_str) {
        Some(s) if s == sid => {}
        Some(s) => {
            return vec![ServerMessage::error(
                &sid,
                ErrorCode::Session,
                format!("unknown session `{s}`"),
            )]
        }
        None => return malformed(&sid, "missing session id `sid`"),
    }
    let body: ClientBody = match serde_json::from_value(value) {
        Ok(b) => b,
        Err(e) => return malformed(&sid, e.to_string()),
    };

    match &body {
        ClientBody::Hello { role } => {
            let first = !client.subscribed();
            client.merge_role(*role);
            let mut replies = vec![ServerMessage::new(&sid, ServerBody::Snapshot(session.snapshot()))];
            if first {
                replies.extend(
                    session
                        .event_log()
                        .iter()
                        .map(|e| ServerMessage::new(&sid, ServerBody::Event(e.clone()))),
                );
                if let Some(h) = session.highlights() {
                    replies.push(highlights_message(&sid, session.tick_index(), h));
                }
            }
            replies
        }
        ClientBody::Action { .. } => {
            if session.mode() != Mode::Sim {
                return vec![ServerMessage::error(
                    &sid,
                    ErrorCode::Mode,
                    "ACTION is only accepted in sim mode",
                )];
            }
            if client.role != Some(Role::Actor) {
                return vec![ServerMessage::error(
                    &sid,
                    ErrorCode::Role,
                    "ACTION requires the actor role",
                )];
            }
            match decode_action(&body) {
                Ok(action) => {
                    session.enqueue_action(Some(client_id), action);
                    Vec::new()
                }
                Err(e) => malformed(&sid, e),
            }
        }
        ClientBody::Detections { frame, boxes } => {
            if session.mode() != Mode::External {
                return vec![ServerMessage::error(
                    &sid,
                    ErrorCode::Mode,
                    "DETECTIONS are only accepted in external mode",
                )];
            }
            if client.role != Some(Role::Detector) {
                return vec![ServerMessage::error(
                    &sid,
                    ErrorCode::Role,
                    "DETECTIONS require the detector role",
                )];
            }
            let camera = session.config().camera;
            let mut parsed = Vec::with_capacity(boxes.len());
            for (i, b) in boxes.iter().enumerate() {
                match BBox2D::new(b.x0, b.y0, b.x1, b.y1, &b.cls, b.conf) {
                    Ok(bb) if bb.intersects_image(&camera) => parsed.push(bb),
                    Ok(_) => return malformed(&sid, format!("box {i} lies outside the image")),
                    Err(e) => return malformed(&sid, format!("box {i}: {e}")),
                }
            }
            session.submit_detections(*frame, parsed);
            Vec::new()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::parse_plan;
    use crate::session::SessionConfig;

    const PLAN: &str = "PLAN demo\nPART 2x4 0 0 0 0\nPART 2x2 0 0 1 0\n";

    fn session(mode: Mode) -> Session {
        let mut cfg = SessionConfig::new(parse_plan(PLAN).unwrap());
        cfg.mode = mode;
        Session::new(cfg).unwrap()
    }

    fn send(s: &mut Session, c: &mut ClientState, text: &str) -> Vec<ServerMessage> {
        handle_message(s, 1, c, text)
    }

    fn error_code(replies: &[ServerMessage]) -> Option<ErrorCode> {
        match replies {
            [ServerMessage {
                body: ServerBody::Error(e),
                ..
            }] => Some(e.code),
            _ => None,
        }
    }

    #[test]
    fn hello_replies_with_snapshot_history_and_highlights() {
        let mut s = session(Mode::Sim);
        let mut c = ClientState::default();
        let r = send(
            &mut s,
            &mut c,
            r#"{"v":1,"sid":"demo","type":"HELLO","role":"display","extra":true}"#,
        );
        assert!(matches!(r[0].body, ServerBody::Snapshot(_)));
        assert!(matches!(r[1].body, ServerBody::Event(_)));
        assert!(matches!(r[2].body, ServerBody::Event(_)));
        assert!(matches!(r.last().unwrap().body, ServerBody::Highlights(_)));
        assert_eq!(c.role, Some(Role::Display));
        // A second HELLO does not replay history and display does not downgrade actor.
        send(&mut s, &mut c, r#"{"v":1,"sid":"demo","type":"HELLO","role":"actor"}"#);
        let r = send(
            &mut s,
            &mut c,
            r#"{"v":1,"sid":"demo","type":"HELLO","role":"display"}"#,
        );
        assert_eq!(r.len(), 1);
        assert_eq!(c.role, Some(Role::Actor));
    }

    #[test]
    fn malformed_messages_are_rejected() {
        let mut s = session(Mode::Sim);
        let mut c = ClientState::default();
        for text in [
            "not json",
            "[1]",
            r#"{"sid":"demo","type":"HELLO","role":"actor"}"#,
            r#"{"v":2,"sid":"demo","type":"HELLO","role":"actor"}"#,
            r#"{"v":1,"type":"HELLO","role":"actor"}"#,
            r#"{"v":1,"sid":"demo","type":"HELLO"}"#,
            r#"{"v":1,"sid":"demo","type":"HELLO","role":"pilot"}"#,
            r#"{"v":1,"sid":"demo","type":"WAVE"}"#,
        ] {
            assert_eq!(
                error_code(&send(&mut s, &mut c, text)),
                Some(ErrorCode::Malformed),
                "{text}"
            );
        }
        let r = send(&mut s, &mut c, r#"{"v":1,"sid":"other","type":"HELLO","role":"actor"}"#);
        assert_eq!(error_code(&r), Some(ErrorCode::Session));
    }

    #[test]
    fn actions_need_sim_mode_and_actor_role() {
        let mut ext = session(Mode::External);
        let mut c = ClientState {
            role: Some(Role::Actor),
        };
        let pick = r#"{"v":1,"sid":"demo","type":"ACTION","action":"pick","id":0}"#;
        assert_eq!(error_code(&send(&mut ext, &mut c, pick)), Some(ErrorCode::Mode));

        let mut sim = session(Mode::Sim);
        let mut display = ClientState {
            role: Some(Role::Display),
        };
        assert_eq!(error_code(&send(&mut sim, &mut display, pick)), Some(ErrorCode::Role));
        assert_eq!(
            error_code(&send(&mut sim, &mut ClientState::default(), pick)),
            Some(ErrorCode::Role)
        );
        assert!(send(&mut sim, &mut c, pick).is_empty());
        let place = r#"{"v":1,"sid":"demo","type":"ACTION","action":"place","id":0,"x":0,"y":0}"#;
        assert_eq!(error_code(&send(&mut sim, &mut c, place)), Some(ErrorCode::Malformed));
        let report = sim.tick();
        assert_eq!(report.actions.len(), 1);
        assert_eq!(report.actions[0].client, Some(1));
        assert!(report.actions[0].error.is_none());
    }

    #[test]
    fn detections_need_external_mode_and_latest_frame_wins() {
        let det = |frame: u64, x0: f64| {
            format!(
                r#"{{"v":1,"sid":"demo","type":"DETECTIONS","frame":{frame},"boxes":[{{"x0":{x0},"y0":10,"x1":60,"y1":50,"cls":"2x4","conf":0.9}}]}}"#
            )
        };
        let mut sim = session(Mode::Sim);
        let mut d = ClientState {
            role: Some(Role::Detector),
        };
        assert_eq!(
            error_code(&send(&mut sim, &mut d, &det(1, 10.0))),
            Some(ErrorCode::Mode)
        );

        let mut ext = session(Mode::External);
        let mut actor = ClientState {
            role: Some(Role::Actor),
        };
        assert_eq!(
            error_code(&send(&mut ext, &mut actor, &det(1, 10.0))),
            Some(ErrorCode::Role)
        );
        assert!(send(&mut ext, &mut d, &det(1, 10.0)).is_empty());
        assert!(send(&mut ext, &mut d, &det(2, 20.0)).is_empty());
        assert_eq!(ext.pending_frame(), Some(2));
        let report = ext.tick();
        assert!(report.observed);
        assert_eq!(report.detections[0].x_min, 20.0);
        // Stale frames are dropped silently.
        assert!(send(&mut ext, &mut d, &det(2, 30.0)).is_empty());
        assert_eq!(ext.pending_frame(), None);

        for bad in [det(3, 60.0), det(3, -500.0).replace("60", "-400")] {
            assert_eq!(
                error_code(&send(&mut ext, &mut d, &bad)),
                Some(ErrorCode::Malformed),
                "{bad}"
            );
        }
    }

    #[test]
    fn server_messages_are_flat_json() {
        let msg = ServerMessage::error("demo", ErrorCode::Mode, "nope");
        let v: Value = serde_json::from_str(&msg.to_json()).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["sid"], "demo");
        assert_eq!(v["type"], "ERROR");
        assert_eq!(v["code"], "MODE");
        assert_eq!(v["message"], "nope");
        let back: ServerMessage = serde_json::from_value(v).unwrap();
        assert_eq!(back, msg);
    }
}
