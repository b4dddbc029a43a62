//! Wire messages. Every message is one JSON text frame of the form
//! `{"v": PROTOCOL_VERSION, "type": "...", ...fields}`.

use serde::{Deserialize, Serialize};

use teleop_core::control::{ControlState, RobotCommand};
use teleop_core::frame::LandmarkFrame;
use teleop_core::geometry::Point3;
use teleop_core::handpose::GestureSignal;
use teleop_core::simarm::{ArmState, RoutineStatus, SafetyStatus, SceneObject};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Operator,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ClientMessage {
    /// Must be the first message on a connection.
    Hello {
        role: Role,
    },
    Frame {
        frame: LandmarkFrame,
    },
    Reset,
    Estop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedMessage,
    ExpectedHello,
    NotOperator,
    OutOfOrder,
    InvalidFrame,
    Engine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WristView {
    pub marker: Point3,
    /// Absent until the marker calibration has locked.
    pub robot: Option<Point3>,
    pub velocity_mps: f64,
    pub fresh: bool,
}

/// The periodic state snapshot pushed to every client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBroadcast {
    pub t_ms: u64,
    pub mode: ControlState,
    pub gesture: GestureSignal,
    pub wrist: Option<WristView>,
    pub arm: ArmState,
    pub objects: Vec<SceneObject>,
    pub safety: SafetyStatus,
    pub last_command: Option<RobotCommand>,
    pub routine: Option<RoutineStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ServerMessage {
    Welcome {
        role: Role,
        note: Option<String>,
    },
    /// Sent right before the server closes a connection it will not serve.
    Refused {
        reason: String,
    },
    State(Box<StateBroadcast>),
    Error {
        code: ErrorCode,
        message: String,
        t_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Envelope<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecodeError {
    /// Not valid JSON, or no integer `v` field.
    Malformed(String),
    VersionMismatch {
        found: u64,
    },
    /// Correct version but not a known message.
    UnknownMessage(String),
}

impl std::fmt::Display for DecodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeError::Malformed(m) => write!(f, "malformed message: {m}"),
            DecodeError::VersionMismatch { found } => {
                write!(f, "protocol version {found} is not supported (server speaks {PROTOCOL_VERSION})")
            }
            DecodeError::UnknownMessage(m) => write!(f, "unrecognized message: {m}"),
        }
    }
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(&Envelope { v: PROTOCOL_VERSION, body: msg }).expect("protocol messages serialize")
}

pub fn decode<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, DecodeError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let found = value
        .get("v")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| DecodeError::Malformed("missing integer field \"v\"".into()))?;
    if found != u64::from(PROTOCOL_VERSION) {
        return Err(DecodeError::VersionMismatch { found });
    }
    // decode from the text, not the Value, so floats keep their exact parse
    serde_json::from_str::<Envelope<T>>(text).map(|e| e.body).map_err(|e| DecodeError::UnknownMessage(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_wire_form() {
        let text = encode(&ClientMessage::Hello { role: Role::Operator });
        assert_eq!(text, r#"{"v":1,"type":"hello","role":"operator"}"#);
        assert_eq!(decode::<ClientMessage>(&text).unwrap(), ClientMessage::Hello { role: Role::Operator });
    }

    #[test]
    fn unit_messages() {
        assert_eq!(encode(&ClientMessage::Estop), r#"{"v":1,"type":"estop"}"#);
        assert_eq!(decode::<ClientMessage>(r#"{"type":"reset","v":1}"#).unwrap(), ClientMessage::Reset);
    }

    #[test]
    fn version_mismatch() {
        assert_eq!(
            decode::<ClientMessage>(r#"{"v":2,"type":"hello","role":"observer"}"#),
            Err(DecodeError::VersionMismatch { found: 2 })
        );
    }

    #[test]
    fn malformed_and_unknown() {
        assert!(matches!(decode::<ClientMessage>("{not json"), Err(DecodeError::Malformed(_))));
        assert!(matches!(decode::<ClientMessage>(r#"{"type":"hello"}"#), Err(DecodeError::Malformed(_))));
        assert!(matches!(decode::<ClientMessage>(r#"{"v":1,"type":"fly"}"#), Err(DecodeError::UnknownMessage(_))));
    }

    mod roundtrip {
        use super::*;
        use proptest::prelude::*;
        use teleop_core::frame::{MarkerDetection, WristObservation};
        use teleop_core::handpose::{HandLandmarks, LANDMARK_COUNT};

        fn frame() -> impl Strategy<Value = LandmarkFrame> {
            let wrist = (-1e4f64..1e4, -1e4f64..1e4, any::<u16>(), prop::collection::vec(any::<u16>(), 0..=25))
                .prop_map(|(u, v, depth_mm, depth_window)| WristObservation { u, v, depth_mm, depth_window });
            let hand =
                prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -1.0f64..1.0), LANDMARK_COUNT).prop_map(|pts| {
                    let points: [Point3; LANDMARK_COUNT] =
                        std::array::from_fn(|i| Point3::new(pts[i].0, pts[i].1, pts[i].2));
                    HandLandmarks::new(points).unwrap()
                });
            let marker =
                (prop::array::uniform9(-1.0f64..1.0), prop::array::uniform3(-5.0f64..5.0)).prop_map(|(r, t)| {
                    MarkerDetection {
                        rotation: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
                        translation: t,
                    }
                });
            (any::<u64>(), prop::option::of(wrist), prop::option::of(hand), prop::option::of(marker))
                .prop_map(|(t_ms, wrist, hand, marker)| LandmarkFrame { t_ms, wrist, hand, marker })
        }

        fn client() -> impl Strategy<Value = ClientMessage> {
            prop_oneof![
                Just(ClientMessage::Hello { role: Role::Operator }),
                Just(ClientMessage::Hello { role: Role::Observer }),
                Just(ClientMessage::Reset),
                Just(ClientMessage::Estop),
                frame().prop_map(|frame| ClientMessage::Frame { frame }),
            ]
        }

        proptest! {
            #[test]
            fn client_messages_survive_the_wire(msg in client()) {
                let text = encode(&msg);
                prop_assert_eq!(decode::<ClientMessage>(&text).unwrap(), msg);
            }

            #[test]
            fn error_messages_survive_the_wire(message in ".*", t_ms in prop::option::of(any::<u64>())) {
                let msg = ServerMessage::Error { code: ErrorCode::OutOfOrder, message, t_ms };
                prop_assert_eq!(decode::<ServerMessage>(&encode(&msg)).unwrap(), msg);
            }

            #[test]
            fn any_other_version_is_refused(v in any::<u32>().prop_filter("current", |v| *v != PROTOCOL_VERSION)) {
                let text = format!(r#"{{"v":{v},"type":"estop"}}"#);
                prop_assert_eq!(decode::<ClientMessage>(&text), Err(DecodeError::VersionMismatch { found: u64::from(v) }));
            }
        }
    }
}
