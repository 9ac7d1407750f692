//! Link between the haptic servo (server) and the session loop (client).
//!
//! Every frame is a 4-byte big-endian body length followed by a UTF-8 JSON
//! body. Responses echo the request `seq`. See `docs/protocol.md`.

mod client;
mod frame;
mod server;

use serde::{Deserialize, Serialize};

pub use client::HapticClient;
pub use frame::{encode_frame, FrameDecoder, MAX_FRAME_LEN};
pub use server::{HapticServer, ServeStats};

use crate::device::StylusState;
use crate::servo::ConstraintModel;

pub const DEFAULT_HAPTIC_PORT: u16 = 7450;
pub const HAPTIC_PORT_ENV: &str = "VWC_HAPTIC_PORT";

/// Port from `VWC_HAPTIC_PORT`, else the default.
pub fn haptic_port_from_env() -> u16 {
    std::env::var(HAPTIC_PORT_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_HAPTIC_PORT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    GetPose { seq: u64 },
    Pose { seq: u64, payload: StylusState },
    SetForceModel { seq: u64, payload: ConstraintModel },
    Ack { seq: u64 },
    Ping { seq: u64 },
    Pong { seq: u64 },
}

impl Message {
    pub fn seq(&self) -> u64 {
        match self {
            Message::GetPose { seq }
            | Message::Pose { seq, .. }
            | Message::SetForceModel { seq, .. }
            | Message::Ack { seq }
            | Message::Ping { seq }
            | Message::Pong { seq } => *seq,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::GetPose { .. } => "GET_POSE",
            Message::Pose { .. } => "POSE",
            Message::SetForceModel { .. } => "SET_FORCE_MODEL",
            Message::Ack { .. } => "ACK",
            Message::Ping { .. } => "PING",
            Message::Pong { .. } => "PONG",
        }
    }

    /// Whether `self` is the response kind expected for `request`.
    pub fn answers(&self, request: &Message) -> bool {
        matches!(
            (request, self),
            (Message::GetPose { .. }, Message::Pose { .. })
                | (Message::SetForceModel { .. }, Message::Ack { .. })
                | (Message::Ping { .. }, Message::Pong { .. })
        ) && self.seq() == request.seq()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("server unresponsive")]
    ServerUnresponsive,
    #[error("protocol violation: {0}")]
    Violation(String),
    #[error("connection closed by peer")]
    Disconnected,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Vec3};

    #[test]
    fn wire_json_shape() {
        let m = Message::GetPose { seq: 3 };
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"kind":"GET_POSE","seq":3}"#);
        let m = Message::SetForceModel {
            seq: 9,
            payload: ConstraintModel::plane(Vec3::new(1.0, 2.0, 3.0), Vec3::z(), crate::servo::ForceLaw::Constant { f0_n: 2.0 }),
        };
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"kind":"SET_FORCE_MODEL","seq":9,"payload":{"active":true,"anchor_mm":[1.0,2.0,3.0],"normal":[0.0,0.0,1.0],"law":{"class":"constant","f0_n":2.0}}}"#
        );
        let pose = Message::Pose {
            seq: 1,
            payload: StylusState {
                pose: Pose::from_translation(Vec3::new(0.5, 0.0, 0.0)),
                button: true,
                seq: 42,
                timestamp_ms: 12.0,
            },
        };
        assert_eq!(
            serde_json::to_string(&pose).unwrap(),
            r#"{"kind":"POSE","seq":1,"payload":{"pose":{"position_mm":[0.5,0.0,0.0],"quat_wxyz":[1.0,0.0,0.0,0.0]},"button":true,"seq":42,"timestamp_ms":12.0}}"#
        );
    }

    #[test]
    fn answers_checks_kind_and_seq() {
        assert!(Message::Pong { seq: 4 }.answers(&Message::Ping { seq: 4 }));
        assert!(!Message::Pong { seq: 5 }.answers(&Message::Ping { seq: 4 }));
        assert!(!Message::Ack { seq: 4 }.answers(&Message::Ping { seq: 4 }));
    }

    #[test]
    fn env_port_override() {
        // Only checks parsing fallback; the variable is not set in tests.
        if std::env::var_os(HAPTIC_PORT_ENV).is_none() {
            assert_eq!(haptic_port_from_env(), DEFAULT_HAPTIC_PORT);
        }
    }
}
