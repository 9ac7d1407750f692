use super::{Message, ProtocolError};

/// Upper bound on a frame body; larger length prefixes are a protocol violation.
pub const MAX_FRAME_LEN: usize = 1 << 20;

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("message serializes");
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Incremental decoder; partial frames stay buffered until completed.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        FrameDecoder::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete message, `Ok(None)` if more bytes are needed.
    pub fn next_message(&mut self) -> Result<Option<Message>, ProtocolError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]) as usize;
        if len > MAX_FRAME_LEN {
            return Err(ProtocolError::Violation(format!("frame length {len} exceeds {MAX_FRAME_LEN}")));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let parsed = serde_json::from_slice::<Message>(&self.buf[4..4 + len]);
        self.buf.drain(..4 + len);
        parsed.map(Some).map_err(|e| ProtocolError::Violation(e.to_string()))
    }
}
