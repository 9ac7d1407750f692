use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::frame::{encode_frame, FrameDecoder};
use super::{Message, ProtocolError};
use crate::device::StylusState;
use crate::servo::ConstraintModel;

/// Session-side endpoint: synchronous requests with a deadline.
pub struct HapticClient {
    stream: TcpStream,
    decoder: FrameDecoder,
    next_seq: u64,
    timeout: Duration,
}

impl HapticClient {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, ProtocolError> {
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
        let mut last = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    return Ok(HapticClient {
                        stream,
                        decoder: FrameDecoder::new(),
                        next_seq: 1,
                        timeout,
                    });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.map(ProtocolError::Io).unwrap_or(ProtocolError::ServerUnresponsive))
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    /// Send `msg` and wait for its answer. Stale replies to earlier, timed-out
    /// requests are skipped.
    pub fn request(&mut self, msg: &Message, timeout: Duration) -> Result<Message, ProtocolError> {
        let deadline = Instant::now() + timeout;
        self.stream.set_write_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        self.stream.write_all(&encode_frame(msg)).map_err(|e| match e.kind() {
            ErrorKind::WouldBlock | ErrorKind::TimedOut => ProtocolError::ServerUnresponsive,
            _ => ProtocolError::Io(e),
        })?;
        let mut buf = [0u8; 4096];
        loop {
            while let Some(reply) = self.decoder.next_message()? {
                if reply.answers(msg) {
                    return Ok(reply);
                }
                if reply.seq() >= msg.seq() {
                    return Err(ProtocolError::Violation(format!("{} does not answer {} seq {}", reply.kind(), msg.kind(), msg.seq())));
                }
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(ProtocolError::ServerUnresponsive);
            }
            self.stream.set_read_timeout(Some(deadline - now))?;
            match self.stream.read(&mut buf) {
                Ok(0) => return Err(ProtocolError::Disconnected),
                Ok(n) => self.decoder.push(&buf[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(ProtocolError::ServerUnresponsive)
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(ProtocolError::Io(e)),
            }
        }
    }

    pub fn get_pose(&mut self) -> Result<StylusState, ProtocolError> {
        let seq = self.seq();
        match self.request(&Message::GetPose { seq }, self.timeout)? {
            Message::Pose { payload, .. } => Ok(payload),
            other => Err(ProtocolError::Violation(format!("expected POSE, got {}", other.kind()))),
        }
    }

    pub fn set_force_model(&mut self, model: &ConstraintModel) -> Result<(), ProtocolError> {
        let seq = self.seq();
        self.request(&Message::SetForceModel { seq, payload: *model }, self.timeout)
            .map(|_| ())
    }

    pub fn ping(&mut self) -> Result<Duration, ProtocolError> {
        let seq = self.seq();
        let t0 = Instant::now();
        self.request(&Message::Ping { seq }, self.timeout)?;
        Ok(t0.elapsed())
    }

    /// Write raw bytes, bypassing framing. Used for fault injection.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ProtocolError> {
        self.stream.write_all(bytes)?;
        Ok(())
    }
}
