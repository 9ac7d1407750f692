use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};

use super::frame::{encode_frame, FrameDecoder};
use super::{Message, ProtocolError};
use crate::device::StylusState;
use crate::servo::ConstraintModel;

/// Bytes read per `serve_step` at most, so one step stays bounded in time.
const READ_BUDGET: usize = 64 * 1024;
/// Unsent replies beyond this mean the client stopped reading; drop it.
const MAX_PENDING_OUT: usize = 1 << 20;

struct Connection {
    stream: TcpStream,
    peer: SocketAddr,
    decoder: FrameDecoder,
    out: Vec<u8>,
}

/// Counters for observability and tests.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ServeStats {
    pub accepted: u64,
    pub disconnects: u64,
    pub violations: u64,
    pub requests: u64,
    pub models_staged: u64,
}

/// Non-blocking, single-client server driven from the servo context.
///
/// `serve_step` never waits: it accepts, reads, replies and flushes only as far
/// as the sockets allow without blocking, keeping partial frames for later.
pub struct HapticServer {
    listener: TcpListener,
    conn: Option<Connection>,
    stats: ServeStats,
}

enum Hangup {
    Closed,
    Violation(String),
    Io(io::Error),
}

impl HapticServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, ProtocolError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(HapticServer {
            listener,
            conn: None,
            stats: ServeStats::default(),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn stats(&self) -> ServeStats {
        self.stats
    }

    pub fn has_client(&self) -> bool {
        self.conn.is_some()
    }

    /// Drain pending requests and answer them from `latest`.
    ///
    /// A `SET_FORCE_MODEL` replaces `model` immediately, so when several arrive
    /// between two ticks the last one wins. On disconnect or a protocol
    /// violation the connection is dropped and `model` is made inactive.
    pub fn serve_step(&mut self, latest: &StylusState, model: &mut ConstraintModel) {
        if self.conn.is_none() {
            self.try_accept();
        }
        let Some(conn) = self.conn.as_mut() else {
            return;
        };
        let result = Self::pump(conn, latest, model, &mut self.stats);
        if let Err(reason) = result {
            match &reason {
                Hangup::Closed => log::info!("haptic client {} disconnected", conn.peer),
                Hangup::Violation(msg) => {
                    self.stats.violations += 1;
                    log::warn!("haptic client {} protocol violation: {msg}", conn.peer);
                }
                Hangup::Io(e) => log::warn!("haptic client {} i/o error: {e}", conn.peer),
            }
            self.stats.disconnects += 1;
            self.conn = None;
            *model = ConstraintModel::inactive();
        }
    }

    fn try_accept(&mut self) {
        match self.listener.accept() {
            Ok((stream, peer)) => {
                if stream.set_nonblocking(true).is_err() {
                    return;
                }
                let _ = stream.set_nodelay(true);
                log::info!("haptic client {peer} connected");
                self.stats.accepted += 1;
                self.conn = Some(Connection {
                    stream,
                    peer,
                    decoder: FrameDecoder::new(),
                    out: Vec::new(),
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {}
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }

    fn pump(conn: &mut Connection, latest: &StylusState, model: &mut ConstraintModel, stats: &mut ServeStats) -> Result<(), Hangup> {
        let mut buf = [0u8; 4096];
        let mut read = 0;
        while read < READ_BUDGET {
            match conn.stream.read(&mut buf) {
                Ok(0) => return Err(Hangup::Closed),
                Ok(n) => {
                    conn.decoder.push(&buf[..n]);
                    read += n;
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(Hangup::Io(e)),
            }
        }

        loop {
            let msg = match conn.decoder.next_message() {
                Ok(Some(m)) => m,
                Ok(None) => break,
                Err(e) => return Err(Hangup::Violation(e.to_string())),
            };
            stats.requests += 1;
            let reply = match msg {
                Message::GetPose { seq } => Message::Pose { seq, payload: *latest },
                Message::SetForceModel { seq, payload } => {
                    payload.validate().map_err(|e| Hangup::Violation(e.to_string()))?;
                    *model = payload;
                    stats.models_staged += 1;
                    Message::Ack { seq }
                }
                Message::Ping { seq } => Message::Pong { seq },
                other => return Err(Hangup::Violation(format!("unexpected {} from client", other.kind()))),
            };
            conn.out.extend_from_slice(&encode_frame(&reply));
        }

        while !conn.out.is_empty() {
            match conn.stream.write(&conn.out) {
                Ok(0) => return Err(Hangup::Closed),
                Ok(n) => {
                    conn.out.drain(..n);
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(Hangup::Io(e)),
            }
        }
        if conn.out.len() > MAX_PENDING_OUT {
            return Err(Hangup::Violation("client is not reading replies".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::servo::ForceLaw;
    use std::time::{Duration, Instant};

    fn pump_until(server: &mut HapticServer, model: &mut ConstraintModel, mut done: impl FnMut(&HapticServer, &ConstraintModel) -> bool) {
        let stylus = StylusState::default();
        let t0 = Instant::now();
        while !done(server, model) {
            server.serve_step(&stylus, model);
            assert!(t0.elapsed() < Duration::from_secs(5), "timed out pumping server");
            std::thread::sleep(Duration::from_micros(200));
        }
    }

    #[test]
    fn idle_step_returns_immediately() {
        let mut server = HapticServer::bind("127.0.0.1:0").unwrap();
        let mut model = ConstraintModel::plane(Vec3::zeros(), Vec3::z(), ForceLaw::default());
        let t0 = Instant::now();
        server.serve_step(&StylusState::default(), &mut model);
        assert!(t0.elapsed() < Duration::from_millis(5));
        assert!(model.active);
        assert_eq!(server.stats(), ServeStats::default());
    }

    #[test]
    fn half_frame_gets_no_reply_until_complete() {
        let mut server = HapticServer::bind("127.0.0.1:0").unwrap();
        let mut client = TcpStream::connect(server.local_addr().unwrap()).unwrap();
        let mut model = ConstraintModel::inactive();
        pump_until(&mut server, &mut model, |s, _| s.has_client());
        let frame = encode_frame(&Message::Ping { seq: 5 });
        client.write_all(&frame[..6]).unwrap();
        for _ in 0..20 {
            server.serve_step(&StylusState::default(), &mut model);
        }
        assert_eq!(server.stats().requests, 0);
        client.write_all(&frame[6..]).unwrap();
        pump_until(&mut server, &mut model, |s, _| s.stats().requests == 1);
        client.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        let mut len = [0u8; 4];
        client.read_exact(&mut len).unwrap();
        let mut body = vec![0u8; u32::from_be_bytes(len) as usize];
        client.read_exact(&mut body).unwrap();
        assert_eq!(serde_json::from_slice::<Message>(&body).unwrap(), Message::Pong { seq: 5 });
    }

    #[test]
    fn last_model_wins_and_disconnect_resets() {
        let mut server = HapticServer::bind("127.0.0.1:0").unwrap();
        let mut client = TcpStream::connect(server.local_addr().unwrap()).unwrap();
        let mut model = ConstraintModel::inactive();
        pump_until(&mut server, &mut model, |s, _| s.has_client());
        let mut burst = Vec::new();
        for i in 1..=5 {
            let m = ConstraintModel::plane(Vec3::new(i as f64, 0.0, 0.0), Vec3::z(), ForceLaw::Constant { f0_n: i as f64 });
            burst.extend(encode_frame(&Message::SetForceModel { seq: i, payload: m }));
        }
        client.write_all(&burst).unwrap();
        pump_until(&mut server, &mut model, |s, _| s.stats().models_staged == 5);
        assert_eq!(model.anchor_mm.x, 5.0);
        assert!(model.active);
        drop(client);
        pump_until(&mut server, &mut model, |s, _| !s.has_client());
        assert!(!model.active);
    }

    #[test]
    fn garbage_is_a_violation() {
        let mut server = HapticServer::bind("127.0.0.1:0").unwrap();
        let mut client = TcpStream::connect(server.local_addr().unwrap()).unwrap();
        let mut model = ConstraintModel::plane(Vec3::zeros(), Vec3::z(), ForceLaw::default());
        pump_until(&mut server, &mut model, |s, _| s.has_client());
        client.write_all(&[0, 0, 0, 2, b'{', b'!']).unwrap();
        pump_until(&mut server, &mut model, |s, _| s.stats().violations == 1);
        assert!(!model.active);
        assert!(!server.has_client());
    }
}
