//! WebSocket bridge between the session and a browser view.
//!
//! Every message is one JSON text frame with a `type` field. The view never
//! owns state: a `scene_state` with `full: true` is sent to each new client
//! and carries everything needed to draw the scene from scratch.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam::atomic::AtomicCell;
use crossbeam::channel::{self, Receiver, Sender};
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::device::{ForceCommand, RawInput, StylusState};
use crate::geometry::{Pose, Witness};
use crate::kinematics::{EntityState, HandleMode, PivotMode};
use crate::mapping::{FrameMode, ScaleLevel};
use crate::session::{CollisionPair, RecordMode, Session, SessionError, Waypoint};

pub const DEFAULT_UI_PORT: u16 = 7451;

/// `VWC_UI_PORT`, or the default when unset or unparsable.
pub fn ui_port_from_env() -> u16 {
    std::env::var("VWC_UI_PORT")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_UI_PORT)
}

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("bridge socket: {0}")]
    Io(#[from] io::Error),
    #[error("websocket: {0}")]
    WebSocket(#[from] tungstenite::Error),
    #[error("malformed bridge message: {0}")]
    Malformed(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshGeometry {
    pub id: String,
    pub vertices_mm: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshView {
    pub id: String,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub name: String,
    pub kind: String,
    pub handle_mode: Option<HandleMode>,
    pub state: EntityState,
    pub meshes: Vec<MeshView>,
    pub in_contact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingView {
    pub scale_level: ScaleLevel,
    pub frame_mode: FrameMode,
    pub camera_pose: Pose,
    pub world_span_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub seq: u64,
    /// Set on the first message to a client; only then is `geometry` filled.
    pub full: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub geometry: Vec<MeshGeometry>,
    pub entities: Vec<EntityView>,
    pub selected: Option<String>,
    pub collision_pairs: Vec<CollisionPair>,
    pub mapping: MappingView,
    pub clutch_engaged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    SceneState(SceneState),
    Stylus {
        seq: u64,
        t_ms: f64,
        pose: Pose,
        button: bool,
    },
    Force {
        force_n: [f64; 3],
        clamped: bool,
        model_active: bool,
    },
    Witness {
        entity: Option<String>,
        witness: Option<Witness>,
        in_contact: bool,
    },
    Recording {
        active: bool,
        mode: Option<RecordMode>,
        waypoints: Vec<Waypoint>,
    },
}

impl ServerMessage {
    pub fn stylus(s: &StylusState) -> Self {
        ServerMessage::Stylus {
            seq: s.seq,
            t_ms: s.timestamp_ms,
            pose: s.pose,
            button: s.button,
        }
    }

    pub fn force(f: &ForceCommand, model_active: bool) -> Self {
        ServerMessage::Force {
            force_n: [f.force.x, f.force.y, f.force.z],
            clamped: f.clamped,
            model_active,
        }
    }

    pub fn recording(session: &Session) -> Self {
        match session.recorder() {
            Some(r) => ServerMessage::Recording {
                active: true,
                mode: Some(r.mode()),
                waypoints: r.waypoints().to_vec(),
            },
            None => ServerMessage::Recording {
                active: false,
                mode: None,
                waypoints: Vec::new(),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bridge messages always serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordAction {
    Start,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    /// Virtual stylus pose in the device frame.
    TeleopPose { pose: Pose },
    Button { pressed: bool },
    Clutch { engaged: bool },
    Select { entity: Option<String> },
    HandleMode {
        mode: HandleMode,
        #[serde(default)]
        trunk_locked: Option<bool>,
    },
    Pivot {
        mode: PivotMode,
        #[serde(default)]
        user: Option<Pose>,
    },
    Scale { level: ScaleLevel },
    Frame {
        mode: FrameMode,
        #[serde(default)]
        user_frame: Option<Pose>,
        #[serde(default)]
        camera: Option<Pose>,
    },
    Record {
        action: RecordAction,
        #[serde(default)]
        mode: Option<RecordMode>,
    },
    Zoom { factor: f64 },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, BridgeError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bridge messages always serialize")
    }
}

/// Apply a view command to the session. Stylus input commands are not
/// session state and are ignored here. Stopping a recording returns the
/// waypoints it captured.
pub fn apply_command(session: &mut Session, cmd: &ClientMessage) -> Result<Option<Vec<Waypoint>>, SessionError> {
    match cmd {
        ClientMessage::TeleopPose { .. } | ClientMessage::Button { .. } => {}
        ClientMessage::Clutch { engaged } => session.set_clutch(*engaged),
        ClientMessage::Select { entity } => session.select(entity.as_deref())?,
        ClientMessage::HandleMode { mode, trunk_locked } => {
            session.set_handle_mode(*mode)?;
            if let Some(l) = trunk_locked {
                session.set_trunk_locked(*l)?;
            }
        }
        ClientMessage::Pivot { mode, user } => session.set_pivot(*mode, *user)?,
        ClientMessage::Scale { level } => session.set_scale_level(*level),
        ClientMessage::Frame { mode, user_frame, camera } => {
            if let Some(c) = camera {
                session.set_camera(*c);
            }
            session.set_frame_mode(*mode, *user_frame);
        }
        ClientMessage::Record { action: RecordAction::Start, mode } => {
            session.start_recording(mode.unwrap_or(RecordMode::Manual))?;
        }
        ClientMessage::Record { action: RecordAction::Stop, .. } => return Ok(session.stop_recording()),
        ClientMessage::Zoom { factor } => session.zoom(*factor)?,
    }
    Ok(None)
}

/// Project the session into a `scene_state` message.
pub fn scene_state(session: &Session, seq: u64, full: bool, contact: Option<&str>) -> SceneState {
    let scene = session.scene();
    let mut geometry = Vec::new();
    let entities = scene
        .entities
        .iter()
        .map(|e| {
            let meshes = e
                .posed_meshes()
                .into_iter()
                .enumerate()
                .map(|(i, pm)| {
                    let id = format!("{}/{}", e.name, i);
                    if full {
                        geometry.push(MeshGeometry {
                            id: id.clone(),
                            vertices_mm: pm.mesh.vertices().iter().map(|v| [v.x, v.y, v.z]).collect(),
                            triangles: pm.mesh.triangles().to_vec(),
                        });
                    }
                    MeshView { id, pose: pm.pose }
                })
                .collect();
            EntityView {
                name: e.name.clone(),
                kind: e.kind_name().to_string(),
                handle_mode: e.handle_mode(),
                state: e.state(),
                meshes,
                in_contact: contact == Some(e.name.as_str()),
            }
        })
        .collect();
    let m = session.mapping();
    SceneState {
        seq,
        full,
        geometry,
        entities,
        selected: session.selected().map(|e| e.name.clone()),
        collision_pairs: scene.collision_pairs.clone(),
        mapping: MappingView {
            scale_level: m.scale_level,
            frame_mode: m.frame_mode,
            camera_pose: m.viewport.camera_pose,
            world_span_mm: m.viewport.world_span_mm,
        },
        clutch_engaged: session.clutch().engaged,
    }
}

/// What a view can know: the fold of every server message it has seen.
/// Two views that saw the same latest `full` state and the same messages
/// after it are equal, whatever they saw before.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViewModel {
    pub geometry: std::collections::BTreeMap<String, MeshGeometry>,
    pub scene: Option<SceneState>,
    pub stylus: Option<(Pose, bool)>,
    pub force_n: Option<[f64; 3]>,
    pub witness: Option<(Option<Witness>, bool)>,
    pub recording: Option<(bool, Option<RecordMode>, Vec<Waypoint>)>,
}

impl ViewModel {
    pub fn apply(&mut self, msg: &ServerMessage) {
        match msg {
            ServerMessage::SceneState(s) => {
                if s.full {
                    self.geometry = s.geometry.iter().map(|g| (g.id.clone(), g.clone())).collect();
                } else if self.scene.is_none() {
                    return;
                }
                self.scene = Some(SceneState {
                    seq: 0,
                    full: false,
                    geometry: Vec::new(),
                    ..s.clone()
                });
            }
            ServerMessage::Stylus { pose, button, .. } => self.stylus = Some((*pose, *button)),
            ServerMessage::Force { force_n, .. } => self.force_n = Some(*force_n),
            ServerMessage::Witness { witness, in_contact, .. } => self.witness = Some((*witness, *in_contact)),
            ServerMessage::Recording { active, mode, waypoints } => {
                self.recording = Some((*active, *mode, waypoints.clone()))
            }
        }
    }

    /// True once every mesh the scene references has geometry.
    pub fn complete(&self) -> bool {
        self.scene.as_ref().is_some_and(|s| {
            s.entities
                .iter()
                .flat_map(|e| &e.meshes)
                .all(|m| self.geometry.contains_key(&m.id))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BridgeEvent {
    Connected(u64),
    Command(u64, ClientMessage),
    Disconnected(u64),
}

type Outboxes = Arc<Mutex<Vec<(u64, Sender<String>)>>>;
type DisconnectHook = Arc<dyn Fn() + Send + Sync>;

/// Accepts view connections on a background thread. Stylus input goes
/// straight into `teleop` when one is attached; everything else is queued
/// as events for the session loop to drain.
pub struct BridgeServer {
    addr: SocketAddr,
    events: Receiver<BridgeEvent>,
    outboxes: Outboxes,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

struct Shared {
    events: Sender<BridgeEvent>,
    outboxes: Outboxes,
    stop: Arc<AtomicBool>,
    teleop: Option<Arc<AtomicCell<RawInput>>>,
    on_disconnect: Option<DisconnectHook>,
}

impl BridgeServer {
    pub fn bind(
        addr: impl ToSocketAddrs,
        teleop: Option<Arc<AtomicCell<RawInput>>>,
        on_disconnect: Option<DisconnectHook>,
    ) -> Result<Self, BridgeError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = channel::unbounded();
        let outboxes: Outboxes = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Shared {
            events: tx,
            outboxes: outboxes.clone(),
            stop: stop.clone(),
            teleop,
            on_disconnect,
        });
        let accept = std::thread::Builder::new()
            .name("ui-bridge".into())
            .spawn(move || accept_loop(listener, shared))?;
        Ok(BridgeServer {
            addr,
            events: rx,
            outboxes,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Drain everything that arrived since the last call.
    pub fn poll(&self) -> Vec<BridgeEvent> {
        self.events.try_iter().collect()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<BridgeEvent> {
        self.events.recv_timeout(timeout).ok()
    }

    pub fn client_count(&self) -> usize {
        self.outboxes.lock().expect("outbox lock").len()
    }

    pub fn broadcast(&self, msg: &ServerMessage) {
        let text = msg.to_json();
        for (_, tx) in self.outboxes.lock().expect("outbox lock").iter() {
            let _ = tx.send(text.clone());
        }
    }

    pub fn send_to(&self, client: u64, msg: &ServerMessage) {
        let text = msg.to_json();
        if let Some((_, tx)) = self.outboxes.lock().expect("outbox lock").iter().find(|(id, _)| *id == client) {
            let _ = tx.send(text);
        }
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let next_id = AtomicU64::new(1);
    let mut workers = Vec::new();
    while !shared.stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id.fetch_add(1, Ordering::Relaxed);
                let shared = shared.clone();
                workers.push(std::thread::spawn(move || {
                    if let Err(e) = serve_client(id, stream, &shared) {
                        log::debug!("bridge client {id}: {e}");
                    }
                    shared.outboxes.lock().expect("outbox lock").retain(|(i, _)| *i != id);
                    if let Some(hook) = &shared.on_disconnect {
                        hook();
                    }
                    let _ = shared.events.send(BridgeEvent::Disconnected(id));
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("bridge accept failed: {e}");
                std::thread::sleep(Duration::from_millis(5));
            }
        }
        workers.retain(|w: &JoinHandle<()>| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

fn serve_client(id: u64, stream: TcpStream, shared: &Shared) -> Result<(), BridgeError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => BridgeError::WebSocket(e),
        tungstenite::HandshakeError::Interrupted(_) => {
            BridgeError::Io(io::Error::new(io::ErrorKind::WouldBlock, "handshake interrupted"))
        }
    })?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(2)))?;
    let (tx, rx) = channel::unbounded();
    shared.outboxes.lock().expect("outbox lock").push((id, tx));
    let _ = shared.events.send(BridgeEvent::Connected(id));

    loop {
        if shared.stop.load(Ordering::Acquire) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        for text in rx.try_iter() {
            ws.send(Message::text(text))?;
        }
        match ws.read() {
            Ok(Message::Text(text)) => handle_text(id, text.as_str(), shared),
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                return Ok(());
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
            {
                ws.flush().or_else(ignore_would_block)?;
            }
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
    }
}

fn ignore_would_block(e: tungstenite::Error) -> Result<(), tungstenite::Error> {
    match e {
        tungstenite::Error::Io(ref io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(()),
        e => Err(e),
    }
}

fn handle_text(id: u64, text: &str, shared: &Shared) {
    let cmd = match ClientMessage::parse(text) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("bridge client {id}: {e}");
            return;
        }
    };
    if let Some(cell) = &shared.teleop {
        match cmd {
            ClientMessage::TeleopPose { pose } => {
                let mut raw = cell.load();
                raw.pose = pose;
                cell.store(raw);
                return;
            }
            ClientMessage::Button { pressed } => {
                let mut raw = cell.load();
                raw.button = pressed;
                cell.store(raw);
                return;
            }
            _ => {}
        }
    }
    let _ = shared.events.send(BridgeEvent::Command(id, cmd));
}

/// Blocking test and tooling client.
pub struct BridgeClient {
    ws: WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>,
}

impl BridgeClient {
    pub fn connect(addr: SocketAddr) -> Result<Self, BridgeError> {
        let (ws, _) = tungstenite::connect(format!("ws://{addr}/"))?;
        Ok(BridgeClient { ws })
    }

    pub fn send(&mut self, cmd: &ClientMessage) -> Result<(), BridgeError> {
        self.ws.send(Message::text(cmd.to_json()))?;
        Ok(())
    }

    /// Next server message, or `None` if nothing arrived within `timeout`.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<ServerMessage>, BridgeError> {
        if let tungstenite::stream::MaybeTlsStream::Plain(s) = self.ws.get_ref() {
            s.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        }
        loop {
            match self.ws.read() {
                Ok(Message::Text(text)) => return Ok(Some(serde_json::from_str(text.as_str())?)),
                Ok(Message::Close(_)) => return Ok(None),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
                {
                    return Ok(None)
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn close(mut self) -> Result<(), BridgeError> {
        self.ws.close(None)?;
        loop {
            match self.ws.read() {
                Ok(_) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
                Err(tungstenite::Error::Io(_)) => return Ok(()),
                Err(e) => return Err(e.into()),
            }
        }
    }
}
