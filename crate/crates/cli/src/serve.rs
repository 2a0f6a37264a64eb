//! Live simulation behind a websocket.
//!
//! The simulation runs on its own thread at wall-clock pace and never touches
//! a socket. Each connection has a thread that forwards client messages to
//! the simulation over a channel and writes back whatever the simulation
//! publishes to it, keeping only the newest state when it falls behind.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use hsa_core::harness::{CommandSpec, ControllerMode, Scenario, Simulation};
use hsa_core::linalg::Vector;
use tungstenite::{Message, WebSocket};

use crate::protocol::{parse_frame, ClientMessage, ConfigEcho, ServerMessage, StateMessage};
use crate::CliError;

/// Poll interval of connection threads.
const POLL: Duration = Duration::from_millis(5);

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub addr: String,
    /// Upper bound on state messages per second.
    pub max_rate_hz: f64,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8765".into(),
            max_rate_hz: 60.0,
            speed: 1.0,
        }
    }
}

struct Request {
    msg: ClientMessage,
    reply: Sender<ServerMessage>,
}

enum SimInput {
    Subscribe(Sender<ServerMessage>),
    Client(Request),
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        self.join();
    }
}

/// Binds, then starts the simulation and accept threads. The scenario's
/// command is replaced by live stylus input.
pub fn start(scenario: &Scenario, opts: &ServeOptions) -> Result<ServerHandle, CliError> {
    if !(opts.max_rate_hz > 0.0 && opts.speed > 0.0) {
        return Err(CliError::Usage("rate and speed must be positive".into()));
    }
    let mut scenario = scenario.clone();
    scenario.command = CommandSpec::Live;
    let (live_tx, live_rx) = mpsc::channel();
    let sim = Simulation::new(&scenario, Some(live_rx))?;

    let listener = TcpListener::bind(&opts.addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (in_tx, in_rx) = mpsc::channel();

    let sim_thread = {
        let stop = stop.clone();
        let opts = opts.clone();
        thread::Builder::new()
            .name("hsa-sim".into())
            .spawn(move || sim_loop(sim, live_tx, in_rx, &opts, &stop))?
    };
    let accept_thread = {
        let stop = stop.clone();
        thread::Builder::new()
            .name("hsa-accept".into())
            .spawn(move || accept_loop(listener, in_tx, &stop))?
    };
    Ok(ServerHandle {
        addr,
        stop,
        threads: vec![sim_thread, accept_thread],
    })
}

fn hello(sim: &Simulation) -> ServerMessage {
    ServerMessage::Hello {
        scenario: Box::new(sim.scenario().clone()),
        config: ConfigEcho::of(sim.scenario()),
    }
}

fn broadcast(subs: &mut Vec<Sender<ServerMessage>>, msg: &ServerMessage) {
    subs.retain(|s| s.send(msg.clone()).is_ok());
}

/// Applies one client request. Problems go back to the sender only.
fn handle(sim: &mut Simulation, live: &Sender<Vector>, req: Request, stopped: &mut bool) {
    let warn = |m: String| {
        let _ = req.reply.send(ServerMessage::warning(m));
    };
    match req.msg {
        ClientMessage::Stylus { disp_cm } => {
            let dim = sim.scenario().dim;
            match Vector::from_slice(&disp_cm) {
                Ok(v) if v.dim() == dim && v.is_finite() => {
                    let _ = live.send(v);
                }
                _ => warn(format!("stylus needs {dim} finite components, got {disp_cm:?}")),
            }
        }
        ClientMessage::Param { name, value } => {
            if let Err(e) = sim.set_param(&name, value) {
                warn(e.to_string());
            }
        }
        ClientMessage::Mode { controller } => match ControllerMode::parse(&controller) {
            Some(mode) => sim.set_mode(mode),
            None => warn(format!("unknown controller {controller:?}")),
        },
        ClientMessage::Reset => match sim.reset() {
            Ok(()) => *stopped = false,
            Err(e) => warn(e.to_string()),
        },
    }
}

fn sim_loop(
    mut sim: Simulation,
    live: Sender<Vector>,
    inbox: Receiver<SimInput>,
    opts: &ServeOptions,
    stop: &AtomicBool,
) {
    let tick = Duration::from_secs_f64(sim.scenario().dt / opts.speed);
    let min_gap = Duration::from_secs_f64(1.0 / opts.max_rate_hz);
    let mut subs: Vec<Sender<ServerMessage>> = Vec::new();
    let mut stopped = false;
    let mut last_pub: Option<Instant> = None;
    let mut next = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        while let Ok(input) = inbox.try_recv() {
            match input {
                SimInput::Subscribe(tx) => {
                    if tx.send(hello(&sim)).is_ok() {
                        subs.push(tx);
                    }
                }
                SimInput::Client(req) => handle(&mut sim, &live, req, &mut stopped),
            }
        }
        if !stopped {
            if sim.is_finished() {
                stopped = true;
                let msg = ServerMessage::Stopped {
                    t: sim.time(),
                    reason: "duration reached".into(),
                };
                broadcast(&mut subs, &msg);
            } else {
                let (row, err) = sim.step();
                let due = last_pub.is_none_or(|t| t.elapsed() >= min_gap);
                if due || err.is_some() {
                    let state = StateMessage::new(&row, ConfigEcho::of(sim.scenario()));
                    broadcast(&mut subs, &ServerMessage::State(Box::new(state)));
                    last_pub = Some(Instant::now());
                }
                if let Some(e) = err {
                    stopped = true;
                    let msg = ServerMessage::Stopped {
                        t: row.t,
                        reason: e.to_string(),
                    };
                    broadcast(&mut subs, &msg);
                }
            }
        }
        next += tick;
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        } else {
            // Fell behind; do not try to catch up in a burst.
            next = now;
        }
    }
}

fn accept_loop(listener: TcpListener, inbox: Sender<SimInput>, stop: &Arc<AtomicBool>) {
    let mut conns: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let inbox = inbox.clone();
                let stop = stop.clone();
                let spawned = thread::Builder::new()
                    .name("hsa-conn".into())
                    .spawn(move || {
                        if let Err(e) = connection(stream, &inbox, &stop) {
                            eprintln!("connection closed: {e}");
                        }
                    });
                match spawned {
                    Ok(h) => conns.push(h),
                    Err(e) => eprintln!("cannot spawn connection thread: {e}"),
                }
                conns.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                eprintln!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    for c in conns {
        let _ = c.join();
    }
}

fn send_line(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> Result<(), tungstenite::Error> {
    ws.send(Message::text(msg.to_line()))
}

fn connection(stream: TcpStream, inbox: &Sender<SimInput>, stop: &AtomicBool) -> Result<(), CliError> {
    stream.set_nonblocking(false)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| CliError::Usage(format!("handshake failed: {e}")))?;
    ws.get_mut().set_read_timeout(Some(POLL))?;
    let (out_tx, out_rx) = mpsc::channel();
    if inbox.send(SimInput::Subscribe(out_tx.clone())).is_err() {
        return Ok(());
    }
    loop {
        if stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                for parsed in parse_frame(text.as_str()) {
                    match parsed {
                        Ok(msg) => {
                            let req = Request {
                                msg,
                                reply: out_tx.clone(),
                            };
                            if inbox.send(SimInput::Client(req)).is_err() {
                                return Ok(());
                            }
                        }
                        Err(w) => send_line(&mut ws, &ServerMessage::warning(w))?,
                    }
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                return Ok(())
            }
            Err(e) => return Err(e.into()),
        }
        // Everything in order, except that only the newest pending state goes out.
        let pending: Vec<ServerMessage> = out_rx.try_iter().collect();
        let last_state = pending
            .iter()
            .rposition(|m| matches!(m, ServerMessage::State(_)));
        for (i, msg) in pending.iter().enumerate() {
            if matches!(msg, ServerMessage::State(_)) && Some(i) != last_state {
                continue;
            }
            send_line(&mut ws, msg)?;
        }
    }
}
