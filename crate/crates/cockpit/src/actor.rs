//! One task per session owns the `Session`; everything else talks to it
//! through a channel consumed between ticks.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::sync::{broadcast, mpsc, oneshot};

use drivelm_core::agent::{exchange, AgentExchange, Backend};
use drivelm_core::memory::MemoryStore;
use drivelm_core::session::{CommandAck, Mode, PendingRequest, Session, SessionFrame, SessionReport};

use crate::api::{CommandReply, FeedbackReply, ModeReply, SessionState};

type Reply<T> = oneshot::Sender<Result<T, String>>;

pub(crate) enum Msg {
    Command { text: String, reply: Reply<CommandReply> },
    Deliver { seq: u64, exchange: Box<AgentExchange> },
    Takeover { reply: Reply<ModeReply> },
    Release { reply: Reply<ModeReply> },
    ManualSpeed { speed: f64, reply: Reply<ModeReply> },
    Feedback { text: String, reply: Reply<FeedbackReply> },
    Step { ticks: u64, reply: Reply<SessionFrame> },
    State { reply: Reply<SessionState> },
    Report { reply: Reply<SessionReport> },
    Finish { reply: Reply<SessionReport> },
}

/// Client side of a running session.
#[derive(Clone)]
pub struct SessionHandle {
    pub(crate) tx: mpsc::Sender<Msg>,
    pub(crate) frames: broadcast::Sender<SessionFrame>,
}

impl SessionHandle {
    pub(crate) async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Msg) -> Result<T, String> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).await.map_err(|_| "session closed".to_string())?;
        rx.await.map_err(|_| "session closed".to_string())?
    }

    pub fn subscribe(&self) -> broadcast::Receiver<SessionFrame> {
        self.frames.subscribe()
    }
}

struct Actor {
    session: Session,
    memory: Arc<Mutex<MemoryStore>>,
    backend: Arc<dyn Backend>,
    me: mpsc::WeakSender<Msg>,
    frames: broadcast::Sender<SessionFrame>,
}

pub(crate) fn spawn(
    session: Session,
    memory: Arc<Mutex<MemoryStore>>,
    backend: Arc<dyn Backend>,
    pacing: Option<Duration>,
) -> SessionHandle {
    let (tx, rx) = mpsc::channel(64);
    let (frames, _) = broadcast::channel(1024);
    let actor = Actor { session, memory, backend, me: tx.downgrade(), frames: frames.clone() };
    tokio::spawn(actor.run(rx, pacing));
    SessionHandle { tx, frames }
}

fn lock(m: &Mutex<MemoryStore>) -> std::sync::MutexGuard<'_, MemoryStore> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Actor {
    async fn run(mut self, mut rx: mpsc::Receiver<Msg>, pacing: Option<Duration>) {
        let mut ticker = pacing.map(|d| {
            let mut t = tokio::time::interval(d);
            t.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            t
        });
        loop {
            let paced = ticker.is_some() && !self.session.is_finished();
            tokio::select! {
                msg = rx.recv() => match msg {
                    Some(m) => self.handle(m),
                    None => break,
                },
                _ = async { ticker.as_mut().expect("paced").tick().await }, if paced => {
                    if let Err(e) = self.step() {
                        eprintln!("session {}: {e}", self.session.id);
                    }
                }
            }
        }
    }

    fn step(&mut self) -> Result<SessionFrame, String> {
        let frame = self.session.tick().map_err(|e| e.to_string())?;
        let _ = self.frames.send(frame.clone());
        Ok(frame)
    }

    /// Runs the transport off the stepping task and posts the result back.
    fn send_off(&self, req: PendingRequest) {
        let Some(tx) = self.me.upgrade() else { return };
        let backend = self.backend.clone();
        tokio::spawn(async move {
            let seq = req.seq;
            let ex = tokio::task::spawn_blocking(move || exchange(backend.as_ref(), &req.bundle)).await;
            if let Ok(ex) = ex {
                let _ = tx.send(Msg::Deliver { seq, exchange: Box::new(ex) }).await;
            }
        });
    }

    fn mode(&self) -> ModeReply {
        ModeReply { mode: self.session.mode(), takeovers: self.session.takeovers() }
    }

    fn state(&self) -> SessionState {
        SessionState {
            id: self.session.id.clone(),
            user: self.session.user.clone(),
            scenario: self.session.scenario().clone(),
            frame: self.session.frame(),
            log: self.session.log().to_vec(),
        }
    }

    fn handle(&mut self, msg: Msg) {
        match msg {
            Msg::Command { text, reply } => {
                let ack = {
                    let memory = lock(&self.memory);
                    self.session.submit_command(&text, &memory)
                };
                let out = match ack {
                    Ok(CommandAck::Dispatched { request }) => {
                        let seq = request.seq;
                        self.send_off(request);
                        Ok(CommandReply::Dispatched { seq })
                    }
                    Ok(CommandAck::Queued) => Ok(CommandReply::Queued),
                    Err(e) => Err(e.to_string()),
                };
                let _ = reply.send(out);
            }
            Msg::Deliver { seq, exchange } => {
                let next = {
                    let memory = lock(&self.memory);
                    self.session.deliver(seq, *exchange, &memory)
                };
                match next {
                    Ok(Some(req)) => self.send_off(req),
                    Ok(None) => {}
                    Err(e) => eprintln!("session {}: {e}", self.session.id),
                }
            }
            Msg::Takeover { reply } => {
                let out = self.session.takeover().map(|_| self.mode()).map_err(|e| e.to_string());
                let _ = reply.send(out);
            }
            Msg::Release { reply } => {
                self.session.release();
                let _ = reply.send(Ok(self.mode()));
            }
            Msg::ManualSpeed { speed, reply } => {
                let out = if self.session.mode() == Mode::TakenOver {
                    self.session.set_manual_speed(speed).map(|_| self.mode()).map_err(|e| e.to_string())
                } else {
                    Err("manual speed needs a takeover first".into())
                };
                let _ = reply.send(out);
            }
            Msg::Feedback { text, reply } => {
                let out = {
                    let mut memory = lock(&self.memory);
                    self.session.submit_feedback(&text, &mut memory)
                };
                let _ = reply.send(out.map(|record| FeedbackReply { record }).map_err(|e| e.to_string()));
            }
            Msg::Step { ticks, reply } => {
                let mut out = Ok(self.session.frame());
                for _ in 0..ticks {
                    if self.session.is_finished() {
                        break;
                    }
                    out = self.step();
                    if out.is_err() {
                        break;
                    }
                }
                let _ = reply.send(out);
            }
            Msg::State { reply } => {
                let _ = reply.send(Ok(self.state()));
            }
            Msg::Report { reply } => {
                let _ = reply.send(Ok(self.session.report()));
            }
            Msg::Finish { reply } => {
                let out = {
                    let mut memory = lock(&self.memory);
                    self.session.finish_trip(&mut memory)
                };
                let _ = self.frames.send(self.session.frame());
                let _ = reply.send(out.map(|_| self.session.report()).map_err(|e| e.to_string()));
            }
        }
    }
}
