//! Loopback publish service.
//!
//! One request per line, one response per line, both canonical text.
//! Connection handlers forward requests over a channel to a single publisher
//! thread that owns the gate, so decisions are totally ordered.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::egress::{EgressMediator, EgressRequest, MediationOutcome};
use crate::ekm::{Gate, GateState, PublishOutcome};
use crate::eva::ActionProposal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DaemonRequest {
    Publish { action: ActionProposal },
    Egress { request: EgressRequest },
    Status,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DaemonResponse {
    Outcome { outcome: PublishOutcome },
    Mediation { outcome: MediationOutcome },
    Status { state: GateState },
    Bye,
    Error { message: String },
}

type Job = (DaemonRequest, mpsc::Sender<DaemonResponse>);

/// Called after every request the publisher handles, e.g. to persist state.
pub type AfterRequest = Box<dyn FnMut(&Gate) + Send>;

pub struct Daemon {
    listener: TcpListener,
}

impl Daemon {
    pub fn bind(addr: &str) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until a `Shutdown` request arrives. Returns the gate.
    pub fn serve(
        self,
        gate: Gate,
        mediator: EgressMediator,
        mut after: Option<AfterRequest>,
    ) -> io::Result<Gate> {
        let (tx, rx) = mpsc::channel::<Job>();
        // Handlers report here once a shutdown reply is on the wire.
        let (written_tx, written_rx) = mpsc::channel::<()>();
        let addr = self.listener.local_addr()?;
        let listener = self.listener;
        let stopping = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stopping);
        let acceptor = thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let tx = tx.clone();
                let written = written_tx.clone();
                thread::spawn(move || {
                    if handle_connection(stream, tx) {
                        let _ = written.send(());
                    }
                });
            }
        });

        let mut gate = gate;
        let mut mediator = mediator;
        for (req, reply) in rx.iter() {
            let stop = matches!(req, DaemonRequest::Shutdown);
            let resp = match req {
                DaemonRequest::Publish { action } => DaemonResponse::Outcome {
                    outcome: gate.publish(&action),
                },
                DaemonRequest::Egress { request } => DaemonResponse::Mediation {
                    outcome: mediator.mediate(&mut gate, &request),
                },
                DaemonRequest::Status => DaemonResponse::Status {
                    state: gate.state(),
                },
                DaemonRequest::Shutdown => DaemonResponse::Bye,
            };
            if let Some(f) = &mut after {
                f(&gate);
            }
            let _ = reply.send(resp);
            if stop {
                stopping.store(true, Ordering::SeqCst);
                // Wake the acceptor so it observes the stop.
                let _ = TcpStream::connect(addr);
                let _ = written_rx.recv_timeout(Duration::from_secs(5));
                break;
            }
        }
        let _ = acceptor.join();
        Ok(gate)
    }
}

/// Serves one connection; returns true once a shutdown was served.
fn handle_connection(stream: TcpStream, tx: mpsc::Sender<Job>) -> bool {
    let Ok(read_half) = stream.try_clone() else {
        return false;
    };
    let mut writer = stream;
    let reader = BufReader::new(read_half);
    for line in reader.lines() {
        let Ok(line) = line else { return false };
        if line.trim().is_empty() {
            continue;
        }
        let (resp, stop) = match serde_json::from_str::<DaemonRequest>(&line) {
            Ok(req) => {
                let stop = matches!(req, DaemonRequest::Shutdown);
                let (rtx, rrx) = mpsc::channel();
                if tx.send((req, rtx)).is_err() {
                    return true;
                }
                match rrx.recv() {
                    Ok(r) => (r, stop),
                    Err(_) => return true,
                }
            }
            Err(e) => (
                DaemonResponse::Error {
                    message: format!("bad request: {e}"),
                },
                false,
            ),
        };
        let mut out = canonical::to_canonical_string(&resp)
            .unwrap_or_else(|e| format!("{{\"type\":\"error\",\"message\":\"{e}\"}}"));
        out.push('\n');
        if writer.write_all(out.as_bytes()).is_err() {
            return stop;
        }
        if stop {
            return true;
        }
    }
    false
}

pub struct DaemonClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl DaemonClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    pub fn request(&mut self, req: &DaemonRequest) -> io::Result<DaemonResponse> {
        let mut line = canonical::to_canonical_string(req)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        let mut resp = String::new();
        if self.reader.read_line(&mut resp)? == 0 {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "daemon closed the connection",
            ));
        }
        serde_json::from_str(&resp).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::Timestamp;
    use crate::crypto::SigningKey;
    use crate::ekm::GateParts;
    use crate::genesis::{declare_genesis, HardwareIdentity};
    use crate::iepl::{fixtures::trial_charter, seal};
    use crate::ilk::Ilk;

    #[test]
    fn serialized_publishing_over_loopback() {
        let policy = trial_charter();
        let hw = HardwareIdentity::from_parts("h", b"s");
        let lock = declare_genesis(
            &hw,
            seal(&policy).unwrap(),
            &SigningKey::derive("auctor"),
            Timestamp::from_unix(0),
        );
        let gate = Gate::new(GateParts::new(
            policy,
            lock,
            hw,
            SigningKey::derive("unit"),
            Ilk::in_memory(),
        ))
        .unwrap();
        let daemon = Daemon::bind("127.0.0.1:0").unwrap();
        let addr = daemon.local_addr().unwrap();
        let server = thread::spawn(move || {
            daemon
                .serve(gate, EgressMediator::new(Default::default(), 3), None)
                .unwrap()
        });

        let mut c = DaemonClient::connect(addr).unwrap();
        for i in 0..5 {
            let r = c
                .request(&DaemonRequest::Publish {
                    action: ActionProposal::new(&format!("a{i}"), "summarize_document", b"x"),
                })
                .unwrap();
            assert!(matches!(
                r,
                DaemonResponse::Outcome {
                    outcome: PublishOutcome::Committed { .. }
                }
            ));
        }
        let DaemonResponse::Status { state } = c.request(&DaemonRequest::Status).unwrap() else {
            panic!()
        };
        assert_eq!(state.decisions_count, 5);
        assert_eq!(
            c.request(&DaemonRequest::Shutdown).unwrap(),
            DaemonResponse::Bye
        );
        let gate = server.join().unwrap();
        assert_eq!(gate.ilk().entries().len(), 5);
    }
}
