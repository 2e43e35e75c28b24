//! Control-plane transports between a device agent and the store.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use crate::store::server::{lock, SharedStore};
use crate::store::wire::{Request, Response, Session};
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("store unreachable: {0}")]
    Unreachable(String),
    #[error("connection cut: {0}")]
    Disconnected(String),
    #[error("malformed reply: {0}")]
    Protocol(String),
}

/// One request/response exchange with the store. The returned time is the
/// round trip in simulated time.
pub trait StoreTransport: Send {
    fn request(&mut self, req: &Request) -> Result<(Response, SimTime), TransportError>;

    /// Drops the current session. The store tears down anything it holds.
    fn reset(&mut self);
}

/// Faults a [`LocalTransport`] can inject.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Faults {
    /// Every request fails before reaching the store.
    pub store_down: bool,
    /// The connection drops right after the store handles this many
    /// requests; the reply is lost. Fires once.
    pub cut_after: Option<usize>,
}

/// In-process transport over a shared store, with a fixed simulated round
/// trip per request.
pub struct LocalTransport {
    store: SharedStore,
    session: Option<Session>,
    next_session: u64,
    handled: usize,
    rtt: SimTime,
    faults: Faults,
}

impl LocalTransport {
    pub fn new(store: SharedStore) -> Self {
        LocalTransport {
            store,
            session: None,
            next_session: 1,
            handled: 0,
            rtt: SimTime::from_millis(1),
            faults: Faults::default(),
        }
    }

    pub fn with_rtt(mut self, rtt: SimTime) -> Self {
        self.rtt = rtt;
        self
    }

    pub fn with_faults(mut self, faults: Faults) -> Self {
        self.faults = faults;
        self
    }

    pub fn faults_mut(&mut self) -> &mut Faults {
        &mut self.faults
    }

    pub fn set_rtt(&mut self, rtt: SimTime) {
        self.rtt = rtt;
    }
}

impl StoreTransport for LocalTransport {
    fn request(&mut self, req: &Request) -> Result<(Response, SimTime), TransportError> {
        if self.faults.store_down {
            return Err(TransportError::Unreachable("connection refused".into()));
        }
        let mut store = lock(&self.store);
        let session = self.session.get_or_insert_with(|| {
            let s = Session::new(format!("local-{}", self.next_session));
            self.next_session += 1;
            s
        });
        let resp = session.handle(&mut store, req.clone());
        self.handled += 1;
        if self.faults.cut_after.is_some_and(|n| self.handled >= n) {
            self.faults.cut_after = None;
            if let Some(mut s) = self.session.take() {
                s.abort(&mut store, "connection cut");
            }
            return Err(TransportError::Disconnected("reply lost".into()));
        }
        Ok((resp, self.rtt))
    }

    fn reset(&mut self) {
        if let Some(mut s) = self.session.take() {
            s.abort(&mut lock(&self.store), "client reset");
        }
    }
}

/// Newline-delimited JSON over TCP. Round trips are measured on the wall
/// clock.
pub struct TcpTransport {
    addr: SocketAddr,
    timeout: Duration,
    conn: Option<(BufReader<TcpStream>, TcpStream)>,
}

impl TcpTransport {
    pub fn new(addr: SocketAddr, timeout: Duration) -> Self {
        TcpTransport { addr, timeout, conn: None }
    }

    fn exchange(&mut self, line: &str) -> Result<String, TransportError> {
        if self.conn.is_none() {
            let s = TcpStream::connect_timeout(&self.addr, self.timeout)
                .map_err(|e| TransportError::Unreachable(e.to_string()))?;
            s.set_read_timeout(Some(self.timeout))
                .and_then(|_| s.set_nodelay(true))
                .map_err(|e| TransportError::Unreachable(e.to_string()))?;
            let w = s.try_clone().map_err(|e| TransportError::Unreachable(e.to_string()))?;
            self.conn = Some((BufReader::new(s), w));
        }
        let (reader, writer) = self.conn.as_mut().expect("connected above");
        writeln!(writer, "{line}")
            .and_then(|_| writer.flush())
            .map_err(|e| TransportError::Disconnected(e.to_string()))?;
        let mut reply = String::new();
        match reader.read_line(&mut reply) {
            Ok(0) => Err(TransportError::Disconnected("closed by store".into())),
            Ok(_) => Ok(reply),
            Err(e) => Err(TransportError::Disconnected(e.to_string())),
        }
    }
}

impl StoreTransport for TcpTransport {
    fn request(&mut self, req: &Request) -> Result<(Response, SimTime), TransportError> {
        let line = serde_json::to_string(req).map_err(|e| TransportError::Protocol(e.to_string()))?;
        let started = Instant::now();
        let r = self.exchange(&line);
        let rtt = SimTime::from_nanos(started.elapsed().as_nanos() as u64);
        match r {
            Ok(reply) => serde_json::from_str(reply.trim())
                .map(|resp| (resp, rtt))
                .map_err(|e| TransportError::Protocol(e.to_string())),
            Err(e) => {
                self.conn = None;
                Err(e)
            }
        }
    }

    fn reset(&mut self) {
        self.conn = None;
    }
}
