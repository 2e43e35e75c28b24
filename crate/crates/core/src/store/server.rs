//! TCP front end: one thread per connection, one [`Session`] per thread, all
//! sessions serialized through the store mutex.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::Instant;

use crate::time::SimTime;

use super::wire::{Response, Session};
use super::Store;

/// Longest request line accepted.
pub const MAX_LINE: u64 = 64 * 1024;

pub type SharedStore = Arc<Mutex<Store>>;

pub fn lock(store: &SharedStore) -> MutexGuard<'_, Store> {
    store.lock().unwrap_or_else(|p| p.into_inner())
}

pub struct Server {
    listener: TcpListener,
    store: SharedStore,
    started: Instant,
    base: SimTime,
    sessions: Arc<AtomicU64>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, store: SharedStore) -> io::Result<Server> {
        let listener = TcpListener::bind(addr)?;
        let base = lock(&store).now();
        Ok(Server { listener, store, started: Instant::now(), base, sessions: Arc::new(AtomicU64::new(1)) })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the listener fails.
    pub fn run(self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let store = self.store.clone();
            let id = self.sessions.fetch_add(1, Ordering::Relaxed);
            let (started, base) = (self.started, self.base);
            thread::spawn(move || {
                let _ = serve_connection(stream, store, id, started, base);
            });
        }
        Ok(())
    }

    pub fn spawn(self) -> thread::JoinHandle<io::Result<()>> {
        thread::spawn(move || self.run())
    }
}

fn serve_connection(stream: TcpStream, store: SharedStore, id: u64, started: Instant, base: SimTime) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut session = Session::new(id.to_string());
    let mut line = String::new();
    let outcome = loop {
        line.clear();
        match (&mut reader).take(MAX_LINE).read_line(&mut line) {
            Ok(0) => break Ok(()),
            Ok(_) if !line.ends_with('\n') && line.len() as u64 >= MAX_LINE => {
                let resp = Response::ProtocolError { reason: "line too long".into() };
                let _ = writeln!(writer, "{}", resp.to_line());
                break Err("line too long".to_string());
            }
            Ok(_) => {
                let trimmed = line.trim();
                if trimmed.is_empty() {
                    continue;
                }
                let reply = {
                    let mut s = lock(&store);
                    // Simulated time follows the wall clock while serving.
                    let t = base + SimTime::from_nanos(started.elapsed().as_nanos() as u64);
                    if t > s.now() {
                        s.advance_to(t);
                    }
                    session.handle_line(&mut s, trimmed)
                };
                if let Err(e) = writeln!(writer, "{reply}").and_then(|_| writer.flush()) {
                    break Err(e.to_string());
                }
            }
            Err(e) => break Err(e.to_string()),
        }
    };
    let mut s = lock(&store);
    match outcome {
        Ok(()) if session.instances().next().is_none() => {}
        Ok(()) => session.abort(&mut s, "client disconnected"),
        Err(reason) => session.abort(&mut s, &reason),
    }
    Ok(())
}
