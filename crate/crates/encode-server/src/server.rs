//! TCP front end for a [`BatchService`]: one thread per connection, one
//! request in flight per connection.

use std::io::BufWriter;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::protocol::{read_message, write_message, Message, ERR_BAD_REQUEST};
use crate::service::BatchService;

#[derive(Clone, Debug, Default)]
pub struct ServerOptions {
    /// Artificial latency before each reply (slow-server fixture).
    pub delay: Duration,
}

pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Display, service: Arc<BatchService>, opts: ServerOptions) -> Result<Self> {
        let listener = TcpListener::bind(&addr).map_err(|source| Error::Bind { addr: addr.to_string(), source })?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let (svc, opts, flag) = (service.clone(), opts.clone(), flag.clone());
                std::thread::spawn(move || serve_connection(conn, &svc, &opts, &flag));
            }
        });
        Ok(Self { addr: local, stop, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting; open connections finish their current request.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Blocks the caller until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

fn serve_connection(conn: TcpStream, svc: &BatchService, opts: &ServerOptions, stop: &AtomicBool) {
    let _ = conn.set_nodelay(true);
    let Ok(write_half) = conn.try_clone() else { return };
    let mut reader = conn;
    let mut writer = BufWriter::new(write_half);
    loop {
        let reply = match read_message(&mut reader) {
            Ok(Message::Request { step, rank }) => match svc.batch(step, rank) {
                Ok(b) => Message::Batch(b),
                Err(e) => Message::Error { code: e.code(), message: e.to_string() },
            },
            Ok(_) => Message::Error { code: ERR_BAD_REQUEST, message: "expected a batch request".into() },
            Err(Error::Protocol(e)) => {
                let _ = write_message(&mut writer, &Message::Error { code: ERR_BAD_REQUEST, message: e.to_string() });
                return;
            }
            Err(_) => return,
        };
        if stop.load(Ordering::SeqCst) {
            return;
        }
        if !opts.delay.is_zero() {
            std::thread::sleep(opts.delay);
        }
        if write_message(&mut writer, &reply).is_err() {
            return;
        }
    }
}
