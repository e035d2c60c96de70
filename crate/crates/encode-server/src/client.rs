use std::io::BufWriter;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::protocol::{read_message, write_message, FeatureBatch, Message};

/// Connection to a batch server. After a timeout or broken stream the
/// connection is dropped and the next request reconnects, so a late reply
/// can never be read as the answer to a later request.
pub struct Client {
    addr: SocketAddr,
    timeout: Duration,
    conn: Option<(TcpStream, BufWriter<TcpStream>)>,
}

impl Client {
    pub fn new(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::Config("address resolves to nothing".into()))?;
        Ok(Self { addr, timeout, conn: None })
    }

    fn connection(&mut self) -> Result<&mut (TcpStream, BufWriter<TcpStream>)> {
        if self.conn.is_none() {
            let s = TcpStream::connect_timeout(&self.addr, self.timeout).map_err(|e| match e.kind() {
                std::io::ErrorKind::TimedOut => Error::Timeout,
                std::io::ErrorKind::ConnectionRefused | std::io::ErrorKind::ConnectionReset => Error::Closed,
                _ => Error::Io(e),
            })?;
            s.set_read_timeout(Some(self.timeout))?;
            s.set_write_timeout(Some(self.timeout))?;
            s.set_nodelay(true)?;
            let w = BufWriter::new(s.try_clone()?);
            self.conn = Some((s, w));
        }
        Ok(self.conn.as_mut().expect("just connected"))
    }

    pub fn request_batch(&mut self, step: u64, rank: u32) -> Result<FeatureBatch> {
        let out = self.exchange(step, rank);
        if out.is_err() {
            self.conn = None;
        }
        match out? {
            Message::Batch(b) if b.step == step && b.rank == rank => Ok(b),
            Message::Batch(b) => Err(Error::Contract(format!(
                "asked for step {step} rank {rank}, received step {} rank {}",
                b.step, b.rank
            ))),
            Message::Error { code, message } => Err(Error::Server { code, message }),
            Message::Request { .. } => Err(Error::Contract("server sent a request frame".into())),
        }
    }

    fn exchange(&mut self, step: u64, rank: u32) -> Result<Message> {
        let (r, w) = self.connection()?;
        write_message(w, &Message::Request { step, rank }).map_err(|e| match e.kind() {
            std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset => Error::Closed,
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => Error::Timeout,
            _ => Error::Io(e),
        })?;
        read_message(r)
    }
}
