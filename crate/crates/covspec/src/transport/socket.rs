//! Stream-socket fabric: codec frames over TCP, preceded by a 16-byte
//! hello (protocol version, vocab size, config hash) that both sides
//! exchange and compare before any protocol traffic.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::Endpoint;
use crate::comm::codec::{decode_message, encode_message, Message};
use crate::error::{CovError, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub const HELLO_BYTES: usize = 16;

/// Session hello: both sides must agree on all three fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    pub version: u32,
    pub vocab_size: u32,
    pub config_hash: u64,
}

impl Hello {
    pub fn new(vocab_size: u32, config_hash: u64) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            vocab_size,
            config_hash,
        }
    }

    fn to_bytes(self) -> [u8; HELLO_BYTES] {
        let mut out = [0u8; HELLO_BYTES];
        out[..4].copy_from_slice(&self.version.to_le_bytes());
        out[4..8].copy_from_slice(&self.vocab_size.to_le_bytes());
        out[8..].copy_from_slice(&self.config_hash.to_le_bytes());
        out
    }

    fn from_bytes(b: &[u8; HELLO_BYTES]) -> Self {
        Self {
            version: u32::from_le_bytes(b[..4].try_into().unwrap()),
            vocab_size: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            config_hash: u64::from_le_bytes(b[8..].try_into().unwrap()),
        }
    }
}

/// One side of a TCP session.
#[derive(Debug)]
pub struct SocketEndpoint {
    stream: TcpStream,
    /// Bytes received but not yet consumed as a complete frame.
    buf: Vec<u8>,
    timeout: Duration,
}

fn io_err(e: std::io::Error) -> CovError {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => CovError::TransportTimeout,
        ErrorKind::UnexpectedEof
        | ErrorKind::ConnectionReset
        | ErrorKind::ConnectionAborted
        | ErrorKind::BrokenPipe => CovError::SessionClosed,
        _ => CovError::Io(e),
    }
}

fn exchange_hello(stream: &mut TcpStream, ours: Hello) -> Result<()> {
    stream.write_all(&ours.to_bytes()).map_err(io_err)?;
    let mut raw = [0u8; HELLO_BYTES];
    stream.read_exact(&mut raw).map_err(io_err)?;
    let theirs = Hello::from_bytes(&raw);
    if theirs != ours {
        return Err(CovError::ConfigMismatch(format!(
            "hello mismatch: local version={} vocab={} hash={:#018x}, \
             peer version={} vocab={} hash={:#018x}",
            ours.version,
            ours.vocab_size,
            ours.config_hash,
            theirs.version,
            theirs.vocab_size,
            theirs.config_hash
        )));
    }
    Ok(())
}

impl SocketEndpoint {
    /// Device side: connects to the edge, retrying until `retry_for`
    /// elapses, then exchanges hellos.
    pub fn connect<A: ToSocketAddrs + Clone>(
        addr: A,
        hello: Hello,
        timeout: Duration,
        retry_for: Duration,
    ) -> Result<Self> {
        let deadline = Instant::now() + retry_for;
        let mut stream = loop {
            match TcpStream::connect(addr.clone()) {
                Ok(s) => break s,
                Err(e) => {
                    if Instant::now() >= deadline {
                        return Err(io_err(e));
                    }
                    std::thread::sleep(Duration::from_millis(50));
                }
            }
        };
        stream.set_nodelay(true).map_err(io_err)?;
        stream.set_read_timeout(Some(timeout)).map_err(io_err)?;
        exchange_hello(&mut stream, hello)?;
        Ok(Self {
            stream,
            buf: Vec::new(),
            timeout,
        })
    }

    /// Edge side: accepts one connection and exchanges hellos.
    pub fn accept(listener: &TcpListener, hello: Hello, timeout: Duration) -> Result<Self> {
        let (mut stream, _) = listener.accept().map_err(io_err)?;
        stream.set_nodelay(true).map_err(io_err)?;
        stream.set_read_timeout(Some(timeout)).map_err(io_err)?;
        exchange_hello(&mut stream, hello)?;
        Ok(Self {
            stream,
            buf: Vec::new(),
            timeout,
        })
    }

    /// Frame length implied by the buffered header, if fully present.
    fn buffered_frame_len(&self) -> Option<usize> {
        if self.buf.len() < 5 {
            return None;
        }
        let body = u32::from_le_bytes(self.buf[1..5].try_into().unwrap()) as usize;
        Some(5 + body)
    }

    fn try_decode(&mut self) -> Result<Option<Message>> {
        if let Some(total) = self.buffered_frame_len() {
            if self.buf.len() >= total {
                let frame: Vec<u8> = self.buf.drain(..total).collect();
                let (msg, used) = decode_message(&frame)?;
                debug_assert_eq!(used, total);
                return Ok(Some(msg));
            }
        }
        Ok(None)
    }
}

impl Endpoint for SocketEndpoint {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.stream
            .write_all(&encode_message(msg))
            .map_err(io_err)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message> {
        let deadline = Instant::now() + self.timeout;
        let mut chunk = [0u8; 4096];
        loop {
            if let Some(msg) = self.try_decode()? {
                return Ok(msg);
            }
            if Instant::now() >= deadline {
                return Err(CovError::TransportTimeout);
            }
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(CovError::SessionClosed),
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) => {
                    let mapped = io_err(e);
                    if !matches!(mapped, CovError::TransportTimeout) {
                        return Err(mapped);
                    }
                }
            }
        }
    }

    fn poll(&mut self) -> Result<Option<Message>> {
        if let Some(msg) = self.try_decode()? {
            return Ok(Some(msg));
        }
        self.stream.set_nonblocking(true).map_err(io_err)?;
        let mut chunk = [0u8; 4096];
        let outcome = loop {
            match self.stream.read(&mut chunk) {
                Ok(0) => break Err(CovError::SessionClosed),
                Ok(n) => {
                    self.buf.extend_from_slice(&chunk[..n]);
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => break Ok(()),
                Err(e) => break Err(io_err(e)),
            }
        };
        self.stream.set_nonblocking(false).map_err(io_err)?;
        self.stream
            .set_read_timeout(Some(self.timeout))
            .map_err(io_err)?;
        outcome?;
        self.try_decode()
    }
}
