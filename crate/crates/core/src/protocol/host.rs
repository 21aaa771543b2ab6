use std::io::{BufRead, BufReader, Read, Write};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{encode, Command, ProtocolError, Verb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("link closed")]
    Closed,
}

/// A bidirectional line link. Lines are sent with their `\n` and received
/// without it.
pub trait Transport: Send {
    fn send(&mut self, line: &[u8]) -> Result<(), TransportError>;
    /// Block for the next line; `None` waits indefinitely.
    fn recv(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError>;
    fn try_recv(&mut self) -> Result<Option<Vec<u8>>, TransportError>;
}

/// One end of an in-memory line pipe.
pub struct PipeEnd {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn pipe() -> (PipeEnd, PipeEnd) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (PipeEnd { tx: a_tx, rx: a_rx }, PipeEnd { tx: b_tx, rx: b_rx })
}

fn strip_newline(mut l: Vec<u8>) -> Vec<u8> {
    if l.last() == Some(&b'\n') {
        l.pop();
    }
    if l.last() == Some(&b'\r') {
        l.pop();
    }
    l
}

fn recv_channel(rx: &Receiver<Vec<u8>>, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError> {
    match timeout {
        None => rx.recv().map_err(|_| TransportError::Closed),
        Some(t) => rx.recv_timeout(t).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout,
            RecvTimeoutError::Disconnected => TransportError::Closed,
        }),
    }
}

fn try_channel(rx: &Receiver<Vec<u8>>) -> Result<Option<Vec<u8>>, TransportError> {
    match rx.try_recv() {
        Ok(l) => Ok(Some(l)),
        Err(TryRecvError::Empty) => Ok(None),
        Err(TryRecvError::Disconnected) => Err(TransportError::Closed),
    }
}

impl Transport for PipeEnd {
    fn send(&mut self, line: &[u8]) -> Result<(), TransportError> {
        self.tx.send(line.to_vec()).map_err(|_| TransportError::Closed)
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError> {
        recv_channel(&self.rx, timeout).map(strip_newline)
    }

    fn try_recv(&mut self) -> Result<Option<Vec<u8>>, TransportError> {
        try_channel(&self.rx).map(|o| o.map(strip_newline))
    }
}

/// Line framing over any byte stream (serial port, socket, child stdio).
pub struct StreamTransport<W: Write + Send> {
    writer: W,
    rx: Receiver<Vec<u8>>,
}

impl<W: Write + Send> StreamTransport<W> {
    pub fn new<R: Read + Send + 'static>(reader: R, writer: W) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut r = BufReader::new(reader);
            loop {
                let mut buf = Vec::new();
                match r.read_until(b'\n', &mut buf) {
                    Ok(0) | Err(_) => return,
                    Ok(_) => {
                        if tx.send(buf).is_err() {
                            return;
                        }
                    }
                }
            }
        });
        Self { writer, rx }
    }
}

impl<W: Write + Send> Transport for StreamTransport<W> {
    fn send(&mut self, line: &[u8]) -> Result<(), TransportError> {
        self.writer
            .write_all(line)
            .and_then(|_| self.writer.flush())
            .map_err(|_| TransportError::Closed)
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError> {
        recv_channel(&self.rx, timeout).map(strip_newline)
    }

    fn try_recv(&mut self) -> Result<Option<Vec<u8>>, TransportError> {
        try_channel(&self.rx).map(|o| o.map(strip_newline))
    }
}

/// Wraps a transport and silently discards chosen received lines
/// (0-based over all received lines).
pub struct LossyTransport<T: Transport> {
    inner: T,
    drop: Vec<usize>,
    seen: usize,
}

impl<T: Transport> LossyTransport<T> {
    pub fn new(inner: T, drop: Vec<usize>) -> Self {
        Self { inner, drop, seen: 0 }
    }
}

impl<T: Transport> Transport for LossyTransport<T> {
    fn send(&mut self, line: &[u8]) -> Result<(), TransportError> {
        self.inner.send(line)
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError> {
        loop {
            let l = self.inner.recv(timeout)?;
            self.seen += 1;
            if !self.drop.contains(&(self.seen - 1)) {
                return Ok(l);
            }
        }
    }

    fn try_recv(&mut self) -> Result<Option<Vec<u8>>, TransportError> {
        while let Some(l) = self.inner.try_recv()? {
            self.seen += 1;
            if !self.drop.contains(&(self.seen - 1)) {
                return Ok(Some(l));
            }
        }
        Ok(None)
    }
}

/// `<µs> > line` for host output, `<µs> < line` for device output.
#[derive(Debug, Clone)]
pub struct Transcript {
    start: Instant,
    lines: Arc<Mutex<Vec<String>>>,
}

impl Default for Transcript {
    fn default() -> Self {
        Self::new()
    }
}

impl Transcript {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
            lines: Arc::default(),
        }
    }

    fn log(&self, dir: char, line: &[u8]) {
        let us = self.start.elapsed().as_micros();
        let text = String::from_utf8_lossy(line);
        self.lines
            .lock()
            .expect("transcript lock")
            .push(format!("{us} {dir} {}", text.trim_end_matches('\n')));
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().expect("transcript lock").clone()
    }

    pub fn take(&self) -> Vec<String> {
        std::mem::take(&mut *self.lines.lock().expect("transcript lock"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HostError {
    #[error("{verb}: no reply within {timeout:?}")]
    Timeout { verb: Verb, timeout: Duration },
    #[error("link closed")]
    Closed,
    #[error("device busy")]
    Busy,
    #[error("limit: {0}")]
    Limit(String),
    #[error("no phantom under the tool")]
    NoPhantom,
    #[error("device in fault state")]
    Fault,
    #[error("overload: {0}")]
    Overload(String),
    #[error("device rejected the line: {0}")]
    Rejected(String),
    #[error("device error: {0}")]
    Device(String),
    #[error("unexpected reply '{0}'")]
    Unexpected(String),
    #[error(transparent)]
    Encode(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Ok(String),
    Force(f64),
    Pos([f64; 3]),
}

fn map_err(line: &str) -> HostError {
    let rest = line.strip_prefix("ERR ").unwrap_or(line);
    let (code, detail) = rest.split_once(' ').unwrap_or((rest, ""));
    match code {
        "BUSY" => HostError::Busy,
        "LIMIT" => HostError::Limit(detail.to_string()),
        "NOPHANTOM" => HostError::NoPhantom,
        "FAULT" => HostError::Fault,
        "OVERLOAD" => HostError::Overload(detail.to_string()),
        "PARSE" => HostError::Rejected(detail.to_string()),
        _ => HostError::Device(rest.to_string()),
    }
}

fn parse_floats(s: &str) -> Option<Vec<f64>> {
    s.split(' ').map(|t| t.parse::<f64>().ok()).collect()
}

struct Inner<T> {
    link: T,
    transcript: Option<Transcript>,
}

/// Host side of the link. One command in flight at a time; shareable.
pub struct HostDriver<T: Transport> {
    inner: Mutex<Inner<T>>,
    timeout: Duration,
}

impl<T: Transport> HostDriver<T> {
    pub fn new(link: T, timeout: Duration) -> Self {
        Self {
            inner: Mutex::new(Inner { link, transcript: None }),
            timeout,
        }
    }

    pub fn with_transcript(self, t: Transcript) -> Self {
        self.inner.lock().expect("driver lock").transcript = Some(t);
        self
    }

    /// Send `cmd` and wait for its terminal reply. `D` lines are passed to
    /// `on_data` as they arrive. Queries are resent once after a timeout;
    /// motion commands never are.
    pub fn transact(&self, cmd: &Command, on_data: &mut dyn FnMut(f64, f64)) -> Result<Reply, HostError> {
        let line = encode(cmd)?;
        let mut inner = self.inner.lock().expect("driver lock");
        let attempts = if cmd.verb.is_idempotent_query() { 2 } else { 1 };
        for attempt in 0..attempts {
            Self::send(&mut inner, &line)?;
            match Self::await_reply(&mut inner, cmd, self.timeout, on_data) {
                Err(HostError::Timeout { .. }) if attempt + 1 < attempts => continue,
                other => return other,
            }
        }
        unreachable!("loop returns on last attempt")
    }

    fn send(inner: &mut Inner<T>, line: &[u8]) -> Result<(), HostError> {
        if let Some(t) = &inner.transcript {
            t.log('>', line);
        }
        inner.link.send(line).map_err(|_| HostError::Closed)
    }

    fn await_reply(
        inner: &mut Inner<T>,
        cmd: &Command,
        timeout: Duration,
        on_data: &mut dyn FnMut(f64, f64),
    ) -> Result<Reply, HostError> {
        loop {
            let raw = inner.link.recv(Some(timeout)).map_err(|e| match e {
                TransportError::Timeout => HostError::Timeout { verb: cmd.verb, timeout },
                TransportError::Closed => HostError::Closed,
            })?;
            if let Some(t) = &inner.transcript {
                t.log('<', &raw);
            }
            let line = String::from_utf8_lossy(&raw).into_owned();
            if let Some(rest) = line.strip_prefix("D ") {
                match parse_floats(rest).as_deref() {
                    Some([d, f]) => {
                        on_data(*d, *f);
                        continue;
                    }
                    _ => return Err(HostError::Unexpected(line)),
                }
            }
            if line.starts_with("ERR") {
                return Err(map_err(&line));
            }
            return match cmd.verb {
                Verb::Frc => match line.strip_prefix("F ").and_then(|r| r.parse().ok()) {
                    Some(f) => Ok(Reply::Force(f)),
                    None => Err(HostError::Unexpected(line)),
                },
                Verb::Pos => match line.strip_prefix("P ").and_then(parse_floats).as_deref() {
                    Some(&[x, y, z]) => Ok(Reply::Pos([x, y, z])),
                    _ => Err(HostError::Unexpected(line)),
                },
                _ => match line.strip_prefix("OK ") {
                    Some(echo) if echo.split(' ').next() == Some(cmd.verb.as_str()) => Ok(Reply::Ok(echo.to_string())),
                    _ => Err(HostError::Unexpected(line)),
                },
            };
        }
    }

    pub fn move_to(&self, x: f64, y: f64) -> Result<(), HostError> {
        self.transact(&Command::mov(x, y), &mut |_, _| {}).map(drop)
    }

    /// Palpate and collect the streamed `(displacement, force)` pairs.
    pub fn palpate(&self, depth: f64, force_limit: f64) -> Result<Vec<(f64, f64)>, HostError> {
        let mut series = Vec::new();
        self.transact(&Command::palp(depth, force_limit), &mut |d, f| series.push((d, f)))?;
        Ok(series)
    }

    pub fn force(&self) -> Result<f64, HostError> {
        match self.transact(&Command::bare(Verb::Frc), &mut |_, _| {})? {
            Reply::Force(f) => Ok(f),
            r => Err(HostError::Unexpected(format!("{r:?}"))),
        }
    }

    pub fn position(&self) -> Result<[f64; 3], HostError> {
        match self.transact(&Command::bare(Verb::Pos), &mut |_, _| {})? {
            Reply::Pos(p) => Ok(p),
            r => Err(HostError::Unexpected(format!("{r:?}"))),
        }
    }

    pub fn home(&self) -> Result<(), HostError> {
        self.transact(&Command::bare(Verb::Home), &mut |_, _| {}).map(drop)
    }

    pub fn stop(&self) -> Result<(), HostError> {
        self.transact(&Command::bare(Verb::Stop), &mut |_, _| {}).map(drop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipe_carries_lines_both_ways() {
        let (mut a, mut b) = pipe();
        a.send(b"HELLO\n").unwrap();
        assert_eq!(b.recv(Some(Duration::from_millis(10))).unwrap(), b"HELLO");
        assert_eq!(b.try_recv().unwrap(), None);
        assert_eq!(a.recv(Some(Duration::from_millis(1))), Err(TransportError::Timeout));
        drop(b);
        assert_eq!(a.recv(None), Err(TransportError::Closed));
    }

    #[test]
    fn stream_transport_frames_lines() {
        let data: &[u8] = b"OK MOV 1.000 2.000\r\nF 0.5000\n";
        let mut t = StreamTransport::new(data, Vec::new());
        assert_eq!(t.recv(Some(Duration::from_secs(1))).unwrap(), b"OK MOV 1.000 2.000");
        assert_eq!(t.recv(Some(Duration::from_secs(1))).unwrap(), b"F 0.5000");
    }

    #[test]
    fn error_codes_map_to_types() {
        assert_eq!(map_err("ERR BUSY"), HostError::Busy);
        assert_eq!(map_err("ERR NOPHANTOM"), HostError::NoPhantom);
        assert!(matches!(map_err("ERR LIMIT x=250"), HostError::Limit(d) if d == "x=250"));
        assert!(matches!(map_err("ERR PARSE VERB"), HostError::Rejected(_)));
    }
}
