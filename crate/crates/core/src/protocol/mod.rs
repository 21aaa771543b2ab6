//! Newline-framed ASCII contract between the host and the motion controller.
//!
//! Host → device: `MOV x y`, `PALP depth force_limit`, `FRC?`, `POS?`,
//! `HOME`, `STOP`; arguments are plain decimals (no exponent, no NaN/inf),
//! at most 64 bytes per line.
//!
//! Device → host: `OK <echo>`, `ERR <code> [detail]`, `F <newtons>`,
//! `P <x> <y> <z>` and, while palpating, `D <displacement> <force>` lines
//! ahead of the terminal `OK`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod device;
pub mod host;

pub use device::{device_step, handle_line, DeviceState, Emulator, EmulatorConfig, Mode};
pub use host::{pipe, HostDriver, HostError, LossyTransport, PipeEnd, Reply, StreamTransport, Transcript, Transport, TransportError};

pub const MAX_LINE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verb {
    Mov,
    Palp,
    Frc,
    Pos,
    Home,
    Stop,
}

impl Verb {
    pub const ALL: [Verb; 6] = [Verb::Mov, Verb::Palp, Verb::Frc, Verb::Pos, Verb::Home, Verb::Stop];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Mov => "MOV",
            Verb::Palp => "PALP",
            Verb::Frc => "FRC?",
            Verb::Pos => "POS?",
            Verb::Home => "HOME",
            Verb::Stop => "STOP",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Verb::Mov | Verb::Palp => 2,
            _ => 0,
        }
    }

    /// Safe to resend after a lost reply.
    pub fn is_idempotent_query(self) -> bool {
        matches!(self, Verb::Frc | Verb::Pos)
    }

    fn from_token(t: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == t)
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub verb: Verb,
    pub args: Vec<f64>,
}

impl Command {
    pub fn new(verb: Verb, args: Vec<f64>) -> Result<Self, ProtocolError> {
        let c = Self { verb, args };
        c.check()?;
        Ok(c)
    }

    pub fn mov(x: f64, y: f64) -> Self {
        Self {
            verb: Verb::Mov,
            args: vec![x, y],
        }
    }

    pub fn palp(depth: f64, force_limit: f64) -> Self {
        Self {
            verb: Verb::Palp,
            args: vec![depth, force_limit],
        }
    }

    pub fn bare(verb: Verb) -> Self {
        Self { verb, args: vec![] }
    }

    fn check(&self) -> Result<(), ProtocolError> {
        if self.args.len() != self.verb.arity() {
            return Err(ProtocolError::Arity {
                verb: self.verb,
                expected: self.verb.arity(),
                got: self.args.len(),
            });
        }
        if self.args.iter().any(|a| !a.is_finite()) {
            return Err(ProtocolError::NonFinite);
        }
        Ok(())
    }

    /// Canonical text without the newline.
    pub fn text(&self) -> String {
        let mut s = self.verb.as_str().to_string();
        for a in &self.args {
            s.push_str(&format!(" {a:.3}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("empty line")]
    Empty,
    #[error("line is {0} bytes, limit is {MAX_LINE}")]
    TooLong(usize),
    #[error("byte 0x{0:02x} is not printable ASCII")]
    BadByte(u8),
    #[error("unknown verb '{0}'")]
    UnknownVerb(String),
    #[error("{verb} takes {expected} arguments, got {got}")]
    Arity { verb: Verb, expected: usize, got: usize },
    #[error("not a decimal number: '{0}'")]
    BadNumber(String),
    #[error("non-finite argument")]
    NonFinite,
}

impl ProtocolError {
    /// Short machine-readable kind, used on the wire.
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolError::Empty => "EMPTY",
            ProtocolError::TooLong(_) => "LENGTH",
            ProtocolError::BadByte(_) => "BYTE",
            ProtocolError::UnknownVerb(_) => "VERB",
            ProtocolError::Arity { .. } => "ARITY",
            ProtocolError::BadNumber(_) => "NUMBER",
            ProtocolError::NonFinite => "NONFINITE",
        }
    }
}

pub fn encode(cmd: &Command) -> Result<Vec<u8>, ProtocolError> {
    cmd.check()?;
    let mut line = cmd.text().into_bytes();
    line.push(b'\n');
    Ok(line)
}

fn parse_decimal(tok: &str) -> Result<f64, ProtocolError> {
    let lower = tok.to_ascii_lowercase();
    if lower.trim_start_matches(['+', '-']).starts_with("nan") || lower.trim_start_matches(['+', '-']).starts_with("inf") {
        return Err(ProtocolError::NonFinite);
    }
    let digits = tok.strip_prefix(['+', '-']).unwrap_or(tok);
    let (int, frac) = match digits.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (digits, None),
    };
    let all_digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    let ok = all_digits(int)
        && frac.is_none_or(all_digits)
        && !(int.is_empty() && frac.is_none_or(str::is_empty));
    if !ok {
        return Err(ProtocolError::BadNumber(tok.to_string()));
    }
    tok.parse::<f64>().map_err(|_| ProtocolError::BadNumber(tok.to_string()))
}

/// Parse one line, with or without its `\n` (or `\r\n`) terminator.
pub fn parse(line: &[u8]) -> Result<Command, ProtocolError> {
    let body = line.strip_suffix(b"\n").unwrap_or(line);
    let body = body.strip_suffix(b"\r").unwrap_or(body);
    if body.len() > MAX_LINE {
        return Err(ProtocolError::TooLong(body.len()));
    }
    if let Some(&b) = body.iter().find(|&&b| !(b' '..=b'~').contains(&b)) {
        return Err(ProtocolError::BadByte(b));
    }
    let text = std::str::from_utf8(body).expect("printable ASCII");
    let mut toks = text.split(' ').filter(|t| !t.is_empty());
    let verb_tok = toks.next().ok_or(ProtocolError::Empty)?;
    let verb = Verb::from_token(verb_tok).ok_or_else(|| ProtocolError::UnknownVerb(verb_tok.to_string()))?;
    let raw: Vec<&str> = toks.collect();
    if raw.len() != verb.arity() {
        return Err(ProtocolError::Arity {
            verb,
            expected: verb.arity(),
            got: raw.len(),
        });
    }
    let args = raw.into_iter().map(parse_decimal).collect::<Result<Vec<_>, _>>()?;
    Ok(Command { verb, args })
}

/// Replace anything outside printable ASCII so device output stays clean.
pub fn sanitize(s: &str) -> String {
    s.chars().map(|c| if (' '..='~').contains(&c) { c } else { '?' }).collect()
}
