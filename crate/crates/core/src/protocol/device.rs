use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::host::{Transport, TransportError};
use super::{parse, sanitize, Command, Verb};
use crate::sim::{RigSim, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Idle,
    Moving,
    Palpating,
    Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub mode: Mode,
    /// Peak reading of the last palpation, N.
    pub last_force: f64,
}

impl Default for DeviceState {
    fn default() -> Self {
        Self {
            mode: Mode::Idle,
            last_force: 0.0,
        }
    }
}

fn err(code: &str, detail: impl AsRef<str>) -> String {
    let d = detail.as_ref();
    if d.is_empty() {
        sanitize(&format!("ERR {code}"))
    } else {
        sanitize(&format!("ERR {code} {d}"))
    }
}

fn sim_error_line(e: &SimError) -> String {
    match e {
        SimError::OutOfLimits { .. } => err("LIMIT", e.to_string()),
        SimError::NoPhantom { .. } => err("NOPHANTOM", ""),
        other => err("RANGE", other.to_string()),
    }
}

/// Execute one command against the simulator. Returns every line the device
/// sends in reply, the terminal `OK`/`ERR` last.
pub fn device_step(state: &mut DeviceState, cmd: &Command, sim: &mut RigSim) -> Vec<String> {
    match cmd.verb {
        Verb::Stop => {
            state.mode = Mode::Idle;
            return vec!["OK STOP".into()];
        }
        Verb::Pos => {
            let p = sim.pose();
            return vec![format!("P {:.3} {:.3} {:.3}", p.x, p.y, p.z)];
        }
        Verb::Frc => return vec![format!("F {:.4}", state.last_force)],
        _ => {}
    }
    match state.mode {
        Mode::Idle => {}
        Mode::Fault => return vec![err("FAULT", "")],
        Mode::Moving | Mode::Palpating => return vec![err("BUSY", "")],
    }
    let echo = format!("OK {}", cmd.text());
    match cmd.verb {
        Verb::Mov => {
            state.mode = Mode::Moving;
            let r = sim.move_to(cmd.args[0], cmd.args[1]);
            state.mode = Mode::Idle;
            match r {
                Ok(_) => vec![echo],
                Err(e) => vec![sim_error_line(&e)],
            }
        }
        Verb::Home => {
            state.mode = Mode::Moving;
            let lim = sim.config().limits;
            let r = sim.move_z(lim.z.1).and_then(|_| sim.move_to(lim.x.0, lim.y.0));
            state.mode = Mode::Idle;
            match r {
                Ok(_) => vec![echo],
                Err(e) => vec![sim_error_line(&e)],
            }
        }
        Verb::Palp => {
            state.mode = Mode::Palpating;
            let r = sim.palpate(cmd.args[0], cmd.args[1]);
            state.mode = Mode::Idle;
            match r {
                Ok(rec) => {
                    let mut lines: Vec<String> = rec.force_series.iter().map(|(d, f)| format!("D {d} {f}")).collect();
                    state.last_force = rec.peak_force();
                    if rec.saturated {
                        state.mode = Mode::Fault;
                        lines.push(err("OVERLOAD", format!("peak {:.4} N at sensor full scale", state.last_force)));
                    } else {
                        lines.push(echo);
                    }
                    lines
                }
                Err(e) => vec![sim_error_line(&e)],
            }
        }
        Verb::Stop | Verb::Pos | Verb::Frc => unreachable!("handled above"),
    }
}

/// Parse and execute a raw line; malformed input never changes state.
pub fn handle_line(state: &mut DeviceState, line: &[u8], sim: &mut RigSim) -> Vec<String> {
    match parse(line) {
        Ok(cmd) => device_step(state, &cmd, sim),
        Err(e) => vec![err("PARSE", e.kind())],
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EmulatorConfig {
    /// Real-time delay between streamed `D` lines.
    pub line_delay: Duration,
}

/// Device-side loop serving one link on its own thread.
pub struct Emulator {
    pub state: Arc<Mutex<DeviceState>>,
    handle: Option<JoinHandle<()>>,
}

impl Emulator {
    pub fn spawn<T: Transport + 'static>(sim: Arc<Mutex<RigSim>>, link: T, cfg: EmulatorConfig) -> Self {
        let state = Arc::new(Mutex::new(DeviceState::default()));
        let st = state.clone();
        let handle = std::thread::Builder::new()
            .name("rig-emulator".into())
            .spawn(move || serve(sim, link, st, cfg))
            .expect("spawn emulator thread");
        Self {
            state,
            handle: Some(handle),
        }
    }

    /// Wait for the link to close.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve<T: Transport>(sim: Arc<Mutex<RigSim>>, mut link: T, state: Arc<Mutex<DeviceState>>, cfg: EmulatorConfig) {
    loop {
        let line = match link.recv(None) {
            Ok(l) => l,
            Err(TransportError::Timeout) => continue,
            Err(_) => return,
        };
        let (mut lines, final_mode) = {
            let mut sim = sim.lock().expect("sim lock");
            let mut st = state.lock().expect("state lock");
            let out = handle_line(&mut st, &line, &mut sim);
            let streaming = out.len() > 1;
            let final_mode = st.mode;
            if streaming {
                st.mode = Mode::Palpating;
            }
            (out, final_mode)
        };
        let terminal = lines.pop().expect("at least one reply");
        let mut aborted = false;
        for l in lines {
            if !cfg.line_delay.is_zero() {
                std::thread::sleep(cfg.line_delay);
            }
            // Commands arriving mid-stream: STOP aborts, queries are answered,
            // everything else is refused.
            while let Ok(Some(interrupt)) = link.try_recv() {
                let replies = {
                    let mut sim = sim.lock().expect("sim lock");
                    let mut st = state.lock().expect("state lock");
                    handle_line(&mut st, &interrupt, &mut sim)
                };
                let stop = matches!(parse(&interrupt), Ok(Command { verb: Verb::Stop, .. }));
                for r in replies {
                    if link.send(format!("{r}\n").as_bytes()).is_err() {
                        return;
                    }
                }
                if stop {
                    aborted = true;
                    break;
                }
            }
            if aborted {
                break;
            }
            if link.send(format!("{l}\n").as_bytes()).is_err() {
                return;
            }
        }
        if aborted {
            continue;
        }
        state.lock().expect("state lock").mode = final_mode;
        if link.send(format!("{terminal}\n").as_bytes()).is_err() {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{presets, Phantom, SimConfig};

    fn sim() -> RigSim {
        let ph = Phantom::uniform(presets::porcine(), 40, 40, 1.0, [80.0, 80.0]).unwrap();
        RigSim::new(ph, SimConfig::ideal()).unwrap()
    }

    #[test]
    fn force_query_reports_last_peak() {
        let mut s = sim();
        let mut st = DeviceState::default();
        assert_eq!(device_step(&mut st, &Command::mov(100.0, 100.0), &mut s), vec!["OK MOV 100.000 100.000"]);
        let out = device_step(&mut st, &Command::palp(2.3, 45.0), &mut s);
        assert_eq!(out.last().unwrap(), "OK PALP 2.300 45.000");
        assert!(out[..out.len() - 1].iter().all(|l| l.starts_with("D ")));
        assert_eq!(device_step(&mut st, &Command::bare(Verb::Frc), &mut s), vec!["F 0.6572"]);
        st.last_force = 0.6572;
        assert_eq!(device_step(&mut st, &Command::bare(Verb::Frc), &mut s), vec!["F 0.6572"]);
    }

    #[test]
    fn busy_limit_fault_and_stop() {
        let mut s = sim();
        let mut st = DeviceState {
            mode: Mode::Moving,
            last_force: 0.0,
        };
        assert_eq!(handle_line(&mut st, b"MOV 1 1\n", &mut s), vec!["ERR BUSY"]);
        assert_eq!(handle_line(&mut st, b"STOP\n", &mut s), vec!["OK STOP"]);
        assert_eq!(st.mode, Mode::Idle);
        let out = handle_line(&mut st, b"MOV 250 0\n", &mut s);
        assert!(out[0].starts_with("ERR LIMIT"), "{out:?}");
        assert_eq!(st.mode, Mode::Idle);
        st.mode = Mode::Fault;
        assert_eq!(handle_line(&mut st, b"PALP 1 1\n", &mut s), vec!["ERR FAULT"]);
        assert_eq!(handle_line(&mut st, b"JMP 1\n", &mut s), vec!["ERR PARSE VERB"]);
        assert_eq!(st.mode, Mode::Fault);
        assert_eq!(handle_line(&mut st, b"POS?\n", &mut s), vec!["P 0.000 0.000 30.000"]);
    }

    #[test]
    fn missing_phantom_and_saturation() {
        let mut s = sim();
        let mut st = DeviceState::default();
        assert_eq!(handle_line(&mut st, b"PALP 1 10", &mut s), vec!["ERR NOPHANTOM"]);
        let ph = Phantom::uniform(presets::pla15(), 40, 40, 1.0, [80.0, 80.0]).unwrap();
        let mut hard = RigSim::new(ph, SimConfig::ideal()).unwrap();
        hard.move_to(100.0, 100.0).unwrap();
        let out = handle_line(&mut st, b"PALP 3 100", &mut hard);
        assert!(out.last().unwrap().starts_with("ERR OVERLOAD"));
        assert_eq!(st.mode, Mode::Fault);
        assert_eq!(handle_line(&mut st, b"STOP", &mut hard), vec!["OK STOP"]);
        assert_eq!(st.mode, Mode::Idle);
    }
}
