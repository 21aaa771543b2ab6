//! The rig-owning executor: an emulated controller on its own thread behind
//! the serial protocol, plus independent audio and frame producers.
//!
//! Only the executor issues protocol commands. The audio producer cuts the
//! simulator's continuous microphone stream into one clip per palpation
//! using the start/finish motion events; the frame producer encodes camera
//! frames for subscribers.

use std::io::Cursor;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use palpbench_core::protocol::{pipe, Command, Emulator, EmulatorConfig, HostDriver, HostError, PipeEnd};
use palpbench_core::sim::{SensorEvent, SimState};
use palpbench_core::{CameraFrame, PalpationRecord, RigSim, StagePose};
use serde_json::json;

use crate::config::PalpationSettings;
use crate::events::{EventBus, EventKind};

pub const REPLY_TIMEOUT: Duration = Duration::from_secs(5);
const CLIP_TIMEOUT: Duration = Duration::from_secs(30);

struct AudioClip {
    index: u64,
    t_ns: u64,
    left: Vec<i16>,
    right: Vec<i16>,
}

/// Everything recorded at one plan point.
pub struct Visit {
    pub record: PalpationRecord,
    pub material: String,
    pub sim_state: SimState,
}

fn pcm_b64(s: &[i16]) -> String {
    let bytes: Vec<u8> = s.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn capture_loop(events: Receiver<SensorEvent>, clips: Sender<AudioClip>, bus: Arc<EventBus>, sample_rate: f64) {
    let mut current: Option<AudioClip> = None;
    while let Ok(ev) = events.recv() {
        match ev {
            SensorEvent::PalpationStarted { index, t_ns } => {
                current = Some(AudioClip {
                    index,
                    t_ns,
                    left: Vec::new(),
                    right: Vec::new(),
                });
            }
            SensorEvent::AudioChunk { t_ns, left, right } => {
                if bus.wants(EventKind::AudioChunk) {
                    let payload = json!({
                        "palpation": current.as_ref().map(|c| c.index),
                        "sample_rate": sample_rate,
                        "samples": left.len(),
                        "left_pcm_le_b64": pcm_b64(&left),
                        "right_pcm_le_b64": pcm_b64(&right),
                    });
                    let _ = bus.publish(EventKind::AudioChunk, t_ns, payload);
                }
                if let Some(c) = &mut current {
                    c.left.extend_from_slice(&left);
                    c.right.extend_from_slice(&right);
                }
            }
            SensorEvent::PalpationFinished { index, .. } => {
                if let Some(c) = current.take().filter(|c| c.index == index) {
                    if clips.send(c).is_err() {
                        return;
                    }
                }
            }
        }
    }
}

pub fn frame_png(frame: &CameraFrame) -> Vec<u8> {
    let img = image::RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.rgb.clone()).expect("frame buffer size");
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("in-memory png");
    buf.into_inner()
}

fn frame_loop(frames: Receiver<(usize, CameraFrame)>, bus: Arc<EventBus>) {
    while let Ok((index, frame)) = frames.recv() {
        let payload = json!({
            "plan_index": index,
            "width": frame.width,
            "height": frame.height,
            "png_b64": B64.encode(frame_png(&frame)),
        });
        let _ = bus.publish(EventKind::Frame, frame.timestamp_ns, payload);
    }
}

pub struct Rig {
    sim: Arc<Mutex<RigSim>>,
    host: Option<HostDriver<PipeEnd>>,
    emulator: Option<Emulator>,
    clips: Receiver<AudioClip>,
    frames: Option<Sender<(usize, CameraFrame)>>,
    threads: Vec<JoinHandle<()>>,
    bus: Arc<EventBus>,
}

impl Rig {
    pub fn start(mut sim: RigSim, bus: Arc<EventBus>) -> Self {
        let (ev_tx, ev_rx) = mpsc::channel();
        sim.attach_sink(ev_tx);
        let sample_rate = sim.config().audio.sample_rate;
        let sim = Arc::new(Mutex::new(sim));
        let (clip_tx, clip_rx) = mpsc::channel();
        let (frame_tx, frame_rx) = mpsc::channel();
        let b = bus.clone();
        let capture = std::thread::Builder::new()
            .name("audio-capture".into())
            .spawn(move || capture_loop(ev_rx, clip_tx, b, sample_rate))
            .expect("spawn capture thread");
        let b = bus.clone();
        let framer = std::thread::Builder::new()
            .name("frame-producer".into())
            .spawn(move || frame_loop(frame_rx, b))
            .expect("spawn frame thread");
        let (host_end, dev_end) = pipe();
        let emulator = Emulator::spawn(sim.clone(), dev_end, EmulatorConfig::default());
        Self {
            sim,
            host: Some(HostDriver::new(host_end, REPLY_TIMEOUT)),
            emulator: Some(emulator),
            clips: clip_rx,
            frames: Some(frame_tx),
            threads: vec![capture, framer],
            bus,
        }
    }

    fn host(&self) -> &HostDriver<PipeEnd> {
        self.host.as_ref().expect("host present until shutdown")
    }

    pub fn clock_ns(&self) -> u64 {
        self.sim.lock().expect("sim lock").clock_ns()
    }

    /// Move, capture a frame, palpate and collect the matching audio clip.
    /// `Err` carries a fault description naming the plan index.
    pub fn visit(&self, plan_index: usize, target: [f64; 2], settings: PalpationSettings) -> Result<Visit, String> {
        let [x, y] = target;
        let at = format!("plan point {plan_index} ({x}, {y})");
        self.host().move_to(x, y).map_err(|e| match e {
            HostError::Limit(d) => format!("{at} is outside the travel limits: {d}"),
            other => format!("{at}: move failed: {other}"),
        })?;
        let (palp_index, clip_start, roll, dt) = {
            let mut sim = self.sim.lock().expect("sim lock");
            let frame = sim.render_frame();
            if self.bus.wants(EventKind::Frame) {
                if let Some(tx) = &self.frames {
                    let _ = tx.send((plan_index, frame));
                }
            }
            let c = sim.config();
            (sim.state().palpation_index, sim.clock_ns(), c.audio.roll, 1.0 / c.force.sample_rate)
        };
        let t0 = clip_start + (roll * 1e9).round() as u64;
        let stream = self.bus.wants(EventKind::ForcePoint);
        let mut series = Vec::new();
        let mut on_data = |d: f64, f: f64| {
            if stream {
                let t = t0 + (series.len() as f64 * dt * 1e9).round() as u64;
                let _ = self.bus.publish(EventKind::ForcePoint, t, json!({ "index": plan_index, "d": d, "f": f }));
            }
            series.push((d, f));
        };
        let cmd = Command::palp(settings.depth, settings.force_limit);
        self.host().transact(&cmd, &mut on_data).map_err(|e| match e {
            HostError::Overload(d) => format!("{at}: force sensor overload ({d})"),
            HostError::NoPhantom => format!("{at} is not over the phantom"),
            other => format!("{at}: palpation failed: {other}"),
        })?;
        let clip = loop {
            match self.clips.recv_timeout(CLIP_TIMEOUT) {
                Ok(c) if c.index == palp_index => break c,
                Ok(c) if c.index < palp_index => continue,
                Ok(c) => return Err(format!("{at}: audio clip {} arrived while expecting {palp_index}", c.index)),
                Err(RecvTimeoutError::Timeout) => return Err(format!("{at}: audio capture timed out")),
                Err(RecvTimeoutError::Disconnected) => return Err(format!("{at}: audio capture stopped")),
            }
        };
        let sim = self.sim.lock().expect("sim lock");
        let material = sim.phantom().material_at(x, y).ok_or_else(|| format!("{at} is not over the phantom"))?;
        let t_start_ns = clip.t_ns + (roll * 1e9).round() as u64;
        let record = PalpationRecord {
            pose: StagePose {
                x,
                y,
                z: material.surface_height,
            },
            t_start_ns,
            t_end_ns: t_start_ns + ((series.len().saturating_sub(1)) as f64 * dt * 1e9).round() as u64,
            force_series: series,
            audio_left: clip.left,
            audio_right: clip.right,
            sample_rate: sim.config().audio.sample_rate,
            saturated: false,
        };
        Ok(Visit {
            record,
            material: material.name.clone(),
            sim_state: sim.state(),
        })
    }

    /// Close the link and wait for every producer to finish.
    pub fn shutdown(self) {
        let Rig {
            sim,
            host,
            emulator,
            frames,
            threads,
            ..
        } = self;
        drop(host);
        if let Some(e) = emulator {
            e.join();
        }
        drop(frames);
        // The emulator has released its handle; this closes the sensor channel.
        drop(sim);
        for t in threads {
            let _ = t.join();
        }
    }
}
