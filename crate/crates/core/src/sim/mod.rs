//! Deterministic virtual test bench.
//!
//! All time is virtual: commanded motion advances the simulator clock, so a
//! fixed seed and command sequence reproduce every record and frame bit for
//! bit. Noise sources draw from independent streams keyed by the seed and a
//! per-event counter, which lets a restored simulator continue exactly where
//! a previous one stopped.

mod camera;
pub mod phantom;

use std::sync::mpsc::Sender;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, tag};

pub use camera::{CameraConfig, CameraFrame, CameraModel, FRAME_HEIGHT, FRAME_WIDTH};
pub use phantom::{load_phantom, presets, MaterialSpec, Phantom, PhantomError, ResonanceMode};

const NS_PER_S: f64 = 1e9;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("target {axis}={value:.3} outside travel [{min:.3}, {max:.3}]; nearest reachable {clamped:.3}")]
    OutOfLimits {
        axis: char,
        value: f64,
        min: f64,
        max: f64,
        clamped: f64,
    },
    #[error("no phantom under the tool at ({x:.3}, {y:.3})")]
    NoPhantom { x: f64, y: f64 },
    #[error("force limit must be > 0, got {0}")]
    BadForceLimit(f64),
    #[error("palpation depth {depth} outside [0, {max}]")]
    BadDepth { depth: f64, max: f64 },
    #[error("laser spot projects to ({u:.1}, {v:.1}), outside the {width}x{height} frame")]
    OutOfFrame {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },
    #[error("camera depth noise must be finite and >= 0, got {0}")]
    BadNoise(f64),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TravelLimits {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl Default for TravelLimits {
    fn default() -> Self {
        Self {
            x: (0.0, 200.0),
            y: (0.0, 200.0),
            z: (0.0, 30.0),
        }
    }
}

impl TravelLimits {
    fn check_axis(axis: char, value: f64, (min, max): (f64, f64)) -> Result<(), SimError> {
        if value.is_finite() && value >= min && value <= max {
            Ok(())
        } else {
            let clamped = if value.is_nan() { min } else { value.clamp(min, max) };
            Err(SimError::OutOfLimits {
                axis,
                value,
                min,
                max,
                clamped,
            })
        }
    }

    pub fn check_xy(&self, x: f64, y: f64) -> Result<(), SimError> {
        Self::check_axis('x', x, self.x)?;
        Self::check_axis('y', y, self.y)
    }

    pub fn check_z(&self, z: f64) -> Result<(), SimError> {
        Self::check_axis('z', z, self.z)
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        self.check_xy(x, y).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForceSensorConfig {
    /// Full-scale reading, N. Readings saturate here.
    pub full_scale: f64,
    /// ADC resolution; `None` leaves readings unquantized.
    pub adc_bits: Option<u32>,
    /// SD of additive Gaussian measurement noise, N.
    pub noise_sd: f64,
    /// First-order low-pass corner, Hz; `None` disables the filter.
    pub lowpass_hz: Option<f64>,
    /// Force samples per second during palpation.
    pub sample_rate: f64,
    /// Unloading force as a fraction of the loading force at equal depth.
    pub hysteresis: f64,
    /// Draw per-cell stiffness from N(mean, sd²); otherwise use the mean.
    pub stiffness_variation: bool,
}

impl Default for ForceSensorConfig {
    fn default() -> Self {
        Self {
            full_scale: 50.0,
            adc_bits: Some(10),
            noise_sd: 0.02,
            lowpass_hz: Some(42.2),
            sample_rate: 500.0,
            hysteresis: 0.9,
            stiffness_variation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioConfig {
    pub sample_rate: f64,
    /// Recording margin before and after each palpation, s.
    pub roll: f64,
    /// Peak modal amplitude (full scale = 1) at the reference approach speed.
    pub gain: f64,
    pub reference_speed: f64,
    /// SD of the microphone noise floor (full scale = 1).
    pub noise_floor: f64,
    /// Relative SD of per-cell modal frequency variation.
    pub mode_jitter: f64,
    /// Stage-frame (x, y) of the left and right microphones, mm.
    pub mic_positions: [[f64; 2]; 2],
    /// Distance at which the coupled signal has dropped to half, mm.
    pub attenuation_distance: f64,
    /// Samples per emitted audio chunk.
    pub chunk: usize,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100.0,
            roll: 0.2,
            gain: 0.4,
            reference_speed: 2.0,
            noise_floor: 0.003,
            mode_jitter: 0.01,
            mic_positions: [[70.0, 100.0], [130.0, 100.0]],
            attenuation_distance: 30.0,
            chunk: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub limits: TravelLimits,
    /// XY stage speed, mm/s.
    pub stage_speed: f64,
    /// Lead-screw indentation speed, mm/s.
    pub palpation_speed: f64,
    pub force: ForceSensorConfig,
    pub audio: AudioConfig,
    pub camera: CameraConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            limits: TravelLimits::default(),
            stage_speed: 20.0,
            palpation_speed: 2.0,
            force: ForceSensorConfig::default(),
            audio: AudioConfig::default(),
            camera: CameraConfig::default(),
        }
    }
}

impl SimConfig {
    /// Every noise source off: no measurement noise, quantization, filtering,
    /// stiffness variation, acoustic noise floor or depth noise.
    pub fn ideal() -> Self {
        let mut cfg = Self::default();
        cfg.force.adc_bits = None;
        cfg.force.noise_sd = 0.0;
        cfg.force.lowpass_hz = None;
        cfg.force.stiffness_variation = false;
        cfg.audio.noise_floor = 0.0;
        cfg.audio.mode_jitter = 0.0;
        cfg.camera.depth_noise = 0.0;
        cfg
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PalpationRecord {
    /// Tool position with z at the nominal surface (displacement 0).
    pub pose: StagePose,
    /// (displacement mm, force N): loading then unloading.
    pub force_series: Vec<(f64, f64)>,
    pub audio_left: Vec<i16>,
    pub audio_right: Vec<i16>,
    pub sample_rate: f64,
    /// Virtual time of the first and last force sample.
    pub t_start_ns: u64,
    pub t_end_ns: u64,
    /// A reading hit the sensor's full scale.
    pub saturated: bool,
}

impl PalpationRecord {
    pub fn peak_force(&self) -> f64 {
        self.force_series.iter().map(|p| p.1).fold(0.0, f64::max)
    }
}

/// Events pushed to an attached sensor sink as the simulator runs.
#[derive(Debug, Clone, PartialEq)]
pub enum SensorEvent {
    PalpationStarted { index: u64, t_ns: u64 },
    AudioChunk { t_ns: u64, left: Vec<i16>, right: Vec<i16> },
    PalpationFinished { index: u64, t_ns: u64 },
}

/// Restorable counters and kinematic state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub pose: StagePose,
    pub clock_ns: u64,
    pub palpation_index: u64,
    pub frame_index: u64,
    pub laser_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserSpot {
    pub u: f64,
    pub v: f64,
    /// Depth reading at the spot, in the camera's (scaled) mm.
    pub depth: f64,
}

pub struct RigSim {
    cfg: SimConfig,
    phantom: Phantom,
    camera: CameraModel,
    state: SimState,
    pending_laser: Option<LaserSpot>,
    sink: Option<Sender<SensorEvent>>,
    scene: Option<StaticScene>,
}

/// Noise-free render of the fixed phantom and camera. `depth` holds scaled
/// depth per pixel, NaN where the ray misses.
struct StaticScene {
    rgb: Vec<u8>,
    depth: Vec<f64>,
}

impl RigSim {
    pub fn new(phantom: Phantom, cfg: SimConfig) -> Result<Self, SimError> {
        phantom.validate(cfg.audio.sample_rate)?;
        let noise = cfg.camera.depth_noise;
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(SimError::BadNoise(noise));
        }
        let camera = CameraModel::new(&cfg.camera);
        let pose = StagePose {
            x: cfg.limits.x.0,
            y: cfg.limits.y.0,
            z: cfg.limits.z.1,
        };
        Ok(Self {
            cfg,
            phantom,
            camera,
            state: SimState {
                pose,
                clock_ns: 0,
                palpation_index: 0,
                frame_index: 0,
                laser_index: 0,
            },
            pending_laser: None,
            sink: None,
            scene: None,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn phantom(&self) -> &Phantom {
        &self.phantom
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn pose(&self) -> StagePose {
        self.state.pose
    }

    pub fn clock_ns(&self) -> u64 {
        self.state.clock_ns
    }

    pub fn state(&self) -> SimState {
        self.state
    }

    pub fn restore(&mut self, state: SimState) {
        self.state = state;
        self.pending_laser = None;
    }

    pub fn attach_sink(&mut self, sink: Sender<SensorEvent>) {
        self.sink = Some(sink);
    }

    fn emit(&self, event: SensorEvent) {
        if let Some(sink) = &self.sink {
            // A dropped receiver just means nobody is listening any more.
            let _ = sink.send(event);
        }
    }

    fn advance(&mut self, seconds: f64) {
        self.state.clock_ns += (seconds * NS_PER_S).round() as u64;
    }

    pub fn move_to(&mut self, x: f64, y: f64) -> Result<StagePose, SimError> {
        self.cfg.limits.check_xy(x, y)?;
        let p = self.state.pose;
        let dist = (x - p.x).hypot(y - p.y);
        self.advance(dist / self.cfg.stage_speed);
        self.state.pose.x = x;
        self.state.pose.y = y;
        Ok(self.state.pose)
    }

    pub fn move_z(&mut self, z: f64) -> Result<StagePose, SimError> {
        self.cfg.limits.check_z(z)?;
        self.advance((z - self.state.pose.z).abs() / self.cfg.palpation_speed);
        self.state.pose.z = z;
        Ok(self.state.pose)
    }

    /// Stiffness of a cell: one draw per cell, fixed for the life of the phantom.
    pub fn cell_stiffness(&self, cell: usize) -> f64 {
        let m = &self.phantom.materials()[self.phantom.grid()[cell] as usize];
        if !self.cfg.force.stiffness_variation || m.stiffness_sd == 0.0 {
            return m.stiffness_mean;
        }
        let mut rng = rng::stream(self.cfg.seed, tag::CELL_STIFFNESS, cell as u64);
        let z: f64 = StandardNormal.sample(&mut rng);
        (m.stiffness_mean + m.stiffness_sd * z).max(m.stiffness_mean * 1e-3)
    }

    fn cell_modes(&self, cell: usize) -> Vec<ResonanceMode> {
        let m = &self.phantom.materials()[self.phantom.grid()[cell] as usize];
        let jitter = self.cfg.audio.mode_jitter;
        let nyquist = self.cfg.audio.sample_rate / 2.0;
        let mut rng = rng::stream(self.cfg.seed, tag::CELL_ACOUSTIC, cell as u64);
        m.resonance_modes
            .iter()
            .map(|mode| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let f = (mode.frequency_hz * (1.0 + jitter * z)).clamp(1.0, nyquist * 0.999);
                ResonanceMode::new(f, mode.damping, mode.amplitude)
            })
            .collect()
    }

    /// Press the indenter `max_depth` mm past the nominal surface (or until the
    /// reading reaches `force_limit`) and retract, recording force and both
    /// microphones.
    pub fn palpate(&mut self, max_depth: f64, force_limit: f64) -> Result<PalpationRecord, SimError> {
        if !(force_limit > 0.0) {
            return Err(SimError::BadForceLimit(force_limit));
        }
        let z_span = self.cfg.limits.z.1 - self.cfg.limits.z.0;
        if !(max_depth >= 0.0 && max_depth <= z_span) {
            return Err(SimError::BadDepth {
                depth: max_depth,
                max: z_span,
            });
        }
        let StagePose { x, y, .. } = self.state.pose;
        let cell = self.phantom.cell_at(x, y).ok_or(SimError::NoPhantom { x, y })?;
        let material = self.phantom.materials()[self.phantom.grid()[cell] as usize].clone();
        let k = self.cell_stiffness(cell);
        let index = self.state.palpation_index;
        let mut rng = rng::stream(self.cfg.seed, tag::PALPATION, index);

        let fc = &self.cfg.force;
        let speed = self.cfg.palpation_speed;
        let dt = 1.0 / fc.sample_rate;
        let step = speed * dt;
        let n_steps = (max_depth / step).round() as usize;
        let noise = (fc.noise_sd > 0.0).then(|| Normal::new(0.0, fc.noise_sd).expect("finite sd"));
        let alpha = fc.lowpass_hz.map(|f| {
            let rc = 1.0 / (2.0 * std::f64::consts::PI * f);
            dt / (rc + dt)
        });
        let levels = fc.adc_bits.map(|b| ((1u64 << b) - 1) as f64);
        let dc = material.contact_offset;
        let mut filtered = 0.0;
        let mut saturated = false;
        let mut sense = |f_true: f64, rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
            let mut f = f_true;
            if let Some(n) = &noise {
                f += n.sample(rng);
            }
            if let Some(a) = alpha {
                filtered += a * (f - filtered);
                f = filtered;
            }
            if f >= fc.full_scale {
                saturated = true;
            }
            let f = f.clamp(0.0, fc.full_scale);
            match levels {
                Some(l) => (f / fc.full_scale * l).round() * fc.full_scale / l,
                None => f,
            }
        };

        let mut series = Vec::with_capacity(2 * n_steps);
        let mut peak_step = 0;
        for i in 1..=n_steps {
            let d = i as f64 * step;
            let reading = sense(k * (d - dc).max(0.0), &mut rng);
            series.push((d, reading));
            peak_step = i;
            if reading >= force_limit {
                break;
            }
        }
        for i in (0..peak_step).rev() {
            let d = i as f64 * step;
            let reading = sense(fc.hysteresis * k * (d - dc).max(0.0), &mut rng);
            series.push((d, reading));
        }

        let duration = series.len() as f64 * dt;
        let roll = self.cfg.audio.roll;
        let clip_start = self.state.clock_ns;
        let t_start_ns = clip_start + (roll * NS_PER_S).round() as u64;
        let t_end_ns = t_start_ns + ((series.len().saturating_sub(1)) as f64 * dt * NS_PER_S).round() as u64;
        let peak_d = peak_step as f64 * step;
        let contact_time = (peak_d > dc).then(|| roll + dc / speed);
        let (audio_left, audio_right) = self.synthesize_audio(cell, duration + 2.0 * roll, contact_time, &mut rng);

        self.emit(SensorEvent::PalpationStarted {
            index,
            t_ns: clip_start,
        });
        let sr = self.cfg.audio.sample_rate;
        for (c, (l, r)) in audio_left
            .chunks(self.cfg.audio.chunk)
            .zip(audio_right.chunks(self.cfg.audio.chunk))
            .enumerate()
        {
            let offset = (c * self.cfg.audio.chunk) as f64 / sr;
            self.emit(SensorEvent::AudioChunk {
                t_ns: clip_start + (offset * NS_PER_S).round() as u64,
                left: l.to_vec(),
                right: r.to_vec(),
            });
        }
        self.advance(duration + 2.0 * roll);
        self.emit(SensorEvent::PalpationFinished {
            index,
            t_ns: self.state.clock_ns,
        });
        self.state.palpation_index += 1;

        Ok(PalpationRecord {
            pose: StagePose {
                x,
                y,
                z: material.surface_height,
            },
            force_series: series,
            audio_left,
            audio_right,
            sample_rate: sr,
            t_start_ns,
            t_end_ns,
            saturated,
        })
    }

    fn synthesize_audio(
        &self,
        cell: usize,
        seconds: f64,
        contact_time: Option<f64>,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> (Vec<i16>, Vec<i16>) {
        let ac = &self.cfg.audio;
        let sr = ac.sample_rate;
        let n = (seconds * sr).round() as usize;
        let modes = self.cell_modes(cell);
        let speed_gain = ac.gain * self.cfg.palpation_speed / ac.reference_speed;
        let pose = self.state.pose;
        let mut channels = [vec![0.0f64; n], vec![0.0f64; n]];
        if let Some(tc) = contact_time {
            let start = (tc * sr).ceil() as usize;
            for (ch, mic) in channels.iter_mut().zip(ac.mic_positions) {
                let dist = (pose.x - mic[0]).hypot(pose.y - mic[1]);
                let g = speed_gain / (1.0 + dist / ac.attenuation_distance);
                for m in &modes {
                    let amp = g * m.amplitude;
                    if amp <= 0.0 {
                        continue;
                    }
                    // Stop once the envelope is far below one LSB.
                    let life = if m.damping > 0.0 {
                        ((amp * 32768.0 * 1e3).ln().max(0.0) / m.damping * sr) as usize
                    } else {
                        n
                    };
                    let w = 2.0 * std::f64::consts::PI * m.frequency_hz;
                    for (i, s) in ch.iter_mut().enumerate().skip(start).take(life) {
                        let tau = i as f64 / sr - tc;
                        *s += amp * (-m.damping * tau).exp() * (w * tau).sin();
                    }
                }
            }
        }
        let [left, right] = channels.map(|ch| {
            ch.into_iter()
                .map(|s| {
                    let noisy = if ac.noise_floor > 0.0 {
                        let z: f64 = StandardNormal.sample(rng);
                        s + ac.noise_floor * z
                    } else {
                        s
                    };
                    (noisy.clamp(-1.0, 1.0) * 32767.0).round() as i16
                })
                .collect()
        });
        (left, right)
    }

    /// Renders the current scene. A laser spot from a preceding
    /// [`project_laser`](Self::project_laser) is painted into this frame.
    pub fn render_frame(&mut self) -> CameraFrame {
        if self.scene.is_none() {
            self.scene = Some(self.render_static());
        }
        let noise = self.cfg.camera.depth_noise;
        let scene = self.scene.as_ref().expect("scene rendered above");
        let mut rng = rng::stream(self.cfg.seed, tag::FRAME, self.state.frame_index);
        let dist = (noise > 0.0).then(|| Uniform::new_inclusive(-noise, noise).expect("finite noise bound"));
        let depth = scene
            .depth
            .iter()
            .map(|&d| match (d.is_nan(), &dist) {
                (true, _) => 0.0,
                (false, Some(u)) => (d + u.sample(&mut rng)) as f32,
                (false, None) => d as f32,
            })
            .collect();
        let mut frame = CameraFrame {
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            rgb: scene.rgb.clone(),
            depth,
            intrinsics: self.camera.intrinsics,
            timestamp_ns: self.state.clock_ns,
        };
        if let Some(spot) = self.pending_laser.take() {
            paint_spot(&mut frame, spot, self.cfg.camera.laser_color, self.cfg.camera.laser_radius);
        }
        self.state.frame_index += 1;
        frame
    }

    fn render_static(&self) -> StaticScene {
        let bed = self.cfg.camera.bed_color;
        let (w, h) = (FRAME_WIDTH, FRAME_HEIGHT);
        let mut heights: Vec<f64> = self.phantom.materials().iter().map(|m| m.surface_height).collect();
        heights.sort_by(|a, b| b.total_cmp(a));
        heights.dedup();
        let scale = self.camera.depth_scale();
        let mut rgb = vec![0; w * h * 3];
        let mut depth = vec![f64::NAN; w * h];
        for v in 0..h {
            for u in 0..w {
                let (uf, vf) = (u as f64, v as f64);
                let mut hit = None;
                for &z in &heights {
                    if let Some((xy, d)) = self.camera.ray_hit(uf, vf, z) {
                        if let Some(m) = self.phantom.material_at(xy[0], xy[1]) {
                            if m.surface_height == z {
                                hit = Some((m.color, d));
                                break;
                            }
                        }
                    }
                }
                let hit = hit.or_else(|| self.camera.ray_hit(uf, vf, 0.0).map(|(_, d)| (bed, d)));
                if let Some((color, d)) = hit {
                    let i = v * w + u;
                    rgb[i * 3..i * 3 + 3].copy_from_slice(&color);
                    depth[i] = d * scale;
                }
            }
        }
        StaticScene { rgb, depth }
    }

    /// Bright-spot pixel of the tool-axis laser and the depth reading there.
    pub fn project_laser(&mut self) -> Result<LaserSpot, SimError> {
        let p = self.state.pose;
        let (width, height) = (FRAME_WIDTH, FRAME_HEIGHT);
        let (u, v, z) = self
            .camera
            .project([p.x, p.y, p.z])
            .ok_or(SimError::OutOfFrame {
                u: f64::NAN,
                v: f64::NAN,
                width,
                height,
            })?;
        if !(u >= 0.0 && v >= 0.0 && u <= (width - 1) as f64 && v <= (height - 1) as f64) {
            return Err(SimError::OutOfFrame { u, v, width, height });
        }
        let noise = self.cfg.camera.depth_noise;
        let mut rng = rng::stream(self.cfg.seed, tag::LASER, self.state.laser_index);
        self.state.laser_index += 1;
        let depth = z * self.camera.depth_scale()
            + if noise > 0.0 {
                rng.random_range(-noise..=noise)
            } else {
                0.0
            };
        let spot = LaserSpot { u, v, depth };
        self.pending_laser = Some(spot);
        Ok(spot)
    }

    /// Ground-truth material index under `(x, y)`.
    pub fn material_index_at(&self, x: f64, y: f64) -> Option<usize> {
        self.phantom.material_index_at(x, y)
    }
}

/// Cubic B-spline, support (-2, 2).
fn bspline3(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

/// Flat-topped spot profile: a sum of integer-shifted B-splines, whose
/// sampled centroid sits exactly on the spot centre.
fn spot_profile(t: f64, radius: i64) -> f64 {
    (-radius..=radius).map(|j| bspline3(t - j as f64)).sum()
}

fn paint_spot(frame: &mut CameraFrame, spot: LaserSpot, color: [u8; 3], radius: u32) {
    let r = radius as i64;
    let reach = r + 2;
    let (cu, cv) = (spot.u.round() as i64, spot.v.round() as i64);
    for v in (cv - reach)..=(cv + reach) {
        for u in (cu - reach)..=(cu + reach) {
            if u < 0 || v < 0 || u >= frame.width as i64 || v >= frame.height as i64 {
                continue;
            }
            let w = spot_profile(u as f64 - spot.u, r) * spot_profile(v as f64 - spot.v, r);
            if w <= 0.0 {
                continue;
            }
            let (ui, vi) = (u as usize, v as usize);
            let bg = frame.rgb_at(ui, vi);
            let mut c = [0u8; 3];
            for i in 0..3 {
                c[i] = (bg[i] as f64 * (1.0 - w) + color[i] as f64 * w).round() as u8;
            }
            frame.set_rgb(ui, vi, c);
            if w > 0.5 {
                frame.depth[vi * frame.width + ui] = spot.depth as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tpu_sim(cfg: SimConfig) -> RigSim {
        let phantom = Phantom::uniform(presets::tpu(), 40, 40, 1.0, [80.0, 80.0]).unwrap();
        RigSim::new(phantom, cfg).unwrap()
    }

    fn with_material(m: MaterialSpec, cfg: SimConfig) -> RigSim {
        let phantom = Phantom::uniform(m, 40, 40, 1.0, [80.0, 80.0]).unwrap();
        RigSim::new(phantom, cfg).unwrap()
    }

    fn zero_offset(mut m: MaterialSpec) -> MaterialSpec {
        m.contact_offset = 0.0;
        m
    }

    #[test]
    fn move_updates_pose_and_clock() {
        let mut sim = tpu_sim(SimConfig::ideal());
        sim.move_to(0.0, 0.0).unwrap();
        let t0 = sim.clock_ns();
        let z = sim.pose().z;
        let p = sim.move_to(10.0, 20.0).unwrap();
        assert_eq!(p, StagePose { x: 10.0, y: 20.0, z });
        let expected = (500f64.sqrt() / 20.0 * 1e9).round() as u64;
        assert_eq!(sim.clock_ns() - t0, expected);
    }

    #[test]
    fn move_outside_travel_is_refused_with_suggestion() {
        let mut sim = tpu_sim(SimConfig::ideal());
        let err = sim.move_to(250.0, 0.0).unwrap_err();
        assert_eq!(
            err,
            SimError::OutOfLimits {
                axis: 'x',
                value: 250.0,
                min: 0.0,
                max: 200.0,
                clamped: 200.0
            }
        );
        assert!(sim.move_to(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn tpu_noiseless_final_force() {
        let mut sim = with_material(zero_offset(presets::tpu()), SimConfig::ideal());
        sim.move_to(100.0, 100.0).unwrap();
        let rec = sim.palpate(2.0, 45.0).unwrap();
        let peak = rec.peak_force();
        assert!((peak - 15.7964).abs() < 1e-9, "{peak}");
        // loading curve is linear with slope k
        let n = rec.force_series.iter().position(|p| p.1 == peak).unwrap();
        for w in rec.force_series[..=n].windows(2) {
            let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            assert!((slope - 7.8982).abs() < 1e-9);
        }
    }

    #[test]
    fn porcine_noiseless_final_force() {
        let mut sim = with_material(zero_offset(presets::porcine()), SimConfig::ideal());
        sim.move_to(100.0, 100.0).unwrap();
        let rec = sim.palpate(2.0, 45.0).unwrap();
        assert!((rec.peak_force() - 0.6572).abs() < 1e-9);
    }

    #[test]
    fn zero_depth_gives_empty_series_and_silent_audio() {
        let mut cfg = SimConfig::default();
        cfg.audio.noise_floor = 0.0;
        let mut sim = tpu_sim(cfg);
        sim.move_to(100.0, 100.0).unwrap();
        let rec = sim.palpate(0.0, 10.0).unwrap();
        assert!(rec.force_series.is_empty());
        assert!(rec.audio_left.iter().all(|&s| s == 0));
        assert_eq!(rec.audio_left.len(), (0.4f64 * 44_100.0).round() as usize);
    }

    #[test]
    fn palpation_errors() {
        let mut sim = tpu_sim(SimConfig::ideal());
        sim.move_to(10.0, 10.0).unwrap();
        assert!(matches!(sim.palpate(1.0, 10.0), Err(SimError::NoPhantom { .. })));
        sim.move_to(100.0, 100.0).unwrap();
        assert_eq!(sim.palpate(1.0, 0.0), Err(SimError::BadForceLimit(0.0)));
        assert!(matches!(sim.palpate(31.0, 10.0), Err(SimError::BadDepth { .. })));
    }

    #[test]
    fn force_limit_stops_descent() {
        let mut sim = tpu_sim(SimConfig::ideal());
        sim.move_to(100.0, 100.0).unwrap();
        let rec = sim.palpate(5.0, 10.0).unwrap();
        let peak_d = rec.force_series.iter().map(|p| p.0).fold(0.0, f64::max);
        assert!(peak_d < 5.0);
        assert!(rec.peak_force() >= 10.0 && rec.peak_force() < 10.0 + 7.8982 * 0.004 + 1e-9);
    }

    #[test]
    fn record_shape_invariants() {
        let mut sim = tpu_sim(SimConfig::default().with_seed(3));
        sim.move_to(100.0, 100.0).unwrap();
        let rec = sim.palpate(2.0, 45.0).unwrap();
        let peak = rec
            .force_series
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .unwrap()
            .0;
        assert!(rec.force_series[..=peak].windows(2).all(|w| w[1].0 > w[0].0));
        assert!(rec.force_series[peak..].windows(2).all(|w| w[1].0 < w[0].0));
        assert!(rec.force_series.iter().all(|p| p.1 >= 0.0));
        assert_eq!(rec.audio_left.len(), rec.audio_right.len());
        let expected = ((rec.force_series.len() as f64 / 500.0 + 0.4) * 44_100.0).round() as usize;
        assert_eq!(rec.audio_left.len(), expected);
        assert!(rec.t_end_ns > rec.t_start_ns);
    }

    #[test]
    fn adc_levels_bounded() {
        let mut cfg = SimConfig::ideal();
        cfg.force.adc_bits = Some(10);
        let mut sim = with_material(presets::pla15(), cfg);
        let mut distinct = std::collections::BTreeSet::new();
        for i in 0..5 {
            sim.move_to(90.0 + i as f64, 100.0).unwrap();
            let rec = sim.palpate(1.6, 49.0).unwrap();
            distinct.extend(rec.force_series.iter().map(|p| p.1.to_bits()));
        }
        assert!(distinct.len() <= 1024);
        let lsb = 50.0 / 1023.0;
        for bits in distinct {
            let f = f64::from_bits(bits);
            assert!(((f / lsb) - (f / lsb).round()).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_slope_matches_drawn_stiffness() {
        let mut cfg = SimConfig::ideal();
        cfg.force.stiffness_variation = true;
        let mut sim = with_material(presets::pla5(), cfg.with_seed(11));
        sim.move_to(101.5, 102.5).unwrap();
        let cell = sim.phantom().cell_at(101.5, 102.5).unwrap();
        let k = sim.cell_stiffness(cell);
        assert_ne!(k, presets::pla5().stiffness_mean);
        let rec = sim.palpate(1.0, 45.0).unwrap();
        let pts: Vec<_> = rec.force_series.iter().filter(|p| p.1 > 0.0).take(50).collect();
        let slope = (pts[49].1 - pts[10].1) / (pts[49].0 - pts[10].0);
        assert!((slope - k).abs() < 1e-9);
        // the draw is per cell, not per palpation
        sim.move_to(101.5, 102.5).unwrap();
        let again = sim.palpate(1.0, 45.0).unwrap();
        assert_eq!(again.force_series, rec.force_series);
    }

    #[test]
    fn identical_seeds_give_identical_records() {
        let run = || {
            let mut sim = tpu_sim(SimConfig::default().with_seed(42));
            sim.move_to(95.0, 101.0).unwrap();
            let rec = sim.palpate(2.0, 45.0).unwrap();
            let frame = sim.render_frame();
            (rec, frame, sim.pose(), sim.clock_ns())
        };
        assert!(run() == run());
    }

    #[test]
    fn single_mode_energy_decays_after_contact() {
        let mut m = zero_offset(presets::tpu());
        m.resonance_modes = vec![ResonanceMode::new(1500.0, 60.0, 1.0)];
        let mut sim = with_material(m, SimConfig::ideal());
        sim.move_to(100.0, 100.0).unwrap();
        let rec = sim.palpate(1.0, 45.0).unwrap();
        let contact = (0.2 * 44_100.0f64).ceil() as usize;
        let energies: Vec<f64> = rec.audio_left[contact..]
            .chunks(1024)
            .map(|c| c.iter().map(|&s| (s as f64).powi(2)).sum())
            .collect();
        assert!(energies[0] > 0.0);
        for w in energies.windows(2) {
            assert!(w[1] <= w[0], "{:?}", w);
        }
    }

    #[test]
    fn uniform_noiseless_frame_has_constant_depth() {
        let phantom = Phantom::uniform(presets::pla5(), 500, 500, 1.0, [-150.0, -150.0]).unwrap();
        let mut sim = RigSim::new(phantom, SimConfig::ideal()).unwrap();
        let f = sim.render_frame();
        assert_eq!((f.width, f.height), (640, 480));
        assert!(f.depth.iter().all(|&d| d == 440.0));
        assert!(f.rgb.chunks(3).all(|c| c == [40, 150, 60]));
        assert_eq!(sim.render_frame().rgb, f.rgb);
    }

    #[test]
    fn two_material_frame_matches_grid() {
        let mut a = presets::pla5();
        a.color = [0, 200, 0];
        let mut b = presets::tpu();
        b.color = [0, 0, 200];
        let grid: Vec<u16> = (0..20 * 20).map(|i| if i % 20 < 10 { 0 } else { 1 }).collect();
        let phantom = Phantom::new("split", 20, 20, grid, 2.0, [80.0, 80.0], vec![a, b]).unwrap();
        let mut sim = RigSim::new(phantom, SimConfig::ideal()).unwrap();
        let frame = sim.render_frame();
        let cam = sim.camera().clone();
        for (x, color) in [(85.0, [0, 200, 0]), (115.0, [0, 0, 200]), (60.0, [235, 235, 228])] {
            let (u, v, _) = cam.project([x, 100.0, if x == 60.0 { 0.0 } else { 10.0 }]).unwrap();
            assert_eq!(frame.rgb_at(u.round() as usize, v.round() as usize), color);
        }
    }

    #[test]
    fn depth_noise_within_one_mm() {
        let phantom = Phantom::uniform(presets::pla5(), 40, 40, 1.0, [80.0, 80.0]).unwrap();
        let clean = RigSim::new(phantom.clone(), SimConfig::ideal()).unwrap().render_frame();
        let mut cfg = SimConfig::ideal();
        cfg.camera.depth_noise = 1.0;
        let noisy = RigSim::new(phantom, cfg).unwrap().render_frame();
        let mut max_dev = 0.0f32;
        for (a, b) in clean.depth.iter().zip(&noisy.depth) {
            max_dev = max_dev.max((a - b).abs());
        }
        assert!(max_dev <= 1.0 + 1e-4 && max_dev > 0.5);
    }

    #[test]
    fn frame_noise_is_keyed_by_frame_index() {
        let phantom = Phantom::uniform(presets::pla5(), 40, 40, 1.0, [80.0, 80.0]).unwrap();
        let mut a = RigSim::new(phantom.clone(), SimConfig::default()).unwrap();
        let mut b = RigSim::new(phantom.clone(), SimConfig::default()).unwrap();
        let (a0, a1) = (a.render_frame(), a.render_frame());
        assert_ne!(a0.depth, a1.depth);
        assert_eq!(a0.rgb, a1.rgb);
        assert_eq!(b.render_frame(), a0);
        let mut cfg = SimConfig::default();
        cfg.camera.depth_noise = f64::INFINITY;
        assert!(matches!(RigSim::new(phantom.clone(), cfg.clone()), Err(SimError::BadNoise(_))));
        cfg.camera.depth_noise = -1.0;
        assert!(matches!(RigSim::new(phantom, cfg), Err(SimError::BadNoise(_))));
    }

    #[test]
    fn laser_on_optical_axis_hits_principal_point() {
        let mut cfg = SimConfig::ideal();
        cfg.camera.position = [100.0, 100.0, 450.0];
        let mut sim = tpu_sim(cfg);
        sim.move_to(100.0, 100.0).unwrap();
        let spot = sim.project_laser().unwrap();
        assert!((spot.u - 320.0).abs() < 1e-9 && (spot.v - 240.0).abs() < 1e-9);
        assert!((spot.depth - 420.0).abs() < 1e-9);
    }

    #[test]
    fn laser_z_levels_are_collinear_with_principal_point() {
        let mut sim = tpu_sim(SimConfig::ideal());
        sim.move_to(60.0, 140.0).unwrap();
        let mut px = Vec::new();
        for z in [0.0, 15.0, 30.0] {
            sim.move_z(z).unwrap();
            let s = sim.project_laser().unwrap();
            px.push((s.u, s.v));
        }
        let cross = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
            (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
        };
        assert!(cross(px[0], px[1], px[2]).abs() < 1e-6);
        assert!(cross(px[0], px[2], (320.0, 240.0)).abs() < 1e-6);
        assert!(px[0] != px[2]);
    }

    #[test]
    fn laser_outside_frustum_is_an_error() {
        let mut cfg = SimConfig::ideal();
        cfg.camera.position = [100.0, 100.0, 60.0];
        let mut sim = tpu_sim(cfg);
        sim.move_to(200.0, 200.0).unwrap();
        assert!(matches!(sim.project_laser(), Err(SimError::OutOfFrame { .. })));
    }

    #[test]
    fn spot_profile_centroid_is_exact() {
        for &c in &[0.0, 0.3, -0.45, 0.5] {
            let (mut m0, mut m1) = (0.0, 0.0);
            for i in -10..=10 {
                let w = spot_profile(i as f64 - c, 2);
                m0 += w;
                m1 += w * i as f64;
            }
            assert!((m1 / m0 - c).abs() < 1e-12);
        }
    }

    #[test]
    fn restore_continues_identically() {
        let mut a = tpu_sim(SimConfig::default().with_seed(9));
        a.move_to(100.0, 100.0).unwrap();
        a.palpate(1.0, 45.0).unwrap();
        let snapshot = a.state();
        a.move_to(101.0, 100.0).unwrap();
        let next = a.palpate(1.0, 45.0).unwrap();

        let mut b = tpu_sim(SimConfig::default().with_seed(9));
        b.restore(snapshot);
        b.move_to(101.0, 100.0).unwrap();
        assert_eq!(b.palpate(1.0, 45.0).unwrap(), next);
    }

    #[test]
    fn sink_receives_audio_between_markers() {
        let (tx, rx) = std::sync::mpsc::channel();
        let mut sim = tpu_sim(SimConfig::default());
        sim.attach_sink(tx);
        sim.move_to(100.0, 100.0).unwrap();
        let rec = sim.palpate(1.0, 45.0).unwrap();
        let events: Vec<_> = rx.try_iter().collect();
        assert!(matches!(events.first(), Some(SensorEvent::PalpationStarted { index: 0, .. })));
        assert!(matches!(events.last(), Some(SensorEvent::PalpationFinished { index: 0, .. })));
        let left: Vec<i16> = events
            .iter()
            .filter_map(|e| match e {
                SensorEvent::AudioChunk { left, .. } => Some(left.clone()),
                _ => None,
            })
            .flatten()
            .collect();
        assert_eq!(left, rec.audio_left);
    }
}
