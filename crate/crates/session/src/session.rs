//! Session lifecycle: create, run (plan → rig → record → features →
//! classification → map), pause/resume/stop, crash recovery.

use std::collections::HashMap;
use std::io::Cursor;
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use palpbench_core::dsp::{DspError, FeatureRow, Mfcc};
use palpbench_core::learn::{argmax, ModelDoc};
use palpbench_core::scan::{build_probability_map, polyline_plan, raster_plan, spoke_plan, Pattern, PixelMapper, RoiPolygon, ScanError, ScanPlan};
use palpbench_core::sim::SimError;
use palpbench_core::{Phantom, RigSim, SimConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::config::{valid_id, PlanSpec, SessionConfig};
use crate::events::{EventBus, EventKind};
use crate::persist::{MapEntry, Manifest, Prediction, SessionDir, SessionState, MANIFEST_VERSION};
use crate::pipeline::{feature_row, prediction};
use crate::rig::Rig;
use crate::store::{sha256_hex, write_atomic, CalibrationDoc, DataRoot, StoreError};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("plan: {0}")]
    Scan(#[from] ScanError),
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
    #[error("features: {0}")]
    Dsp(#[from] DspError),
    #[error("{0} plans need a calibration")]
    MissingCalibration(&'static str),
    #[error("session '{id}' is {state}; cannot {action}")]
    BadState { id: String, state: &'static str, action: &'static str },
    #[error("session '{0}' is already running")]
    Busy(String),
    #[error("session '{0}' has no active run")]
    NotRunning(String),
    #[error("session worker panicked")]
    Panicked,
}

/// Reader snapshot of a session, published by its single writer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub state: SessionState,
    pub completed: usize,
    pub plan_len: usize,
    pub pattern: Pattern,
    pub fault: Option<String>,
    pub class_names: Vec<String>,
    pub model: Option<String>,
    pub config_hash: String,
}

impl SessionView {
    fn from_manifest(m: &Manifest) -> Self {
        Self {
            id: m.id.clone(),
            state: m.state,
            completed: m.completed(),
            plan_len: m.plan.points.len(),
            pattern: m.plan.pattern,
            fault: m.fault.clone(),
            class_names: m.class_names.clone(),
            model: m.config.model.clone(),
            config_hash: m.config_hash.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Pause,
    Resume,
    Stop,
}

/// Turn a plan request into concrete stage points.
pub fn resolve_plan(spec: &PlanSpec, phantom: &Phantom, sim: &SimConfig, calibration: Option<&CalibrationDoc>) -> Result<ScanPlan, SessionError> {
    let limits = &sim.limits;
    let needs_cal = |kind| calibration.ok_or(SessionError::MissingCalibration(kind));
    match spec {
        PlanSpec::Raster { origin, nx, ny, step } => Ok(raster_plan(*origin, *nx, *ny, *step, limits)?),
        PlanSpec::Spokes { roi_px, params } => {
            let cal = needs_cal("spoke")?;
            let t = cal.transform()?;
            let frame = RigSim::new(phantom.clone(), sim.clone())?.render_frame();
            let depth = |u: f64, v: f64| frame.depth_at(u, v);
            let mapper = PixelMapper {
                intrinsics: cal.intrinsics,
                transform: &t,
                depth: &depth,
            };
            Ok(spoke_plan(&RoiPolygon::new(roi_px.clone())?, &mapper, *params, limits)?)
        }
        PlanSpec::Polyline { vertices_px, spacing } => {
            let cal = needs_cal("polyline")?;
            let t = cal.transform()?;
            let frame = RigSim::new(phantom.clone(), sim.clone())?.render_frame();
            let depth = |u: f64, v: f64| frame.depth_at(u, v);
            let mapper = PixelMapper {
                intrinsics: cal.intrinsics,
                transform: &t,
                depth: &depth,
            };
            Ok(polyline_plan(vertices_px, &mapper, *spacing, limits)?)
        }
    }
}

/// Persist a new IDLE session. Every referenced phantom, calibration and
/// model must exist.
pub fn create_session(root: &DataRoot, config: SessionConfig) -> Result<Manifest, SessionError> {
    let plan = {
        let phantom = root.load_phantom(&config.phantom)?;
        let cal = config.calibration.as_deref().map(|c| root.load_calibration(c)).transpose()?;
        resolve_plan(&config.plan, &phantom, &config.sim, cal.as_ref())?
    };
    create_session_with_plan(root, config, plan)
}

/// As [`create_session`] with an explicit, already resolved plan.
pub fn create_session_with_plan(root: &DataRoot, config: SessionConfig, plan: ScanPlan) -> Result<Manifest, SessionError> {
    if !valid_id(&config.id) {
        return Err(StoreError::BadId(config.id.clone()).into());
    }
    let dir = SessionDir::new(root.session_dir(&config.id)?);
    if dir.path.exists() {
        return Err(StoreError::Exists {
            kind: "session",
            id: config.id.clone(),
        }
        .into());
    }
    let phantom_sha256 = sha256_hex(&root.phantom_bytes(&config.phantom)?);
    root.load_phantom(&config.phantom)?;
    let calibration_sha256 = match &config.calibration {
        Some(c) => {
            root.load_calibration(c)?;
            Some(sha256_hex(&root.calibration_bytes(c)?))
        }
        None => None,
    };
    let (model_sha256, class_names) = match &config.model {
        Some(id) => {
            let m = root.load_model(id)?;
            (Some(sha256_hex(&root.model_bytes(id)?)), m.class_names)
        }
        None => (None, Vec::new()),
    };
    Mfcc::new(config.mfcc.clone())?;
    dir.create_dirs()?;
    let features_sha256 = dir.write_features(&[])?;
    let predictions_sha256 = match &model_sha256 {
        Some(_) => Some(dir.write_predictions(&[], &class_names)?),
        None => None,
    };
    let mut m = Manifest {
        format_version: MANIFEST_VERSION,
        id: config.id.clone(),
        config_hash: config.hash(),
        config,
        phantom_sha256,
        calibration_sha256,
        model_sha256,
        class_names,
        plan,
        state: SessionState::Idle,
        fault: None,
        sim_state: None,
        records: Vec::new(),
        features_sha256,
        predictions_sha256,
        map: None,
        checksum: String::new(),
    };
    dir.save_manifest(&mut m)?;
    Ok(m)
}

fn png_bytes(img: &image::RgbaImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("in-memory png");
    buf.into_inner()
}

/// Interpolated probability map over the whole plan, written next to the
/// manifest.
pub fn export_map(dir: &SessionDir, m: &Manifest, preds: &[Prediction]) -> Result<Option<MapEntry>, SessionError> {
    let mut probs: Vec<Option<Vec<f64>>> = vec![None; m.plan.points.len()];
    for p in preds {
        if let Some(slot) = probs.get_mut(p.index) {
            *slot = p.probs.clone();
        }
    }
    if probs.iter().all(Option::is_none) {
        return Ok(None);
    }
    let map = build_probability_map(&m.plan, &probs, m.class_names.clone(), m.config.map_resolution)?;
    let png = png_bytes(&map.render_blend());
    let json = serde_json::to_vec_pretty(&map.georeference()).expect("map json");
    write_atomic(&dir.map_png_path(), &png)?;
    write_atomic(&dir.map_json_path(), &json)?;
    Ok(Some(MapEntry {
        png_sha256: sha256_hex(&png),
        json_sha256: sha256_hex(&json),
    }))
}

fn point_result_payload(row: &FeatureRow, pred: Option<&Prediction>, class_names: &[String]) -> serde_json::Value {
    let probs = pred.and_then(|p| p.probs.clone());
    json!({
        "index": row.index,
        "x": row.x,
        "y": row.y,
        "material": row.material,
        "mask": row.mask.to_string(),
        "predicted": probs.as_ref().map(|p| class_names[argmax(p)].clone()),
        "probs": probs,
    })
}

struct Worker {
    root: DataRoot,
    dir: SessionDir,
    bus: Arc<EventBus>,
    view: Arc<RwLock<SessionView>>,
    control: Receiver<Control>,
    pace: Duration,
}

impl Worker {
    fn set_state(&self, m: &mut Manifest, state: SessionState, fault: Option<String>, t_ns: u64) -> Result<(), SessionError> {
        m.state = state;
        m.fault = fault;
        self.dir.save_manifest(m)?;
        *self.view.write().expect("view lock") = SessionView::from_manifest(m);
        self.bus.publish(
            EventKind::State,
            t_ns,
            json!({ "state": state, "completed": m.completed(), "plan_len": m.plan.points.len(), "fault": m.fault }),
        )?;
        Ok(())
    }

    /// Block while paused. Returns false when the run should end.
    fn wait_resume(&self, m: &mut Manifest, t_ns: u64) -> Result<bool, SessionError> {
        self.set_state(m, SessionState::Paused, None, t_ns)?;
        loop {
            match self.control.recv() {
                Ok(Control::Resume) => {
                    self.set_state(m, SessionState::Running, None, t_ns)?;
                    return Ok(true);
                }
                Ok(Control::Pause) => continue,
                Ok(Control::Stop) | Err(_) => return Ok(false),
            }
        }
    }

    fn run(self) -> Result<SessionView, SessionError> {
        let mut m = self.dir.load_manifest()?;
        let resumable = [SessionState::Idle, SessionState::Paused, SessionState::Fault, SessionState::Running];
        if !resumable.contains(&m.state) {
            return Err(SessionError::BadState {
                id: m.id.clone(),
                state: m.state.as_str(),
                action: "run",
            });
        }
        self.dir.roll_back_tables(&m)?;
        self.dir.verify(&m)?;
        let cfg = m.config.clone();
        let phantom_bytes = self.root.phantom_bytes(&cfg.phantom)?;
        if sha256_hex(&phantom_bytes) != m.phantom_sha256 {
            return Err(StoreError::Integrity {
                what: format!("phantom '{}'", cfg.phantom),
                expected: m.phantom_sha256.clone(),
                actual: sha256_hex(&phantom_bytes),
            }
            .into());
        }
        let model = match (&cfg.model, &m.model_sha256) {
            (Some(id), Some(expected)) => {
                let actual = sha256_hex(&self.root.model_bytes(id)?);
                if &actual != expected {
                    return Err(StoreError::Integrity {
                        what: format!("model '{id}'"),
                        expected: expected.clone(),
                        actual,
                    }
                    .into());
                }
                Some(self.root.load_model(id)?)
            }
            _ => None,
        };
        let mfcc = Mfcc::new(cfg.mfcc.clone())?;
        let mut sim = RigSim::new(self.root.load_phantom(&cfg.phantom)?, cfg.sim.clone())?;
        if let Some(s) = m.sim_state {
            sim.restore(s);
        }
        let mut t_ns = sim.clock_ns();
        let mut rows = self.dir.read_features(&m)?;
        let mut preds = self.dir.read_predictions(&m)?;

        if m.state == SessionState::Running {
            // A previous process died mid-run.
            self.set_state(&mut m, SessionState::Fault, Some("run interrupted".into()), t_ns)?;
        }
        let seen = self.bus.result_indices();
        for row in rows.iter().filter(|r| !seen.contains(&r.index)) {
            let pred = preds.iter().find(|p| p.index == row.index);
            self.bus
                .publish(EventKind::PointResult, t_ns, point_result_payload(row, pred, &m.class_names))?;
        }
        self.set_state(&mut m, SessionState::Running, None, t_ns)?;

        let rig = Rig::start(sim, self.bus.clone());
        let outcome = self.drive(&mut m, &rig, &mfcc, model.as_ref(), &mut rows, &mut preds, &mut t_ns);
        rig.shutdown();
        outcome?;
        Ok(self.view.read().expect("view lock").clone())
    }

    #[allow(clippy::too_many_arguments)]
    fn drive(
        &self,
        m: &mut Manifest,
        rig: &Rig,
        mfcc: &Mfcc,
        model: Option<&ModelDoc>,
        rows: &mut Vec<FeatureRow>,
        preds: &mut Vec<Prediction>,
        t_ns: &mut u64,
    ) -> Result<(), SessionError> {
        let settings = m.config.palpation;
        for index in m.completed()..m.plan.points.len() {
            match self.control.try_recv() {
                Ok(Control::Pause) => {
                    if !self.wait_resume(m, *t_ns)? {
                        return Ok(());
                    }
                }
                Ok(Control::Stop) => {
                    self.set_state(m, SessionState::Paused, None, *t_ns)?;
                    return Ok(());
                }
                Ok(Control::Resume) | Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => {}
            }
            let visit = match rig.visit(index, m.plan.points[index], settings) {
                Ok(v) => v,
                Err(msg) => {
                    *t_ns = rig.clock_ns();
                    self.set_state(m, SessionState::Fault, Some(msg), *t_ns)?;
                    return Ok(());
                }
            };
            let row = feature_row(index, &visit.material, &visit.record, mfcc);
            let pred = model.map(|md| prediction(&row, md));
            let entry = self.dir.write_record(index, &visit.record, &visit.material)?;
            rows.push(row);
            if let Some(p) = pred {
                preds.push(p);
            }
            m.features_sha256 = self.dir.write_features(rows)?;
            if m.predictions_sha256.is_some() {
                m.predictions_sha256 = Some(self.dir.write_predictions(preds, &m.class_names)?);
            }
            m.records.push(entry);
            m.sim_state = Some(visit.sim_state);
            self.dir.save_manifest(m)?;
            *t_ns = visit.record.t_end_ns;
            let row = rows.last().expect("just pushed");
            let pred = preds.iter().rev().find(|p| p.index == index);
            self.bus
                .publish(EventKind::PointResult, *t_ns, point_result_payload(row, pred, &m.class_names))?;
            *self.view.write().expect("view lock") = SessionView::from_manifest(m);
            if !self.pace.is_zero() {
                std::thread::sleep(self.pace);
            }
        }
        *t_ns = rig.clock_ns();
        m.map = export_map(&self.dir, m, preds)?;
        self.set_state(m, SessionState::Done, None, *t_ns)?;
        Ok(())
    }
}

/// A session known to this process, with its event bus and (while running)
/// its worker thread.
pub struct LiveSession {
    pub id: String,
    pub dir: SessionDir,
    pub bus: Arc<EventBus>,
    view: Arc<RwLock<SessionView>>,
    control: Mutex<Option<Sender<Control>>>,
    worker: Mutex<Option<JoinHandle<Result<SessionView, SessionError>>>>,
}

impl LiveSession {
    fn open(root: &DataRoot, id: &str) -> Result<Self, SessionError> {
        let dir = SessionDir::new(root.session_dir(id)?);
        if !dir.manifest_path().exists() {
            return Err(StoreError::NotFound {
                kind: "session",
                id: id.to_string(),
            }
            .into());
        }
        let m = dir.load_manifest()?;
        let mut view = SessionView::from_manifest(&m);
        if view.state == SessionState::Running {
            view.state = SessionState::Fault;
            view.fault = Some("run interrupted".into());
        }
        let bus = Arc::new(EventBus::with_log(&dir.events_path())?);
        Ok(Self {
            id: id.to_string(),
            dir,
            bus,
            view: Arc::new(RwLock::new(view)),
            control: Mutex::new(None),
            worker: Mutex::new(None),
        })
    }

    pub fn view(&self) -> SessionView {
        self.view.read().expect("view lock").clone()
    }

    pub fn is_running(&self) -> bool {
        self.worker.lock().expect("worker lock").as_ref().is_some_and(|h| !h.is_finished())
    }

    fn start(&self, root: &DataRoot, pace_ms: Option<u64>) -> Result<(), SessionError> {
        let mut worker = self.worker.lock().expect("worker lock");
        if worker.as_ref().is_some_and(|h| !h.is_finished()) {
            return Err(SessionError::Busy(self.id.clone()));
        }
        let state = self.view().state;
        if !matches!(state, SessionState::Idle | SessionState::Paused | SessionState::Fault) {
            return Err(SessionError::BadState {
                id: self.id.clone(),
                state: state.as_str(),
                action: "run",
            });
        }
        let m = self.dir.load_manifest()?;
        let (tx, rx) = mpsc::channel();
        let w = Worker {
            root: root.clone(),
            dir: self.dir.clone(),
            bus: self.bus.clone(),
            view: self.view.clone(),
            control: rx,
            pace: Duration::from_millis(pace_ms.unwrap_or(m.config.pace_ms)),
        };
        let view = self.view.clone();
        let handle = std::thread::Builder::new()
            .name(format!("session-{}", self.id))
            .spawn(move || {
                let out = w.run();
                if let Err(e) = &out {
                    let mut v = view.write().expect("view lock");
                    v.state = SessionState::Fault;
                    v.fault = Some(e.to_string());
                }
                out
            })
            .expect("spawn session worker");
        *worker = Some(handle);
        *self.control.lock().expect("control lock") = Some(tx);
        Ok(())
    }

    fn send(&self, c: Control) -> Result<(), SessionError> {
        // The worker outlives its final state change by a moment.
        let active = matches!(self.view().state, SessionState::Running | SessionState::Paused);
        if !active || !self.is_running() {
            return Err(SessionError::NotRunning(self.id.clone()));
        }
        let tx = self.control.lock().expect("control lock");
        tx.as_ref()
            .and_then(|t| t.send(c).ok())
            .ok_or_else(|| SessionError::NotRunning(self.id.clone()))
    }

    /// Wait for the current run, if any, to end.
    pub fn wait(&self) -> Result<SessionView, SessionError> {
        let handle = self.worker.lock().expect("worker lock").take();
        match handle {
            Some(h) => h.join().map_err(|_| SessionError::Panicked)?,
            None => Ok(self.view()),
        }
    }
}

/// All sessions under one data root. Handlers go through here and never
/// touch a rig directly.
pub struct Service {
    root: DataRoot,
    live: Mutex<HashMap<String, Arc<LiveSession>>>,
}

impl Service {
    pub fn new(root: DataRoot) -> Self {
        Self {
            root,
            live: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &DataRoot {
        &self.root
    }

    pub fn create(&self, config: SessionConfig) -> Result<SessionView, SessionError> {
        let m = create_session(&self.root, config)?;
        Ok(SessionView::from_manifest(&m))
    }

    pub fn get(&self, id: &str) -> Result<Arc<LiveSession>, SessionError> {
        let mut live = self.live.lock().expect("registry lock");
        if let Some(s) = live.get(id) {
            return Ok(s.clone());
        }
        let s = Arc::new(LiveSession::open(&self.root, id)?);
        live.insert(id.to_string(), s.clone());
        Ok(s)
    }

    pub fn list(&self) -> Result<Vec<SessionView>, SessionError> {
        self.root.list("sessions")?.iter().map(|id| Ok(self.get(id)?.view())).collect()
    }

    /// Start a run, or continue a PAUSED or FAULT session from its last
    /// checkpoint.
    pub fn run(&self, id: &str, pace_ms: Option<u64>) -> Result<(), SessionError> {
        self.get(id)?.start(&self.root, pace_ms)
    }

    pub fn pause(&self, id: &str) -> Result<(), SessionError> {
        self.get(id)?.send(Control::Pause)
    }

    /// Wake a paused worker, or start a new run from the checkpoint.
    pub fn resume(&self, id: &str) -> Result<(), SessionError> {
        let s = self.get(id)?;
        if s.is_running() {
            s.send(Control::Resume)
        } else {
            s.start(&self.root, None)
        }
    }

    pub fn stop(&self, id: &str) -> Result<(), SessionError> {
        self.get(id)?.send(Control::Stop)
    }

    pub fn wait(&self, id: &str) -> Result<SessionView, SessionError> {
        self.get(id)?.wait()
    }
}
