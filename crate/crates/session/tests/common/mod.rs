#![allow(dead_code)]

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use palpbench_core::dsp::{Mfcc, MfccConfig};
use palpbench_core::learn::{ModelDoc, SvmConfig};
use palpbench_core::sim::presets;
use palpbench_core::{Phantom, SimConfig};
use palpbench_session::config::{PlanSpec, SessionConfig};
use palpbench_session::scenarios;
use palpbench_session::store::DataRoot;
use tempfile::TempDir;

pub fn blocks() -> Phantom {
    scenarios::block_phantom(presets::reference_materials()).unwrap()
}

/// SVM trained once per test binary on the block phantom.
pub fn svm() -> &'static ModelDoc {
    static MODEL: OnceLock<ModelDoc> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mfcc = Mfcc::new(MfccConfig::default()).unwrap();
        let (data, _) =
            scenarios::collect_dataset(&blocks(), &SimConfig::default().with_seed(77), |_| Default::default(), &mfcc).unwrap();
        ModelDoc::train_svm(&data, &SvmConfig::default()).unwrap()
    })
}

/// Data root holding phantom `blocks` and model `svm`.
pub fn data_root() -> (TempDir, DataRoot) {
    let tmp = tempfile::tempdir().unwrap();
    let root = DataRoot::open(tmp.path()).unwrap();
    root.save_phantom("blocks", &blocks()).unwrap();
    root.save_model("svm", svm()).unwrap();
    (tmp, root)
}

pub fn raster(nx: usize, ny: usize, step: f64) -> PlanSpec {
    PlanSpec::Raster {
        origin: [90.5, 90.5],
        nx,
        ny,
        step,
    }
}

pub fn config(id: &str, plan: PlanSpec) -> SessionConfig {
    let mut c = SessionConfig::new(id, "blocks", plan);
    c.model = Some("svm".into());
    c
}

pub fn wait_until(what: &str, timeout: Duration, mut f: impl FnMut() -> bool) {
    let end = Instant::now() + timeout;
    while !f() {
        assert!(Instant::now() < end, "timed out waiting for {what}");
        std::thread::sleep(Duration::from_millis(5));
    }
}
