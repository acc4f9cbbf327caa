use std::sync::Mutex;

use coarse_rb::numerics::relative_frobenius;
use coarse_rb::offline::build_mixing_matrix;
use coarse_rb::Matrix;
use log::{Level, LevelFilter, Log, Metadata, Record};

struct Capture(Mutex<Vec<String>>);

impl Log for Capture {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= Level::Warn
    }
    fn log(&self, r: &Record) {
        if self.enabled(r.metadata()) {
            self.0.lock().unwrap().push(r.args().to_string());
        }
    }
    fn flush(&self) {}
}

static LOGGER: Capture = Capture(Mutex::new(Vec::new()));

#[test]
fn underdetermined_regression_warns_and_returns_min_norm() {
    log::set_logger(&LOGGER).unwrap();
    log::set_max_level(LevelFilter::Warn);

    let samples = Matrix::from_row_slice(
        3,
        6,
        &[
            1.0, 0.0, 2.0, 0.5, -1.0, 3.0, //
            0.0, 1.0, 1.0, -2.0, 0.3, 1.0, //
            2.0, 1.0, 0.0, 1.0, 1.0, -1.0,
        ],
    );
    let skeletons = [0, 1, 3, 4];
    let m = build_mixing_matrix(&samples, &skeletons).unwrap();
    let warnings = LOGGER.0.lock().unwrap().clone();
    assert!(
        warnings.iter().any(|w| w.contains("underdetermined")),
        "{warnings:?}"
    );

    let skel = Matrix::from_fn(3, 4, |r, c| samples[(r, skeletons[c])]);
    assert!(relative_frobenius(&(&skel * &m), &samples) < 1e-12);
    // Minimum-norm solution: skel^T (skel skel^T)^-1 samples.
    let gram = (&skel * skel.transpose()).try_inverse().unwrap();
    let oracle = skel.transpose() * gram * &samples;
    assert!(relative_frobenius(&m, &oracle) < 1e-10);

    LOGGER.0.lock().unwrap().clear();
    build_mixing_matrix(&samples, &[0, 2]).unwrap();
    assert!(LOGGER.0.lock().unwrap().is_empty());
}
