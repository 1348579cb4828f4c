use std::cell::RefCell;

use forecaster_core::data::{FeatureFrame, FrameOrigin, Scaler};
use forecaster_core::interleave::{
    forecast, read_series_csv, to_physical, write_series_csv, InterleaveConfig, SeriesPath, SeriesScale, TrainTail, WindowForecaster,
    WindowModel,
};
use forecaster_core::rng::derive_seed;
use forecaster_core::Result;
use ndarray::{s, Array2, ArrayView2};

const N: usize = 9;
const M: usize = 4;

/// Records every input; output depends on the call index so that any
/// mix-up between windows is visible.
struct RecordingBilstm {
    inputs: RefCell<Vec<Array2<f64>>>,
    outputs: RefCell<Vec<Array2<f64>>>,
}

impl WindowModel for RecordingBilstm {
    fn predict(&self, window: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let k = self.inputs.borrow().len() as f64;
        let out = window.mapv(|v| (v * 0.7 + 0.01 * k).sin());
        self.inputs.borrow_mut().push(window.to_owned());
        self.outputs.borrow_mut().push(out.clone());
        Ok(out)
    }
}

struct RecordingPgan {
    inputs: RefCell<Vec<(Array2<f64>, u64)>>,
    outputs: RefCell<Vec<Array2<f64>>>,
}

impl WindowForecaster for RecordingPgan {
    fn window_len(&self) -> usize {
        N
    }

    fn forecast_window(&self, seed_rows: ArrayView2<'_, f64>, seed: u64) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((N, seed_rows.ncols()));
        out.slice_mut(s![..N - 1, ..]).assign(&seed_rows);
        let jitter = (seed % 1000) as f64 * 1e-4;
        for j in 0..seed_rows.ncols() {
            out[[N - 1, j]] = (seed_rows[[N - 2, j]] * 0.9 + jitter).tanh();
        }
        self.inputs.borrow_mut().push((seed_rows.to_owned(), seed));
        self.outputs.borrow_mut().push(out.clone());
        Ok(out)
    }
}

fn stubs() -> (RecordingPgan, RecordingBilstm) {
    (
        RecordingPgan {
            inputs: RefCell::new(Vec::new()),
            outputs: RefCell::new(Vec::new()),
        },
        RecordingBilstm {
            inputs: RefCell::new(Vec::new()),
            outputs: RefCell::new(Vec::new()),
        },
    )
}

fn train_frame(rows: usize) -> FeatureFrame {
    let data = Array2::from_shape_fn((rows, M), |(t, j)| ((t as f64) * 0.37 + j as f64).sin() * 0.9);
    FeatureFrame::telemetry(data, FrameOrigin::Scaled).unwrap()
}

#[test]
fn dependency_audit_over_five_windows() {
    let frame = train_frame(40);
    let tail = TrainTail::from_frame(&frame, N).unwrap();
    let (pgan, bilstm) = stubs();
    let cfg = InterleaveConfig {
        horizon_windows: 5,
        seed: 77,
    };
    let (primary, secondary) = forecast(&pgan, &bilstm, &tail, &cfg).unwrap();
    assert_eq!(primary.path, SeriesPath::PredganToBilstm);
    assert_eq!(secondary.path, SeriesPath::BilstmToPredgan);

    let b_in = bilstm.inputs.borrow();
    let b_out = bilstm.outputs.borrow();
    let p_in = pgan.inputs.borrow();
    let p_out = pgan.outputs.borrow();
    assert_eq!((b_in.len(), p_in.len()), (5, 5));

    let last = frame.rows().slice(s![frame.len() - N.., ..]).to_owned();
    assert_eq!(b_in[0], last);
    assert_eq!(p_in[0].0, last.slice(s![1.., ..]));
    for k in 1..5 {
        assert_eq!(b_in[k], p_out[k - 1], "BiLSTM window {k} must read the previous PGAN window");
        assert_eq!(
            p_in[k].0,
            b_out[k - 1].slice(s![1.., ..]),
            "PGAN window {k} must read the last n-1 rows of the previous BiLSTM window"
        );
    }
    for (k, (_, seed)) in p_in.iter().enumerate() {
        assert_eq!(*seed, derive_seed(77, k as u64));
    }
    assert_eq!(primary.windows, *b_out);
    assert_eq!(secondary.windows, *p_out);
}

#[test]
fn horizon_sets_row_count() {
    let frame = train_frame(20);
    let tail = TrainTail::from_frame(&frame, N).unwrap();
    let (pgan, bilstm) = stubs();
    let cfg = InterleaveConfig {
        horizon_windows: 3,
        seed: 1,
    };
    let (primary, secondary) = forecast(&pgan, &bilstm, &tail, &cfg).unwrap();
    assert_eq!(primary.n_rows(), 27);
    assert_eq!(secondary.n_rows(), 27);
    assert_eq!(primary.rows().dim(), (27, M));
}

#[test]
fn forecasts_are_deterministic() {
    let frame = train_frame(20);
    let tail = TrainTail::from_frame(&frame, N).unwrap();
    let cfg = InterleaveConfig {
        horizon_windows: 4,
        seed: 9,
    };
    let run = || {
        let (pgan, bilstm) = stubs();
        forecast(&pgan, &bilstm, &tail, &cfg).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn tail_rejects_unscaled_frames() {
    let rows = Array2::zeros((12, M));
    let raw = FeatureFrame::telemetry(rows, FrameOrigin::Raw).unwrap();
    assert!(TrainTail::from_frame(&raw, N).is_err());
    assert!(TrainTail::from_frame(&train_frame(5), N).is_err());
}

#[test]
fn physical_round_trip() {
    let mins = vec![150.0, 300.0, 80.0, 30.0];
    let maxs = vec![220.0, 520.0, 130.0, 50.0];
    let scaler = Scaler::new(mins.clone(), maxs.clone()).unwrap();
    let frame = train_frame(20);
    let tail = TrainTail::from_frame(&frame, N).unwrap();
    let (pgan, bilstm) = stubs();
    let cfg = InterleaveConfig {
        horizon_windows: 2,
        seed: 3,
    };
    let (primary, _) = forecast(&pgan, &bilstm, &tail, &cfg).unwrap();
    let phys = to_physical(&primary, &scaler).unwrap();
    assert_eq!(phys.scale, SeriesScale::Physical);
    let (model_rows, phys_rows) = (primary.rows(), phys.rows());
    for ((t, j), y) in model_rows.indexed_iter() {
        let expected = mins[j] + (y + 1.0) / 2.0 * (maxs[j] - mins[j]);
        assert!((phys_rows[[t, j]] - expected).abs() < 1e-9);
        let back = 2.0 * (phys_rows[[t, j]] - mins[j]) / (maxs[j] - mins[j]) - 1.0;
        assert!((back - y).abs() < 1e-12);
    }
}

#[test]
fn csv_export_is_long_format() {
    let frame = train_frame(20);
    let tail = TrainTail::from_frame(&frame, N).unwrap();
    let (pgan, bilstm) = stubs();
    let cfg = InterleaveConfig {
        horizon_windows: 1,
        seed: 0,
    };
    let (a, b) = forecast(&pgan, &bilstm, &tail, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    let names: Vec<String> = ["volt", "rotate", "pressure", "vibration"].map(String::from).to_vec();
    write_series_csv(&path, &[&a, &b], &names).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,feature,value,path,scale");
    assert_eq!(lines.len(), 1 + 2 * N * M);
    assert!(lines[1].starts_with("0,volt,") && lines[1].ends_with(",predgan_to_bilstm,model"));
    assert!(lines.last().unwrap().ends_with(",bilstm_to_predgan,model"));
    let back = read_series_csv(&path, &names).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0].rows, a.rows());
    assert_eq!(back[1].path, SeriesPath::BilstmToPredgan);
    assert_eq!(back[1].rows, b.rows());
}
