use approx::assert_relative_eq;
use p300_core::epochs::{difference_wave, extract_epochs, peak_summary, LatencyTable, PeakWindow};
use p300_core::eval::{evaluate, fit_on_blocks, training_curve, CvConfig};
use p300_core::io::{load_recording, save_recording_with, RecordingFormat, SampleType, SaveOptions};
use p300_core::layout::ElectrodeLayout;
use p300_core::model::{Condition, EpochSet, Label};
use p300_core::riemann::FeatureMode;
use p300_core::signal::{preprocess, PreprocessConfig};
use p300_core::sim::{
    gen_session, gen_session_with, synth_recording, ErpTemplates, ScheduleKind, SessionTiming, SynthConfig,
};
use p300_core::spatial::fit_spatial_filter;
use p300_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn session(seed: u64, snr: f64, templates: &ErpTemplates, kind: ScheduleKind) -> EpochSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = gen_session_with(&mut rng, SessionTiming::default(), kind).unwrap();
    let rec = synth_recording(&schedule, templates, snr, &SynthConfig::default(), &mut rng).unwrap();
    let pre = preprocess(&rec, &PreprocessConfig::default()).unwrap();
    extract_epochs(&pre, 0.6, &LatencyTable::default()).unwrap().set
}

#[test]
fn synthetic_recording_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let schedule = gen_session(&mut rng, SessionTiming::default()).unwrap();
    let rec = synth_recording(&schedule, &ErpTemplates::for_condition(Condition::Vr), 1.0, &SynthConfig::default(), &mut rng).unwrap();
    let bin = dir.path().join("s01_VR.bin");
    save_recording_with(&rec, &bin, RecordingFormat::ColumnarBinary, SaveOptions { sample_type: SampleType::F64le }).unwrap();
    let back = load_recording(&bin, RecordingFormat::ColumnarBinary).unwrap();
    assert_eq!(back, rec);
    let counts = back.session_counts().unwrap();
    assert_eq!((counts.events, counts.targets, counts.nontargets), (720, 120, 600));
}

#[test]
fn spatial_filter_recovers_injected_pattern() {
    let mut templates = ErpTemplates::for_condition(Condition::Pc);
    templates.components.retain(|c| c.name == "P300");
    let injected = templates.components[0].spatial_weights.clone();
    let set = session(2, 3.0, &templates, ScheduleKind::RandomPartitions);
    let ta: Vec<_> = set.epochs.iter().filter(|e| e.label == Label::Target).map(|e| &e.data).collect();
    let nt: Vec<_> = set.epochs.iter().filter(|e| e.label == Label::NonTarget).map(|e| &e.data).collect();
    let filter = fit_spatial_filter(&ta, &nt, 4).unwrap();
    // forward pattern of the first component: C w
    let c = p300_core::spatial::mean_covariance(&ta, &nt).unwrap();
    let w = filter.weights.row(0).transpose();
    let pattern = &c * w;
    let corr = pearson(pattern.as_slice(), &injected);
    assert!(corr.abs() > 0.95, "correlation {corr}");
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn row_column_schedule_gives_perfect_single_repetition_hits() {
    let set = session(3, 20.0, &ErpTemplates::for_condition(Condition::Pc), ScheduleKind::RowColumn);
    let train: Vec<u8> = (0..6).collect();
    let test: Vec<u8> = (6..12).collect();
    let trained = fit_on_blocks(&set, &train, 4, FeatureMode::Augmented).unwrap();
    let m = evaluate(&trained, &set, &test, &[1, 5]).unwrap();
    assert_eq!(m[0].hr, 1.0);
    assert_eq!(m[1].hr, 1.0);
    assert!(m[1].auc > 0.99);
}

#[test]
fn overlapping_train_and_test_blocks_are_rejected() {
    let set = session(4, 1.0, &ErpTemplates::for_condition(Condition::Pc), ScheduleKind::RandomPartitions);
    let trained = fit_on_blocks(&set, &[0, 1, 2, 3], 4, FeatureMode::Augmented).unwrap();
    let err = evaluate(&trained, &set, &[3, 4, 5], &[1]).unwrap_err();
    assert!(matches!(err, Error::Leakage(_)));
}

#[test]
fn training_curve_is_identical_across_thread_counts() {
    let set = session(5, 0.5, &ErpTemplates::for_condition(Condition::Vr), ScheduleKind::RandomPartitions);
    let cfg = CvConfig {
        fractions: vec![0.2, 0.5],
        n_random_sets: 3,
        seed: 11,
        ..Default::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| training_curve(&set, &cfg, "s05").unwrap())
    };
    let (one, three) = (run(1), run(3));
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&three).unwrap());
    assert_eq!(one.rows.len(), 2 * 5);
    for row in &one.rows {
        for v in [row.hr_mean, row.ba_mean, row.auc_mean] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(row.itr >= 0.0);
    }
    let areas = one.curve_auc_over_fraction.iter().filter(|a| a.at == 1.0).count();
    assert_eq!(areas, 3);
}

#[test]
fn noiseless_erp_peaks_at_template_latencies() {
    let timing = SessionTiming {
        soa_ms: 1000.0,
        feedback_pause_ms: 0.0,
        ..Default::default()
    };
    let templates = ErpTemplates::for_condition(Condition::Pc);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let schedule = gen_session(&mut rng, timing).unwrap();
    let rec = synth_recording(&schedule, &templates, f64::INFINITY, &SynthConfig::default(), &mut rng).unwrap();
    let pre = preprocess(&rec, &PreprocessConfig::default()).unwrap();
    let set = extract_epochs(&pre, 1.0, &LatencyTable::default()).unwrap().set;
    let wave = difference_wave(&set).unwrap();
    let rows = peak_summary(wave.matrix(), 128.0, &set.channel_labels, &PeakWindow::standard()).unwrap();
    let p300 = rows.iter().find(|r| r.component == "P300" && r.channel == "PZ").unwrap();
    // the template onset is shifted by round(38.1 ms) at 512 Hz and the epoch
    // by 5 samples at 128 Hz; both are 39.0625 ms
    assert!((p300.latency_ms - 380.0).abs() <= 1000.0 / 128.0 * 2.0, "{}", p300.latency_ms);
    assert!(p300.amplitude_uv > 0.0);
    let layout = ElectrodeLayout::standard_16();
    assert_eq!(layout.labels(), &set.channel_labels[..]);
    assert_relative_eq!(set.sample_rate, 128.0);
}
