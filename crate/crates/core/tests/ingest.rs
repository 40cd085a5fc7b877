use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use physio_core::ingest::{
    load_session, savgol_smooth, segment_windows, transform_features, write_features,
    zero_order_hold, FeatureConfig, FeatureMode, IngestError, Standardizer,
};
use proptest::prelude::*;

const HEADER: &str = "t,pace_mps,cadence_spm,vertical_oscillation_mm,altitude_m,stance_time_pct,vertical_ratio,step_length_mm,hr_bpm";
const SIDECAR: &str =
    r#"{"runner_id":"r1","session_id":"s1","age_years":30,"sex":1,"height_m":1.8,"weight_kg":70}"#;

fn write_files(dir: &Path, csv: &str, breath: Option<&str>) -> PathBuf {
    let p = dir.join("s1.csv");
    std::fs::File::create(&p)
        .unwrap()
        .write_all(csv.as_bytes())
        .unwrap();
    std::fs::write(dir.join("s1.json"), SIDECAR).unwrap();
    if let Some(b) = breath {
        std::fs::write(dir.join("s1.breath.csv"), b).unwrap();
    }
    p
}

fn three_rows(hr_row2: &str) -> String {
    format!(
        "{HEADER}\n0,5,90,90,100,30,8.5,1200,120\n1,5,90,90,101,30,8.5,1200,121\n2,5,90,90,103,30,8.5,1200,{hr_row2}\n"
    )
}

#[test]
fn well_formed_csv_loads() {
    let dir = tempfile::tempdir().unwrap();
    let raw = load_session(&write_files(dir.path(), &three_rows("122"), None)).unwrap();
    assert_eq!(raw.len(), 3);
    assert_eq!(raw.meta.runner_id, "r1");
    assert_eq!(raw.channel("hr_bpm").unwrap()[2], Some(122.0));
}

#[test]
fn blank_hr_cell_masks_that_sample() {
    let dir = tempfile::tempdir().unwrap();
    let raw = load_session(&write_files(dir.path(), &three_rows(""), None)).unwrap();
    assert_eq!(raw.channel("hr_bpm").unwrap()[2], None);
    let fs = transform_features(&raw, &FeatureConfig::new(FeatureMode::Hr)).unwrap();
    assert_eq!(fs.mask, vec![1.0, 1.0, 0.0]);
}

#[test]
fn non_monotone_time_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv = format!("{HEADER}\n0,5,90,90,100,30,8.5,1200,120\n2,5,90,90,101,30,8.5,1200,121\n1,5,90,90,103,30,8.5,1200,122\n");
    let err = load_session(&write_files(dir.path(), &csv, None)).unwrap_err();
    assert!(matches!(err, IngestError::Ordering { .. }), "{err}");
}

#[test]
fn unknown_column_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv = format!("{HEADER},grade\n0,5,90,90,100,30,8.5,1200,120,1\n");
    let err = load_session(&write_files(dir.path(), &csv, None)).unwrap_err();
    assert!(matches!(err, IngestError::Schema(_)), "{err}");
}

#[test]
fn unit_transforms() {
    let dir = tempfile::tempdir().unwrap();
    let raw = load_session(&write_files(dir.path(), &three_rows("122"), None)).unwrap();
    let fs = transform_features(&raw, &FeatureConfig::new(FeatureMode::Hr)).unwrap();
    let row = fs.row(2);
    assert_eq!(row[0], 200.0);
    assert_eq!(row[1], 180.0);
    assert!((row[2] - 0.09 / 1.8).abs() < 1e-15);
    assert_eq!(row[3], 103.0);
    assert_eq!(row[4], 2.0);
    assert_eq!(row[5], 0.30);
    assert_eq!(row[6], 8.5);
    assert_eq!(row[7], 1.2);
    assert_eq!(fs.row(0)[4], 0.0);
}

#[test]
fn standing_pace_is_masked_not_infinite() {
    let dir = tempfile::tempdir().unwrap();
    let csv = format!("{HEADER}\n0,4,90,90,100,30,8.5,1200,120\n1,0,90,90,101,30,8.5,1200,121\n");
    let raw = load_session(&write_files(dir.path(), &csv, None)).unwrap();
    let fs = transform_features(&raw, &FeatureConfig::new(FeatureMode::Hr)).unwrap();
    assert_eq!(fs.mask, vec![1.0, 0.0]);
    assert!(fs.row(1)[0].is_finite());
}

#[test]
fn vo2_mode_uses_breath_file_and_appends_context() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = HEADER.to_string() + "\n";
    for t in 0..130 {
        csv += &format!("{t},4,85,80,100,31,8.0,1100,140\n");
    }
    let breath = "t_s,vo2_mlmin\n2.0,1000\n4.5,1100\n7.0,1200\n";
    let raw = load_session(&write_files(dir.path(), &csv, Some(breath))).unwrap();
    let cfg = FeatureConfig::new(FeatureMode::Vo2);
    let fs = transform_features(&raw, &cfg).unwrap();
    assert_eq!(fs.dim(), 15);
    assert_eq!(&fs.mask[..3], &[0.0, 0.0, 1.0]);
    let vo2 = fs.vo2.as_ref().unwrap();
    assert_eq!(vo2.len(), 130);
    // positional encodings: window index / 3 windows, window start / 7200
    let r = fs.row(125);
    assert_eq!(r[8], 140.0);
    assert_eq!(r[9], 2.0 / 3.0);
    assert_eq!(r[10], 120.0 / 7200.0);
    assert_eq!(r[12], 1.0);
    // HR mode leaves the VO2 gap unmasked
    let hr_fs = transform_features(&raw, &FeatureConfig::new(FeatureMode::Hr)).unwrap();
    assert_eq!(hr_fs.dim(), 8);
    assert!(hr_fs.mask.iter().all(|m| *m == 1.0));
}

#[test]
fn vo2_mode_without_source_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let raw = load_session(&write_files(dir.path(), &three_rows("122"), None)).unwrap();
    let err = transform_features(&raw, &FeatureConfig::new(FeatureMode::Vo2)).unwrap_err();
    assert!(matches!(err, IngestError::MissingTarget(_)));
}

#[test]
fn feature_table_is_not_accepted_as_raw_input() {
    let dir = tempfile::tempdir().unwrap();
    let raw = load_session(&write_files(dir.path(), &three_rows("122"), None)).unwrap();
    let fs = transform_features(&raw, &FeatureConfig::new(FeatureMode::Hr)).unwrap();
    let out = dir.path().join("feat.csv");
    write_features(&fs, &out).unwrap();
    std::fs::write(dir.path().join("feat.json"), SIDECAR).unwrap();
    assert!(matches!(load_session(&out), Err(IngestError::Schema(_))));
}

fn long_session(t_len: usize) -> physio_core::ingest::FeatureSession {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = HEADER.to_string() + "\n";
    for t in 0..t_len {
        csv += &format!(
            "{t},{},85,80,100,31,8.0,1100,{}\n",
            3.0 + (t % 7) as f64 * 0.1,
            120 + t % 11
        );
    }
    let raw = load_session(&write_files(dir.path(), &csv, None)).unwrap();
    transform_features(&raw, &FeatureConfig::new(FeatureMode::Hr)).unwrap()
}

#[test]
fn window_counts() {
    let fs = long_session(180);
    let w = segment_windows(&fs, 60, 60).unwrap();
    assert_eq!(
        w.iter().map(|w| w.start_index).collect::<Vec<_>>(),
        vec![0, 60, 120]
    );
    assert_eq!(segment_windows(&fs, 60, 30).unwrap().len(), 5);
    assert!(segment_windows(&long_session(59), 60, 60)
        .unwrap()
        .is_empty());
    assert!(segment_windows(&fs, 60, 61).is_err());
}

#[test]
fn non_overlapping_windows_tile_a_prefix() {
    let fs = long_session(250);
    let ws = segment_windows(&fs, 60, 60).unwrap();
    for (k, w) in ws.iter().enumerate() {
        assert_eq!(w.start_index, k * 60);
        assert_eq!(w.x.values(), &fs.x.values()[k * 60 * 8..(k + 1) * 60 * 8]);
        assert_eq!(w.hr, fs.hr[k * 60..(k + 1) * 60]);
    }
    assert_eq!(ws.len(), 4);
}

#[test]
fn standardizer_zero_mean_unit_sd() {
    let fs = long_session(120);
    let st = Standardizer::fit([&fs]).unwrap();
    let z = st.apply(&fs);
    for j in [0usize, 7] {
        let col: Vec<f64> = (0..z.len()).map(|i| z.row(i)[j]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        assert!(m.abs() < 1e-9);
    }
}

/// Least-squares cubic through the window, evaluated at the point `center`.
fn lstsq_oracle(xs: &[f64], ys: &[f64], center: f64, order: usize) -> f64 {
    let a = DMatrix::from_fn(xs.len(), order + 1, |r, c| (xs[r] - center).powi(c as i32));
    let b = DVector::from_column_slice(ys);
    let coef = a.svd(true, true).solve(&b, 1e-14).unwrap();
    coef[0]
}

#[test]
fn savgol_matches_least_squares_oracle_including_edges() {
    let series: Vec<f64> = (0..40)
        .map(|i| (i as f64 * 0.37).sin() * 5.0 + if i % 2 == 0 { 0.3 } else { -0.3 })
        .collect();
    let out = savgol_smooth(&series, 15, 3).unwrap();
    for i in 0..series.len() {
        let lo = i.saturating_sub(7);
        let hi = (i + 7).min(series.len() - 1);
        let xs: Vec<f64> = (lo..=hi).map(|j| j as f64).collect();
        let expect = lstsq_oracle(&xs, &series[lo..=hi], i as f64, 3);
        assert!(
            (out[i] - expect).abs() < 1e-9,
            "i={i}: {} vs {expect}",
            out[i]
        );
    }
}

#[test]
fn savgol_reduces_alternating_noise() {
    let cubic: Vec<f64> = (0..60)
        .map(|i| {
            let t = i as f64 / 10.0;
            0.5 * t * t * t - 2.0 * t * t + t + 3.0
        })
        .collect();
    let noisy: Vec<f64> = cubic
        .iter()
        .enumerate()
        .map(|(i, c)| c + if i % 2 == 0 { 0.2 } else { -0.2 })
        .collect();
    let out = savgol_smooth(&noisy, 15, 3).unwrap();
    let err = |s: &[f64]| {
        s.iter()
            .zip(&cubic)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
    };
    assert!(err(&out) < err(&noisy));
}

#[test]
fn savgol_reproduces_t_cubed() {
    let s: Vec<f64> = (0..=20).map(|t| (t as f64).powi(3)).collect();
    let out = savgol_smooth(&s, 15, 3).unwrap();
    for i in 7..=13 {
        assert!((out[i] - s[i]).abs() < 1e-9, "{i}");
    }
}

proptest! {
    #[test]
    fn savgol_reproduces_random_cubics(c in prop::array::uniform4(-3.0f64..3.0), len in 15usize..60) {
        let s: Vec<f64> = (0..len).map(|i| {
            let t = i as f64 / 10.0;
            c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t
        }).collect();
        let out = savgol_smooth(&s, 15, 3).unwrap();
        for i in 7..len - 7 {
            prop_assert!((out[i] - s[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn zoh_is_piecewise_constant_and_hits_sample_times(
        gaps in prop::collection::vec(0.5f64..4.0, 1..20),
        values in prop::collection::vec(-100.0f64..100.0, 20),
    ) {
        let mut t = 0.0;
        let samples: Vec<(f64, f64)> = gaps.iter().zip(&values).map(|(g, v)| { t += g; (t.round(), *v) })
            .fold(Vec::new(), |mut acc: Vec<(f64, f64)>, s| {
                if acc.last().map_or(true, |l| s.0 > l.0) { acc.push(s); }
                acc
            });
        let len = samples.last().unwrap().0 as usize + 3;
        let out = zero_order_hold(&samples, len).unwrap();
        for (ts, v) in &samples {
            prop_assert_eq!(out[*ts as usize], Some(*v));
        }
        for i in 1..len {
            let changed = out[i] != out[i - 1];
            let sample_here = samples.iter().any(|s| s.0 as usize == i);
            prop_assert!(!changed || sample_here);
        }
    }
}
