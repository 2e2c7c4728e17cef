use super::*;
use crate::polar::{construct, ConstructionMethod};

fn code_n8k4() -> PolarCode {
    construct(3, 4, 5.0, ConstructionMethod::Ga).unwrap()
}

#[test]
fn noiseless_mode_has_zero_errors() {
    let code = code_n8k4();
    let opts = McOptions {
        stop: StopRule { min_block_errors: 10, max_blocks: 200 },
        ..Default::default()
    };
    let decoders = [Decoder::Sc, Decoder::Scl(2), Decoder::Ml];
    let reports = run_point(&decoders, &code, f64::INFINITY, 7, &opts).unwrap();
    for r in &reports {
        assert_eq!(r.bit_errors, 0, "{}", r.decoder);
        assert_eq!(r.block_errors, 0);
        assert_eq!(r.ber, 0.0);
        assert_eq!(r.bler, 0.0);
    }
}

#[test]
fn same_seed_gives_identical_reports() {
    let code = code_n8k4();
    let opts = McOptions {
        stop: StopRule { min_block_errors: 20, max_blocks: 5_000 },
        ..Default::default()
    };
    let a = run_mc(&Decoder::Sc, &code, 3.0, 11, &opts).unwrap();
    let b = run_mc(&Decoder::Sc, &code, 3.0, 11, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ml_two_codeword_error_rate_matches_q_function() {
    // N=2, k=1, frozen bit 0: antipodal codewords at distance 2 sqrt(2).
    let code = crate::polar::PolarCode::from_message_set(1, vec![1]).unwrap();
    let ebn0_db = 10.0;
    let opts = McOptions {
        stop: StopRule { min_block_errors: u64::MAX, max_blocks: 1_000_000 },
        ..Default::default()
    };
    let report = run_mc(&Decoder::Ml, &code, ebn0_db, 5, &opts).unwrap();
    let sigma2 = crate::polar::ebn0_to_sigma2(ebn0_db, code.rate()).unwrap();
    let d = (8.0f64).sqrt();
    let p = q_function(d / (2.0 * sigma2.sqrt()));
    let mean = report.blocks as f64 * p;
    let sd = (report.blocks as f64 * p * (1.0 - p)).sqrt();
    let got = report.block_errors as f64;
    assert!(
        (got - mean).abs() <= 3.0 * sd,
        "got {got} errors, expected {mean:.2} +- {:.2}",
        3.0 * sd
    );
}

/// Q(x) via the Abramowitz-Stegun 7.1.26 erfc approximation (|err| < 1.5e-7).
fn q_function(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.3275911 * x / std::f64::consts::SQRT_2);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    0.5 * poly * (-x * x / 2.0).exp()
}

#[test]
fn paired_ml_dominates_sc_and_scl_lies_between() {
    let code = code_n8k4();
    let opts = McOptions {
        stop: StopRule { min_block_errors: 100, max_blocks: 200_000 },
        ..Default::default()
    };
    let decoders = [Decoder::Sc, Decoder::Scl(4), Decoder::Ml];
    let reports = run_point(&decoders, &code, 3.0, 21, &opts).unwrap();
    let by_name = |name: &str| reports.iter().find(|r| r.decoder == name).unwrap();
    let (sc, scl, ml) = (by_name("sc"), by_name("scl4"), by_name("ml"));
    assert!(ml.block_errors >= 100);
    assert!(ml.block_errors <= scl.block_errors);
    assert!(scl.block_errors <= sc.block_errors);
}

#[test]
fn sweep_covers_grid_times_decoders() {
    let code = code_n8k4();
    let opts = McOptions {
        stop: StopRule { min_block_errors: 5, max_blocks: 500 },
        ..Default::default()
    };
    let decoders = [Decoder::Sc, Decoder::Ml];
    let reports = sweep(&decoders, &code, &[4.0, 5.0, 6.0], 3, &opts).unwrap();
    assert_eq!(reports.len(), 6);
    // Deterministic ordering: decoder rank (sc before ml), then Eb/N0.
    let names: Vec<&str> = reports.iter().map(|r| r.decoder.as_str()).collect();
    assert_eq!(names, ["sc", "sc", "sc", "ml", "ml", "ml"]);
    assert!(reports[0].ebn0_db < reports[1].ebn0_db);
}

#[test]
fn gap_of_identical_curves_is_zero_and_shift_is_exact() {
    let curve: Vec<(f64, f64)> = vec![(4.0, 1e-2), (5.0, 2e-3), (6.0, 3e-4)];
    assert!(gap_db(&curve, &curve, 1e-3).unwrap().abs() < 1e-12);
    let shifted: Vec<(f64, f64)> = curve.iter().map(|&(x, v)| (x + 1.0, v)).collect();
    for level in [8e-3, 1e-3, 4e-4] {
        let g = gap_db(&shifted, &curve, level).unwrap();
        assert!((g - 1.0).abs() < 1e-9, "level {level}: {g}");
    }
    let (avg, count) = average_gap_db(&shifted, &curve).unwrap();
    assert!(count >= 2);
    assert!((avg - 1.0).abs() < 1e-9);
    // Level outside both ranges is an error.
    assert!(gap_db(&curve, &curve, 0.5).is_err());
}

#[test]
fn csv_round_trip() {
    let code = code_n8k4();
    let opts = McOptions {
        stop: StopRule { min_block_errors: 5, max_blocks: 500 },
        ..Default::default()
    };
    let reports = sweep(&[Decoder::Sc], &code, &[4.0, 5.5], 9, &opts).unwrap();
    let mut buf = Vec::new();
    emit_csv(&reports, &mut buf).unwrap();
    let parsed = parse_csv(std::io::BufReader::new(&buf[..])).unwrap();
    assert_eq!(parsed, reports);

    // Empty report list: header-only file.
    let mut buf = Vec::new();
    emit_csv(&[], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));
}
