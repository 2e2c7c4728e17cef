//! Monte-Carlo BER/BLER measurement, decoder comparison with common random
//! numbers, dB-gap computation between curves, and CSV export.

use crate::error::{Error, Result};
use crate::model::{decode_batch, LatParams};
use crate::polar::{
    awgn, bpsk, channel_llr, ebn0_to_sigma2, encode, ml_decode, sc_decode, scl_decode, PolarCode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Decoder under evaluation. Ordering of the variants fixes the CSV sort rank.
#[derive(Clone)]
pub enum Decoder {
    Sc,
    Scl(usize),
    Ml,
    Lat(Arc<LatParams>),
}

impl Decoder {
    pub fn name(&self) -> String {
        match self {
            Decoder::Sc => "sc".into(),
            Decoder::Scl(l) => format!("scl{l}"),
            Decoder::Ml => "ml".into(),
            Decoder::Lat(_) => "lat".into(),
        }
    }

    fn rank(&self) -> usize {
        match self {
            Decoder::Sc => 0,
            Decoder::Scl(_) => 1,
            Decoder::Ml => 2,
            Decoder::Lat(_) => 3,
        }
    }
}

impl std::fmt::Debug for Decoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Per-(decoder, code, Eb/N0) error statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub decoder: String,
    pub n: usize,
    pub k: usize,
    pub ebn0_db: f64,
    pub blocks: u64,
    pub bit_errors: u64,
    pub block_errors: u64,
    pub ber: f64,
    pub bler: f64,
    pub seed: u64,
}

/// Monte-Carlo stopping rule: stop once every decoder has accumulated
/// `min_block_errors`, or at `max_blocks`, whichever comes first.
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub min_block_errors: u64,
    pub max_blocks: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { min_block_errors: 100, max_blocks: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub stop: StopRule,
    /// Independent worker streams; results are deterministic per (seed, workers).
    pub workers: usize,
    /// Blocks simulated per worker per round.
    pub round_blocks: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { stop: StopRule::default(), workers: 2, round_blocks: 512 }
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    blocks: u64,
    bit_errors: u64,
    block_errors: u64,
}

impl Tally {
    fn add(&mut self, other: &Tally) {
        self.blocks += other.blocks;
        self.bit_errors += other.bit_errors;
        self.block_errors += other.block_errors;
    }
}

fn decode_all(
    decoder: &Decoder,
    code: &PolarCode,
    ys: &[Vec<f64>],
    sigma2: f64,
) -> Result<Vec<Vec<u8>>> {
    match decoder {
        Decoder::Sc => ys
            .iter()
            .map(|y| sc_decode(code, &channel_llr(y, sigma2)).map(|(m, _)| m))
            .collect(),
        Decoder::Scl(l) => ys
            .iter()
            .map(|y| scl_decode(code, &channel_llr(y, sigma2), *l))
            .collect(),
        Decoder::Ml => ys.iter().map(|y| ml_decode(code, y)).collect(),
        Decoder::Lat(params) => decode_batch(params, &params.config, code, ys),
    }
}

/// One worker round: `count` paired blocks from this worker's stream, decoded
/// by every decoder on identical noise realizations.
fn worker_round(
    decoders: &[Decoder],
    code: &PolarCode,
    sigma2: f64,
    rng: &mut ChaCha8Rng,
    count: u64,
) -> Result<Vec<Tally>> {
    let mut messages = Vec::with_capacity(count as usize);
    let mut ys = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let message: Vec<u8> = (0..code.k).map(|_| rng.gen_range(0..2u8)).collect();
        let x = encode(code, &message)?;
        let s = bpsk(&x);
        let (_, y) = awgn(&s, sigma2, rng)?;
        messages.push(message);
        ys.push(y);
    }
    let mut tallies = vec![Tally::default(); decoders.len()];
    for (d, decoder) in decoders.iter().enumerate() {
        let decisions = decode_all(decoder, code, &ys, sigma2)?;
        for (decision, message) in decisions.iter().zip(&messages) {
            let errs = decision.iter().zip(message).filter(|(a, b)| a != b).count() as u64;
            tallies[d].blocks += 1;
            tallies[d].bit_errors += errs;
            tallies[d].block_errors += u64::from(errs > 0);
        }
    }
    Ok(tallies)
}

/// Paired-noise Monte-Carlo at one (code, Eb/N0) point for a set of decoders.
pub fn run_point(
    decoders: &[Decoder],
    code: &PolarCode,
    ebn0_db: f64,
    seed: u64,
    opts: &McOptions,
) -> Result<Vec<EvalReport>> {
    if opts.stop.min_block_errors < 1 {
        return Err(Error::Argument("min_block_errors must be >= 1".into()));
    }
    if decoders.is_empty() {
        return Err(Error::Argument("no decoders requested".into()));
    }
    let sigma2 = ebn0_to_sigma2(ebn0_db, code.rate())?;
    let workers = opts.workers.max(1);
    let mut rngs: Vec<ChaCha8Rng> = (0..workers)
        .map(|w| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(0x4d43 + w as u64); // distinct stream per worker
            rng
        })
        .collect();
    let mut totals = vec![Tally::default(); decoders.len()];
    let mut total_blocks = 0u64;
    while total_blocks < opts.stop.max_blocks {
        let per_worker =
            opts.round_blocks.min((opts.stop.max_blocks - total_blocks).div_ceil(workers as u64));
        let round: Vec<Result<Vec<Tally>>> = rngs
            .par_iter_mut()
            .map(|rng| worker_round(decoders, code, sigma2, rng, per_worker))
            .collect();
        for worker_tallies in round {
            for (total, t) in totals.iter_mut().zip(worker_tallies?) {
                total.add(&t);
            }
        }
        total_blocks = totals[0].blocks;
        let slowest = totals.iter().map(|t| t.block_errors).min().unwrap();
        if slowest >= opts.stop.min_block_errors {
            break;
        }
    }
    Ok(decoders
        .iter()
        .zip(&totals)
        .map(|(d, t)| EvalReport {
            decoder: d.name(),
            n: code.block_len,
            k: code.k,
            ebn0_db,
            blocks: t.blocks,
            bit_errors: t.bit_errors,
            block_errors: t.block_errors,
            ber: t.bit_errors as f64 / (t.blocks * code.k as u64).max(1) as f64,
            bler: t.block_errors as f64 / t.blocks.max(1) as f64,
            seed,
        })
        .collect())
}

/// Single-decoder wrapper around [`run_point`].
pub fn run_mc(
    decoder: &Decoder,
    code: &PolarCode,
    ebn0_db: f64,
    seed: u64,
    opts: &McOptions,
) -> Result<EvalReport> {
    Ok(run_point(std::slice::from_ref(decoder), code, ebn0_db, seed, opts)?.remove(0))
}

/// Paired-noise sweep across an Eb/N0 grid.
pub fn sweep(
    decoders: &[Decoder],
    code: &PolarCode,
    ebn0_grid: &[f64],
    seed: u64,
    opts: &McOptions,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for &ebn0 in ebn0_grid {
        reports.extend(run_point(decoders, code, ebn0, seed, opts)?);
    }
    sort_reports(&mut reports, decoders);
    Ok(reports)
}

/// Fixed-Eb/N0 sweep over code rates for each code length. k = round(R N),
/// clamped into [1, N-1].
pub fn rate_sweep(
    decoders: &[Decoder],
    codes: &[Arc<PolarCode>],
    ebn0_db: f64,
    seed: u64,
    opts: &McOptions,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for code in codes {
        reports.extend(run_point(decoders, code, ebn0_db, seed, opts)?);
    }
    sort_reports(&mut reports, decoders);
    Ok(reports)
}

fn sort_reports(reports: &mut [EvalReport], decoders: &[Decoder]) {
    let rank = |name: &str| {
        decoders
            .iter()
            .position(|d| d.name() == name)
            .map(|i| decoders[i].rank())
            .unwrap_or(usize::MAX)
    };
    reports.sort_by(|a, b| {
        rank(&a.decoder)
            .cmp(&rank(&b.decoder))
            .then(a.n.cmp(&b.n))
            .then(a.k.cmp(&b.k))
            .then(a.ebn0_db.partial_cmp(&b.ebn0_db).unwrap())
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ber,
    Bler,
}

impl Metric {
    pub fn of(&self, report: &EvalReport) -> f64 {
        match self {
            Metric::Ber => report.ber,
            Metric::Bler => report.bler,
        }
    }
}

/// Horizontal dB distance between two error-rate curves at one level.
#[derive(Debug, Clone)]
pub struct CurveGap {
    pub decoder_a: String,
    pub decoder_b: String,
    pub metric: Metric,
    pub gap_db: f64,
    pub target_level: f64,
}

/// Eb/N0 at which a (decreasing) curve crosses `level`, by log-linear
/// interpolation. Points with zero value cannot participate.
fn crossing(curve: &[(f64, f64)], level: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = curve.iter().copied().filter(|&(_, v)| v > 0.0).collect();
    if level <= 0.0 {
        return None;
    }
    let log_level = level.log10();
    for pair in pts.windows(2) {
        let (x0, v0) = pair[0];
        let (x1, v1) = pair[1];
        let (l0, l1) = (v0.log10(), v1.log10());
        if (l0 - log_level) * (l1 - log_level) <= 0.0 && (l0 - l1).abs() > 0.0 {
            return Some(x0 + (x1 - x0) * (l0 - log_level) / (l0 - l1));
        }
    }
    None
}

/// gap = x_a(level) - x_b(level): positive when decoder b reaches the target
/// error level at a lower Eb/N0 (b outperforms a by `gap` dB).
pub fn gap_db(curve_a: &[(f64, f64)], curve_b: &[(f64, f64)], level: f64) -> Result<f64> {
    match (crossing(curve_a, level), crossing(curve_b, level)) {
        (Some(xa), Some(xb)) => Ok(xa - xb),
        _ => Err(Error::Argument(format!(
            "gap undefined: level {level} not bracketed by both curves"
        ))),
    }
}

/// Mean gap over every grid-point level both curves bracket.
pub fn average_gap_db(curve_a: &[(f64, f64)], curve_b: &[(f64, f64)]) -> Result<(f64, usize)> {
    let mut gaps = Vec::new();
    for &(_, level) in curve_a.iter().chain(curve_b) {
        if let Ok(gap) = gap_db(curve_a, curve_b, level) {
            gaps.push(gap);
        }
    }
    if gaps.is_empty() {
        return Err(Error::Argument("no level is bracketed by both curves".into()));
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    Ok((mean, gaps.len()))
}

/// Extracts a (ebn0, metric) curve for one decoder from a report set.
pub fn curve_of(reports: &[EvalReport], decoder: &str, metric: Metric) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = reports
        .iter()
        .filter(|r| r.decoder == decoder)
        .map(|r| (r.ebn0_db, metric.of(r)))
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pts
}

pub const CSV_HEADER: &str = "decoder,N,k,ebn0_db,blocks,bit_errors,block_errors,ber,bler,seed";

/// Writes reports as CSV (locale-independent formatting).
pub fn emit_csv<W: Write>(reports: &[EvalReport], out: &mut W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.decoder, r.n, r.k, r.ebn0_db, r.blocks, r.bit_errors, r.block_errors, r.ber, r.bler,
            r.seed
        )?;
    }
    Ok(())
}

/// Parses CSV in the [`emit_csv`] format.
pub fn parse_csv<R: BufRead>(input: R) -> Result<Vec<EvalReport>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))??;
    if header.trim() != CSV_HEADER {
        return Err(Error::Format(format!("unexpected CSV header '{header}'")));
    }
    let mut reports = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Format(format!("expected 10 fields, got {}", fields.len())));
        }
        let parse_err = |e: &dyn std::fmt::Display| Error::Format(format!("bad CSV field: {e}"));
        reports.push(EvalReport {
            decoder: fields[0].to_string(),
            n: fields[1].parse().map_err(|e| parse_err(&e))?,
            k: fields[2].parse().map_err(|e| parse_err(&e))?,
            ebn0_db: fields[3].parse().map_err(|e| parse_err(&e))?,
            blocks: fields[4].parse().map_err(|e| parse_err(&e))?,
            bit_errors: fields[5].parse().map_err(|e| parse_err(&e))?,
            block_errors: fields[6].parse().map_err(|e| parse_err(&e))?,
            ber: fields[7].parse().map_err(|e| parse_err(&e))?,
            bler: fields[8].parse().map_err(|e| parse_err(&e))?,
            seed: fields[9].parse().map_err(|e| parse_err(&e))?,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests;
