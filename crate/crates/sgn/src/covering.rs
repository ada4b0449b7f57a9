//! Covering sequences for the global search step: Sobol and Halton
//! low-discrepancy points plus seeded uniform draws, all rescaled onto the
//! parameter box, and an estimator of the covering discrepancy
//! `D_{k-1} = sup_theta min_l ||theta - theta_l||`.
//!
//! The Sobol generator follows the Joe-Kuo "new" direction numbers
//! (D6 primitive-polynomial criterion, dimensions 2..=21201), embedded at
//! build time in the usual `d s a m_i` text format, with Gray-code ordering
//! and 32-bit resolution. Dimension 1 is the base-2 van der Corput sequence.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{ParamBox, ParamVector};
use crate::seeds;

/// Joe-Kuo direction-number table, `d s a m_i` rows for d = 2..=21201.
static JOE_KUO_TABLE: &str = include_str!("../data/new-joe-kuo-6.21201.txt");

/// Highest Sobol dimension supported by the embedded table.
pub const MAX_SOBOL_DIMENSION: usize = 21_201;

const SOBOL_BITS: usize = 32;

struct JoeKuoRow {
    degree: u32,
    coeffs: u32,
    m: Vec<u32>,
}

fn joe_kuo_rows() -> &'static [JoeKuoRow] {
    static ROWS: OnceLock<Vec<JoeKuoRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        JOE_KUO_TABLE
            .lines()
            .skip(1) // header
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let mut it = line.split_ascii_whitespace();
                let _d: usize = it.next().expect("d").parse().expect("d");
                let degree: u32 = it.next().expect("s").parse().expect("s");
                let coeffs: u32 = it.next().expect("a").parse().expect("a");
                let m: Vec<u32> = it.map(|v| v.parse().expect("m_i")).collect();
                assert_eq!(m.len(), degree as usize, "malformed direction-number row");
                JoeKuoRow { degree, coeffs, m }
            })
            .collect()
    })
}

/// 32 direction numbers for a zero-based Sobol dimension.
fn direction_numbers(dim: usize) -> [u32; SOBOL_BITS] {
    let mut v = [0u32; SOBOL_BITS];
    if dim == 0 {
        // van der Corput: v_k = 2^(32-k)
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = 1u32 << (31 - k);
        }
        return v;
    }
    let row = &joe_kuo_rows()[dim - 1];
    let s = row.degree as usize;
    for (k, (slot, &m)) in v.iter_mut().zip(&row.m).enumerate().take(SOBOL_BITS) {
        *slot = m << (31 - k);
    }
    for k in s..SOBOL_BITS {
        v[k] = v[k - s] ^ (v[k - s] >> s);
        for i in 1..s {
            if (row.coeffs >> (s - 1 - i)) & 1 == 1 {
                v[k] ^= v[k - i];
            }
        }
    }
    v
}

/// Raw Sobol integer coordinates of point `k` (Gray-code order).
fn sobol_raw(dim: usize, k: u64) -> Vec<u32> {
    debug_assert!(k < (1u64 << SOBOL_BITS));
    let gray = k ^ (k >> 1);
    (0..dim)
        .map(|d| {
            let v = direction_numbers(d);
            let mut x = 0u32;
            let mut bits = gray;
            let mut j = 0;
            while bits != 0 {
                if bits & 1 == 1 {
                    x ^= v[j];
                }
                bits >>= 1;
                j += 1;
            }
            x
        })
        .collect()
}

/// Radical inverse of `i` in the given base.
fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv_base = 1.0 / base as f64;
    let mut f = inv_base;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv_base;
    }
    r
}

/// First `count` primes (Halton bases).
fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().all(|&p| p * p > candidate || !candidate.is_multiple_of(p)) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Which covering sequence to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoveringKind {
    /// Joe-Kuo Sobol sequence (preferred).
    Sobol,
    /// Halton sequence on the first `d` prime bases.
    Halton,
    /// Seeded iid uniform draws.
    UniformRandom,
}

/// Covering sequence settings; see [`CoveringSequence`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringConfig {
    /// Sequence family.
    pub kind: CoveringKind,
    /// Seed for uniform draws and for the Sobol digital shift.
    #[serde(default)]
    pub seed: u64,
    /// Apply a seeded digital shift to the Sobol sequence (randomized
    /// quasi-Monte Carlo). Ignored for Halton and uniform sequences.
    #[serde(default)]
    pub randomize: bool,
    /// Emit the Sobol index-0 point (the all-zeros corner). Off by default:
    /// corner starts are degenerate for optimization, so the sequence starts
    /// at index 1. Enable for direction-number test vectors.
    #[serde(default)]
    pub include_origin: bool,
}

impl CoveringConfig {
    /// Plain Sobol with the default offsets.
    pub fn sobol() -> Self {
        CoveringConfig { kind: CoveringKind::Sobol, seed: 0, randomize: false, include_origin: false }
    }

    /// Digitally shifted Sobol keyed by `seed`.
    pub fn randomized_sobol(seed: u64) -> Self {
        CoveringConfig { kind: CoveringKind::Sobol, seed, randomize: true, include_origin: false }
    }

    /// Halton on the first `d` primes.
    pub fn halton() -> Self {
        CoveringConfig { kind: CoveringKind::Halton, seed: 0, randomize: false, include_origin: false }
    }

    /// Seeded iid uniform draws.
    pub fn uniform(seed: u64) -> Self {
        CoveringConfig { kind: CoveringKind::UniformRandom, seed, randomize: false, include_origin: false }
    }
}

/// Stateful generator of covering points on a parameter box.
///
/// The emitted stream is a deterministic function of `(kind, dimension,
/// seed)`; [`CoveringSequence::point_k`] gives random access without
/// touching the iterator state.
#[derive(Debug, Clone)]
pub struct CoveringSequence {
    cfg: CoveringConfig,
    bounds: ParamBox,
    index: u64,
    /// Per-dimension digital-shift words (Sobol only).
    shift: Vec<u32>,
    /// Halton bases (Halton only).
    bases: Vec<u64>,
}

impl CoveringSequence {
    /// Build a sequence over the given box.
    pub fn new(cfg: CoveringConfig, bounds: ParamBox) -> Result<Self> {
        let dim = bounds.dim();
        match cfg.kind {
            CoveringKind::Sobol => {
                if dim > MAX_SOBOL_DIMENSION {
                    return Err(Error::config(format!(
                        "Sobol direction numbers cover dimensions up to {MAX_SOBOL_DIMENSION}, got {dim}"
                    )));
                }
            }
            CoveringKind::Halton | CoveringKind::UniformRandom => {}
        }
        let shift = if cfg.kind == CoveringKind::Sobol && cfg.randomize {
            let mut rng = seeds::stream(&[cfg.seed, seeds::role::COVER]);
            (0..dim).map(|_| rng.random::<u32>()).collect()
        } else {
            Vec::new()
        };
        let bases = if cfg.kind == CoveringKind::Halton { first_primes(dim) } else { Vec::new() };
        Ok(CoveringSequence { cfg, bounds, index: 0, shift, bases })
    }

    /// The sequence configuration.
    pub fn config(&self) -> &CoveringConfig {
        &self.cfg
    }

    /// The box points are rescaled onto.
    pub fn bounds(&self) -> &ParamBox {
        &self.bounds
    }

    /// Index of the next point [`CoveringSequence::next_point`] will emit.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Dimension of emitted points.
    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Point `k` of the stream, in the box. Stateless and thread-safe.
    pub fn point_k(&self, k: u64) -> ParamVector {
        let u = self.unit_point_k(k);
        self.bounds.from_unit_cube(&u)
    }

    /// Point `k` on the unit cube, before rescaling.
    pub fn unit_point_k(&self, k: u64) -> Vec<f64> {
        let dim = self.dim();
        match self.cfg.kind {
            CoveringKind::Sobol => {
                let raw_index = if self.cfg.include_origin { k } else { k + 1 };
                let mut raw = sobol_raw(dim, raw_index);
                if self.cfg.randomize {
                    for (x, s) in raw.iter_mut().zip(&self.shift) {
                        *x ^= s;
                    }
                }
                raw.iter().map(|&x| x as f64 / 2f64.powi(SOBOL_BITS as i32)).collect()
            }
            CoveringKind::Halton => {
                self.bases.iter().map(|&b| radical_inverse(k + 1, b)).collect()
            }
            CoveringKind::UniformRandom => {
                let mut rng = seeds::stream(&[self.cfg.seed, seeds::role::COVER, k]);
                (0..dim).map(|_| rng.random::<f64>()).collect()
            }
        }
    }

    /// Emit the next point and advance the iterator.
    pub fn next_point(&mut self) -> ParamVector {
        let point = self.point_k(self.index);
        self.index += 1;
        point
    }

    /// The first `count` points of the stream.
    pub fn take_points(&mut self, count: usize) -> Vec<ParamVector> {
        (0..count).map(|_| self.next_point()).collect()
    }
}

/// Estimate of the covering discrepancy: the largest distance from any
/// probe to its nearest point, `max_probe min_point ||probe - point||`.
///
/// This is a lower bound on the true supremum that tightens as the probe
/// set densifies.
pub fn discrepancy(points: &[ParamVector], probes: &[ParamVector]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::contract("discrepancy needs a nonempty point set"));
    }
    if probes.is_empty() {
        return Err(Error::contract("discrepancy needs a nonempty probe set"));
    }
    let mut worst = 0.0_f64;
    for probe in probes {
        let mut nearest = f64::INFINITY;
        for point in points {
            let d = (probe.as_dvector() - point.as_dvector()).norm();
            if d < nearest {
                nearest = d;
            }
        }
        worst = worst.max(nearest);
    }
    Ok(worst)
}

/// Default probe set for discrepancy reports: a Sobol set on the box.
pub fn default_probes(bounds: &ParamBox, count: usize) -> Result<Vec<ParamVector>> {
    let mut seq = CoveringSequence::new(CoveringConfig::sobol(), bounds.clone())?;
    Ok(seq.take_points(count))
}

/// Regular grid probes on a 2-d box (`side` points per axis).
pub fn grid_probes_2d(bounds: &ParamBox, side: usize) -> Result<Vec<ParamVector>> {
    if bounds.dim() != 2 {
        return Err(Error::contract("grid_probes_2d needs a 2-dimensional box"));
    }
    let mut probes = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let u = [
                (i as f64 + 0.5) / side as f64,
                (j as f64 + 0.5) / side as f64,
            ];
            probes.push(bounds.from_unit_cube(&u));
        }
    }
    Ok(probes)
}
