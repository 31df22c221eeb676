//! Right-looking incomplete Cholesky factorization with safe breakdown
//! detection (B1-B4), optional look-ahead, optional GMW(beta) local pivot
//! modification, and the global-shift restart driver.
//!
//! All arithmetic is performed in working precision and rounded once per
//! operation into the factorization precision. The safe tests never perform
//! an operation that can overflow in working precision.

use crate::halffloat::{
    self, safe_mulsub, safe_scale_check, FormatParams, HalfWord, RoundStatus,
};
use crate::sparsecore::{Half16Format, HalfMatrix, LowerStructure, SparseSpd};
use crate::symbolic::FillPattern;

/// Factorization precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Fp16,
    Bf16,
    Fp32,
    Fp64,
}

impl Precision {
    pub fn params(self) -> FormatParams {
        match self {
            Precision::Fp16 => FormatParams::FP16,
            Precision::Bf16 => FormatParams::BF16,
            Precision::Fp32 => FormatParams::FP32,
            Precision::Fp64 => FormatParams::FP64,
        }
    }

    /// Round a working-precision value into this precision (value space).
    pub fn round(self, x: f64) -> (f64, RoundStatus) {
        self.params().round(x)
    }

    /// Default pivot threshold tau_u; always larger than 1/x_max.
    pub fn default_tau(self) -> f64 {
        match self {
            Precision::Fp16 | Precision::Bf16 => 1e-5,
            Precision::Fp32 => 1e-30,
            Precision::Fp64 => 1e-20,
        }
    }

    pub fn half16(self) -> Option<Half16Format> {
        match self {
            Precision::Fp16 => Some(Half16Format::Fp16),
            Precision::Bf16 => Some(Half16Format::Bf16),
            _ => None,
        }
    }
}

/// Options controlling one incomplete factorization.
#[derive(Debug, Clone)]
pub struct IcOptions {
    pub precision: Precision,
    /// B1 threshold: a pivot (pre-square-root diagonal) below this value is a
    /// breakdown. Must exceed 1/x_max of the precision so that the pivot
    /// reciprocal cannot overflow.
    pub tau_u: f64,
    /// Test every updated future diagonal at each major step, raising B1 at
    /// the earliest step possible. Mutually exclusive with `gmw`.
    pub lookahead: bool,
    /// GMW local modification parameter beta; enables the pivot rule
    /// l_kk <- max(l_kk, (l_kmax/beta)^2). Disables the look-ahead sweep.
    pub gmw: Option<f64>,
    /// Initial global shift alpha_S for the restart driver.
    pub shift_init: f64,
    pub max_restarts: usize,
    /// Squeeze threshold re-applied when the shift driver casts a scaled
    /// matrix on the fly (16-bit precisions only).
    pub flush_tol: f64,
}

impl IcOptions {
    pub fn for_precision(precision: Precision) -> IcOptions {
        IcOptions {
            precision,
            tau_u: precision.default_tau(),
            lookahead: false,
            gmw: None,
            shift_init: 1e-3,
            max_restarts: 40,
            flush_tol: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let params = self.precision.params();
        // The scaling divides by sqrt(pivot) >= sqrt(tau_u), so the
        // reciprocal stays below x_max as long as tau_u > 1/x_max^2.
        let floor = 1.0 / (params.x_max * params.x_max);
        if !(self.tau_u > floor) {
            return Err(format!(
                "tau_u = {} must exceed 1/x_max^2 = {:.3e}",
                self.tau_u, floor
            ));
        }
        if let Some(beta) = self.gmw {
            if !(beta > 0.0) {
                return Err(format!("gmw beta = {beta} must be positive"));
            }
            if self.lookahead {
                return Err("gmw and lookahead are mutually exclusive".into());
            }
        }
        if !(self.shift_init > 0.0) {
            return Err("shift_init must be positive".into());
        }
        Ok(())
    }
}

/// Breakdown taxonomy: pivot below threshold (B1), column-scaling overflow
/// (B2), update overflow (B3), GMW modification overflow (B4).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakdownKind {
    Ok,
    B1,
    B2,
    B3,
    B4,
}

/// A detected breakdown; `column` is the 1-based major step at which the
/// event was detected (for look-ahead B1 this is the step whose updates
/// exposed the failing future diagonal, not that diagonal's own index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BreakdownFlag {
    pub kind: BreakdownKind,
    pub column: usize,
}

/// Counters aggregated by the shift driver across restart attempts.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct FactorStats {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n4: usize,
    /// GMW modification count of the final attempt.
    pub nmod: usize,
    /// Final shift (0 when the first attempt succeeded).
    pub alpha: f64,
    /// Failed attempts before the final one.
    pub restarts: usize,
}

/// Entry payloads of a computed factor, stored in the factorization
/// precision.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorPayload {
    Half(Vec<HalfWord>),
    Bf16(Vec<u16>),
    Single(Vec<f32>),
    Double(Vec<f64>),
}

/// The incomplete Cholesky factor L on a fill pattern. Diagonal entries are
/// strictly positive and no stored payload is an overflow pattern.
#[derive(Debug, Clone)]
pub struct IcFactor {
    pattern: FillPattern,
    payload: FactorPayload,
    precision: Precision,
}

impl IcFactor {
    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn pattern(&self) -> &FillPattern {
        &self.pattern
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn payload(&self) -> &FactorPayload {
        &self.payload
    }

    /// Decode the entry at a pattern position to working precision.
    pub fn value(&self, idx: usize) -> f64 {
        match &self.payload {
            FactorPayload::Half(v) => halffloat::decode(v[idx]),
            FactorPayload::Bf16(v) => halffloat::decode_bf16(v[idx]),
            FactorPayload::Single(v) => v[idx] as f64,
            FactorPayload::Double(v) => v[idx],
        }
    }

    /// Decoded diagonal of L (the post-square-root pivots).
    pub fn diag(&self) -> Vec<f64> {
        (0..self.n())
            .map(|j| self.value(self.pattern.col_ptr[j]))
            .collect()
    }

    pub fn max_abs_offdiag(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.n() {
            for idx in self.pattern.col_range(j).skip(1) {
                m = m.max(self.value(idx).abs());
            }
        }
        m
    }

    /// An identity factor (useful as a neutral preconditioner).
    pub fn identity(n: usize) -> IcFactor {
        let pattern = FillPattern {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            level: vec![0; n],
        };
        IcFactor {
            pattern,
            payload: FactorPayload::Double(vec![1.0; n]),
            precision: Precision::Fp64,
        }
    }
}

/// The matrix being factorized: either a squeezed 16-bit matrix or a
/// working-precision matrix cast into the factorization precision entry by
/// entry at initialization.
#[derive(Debug, Clone, Copy)]
pub enum FactorInput<'a> {
    Half(&'a HalfMatrix),
    Working(&'a SparseSpd),
}

/// Outcome of a single factorization attempt.
#[derive(Debug, Clone)]
pub enum AttemptOutcome {
    Completed(IcFactor),
    Breakdown {
        flag: BreakdownFlag,
        /// Pre-square-root pivots of the columns whose B1 test passed before
        /// the breakdown, in column order.
        pivots: Vec<f64>,
        /// The value that triggered a B1 flag, when applicable.
        offending: Option<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct FactorAttempt {
    pub outcome: AttemptOutcome,
    /// GMW modifications performed during this attempt.
    pub nmod: usize,
}

impl FactorAttempt {
    pub fn flag(&self) -> BreakdownFlag {
        match &self.outcome {
            AttemptOutcome::Completed(_) => BreakdownFlag {
                kind: BreakdownKind::Ok,
                column: 0,
            },
            AttemptOutcome::Breakdown { flag, .. } => *flag,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FactorError {
    #[error("invalid options: {0}")]
    Options(String),
    #[error("shift driver exhausted after {} restarts (last alpha {:.3e}): {last:?}", stats.restarts, stats.alpha)]
    RestartsExhausted {
        stats: FactorStats,
        last: BreakdownFlag,
    },
    #[error("shifted diagonal overflows the factorization format at alpha = {alpha:.3e}")]
    ShiftOverflow { alpha: f64, stats: FactorStats },
}

/// Result of the shifted factorization driver.
#[derive(Debug, Clone)]
pub struct ShiftedFactor {
    pub alpha: f64,
    pub factor: IcFactor,
    pub stats: FactorStats,
}

/// GMW pivot rule: returns `max(l_kk, (l_kmax/beta)^2)` and whether the
/// modification won, or a B4 signal when `(l_kmax/beta)^2` would overflow the
/// factorization format. The overflow test compares `l_kmax/beta` against
/// `sqrt(x_max)` in working precision, which cannot itself overflow.
pub fn gmw_adjust(
    l_kk: f64,
    l_kmax: f64,
    beta: f64,
    fmt: &FormatParams,
) -> Result<(f64, bool), ()> {
    let ratio = l_kmax / beta;
    if ratio > fmt.x_max.sqrt() {
        return Err(());
    }
    let cand = ratio * ratio;
    if cand > l_kk {
        Ok((cand, true))
    } else {
        Ok((l_kk, false))
    }
}

enum InitError {
    /// Rounding a shifted diagonal overflowed the target format.
    DiagOverflow,
}

/// Scatter the input entries onto the pattern, returning per-entry values in
/// the factorization precision (as exact f64 representatives). Pattern
/// positions without a matching input entry start at zero.
fn init_values(
    input: &FactorInput,
    pattern: &FillPattern,
    precision: Precision,
    alpha: f64,
    flush_tol: Option<f64>,
) -> Result<Vec<f64>, InitError> {
    let n = pattern.n;
    let mut vals = vec![0.0f64; pattern.nnz()];
    let (col_ptr, row_idx): (&[usize], &[usize]) = match input {
        FactorInput::Half(h) => (&h.col_ptr, &h.row_idx),
        FactorInput::Working(a) => (a.col_ptr(), a.row_idx()),
    };
    let value_at = |idx: usize| -> f64 {
        match input {
            FactorInput::Half(h) => h.value(idx),
            FactorInput::Working(a) => a.values()[idx],
        }
    };
    for j in 0..n {
        let prange = pattern.col_range(j);
        let prows = &pattern.row_idx[prange.clone()];
        let mut cursor = 0usize;
        for idx in col_ptr[j]..col_ptr[j + 1] {
            let i = row_idx[idx];
            let mut v = value_at(idx);
            if i == j && alpha != 0.0 {
                // The shift is added to the decoded diagonal in working
                // precision; a single rounding follows below.
                v += alpha;
            }
            let pos = match prows[cursor..].binary_search(&i) {
                Ok(off) => {
                    cursor += off;
                    Some(prange.start + cursor)
                }
                Err(_) => None,
            };
            match pos {
                Some(p) => {
                    if let Some(tol) = flush_tol {
                        if i != j && v.abs() < tol {
                            continue; // squeezed away; position stays zero
                        }
                    }
                    let (rounded, status) = precision.round(v);
                    if status == RoundStatus::Overflow {
                        if i == j && alpha != 0.0 {
                            return Err(InitError::DiagOverflow);
                        }
                        panic!(
                            "input entry ({},{}) = {v} is not finite in the factorization precision",
                            i + 1,
                            j + 1
                        );
                    }
                    vals[p] = rounded;
                }
                None => {
                    let flushed = flush_tol.map_or(false, |tol| v.abs() < tol);
                    assert!(
                        v == 0.0 || flushed,
                        "pattern does not cover input entry ({},{})",
                        i + 1,
                        j + 1
                    );
                }
            }
        }
    }
    Ok(vals)
}

/// One factorization attempt of `A_l` (plus an optional diagonal shift) on
/// the given pattern.
///
/// Breakdown contract: B1 when a pre-square-root pivot is below `tau_u`
/// (with look-ahead, every diagonal updated at step k is tested, so B1 is
/// raised at the earliest step); B2 when the safe-scale test fails; B3 when
/// an update would overflow (if the largest scaled entry of the pivot column
/// is below sqrt(x_max) all products are safe and only subtractions are
/// checked); B4 when the GMW modification value would overflow.
pub fn ic_factorize(
    input: FactorInput,
    pattern: &FillPattern,
    opts: &IcOptions,
) -> FactorAttempt {
    match ic_attempt(&input, pattern, opts, 0.0, None) {
        Ok(attempt) => attempt,
        Err(InitError::DiagOverflow) => unreachable!("no shift applied"),
    }
}

fn ic_attempt(
    input: &FactorInput,
    pattern: &FillPattern,
    opts: &IcOptions,
    alpha: f64,
    flush_tol: Option<f64>,
) -> Result<FactorAttempt, InitError> {
    debug_assert!(opts.validate().is_ok(), "invalid options");
    let precision = opts.precision;
    let fmt = precision.params();
    let n = pattern.n;
    let rows = &pattern.row_idx;
    let mut vals = init_values(input, pattern, precision, alpha, flush_tol)?;
    let sqrt_xmax = fmt.x_max.sqrt();

    let mut nmod = 0usize;
    let mut pivots: Vec<f64> = Vec::with_capacity(n);

    fn breakdown(
        kind: BreakdownKind,
        k: usize,
        pivots: Vec<f64>,
        off: Option<f64>,
        nmod: usize,
    ) -> Result<FactorAttempt, InitError> {
        Ok(FactorAttempt {
            outcome: AttemptOutcome::Breakdown {
                flag: BreakdownFlag {
                    kind,
                    column: k + 1,
                },
                pivots,
                offending: off,
            },
            nmod,
        })
    }

    for k in 0..n {
        let ck = pattern.col_range(k);
        debug_assert_eq!(rows[ck.start], k, "diagonal must lead column {k}");
        let mut pivot = vals[ck.start];

        // Largest current off-diagonal magnitude of the pivot column.
        let l_kmax = vals[ck.start + 1..ck.end]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));

        if let Some(beta) = opts.gmw {
            match gmw_adjust(pivot, l_kmax, beta, &fmt) {
                Err(()) => return breakdown(BreakdownKind::B4, k, pivots, None, nmod),
                Ok((new_pivot, modified)) => {
                    if modified {
                        let (rounded, status) = precision.round(new_pivot);
                        debug_assert!(status != RoundStatus::Overflow);
                        pivot = rounded;
                        vals[ck.start] = rounded;
                        nmod += 1;
                    }
                }
            }
        }

        // B1: strict test, so a pivot exactly equal to tau_u passes.
        if pivot < opts.tau_u {
            return breakdown(BreakdownKind::B1, k, pivots, Some(pivot), nmod);
        }
        pivots.push(pivot);

        let (d, status) = precision.round(pivot.sqrt());
        debug_assert!(status != RoundStatus::Overflow);
        vals[ck.start] = d;

        if !safe_scale_check(d, l_kmax, &fmt) {
            return breakdown(BreakdownKind::B2, k, pivots, None, nmod);
        }
        for idx in ck.start + 1..ck.end {
            let (q, status) = precision.round(vals[idx] / d);
            debug_assert!(status != RoundStatus::Overflow);
            vals[idx] = q;
        }

        // If every scaled entry is below sqrt(x_max), products in the update
        // sweep cannot overflow and only the subtraction needs checking.
        let scaled_max = vals[ck.start + 1..ck.end]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let products_safe = scaled_max < sqrt_xmax;

        for t1 in ck.start + 1..ck.end {
            let j = rows[t1];
            let ljk = vals[t1];
            let cj = pattern.col_range(j);
            let mut p = cj.start;
            for t2 in t1..ck.end {
                let i = rows[t2];
                while p < cj.end && rows[p] < i {
                    p += 1;
                }
                if p == cj.end {
                    break;
                }
                if rows[p] != i {
                    continue; // (i, j) outside the pattern: update dropped
                }
                let lik = vals[t2];
                let updated = if products_safe {
                    let (w, st) = precision.round(lik * ljk);
                    debug_assert!(st != RoundStatus::Overflow);
                    let (v, st) = precision.round(vals[p] - w);
                    if st == RoundStatus::Overflow {
                        None
                    } else {
                        Some(v)
                    }
                } else {
                    safe_mulsub(vals[p], lik, ljk, &fmt)
                };
                match updated {
                    Some(v) => vals[p] = v,
                    None => return breakdown(BreakdownKind::B3, k, pivots, None, nmod),
                }
            }
            if opts.lookahead {
                let future_diag = vals[cj.start];
                if future_diag < opts.tau_u {
                    return breakdown(BreakdownKind::B1, k, pivots, Some(future_diag), nmod);
                }
            }
        }
    }

    let payload = match precision {
        Precision::Fp16 => FactorPayload::Half(
            vals.iter()
                .map(|&v| {
                    let (w, st) = halffloat::encode(v);
                    debug_assert_eq!(st, RoundStatus::Exact);
                    w
                })
                .collect(),
        ),
        Precision::Bf16 => FactorPayload::Bf16(
            vals.iter()
                .map(|&v| {
                    let (bits, st) = halffloat::encode_bf16(v);
                    debug_assert_eq!(st, RoundStatus::Exact);
                    bits
                })
                .collect(),
        ),
        Precision::Fp32 => FactorPayload::Single(vals.iter().map(|&v| v as f32).collect()),
        Precision::Fp64 => FactorPayload::Double(vals),
    };
    Ok(FactorAttempt {
        outcome: AttemptOutcome::Completed(IcFactor {
            pattern: pattern.clone(),
            payload,
            precision,
        }),
        nmod,
    })
}

/// Shifted incomplete Cholesky driver: attempt to factorize `A_l + alpha I`
/// for alpha = 0, then alpha_S, doubling after every breakdown until the
/// factorization completes or `max_restarts` restarts are exhausted.
///
/// Entries of the scaled matrix are cast to the factorization precision on
/// the fly at each attempt; for 16-bit precisions entries below `flush_tol`
/// are flushed, matching the squeeze that defined the pattern.
pub fn shifted_factorize(
    a_hat: &SparseSpd,
    pattern: &FillPattern,
    opts: &IcOptions,
) -> Result<ShiftedFactor, FactorError> {
    opts.validate().map_err(FactorError::Options)?;
    let flush = opts.precision.half16().map(|_| opts.flush_tol);
    let input = FactorInput::Working(a_hat);
    let mut stats = FactorStats::default();
    let mut alpha = 0.0f64;
    loop {
        stats.alpha = alpha;
        let attempt = match ic_attempt(&input, pattern, opts, alpha, flush) {
            Ok(a) => a,
            Err(InitError::DiagOverflow) => {
                return Err(FactorError::ShiftOverflow { alpha, stats })
            }
        };
        stats.nmod = attempt.nmod;
        match attempt.outcome {
            AttemptOutcome::Completed(factor) => {
                return Ok(ShiftedFactor {
                    alpha,
                    factor,
                    stats,
                });
            }
            AttemptOutcome::Breakdown { flag, .. } => {
                match flag.kind {
                    BreakdownKind::B1 => stats.n1 += 1,
                    BreakdownKind::B2 => stats.n2 += 1,
                    BreakdownKind::B3 => stats.n3 += 1,
                    BreakdownKind::B4 => stats.n4 += 1,
                    BreakdownKind::Ok => unreachable!(),
                }
                if stats.restarts == opts.max_restarts {
                    return Err(FactorError::RestartsExhausted { stats, last: flag });
                }
                stats.restarts += 1;
                alpha = (2.0 * alpha).max(opts.shift_init);
            }
        }
    }
}
