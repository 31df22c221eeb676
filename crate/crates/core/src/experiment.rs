//! Experiment harness: load or generate matrices, run the full pipeline
//! (scale, squeeze, symbolic pattern, shifted factorization, iterative
//! refinement), and emit machine-readable reports.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::factorize::{shifted_factorize, FactorError, FactorStats, IcOptions};
use crate::krylov::{backward_error, ir_driver, IrConfig, Preconditioner};
use crate::sparsecore::{
    make_rhs, read_matrix_market, scale_l2, squeeze_as, MatrixError, SparseSpd,
};
use crate::symbolic::level_pattern;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("load stage: {0}")]
    Load(#[from] MatrixError),
    #[error("fixture stage: {0}")]
    Fixture(String),
    #[error("config stage: {0}")]
    Config(String),
}

/// Where the experiment matrix comes from.
#[derive(Debug, Clone)]
pub enum MatrixSource {
    Path(PathBuf),
    Fixture(FixtureSpec),
}

/// Built-in matrices: the worked 5x5 examples (parameterized where the text
/// parameterizes them), a 2D five-point Laplacian, and a seeded synthetic
/// SPD generator.
#[derive(Debug, Clone, PartialEq)]
pub enum FixtureSpec {
    /// The 5x5 example with entries (4,2)=(2,4)=c and (4,4)=8+2*delta.
    Paper5x5C1 { delta: f64, c: f64 },
    /// Same matrix with c=0 and the (4,2)/(2,4) pair removed structurally.
    Paper5x5C0 { delta: f64 },
    /// The ill-conditioned matrix whose IC(0) pivot vanishes at column 5.
    Paper5x5Lookahead,
    /// The well-conditioned matrix whose IC(0) column-4 scaling overflows
    /// fp16 (entries 8.00007, 550, 60000).
    Paper5x5B3,
    /// Growth fixture: like Paper5x5C0 but with (5,5) = 2/delta*1.2, so an
    /// unmonitored factorization completes with entries ~ 1/sqrt(delta); the
    /// 20% headroom keeps the final pivot positive despite the cancellation
    /// noise in the tiny fourth pivot.
    Paper5x5Growth { delta: f64 },
    /// Five-point Laplacian on an m x m grid (n = m^2).
    Laplace2d { m: usize },
    /// D + R + R^T with controlled diagonal dominance and a geometric
    /// condition stretch, verified SPD by a dense Cholesky oracle.
    Synthetic {
        n: usize,
        density: f64,
        dominance: f64,
        stretch: f64,
    },
}

impl FixtureSpec {
    pub fn name(&self) -> &'static str {
        match self {
            FixtureSpec::Paper5x5C1 { .. } => "paper-5x5-c1",
            FixtureSpec::Paper5x5C0 { .. } => "paper-5x5-c0",
            FixtureSpec::Paper5x5Lookahead => "paper-5x5-lookahead",
            FixtureSpec::Paper5x5B3 => "paper-5x5-b3",
            FixtureSpec::Paper5x5Growth { .. } => "paper-5x5-growth",
            FixtureSpec::Laplace2d { .. } => "laplace2d",
            FixtureSpec::Synthetic { .. } => "synthetic",
        }
    }
}

/// Parse a fixture description: `NAME` or `NAME,key=value,...`.
pub fn parse_fixture(s: &str) -> Result<FixtureSpec, ExperimentError> {
    let mut parts = s.split(',');
    let name = parts.next().unwrap_or("").trim();
    let mut kv = std::collections::BTreeMap::new();
    for part in parts {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| ExperimentError::Fixture(format!("bad parameter `{part}`")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get_f64 = |kv: &std::collections::BTreeMap<String, String>, k: &str, default: f64| {
        kv.get(k)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| ExperimentError::Fixture(format!("bad value for `{k}`: {v}")))
            })
            .unwrap_or(Ok(default))
    };
    let get_usize = |kv: &std::collections::BTreeMap<String, String>, k: &str, default: usize| {
        kv.get(k)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| ExperimentError::Fixture(format!("bad value for `{k}`: {v}")))
            })
            .unwrap_or(Ok(default))
    };
    match name {
        "paper-5x5-c1" => Ok(FixtureSpec::Paper5x5C1 {
            delta: get_f64(&kv, "delta", 0.5)?,
            c: get_f64(&kv, "c", 1.0)?,
        }),
        "paper-5x5-c0" => Ok(FixtureSpec::Paper5x5C0 {
            delta: get_f64(&kv, "delta", 1e-4)?,
        }),
        "paper-5x5-lookahead" => Ok(FixtureSpec::Paper5x5Lookahead),
        "paper-5x5-b3" => Ok(FixtureSpec::Paper5x5B3),
        "paper-5x5-growth" => Ok(FixtureSpec::Paper5x5Growth {
            delta: get_f64(&kv, "delta", 1e-21)?,
        }),
        "laplace2d" => Ok(FixtureSpec::Laplace2d {
            m: get_usize(&kv, "m", 50)?,
        }),
        "synthetic" => Ok(FixtureSpec::Synthetic {
            n: get_usize(&kv, "n", 100)?,
            density: get_f64(&kv, "density", 0.05)?,
            dominance: get_f64(&kv, "dominance", 1.5)?,
            stretch: get_f64(&kv, "stretch", 1.0)?,
        }),
        other => Err(ExperimentError::Fixture(format!("unknown fixture `{other}`"))),
    }
}

fn paper_5x5_base(delta: f64, c: Option<f64>) -> Vec<(usize, usize, f64)> {
    let mut t = vec![
        (0, 0, 3.0),
        (1, 0, -2.0),
        (3, 0, 2.0),
        (1, 1, 3.0),
        (2, 1, -2.0),
        (2, 2, 3.0),
        (3, 2, -2.0),
        (3, 3, 8.0 + 2.0 * delta),
        (4, 3, 2.0),
        (4, 4, 8.0),
    ];
    if let Some(c) = c {
        t.push((3, 1, c));
    }
    t
}

/// Materialize a fixture matrix. `seed` drives the synthetic generator only.
pub fn generate_fixture(spec: &FixtureSpec, seed: u64) -> Result<SparseSpd, ExperimentError> {
    let build = |t: Vec<(usize, usize, f64)>, n: usize| {
        SparseSpd::from_triplets(n, t).map_err(ExperimentError::Load)
    };
    match *spec {
        FixtureSpec::Paper5x5C1 { delta, c } => build(paper_5x5_base(delta, Some(c)), 5),
        FixtureSpec::Paper5x5C0 { delta } => build(paper_5x5_base(delta, None), 5),
        FixtureSpec::Paper5x5Lookahead => build(
            vec![
                (0, 0, 3.0),
                (1, 0, -2.0),
                (3, 0, 1.0),
                (4, 0, 2.0),
                (1, 1, 3.0),
                (2, 1, -2.0),
                (2, 2, 3.0),
                (4, 2, -2.0),
                (3, 3, 5.0),
                (4, 4, 8.0),
            ],
            5,
        ),
        FixtureSpec::Paper5x5B3 => build(
            vec![
                (0, 0, 3.0),
                (1, 0, -2.0),
                (3, 0, 2.0),
                (1, 1, 3.0),
                (2, 1, -2.0),
                (2, 2, 3.0),
                (3, 2, -2.0),
                (3, 3, 8.00007),
                (4, 3, 550.0),
                (4, 4, 60000.0),
            ],
            5,
        ),
        FixtureSpec::Paper5x5Growth { delta } => {
            let mut t = paper_5x5_base(delta, None);
            t.retain(|&(i, j, _)| !(i == 4 && j == 4));
            t.push((4, 4, 2.0 / delta * 1.2));
            build(t, 5)
        }
        FixtureSpec::Laplace2d { m } => {
            if m == 0 {
                return Err(ExperimentError::Fixture("laplace2d needs m >= 1".into()));
            }
            let id = |r: usize, c: usize| r * m + c;
            let mut t = Vec::with_capacity(3 * m * m);
            for r in 0..m {
                for c in 0..m {
                    t.push((id(r, c), id(r, c), 4.0));
                    if r + 1 < m {
                        t.push((id(r + 1, c), id(r, c), -1.0));
                    }
                    if c + 1 < m {
                        t.push((id(r, c + 1), id(r, c), -1.0));
                    }
                }
            }
            build(t, m * m)
        }
        FixtureSpec::Synthetic {
            n,
            density,
            dominance,
            stretch,
        } => synthetic_spd(n, density, dominance, stretch, seed),
    }
}

/// Dense working-precision Cholesky, the SPD oracle for synthetic draws.
pub fn dense_cholesky_is_spd(a: &SparseSpd) -> bool {
    let n = a.n();
    let mut m = a.to_dense();
    for k in 0..n {
        if m[k][k] <= 0.0 {
            return false;
        }
        let d = m[k][k].sqrt();
        m[k][k] = d;
        for i in (k + 1)..n {
            m[i][k] /= d;
        }
        for j in (k + 1)..n {
            for i in j..n {
                m[i][j] -= m[i][k] * m[j][k];
            }
        }
    }
    true
}

fn synthetic_spd(
    n: usize,
    density: f64,
    dominance: f64,
    stretch: f64,
    seed: u64,
) -> Result<SparseSpd, ExperimentError> {
    if n == 0 || !(0.0..=1.0).contains(&density) || dominance <= 0.0 || stretch <= 0.0 {
        return Err(ExperimentError::Fixture(
            "synthetic needs n >= 1, density in [0,1], dominance > 0, stretch > 0".into(),
        ));
    }
    for attempt in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut rowsum = vec![0.0f64; n];
        let mut t: Vec<(usize, usize, f64)> = Vec::new();
        for i in 1..n {
            for j in 0..i {
                if rng.gen_bool(density) {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    t.push((i, j, v));
                    rowsum[i] += v.abs();
                    rowsum[j] += v.abs();
                }
            }
        }
        for (i, t_row) in rowsum.iter().enumerate() {
            t.push((i, i, dominance * t_row + 0.1));
        }
        // Condition stretch as a symmetric congruence: SPD is preserved and
        // the diagonal spread grows by the stretch factor, leaving the
        // pipeline's prescaling with real work to do.
        if stretch != 1.0 && n > 1 {
            let s = |i: usize| stretch.powf(-0.5 * i as f64 / (n as f64 - 1.0));
            for (i, j, v) in t.iter_mut() {
                *v *= s(*i) * s(*j);
            }
        }
        let a = SparseSpd::from_triplets(n, t).map_err(ExperimentError::Load)?;
        if dense_cholesky_is_spd(&a) {
            return Ok(a);
        }
    }
    Err(ExperimentError::Fixture(format!(
        "synthetic draw not SPD after 10 attempts (n={n}, dominance={dominance}, stretch={stretch})"
    )))
}

/// Output format for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Full configuration of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub matrix: MatrixSource,
    pub identifier: Option<String>,
    pub level: u32,
    pub ic: IcOptions,
    pub ir: IrConfig,
    pub format: ReportFormat,
    pub seed: u64,
}

/// One row of results, mirroring the experiment tables: problem size,
/// squeezed size, total inner iterations, breakdown counts, GMW modification
/// count, final shift, final backward error, and convergence flags.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunReport {
    pub identifier: String,
    pub n: usize,
    pub nnz_a: usize,
    pub nnz_al: usize,
    pub its: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n4: usize,
    pub nmod: usize,
    pub alpha: f64,
    pub res: f64,
    pub converged: bool,
    pub nc: bool,
    pub wall_time: f64,
}

impl RunReport {
    pub const CSV_HEADER: &'static str =
        "identifier,n,nnz_a,nnz_al,its,n1,n2,n3,n4,nmod,alpha,res,converged,nc,wall_time";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:e},{:e},{},{},{}",
            self.identifier,
            self.n,
            self.nnz_a,
            self.nnz_al,
            self.its,
            self.n1,
            self.n2,
            self.n3,
            self.n4,
            self.nmod,
            self.alpha,
            self.res,
            self.converged,
            self.nc,
            self.wall_time
        )
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => serde_json::to_string_pretty(self).expect("report serializes"),
            ReportFormat::Csv => format!("{}\n{}", Self::CSV_HEADER, self.to_csv_row()),
        }
    }
}

/// Run the full pipeline: rhs construction, scaling, squeeze, fill pattern,
/// shifted factorization, and iterative refinement. A factorization hard
/// failure still yields a report (converged = false); config and load
/// problems are errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, ExperimentError> {
    cfg.ic
        .validate()
        .map_err(|e| ExperimentError::Config(format!("factorization options: {e}")))?;
    let start = Instant::now();

    let (a, identifier) = match &cfg.matrix {
        MatrixSource::Path(path) => {
            let a = read_matrix_market(path)?;
            let ident = cfg.identifier.clone().unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string())
            });
            (a, ident)
        }
        MatrixSource::Fixture(spec) => {
            let a = generate_fixture(spec, cfg.seed)?;
            let ident = cfg
                .identifier
                .clone()
                .unwrap_or_else(|| spec.name().to_string());
            (a, ident)
        }
    };

    let n = a.n();
    let nnz_a = a.nnz();
    let b = make_rhs(&a);
    let (scale, a_hat) = scale_l2(&a)?;

    // Squeeze decides the structure the pattern is computed on; 32- and
    // 64-bit factorizations consume the scaled matrix directly.
    let (pattern, nnz_al) = match cfg.ic.precision.half16() {
        Some(format) => {
            let a_l = squeeze_as(&a_hat, cfg.ic.flush_tol, format)?;
            (level_pattern(&a_l, cfg.level), a_l.nnz())
        }
        None => (level_pattern(&a_hat, cfg.level), a_hat.nnz()),
    };

    let mut report = RunReport {
        identifier,
        n,
        nnz_a,
        nnz_al,
        its: 0,
        n1: 0,
        n2: 0,
        n3: 0,
        n4: 0,
        nmod: 0,
        alpha: 0.0,
        res: backward_error(&a, &b, &vec![0.0; n]),
        converged: false,
        nc: false,
        wall_time: 0.0,
    };

    let fill_stats = |report: &mut RunReport, stats: &FactorStats| {
        report.n1 = stats.n1;
        report.n2 = stats.n2;
        report.n3 = stats.n3;
        report.n4 = stats.n4;
        report.nmod = stats.nmod;
        report.alpha = stats.alpha;
    };

    match shifted_factorize(&a_hat, &pattern, &cfg.ic) {
        Ok(shifted) => {
            fill_stats(&mut report, &shifted.stats);
            let precond = Preconditioner::new(shifted.factor, scale);
            let solve = ir_driver(&a, &b, &precond, &cfg.ir);
            report.its = solve.total_inner_its;
            report.res = *solve.res_history.last().unwrap_or(&f64::NAN);
            report.converged = solve.converged;
            report.nc = solve.nc;
        }
        Err(FactorError::Options(msg)) => {
            return Err(ExperimentError::Config(format!("factorize stage: {msg}")))
        }
        Err(FactorError::RestartsExhausted { stats, .. })
        | Err(FactorError::ShiftOverflow { stats, .. }) => {
            fill_stats(&mut report, &stats);
        }
    }

    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// SuiteSparse identifiers of the study's ill-conditioned test set.
pub const SUITESPARSE_TEST_SET: &[&str] = &[
    "Boeing/msc01050",
    "HB/bcsstk11",
    "HB/bcsstk26",
    "HB/bcsstk24",
    "HB/bcsstk16",
    "Cylshell/s2rmt3m1",
    "Cylshell/s3rmt3m1",
    "Boeing/bcsstk38",
    "Boeing/msc10848",
    "Oberwolfach/t2dah_e",
    "Boeing/ct20stif",
    "DNVS/shipsec8",
    "GHS_psdef/hood",
    "Um/offshore",
];

pub fn suitesparse_urls() -> Vec<String> {
    SUITESPARSE_TEST_SET
        .iter()
        .map(|id| format!("https://sparse.tamu.edu/{id}"))
        .collect()
}
