//! Skip-width × sampling-stride grids against a τ = 0 baseline.

use std::fmt::Write;

use s2dm::config::RunConfig;
use s2dm::difftrain::{self, TauConvention};
use s2dm::evalkit::{make_dataset, sliced_wasserstein_mode, DatasetSpec, DEFAULT_PROJECTIONS};
use s2dm::par::{self, ExecMode};
use s2dm::rng::derive_seed;
use s2dm::samplers::{ddim_sample, SamplerSpec};
use s2dm::schedule::build_stride;
use s2dm::{Error, SampleBatch};

use crate::error::{CliError, CliResult};

pub const DEFAULT_BUDGET: u64 = 2_000_000;

#[derive(Debug, Clone)]
pub struct AblateOptions {
    pub skips: Vec<usize>,
    /// Jump widths between visited timesteps; `T / width` sampling steps.
    pub strides: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_eval: usize,
    pub projections: usize,
    pub budget: u64,
    pub force: bool,
    pub exec: ExecMode,
}

impl Default for AblateOptions {
    fn default() -> Self {
        Self {
            skips: vec![2, 10, 50],
            strides: vec![2, 10, 50],
            seeds: vec![1, 2, 3, 4, 5],
            n_eval: 2000,
            projections: DEFAULT_PROJECTIONS,
            budget: DEFAULT_BUDGET,
            force: false,
            exec: ExecMode::Serial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowModel {
    Baseline,
    Skip(usize),
}

impl RowModel {
    pub fn label(&self) -> String {
        match self {
            RowModel::Baseline => "baseline".into(),
            RowModel::Skip(k) => format!("skip={k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    /// `(baseline - ours) / baseline * 100`; absent on the baseline row.
    pub increase_rate: Option<f64>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub rows: Vec<RowModel>,
    pub strides: Vec<usize>,
    pub steps: Vec<usize>,
    pub cells: Vec<Vec<GridCell>>,
}

/// How often the matched model beats the other skip models at one stride.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalTrend {
    pub stride: usize,
    pub wins: usize,
    pub seeds: usize,
}

pub fn budget_estimate(cfg: &RunConfig, opts: &AblateOptions) -> u64 {
    cfg.train.iterations as u64 * (opts.skips.len() as u64 + 1) * opts.seeds.len() as u64
}

fn check_lists(cfg: &RunConfig, opts: &AblateOptions) -> CliResult<()> {
    let t = cfg.train.schedule.steps;
    if opts.skips.is_empty() || opts.strides.is_empty() || opts.seeds.is_empty() {
        return Err(CliError::Usage("--skips, --strides and --seeds must be nonempty".into()));
    }
    if let Some(w) = opts.strides.iter().find(|&&w| w == 0 || w > t) {
        return Err(CliError::Usage(format!("stride {w} must lie in 1..={t}")));
    }
    if opts.n_eval == 0 || opts.projections == 0 {
        return Err(CliError::Usage("--n-eval and --projections must be positive".into()));
    }
    for w in [&opts.skips[..], &opts.strides[..]] {
        let mut v = w.to_vec();
        v.sort_unstable();
        v.dedup();
        if v.len() != w.len() {
            return Err(CliError::Usage("--skips and --strides must not repeat values".into()));
        }
    }
    Ok(())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every (model, seed) pair and scores each stride by sliced W1
/// against a held-out reference set.
pub fn run_ablation(cfg: &RunConfig, opts: &AblateOptions) -> CliResult<AblationGrid> {
    check_lists(cfg, opts)?;
    let estimate = budget_estimate(cfg, opts);
    if estimate > opts.budget && !opts.force {
        return Err(CliError::Budget {
            estimate,
            cap: opts.budget,
        });
    }
    let t_max = cfg.train.schedule.steps;
    let sched = cfg.train.schedule.build()?;
    let data = make_dataset(&cfg.data)?;
    let reference = reference_set(cfg, opts.n_eval)?;
    let mut rows = vec![RowModel::Baseline];
    rows.extend(opts.skips.iter().map(|&k| RowModel::Skip(k)));
    let steps: Vec<usize> = opts.strides.iter().map(|w| (t_max / w).max(1)).collect();
    let strides = steps.iter().map(|&n| build_stride(t_max, n)).collect::<s2dm::Result<Vec<_>>>()?;

    let jobs: Vec<(usize, u64)> = (0..rows.len()).flat_map(|r| opts.seeds.iter().map(move |&s| (r, s))).collect();
    let scores = par::try_map(opts.exec, &jobs, |&(r, seed)| -> s2dm::Result<Vec<f64>> {
        let mut train = cfg.train.clone();
        train.seed = seed;
        match rows[r] {
            RowModel::Baseline => {
                train.tau = 0.0;
                train.tau_convention = TauConvention::TauOnSkip;
            }
            RowModel::Skip(k) => train.skip = k,
        }
        let out = difftrain::train(&train, &data, ExecMode::Serial).map_err(|a| a.error)?;
        strides
            .iter()
            .map(|stride| {
                let spec = SamplerSpec::ddim(stride.clone(), 0.0);
                let (s, _) = ddim_sample(&out.model, &sched, &spec, opts.n_eval, derive_seed(seed, "ablate.sample"), ExecMode::Serial)?;
                Ok(sliced_wasserstein_mode(
                    &s,
                    &reference,
                    opts.projections,
                    derive_seed(seed, "ablate.projections"),
                    ExecMode::Serial,
                )?
                .value)
            })
            .collect()
    })?;

    let n_seeds = opts.seeds.len();
    let mut cells: Vec<Vec<GridCell>> = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let mut line = Vec::with_capacity(strides.len());
        for (c, &w) in opts.strides.iter().enumerate() {
            let values: Vec<f64> = (0..n_seeds).map(|i| scores[r * n_seeds + i][c]).collect();
            let (mean, sd) = mean_sd(&values);
            line.push(GridCell {
                seeds: opts.seeds.clone(),
                values,
                mean,
                sd,
                increase_rate: None,
                matched: *row == RowModel::Skip(w),
            });
        }
        cells.push(line);
    }
    for c in 0..strides.len() {
        let base = cells[0][c].mean;
        for row in cells.iter_mut().skip(1) {
            row[c].increase_rate = Some((base - row[c].mean) / base * 100.0);
        }
    }
    Ok(AblationGrid {
        rows,
        strides: opts.strides.clone(),
        steps,
        cells,
    })
}

impl AblationGrid {
    fn skip_row(&self, k: usize) -> Option<usize> {
        self.rows.iter().position(|r| *r == RowModel::Skip(k))
    }

    /// Per-seed comparison at every stride that has a matching skip model:
    /// a win means the matched model scores lowest among the skip models.
    pub fn diagonal_trend(&self) -> Vec<DiagonalTrend> {
        let skip_rows: Vec<usize> = (0..self.rows.len()).filter(|&r| self.rows[r] != RowModel::Baseline).collect();
        let mut out = Vec::new();
        for (c, &w) in self.strides.iter().enumerate() {
            let Some(m) = self.skip_row(w) else { continue };
            let seeds = self.cells[m][c].values.len();
            let wins = (0..seeds)
                .filter(|&i| {
                    let v = self.cells[m][c].values[i];
                    skip_rows.iter().all(|&r| r == m || v < self.cells[r][c].values[i])
                })
                .count();
            out.push(DiagonalTrend { stride: w, wins, seeds });
        }
        out.sort_by_key(|d| d.stride);
        out
    }

    /// Per-seed wins of skip model `k` over the baseline at stride `w`.
    pub fn wins_over_baseline(&self, k: usize, w: usize) -> Option<(usize, usize)> {
        let r = self.skip_row(k)?;
        let c = self.strides.iter().position(|&s| s == w)?;
        let (ours, base) = (&self.cells[r][c].values, &self.cells[0][c].values);
        Some((ours.iter().zip(base).filter(|(a, b)| a < b).count(), ours.len()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,skip,stride,steps,mean,sd,n_seeds,seeds,values,increase_rate_pct,matched\n");
        let join = |v: &[String]| v.join(";");
        for (r, row) in self.rows.iter().enumerate() {
            let skip = match row {
                RowModel::Baseline => String::new(),
                RowModel::Skip(k) => k.to_string(),
            };
            for (c, cell) in self.cells[r].iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{skip},{},{},{:?},{:?},{},{},{},{},{}",
                    row.label(),
                    self.strides[c],
                    self.steps[c],
                    cell.mean,
                    cell.sd,
                    cell.seeds.len(),
                    join(&cell.seeds.iter().map(|x| x.to_string()).collect::<Vec<_>>()),
                    join(&cell.values.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>()),
                    cell.increase_rate.map(|x| format!("{x:.4}")).unwrap_or_default(),
                    cell.matched
                );
            }
        }
        s
    }

    /// Fixed-width table of `mean±sd (rate%)`, matched cells starred.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12}", "model");
        for (w, n) in self.strides.iter().zip(&self.steps) {
            s += &format!("{:>30}", format!("stride {w} ({n} steps)"));
        }
        s.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            s += &format!("{:<12}", row.label());
            for cell in &self.cells[r] {
                let rate = cell.increase_rate.map(|x| format!(" ({x:+.1}%)")).unwrap_or_default();
                let star = if cell.matched { "*" } else { "" };
                s += &format!("{:>30}", format!("{star}{:.4}±{:.4}{rate}", cell.mean, cell.sd));
            }
            s.push('\n');
        }
        s
    }

    pub fn trend_text(&self) -> String {
        let mut s = String::new();
        for d in self.diagonal_trend() {
            let verdict = if 2 * d.wins > d.seeds { "pass" } else { "fail" };
            let _ = writeln!(
                s,
                "diagonal stride={} matched_best_in={}/{} majority={verdict}",
                d.stride, d.wins, d.seeds
            );
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let rows: Vec<String> = self.rows.iter().map(|r| r.label()).collect();
        let cols: Vec<String> = self.strides.iter().map(|w| format!("stride {w}")).collect();
        let values: Vec<Vec<f64>> = self.cells.iter().map(|r| r.iter().map(|c| c.mean).collect()).collect();
        let marked: Vec<(usize, usize)> = (0..self.rows.len())
            .flat_map(|r| (0..self.strides.len()).map(move |c| (r, c)))
            .filter(|&(r, c)| self.cells[r][c].matched)
            .collect();
        crate::svg::heat_table(&rows, &cols, &values, &marked)
    }
}

/// Held-out points every ablation cell is scored against.
pub fn reference_set(cfg: &RunConfig, n: usize) -> s2dm::Result<SampleBatch> {
    if n == 0 {
        return Err(Error::Usage("reference set needs at least one point".into()));
    }
    make_dataset(&DatasetSpec {
        n,
        seed: derive_seed(cfg.data.seed, "reference"),
        ..cfg.data.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(values: Vec<f64>, matched: bool) -> GridCell {
        let (mean, sd) = mean_sd(&values);
        GridCell {
            seeds: (1..=values.len() as u64).collect(),
            values,
            mean,
            sd,
            increase_rate: None,
            matched,
        }
    }

    fn grid() -> AblationGrid {
        AblationGrid {
            rows: vec![RowModel::Baseline, RowModel::Skip(2), RowModel::Skip(10)],
            strides: vec![2, 10],
            steps: vec![50, 10],
            cells: vec![
                vec![cell(vec![1.0, 1.0, 1.0], false), cell(vec![2.0, 2.0, 2.0], false)],
                vec![cell(vec![0.5, 0.9, 0.5], true), cell(vec![3.0, 1.0, 3.0], false)],
                vec![cell(vec![0.6, 0.8, 0.7], false), cell(vec![2.5, 2.5, 2.5], true)],
            ],
        }
    }

    #[test]
    fn diagonal_counts_per_seed() {
        let d = grid().diagonal_trend();
        assert_eq!(d[0], DiagonalTrend { stride: 2, wins: 2, seeds: 3 });
        assert_eq!(d[1], DiagonalTrend { stride: 10, wins: 2, seeds: 3 });
        assert!(grid().trend_text().contains("diagonal stride=2 matched_best_in=2/3 majority=pass"));
    }

    #[test]
    fn wins_against_baseline() {
        assert_eq!(grid().wins_over_baseline(10, 10), Some((0, 3)));
        assert_eq!(grid().wins_over_baseline(2, 2), Some((3, 3)));
        assert_eq!(grid().wins_over_baseline(7, 2), None);
    }

    #[test]
    fn sample_sd() {
        let (m, s) = mean_sd(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn csv_is_rectangular() {
        let csv = grid().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 3 * 2);
        let width = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == width));
        assert!(lines[3].starts_with("skip=2,2,2,50,"));
        assert!(lines[3].ends_with(",true"));
    }

    #[test]
    fn budget_counts_baseline() {
        let mut cfg = RunConfig::default();
        cfg.train.iterations = 100;
        let opts = AblateOptions::default();
        assert_eq!(budget_estimate(&cfg, &opts), 100 * 4 * 5);
        cfg.train.iterations = 1_000_000;
        assert!(matches!(run_ablation(&cfg, &opts), Err(CliError::Budget { .. })));
    }
}
