//! `fhtw` command-line frontend.
//!
//! Each subcommand takes its parameters as flags, from a JSON object given by
//! `--config`, or both; flags win. Keys in the file are the long flag names
//! (`burn_in` or `burn-in`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Axis};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{FhtwError, Result};
use crate::estimator::{fit, infer_bases, FitConfig, DEFAULT_EPS_LS, DEFAULT_EPS_TRUNC};
use crate::ftn::{correlation_original, FtnModel, TransformInfo};
use crate::io::{read_samples, write_atomic, write_json, write_samples, write_table, ColumnKind};
use crate::models::{sample_gl_mcmc, sample_ou, GlSpec, McmcConfig, OuSpec};
use crate::rankstudy::{case_config, case_study, write_case_outputs, Scale};
use crate::sketch::{Mixing, SampleSet};
use crate::stats::{empirical_correlation, grid_l1, kde_2d, Grid2};
use crate::topology::{build_tree_1d, build_tree_2d, TreeTopology};
use crate::wavelet::{FilterKind, Layout, ScaleLabel, WaveletPlan};

/// Legendre degree q used when `--q` is not given.
pub const DEFAULT_Q: usize = 25;
pub const DEFAULT_RANK: usize = 12;
pub const DEFAULT_GRID_CELLS: usize = 60;

#[derive(Debug, Parser)]
#[command(name = "fhtw", version, about = "Tree tensor density estimation in wavelet coordinates")]
struct Cli {
    /// worker thread cap
    #[arg(long, global = true, env = "FHTW_THREADS")]
    threads: Option<usize>,
    /// JSON file with parameters for the subcommand
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw samples from an OU or Ginzburg-Landau lattice model
    Sample(SampleArgs),
    /// Apply the wavelet transform (or its inverse) to a sample file
    Transform(TransformArgs),
    /// Fit a tree tensor model to lattice samples
    Fit(FitArgs),
    /// Compare model observables with sample statistics
    Eval(EvalArgs),
    /// Run one of the numerical-rank case studies
    Rankstudy(RankArgs),
    /// Print the tree topology as JSON
    DescribeTree(TreeArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleArgs {
    /// ou1d, ou2d, gl1d or gl2d
    #[arg(long)]
    pub model: Option<String>,
    /// sites on the line (1D)
    #[arg(long)]
    pub d: Option<usize>,
    /// grid side (2D)
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thinning: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// output CSV; the sidecar goes next to it with a .json extension
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// haar or d4
    #[arg(long)]
    pub filter: Option<String>,
    /// 1d or 2d
    #[arg(long)]
    pub layout: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub inverse: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    /// lattice (x_i) or wavelet (c[k,l]) sample CSV
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub layout: Option<String>,
    /// maximal internal rank r
    #[arg(long)]
    pub rank: Option<usize>,
    /// maximal Legendre degree q (basis size q + 1)
    #[arg(long)]
    pub q: Option<usize>,
    /// sketch size r̃ (default 3r)
    #[arg(long)]
    pub sketch_size: Option<usize>,
    #[arg(long)]
    pub sketch_degree: Option<usize>,
    #[arg(long)]
    pub interface_count: Option<usize>,
    /// orthonormal or identity
    #[arg(long)]
    pub mixing: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
    #[arg(long)]
    pub eps_trunc: Option<f64>,
    #[arg(long)]
    pub eps_ls: Option<f64>,
    /// relative widening of the inferred supports
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// defaults to the model path with a .report.json suffix
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// ground-truth sample CSV (lattice or wavelet columns)
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// one-based `i,j` grid site for the two-point function
    #[arg(long)]
    pub reference_site: Option<String>,
    /// marginal pairs such as `c[15,5]:c[8,4]`, repeatable
    #[arg(long)]
    pub pair: Option<Vec<String>>,
    #[arg(long)]
    pub grid_cells: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankArgs {
    #[arg(long)]
    pub case: Option<u8>,
    /// `paper` (full sample counts) or `desk`
    #[arg(long)]
    pub scale: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// sample count override
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub thinning: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeArgs {
    /// 1d or 2d
    #[arg(long)]
    pub layout: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    /// write here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => Some(read_config(p)?),
        None => None,
    };
    let go = move || match cli.command {
        Command::Sample(a) => cmd_sample(&merge(a, file.as_ref())?),
        Command::Transform(a) => cmd_transform(&merge(a, file.as_ref())?),
        Command::Fit(a) => cmd_fit(&merge(a, file.as_ref())?),
        Command::Eval(a) => cmd_eval(&merge(a, file.as_ref())?),
        Command::Rankstudy(a) => cmd_rankstudy(&merge(a, file.as_ref())?),
        Command::DescribeTree(a) => cmd_describe_tree(&merge(a, file.as_ref())?),
    };
    match cli.threads {
        Some(0) => Err(FhtwError::invalid("--threads must be at least 1")),
        // a local pool keeps repeated in-process runs independent
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| FhtwError::Internal(e.to_string()))?
            .install(go),
        None => go(),
    }
}

fn read_config(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| FhtwError::io(path, e))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| FhtwError::invalid(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(FhtwError::invalid(format!("{}: config must be a JSON object", path.display())));
    }
    Ok(v)
}

/// Overlays the flags that were given on top of the config file.
fn merge<T: Serialize + DeserializeOwned>(flags: T, file: Option<&Value>) -> Result<T> {
    let mut out = Map::new();
    if let Some(Value::Object(obj)) = file {
        for (k, v) in obj {
            out.insert(k.replace('-', "_"), v.clone());
        }
    }
    if let Value::Object(obj) = serde_json::to_value(&flags).map_err(|e| FhtwError::Internal(e.to_string()))? {
        for (k, v) in obj {
            if !v.is_null() {
                out.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(out)).map_err(|e| FhtwError::invalid(format!("config: {e}")))
}

fn need<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
    v.clone().ok_or_else(|| FhtwError::invalid(format!("missing --{}", name.replace('_', "-"))))
}

fn parse_layout(s: Option<&str>) -> Result<Layout> {
    match s.unwrap_or("1d") {
        "1d" => Ok(Layout::Line1D),
        "2d" => Ok(Layout::Grid2D),
        other => Err(FhtwError::invalid(format!("unknown layout '{other}' (expected 1d or 2d)"))),
    }
}

fn parse_filter(s: Option<&str>) -> Result<FilterKind> {
    s.unwrap_or("d4").parse()
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

enum ModelChoice {
    Ou(OuSpec),
    Gl(GlSpec),
}

fn model_choice(a: &SampleArgs) -> Result<ModelChoice> {
    let kind = need(&a.model, "model")?;
    let m = || need(&a.m, "m");
    let choice = match kind.as_str() {
        "ou1d" => ModelChoice::Ou(OuSpec::Line1d { d: need(&a.d, "d")?, alpha: need(&a.alpha, "alpha")? }),
        "ou2d" => ModelChoice::Ou(OuSpec::Grid2d {
            m: m()?,
            alpha1: need(&a.alpha1, "alpha1")?,
            alpha2: need(&a.alpha2, "alpha2")?,
        }),
        "gl1d" => ModelChoice::Gl(GlSpec::Line1d {
            d: need(&a.d, "d")?,
            alpha: need(&a.alpha, "alpha")?,
            lambda: need(&a.lambda, "lambda")?,
        }),
        "gl2d" => ModelChoice::Gl(GlSpec::Grid2d {
            m: m()?,
            alpha1: need(&a.alpha1, "alpha1")?,
            alpha2: need(&a.alpha2, "alpha2")?,
            lambda: need(&a.lambda, "lambda")?,
        }),
        other => return Err(FhtwError::invalid(format!("unknown model '{other}'"))),
    };
    Ok(choice)
}

fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

pub fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let out = need(&a.out, "out")?;
    let n = need(&a.n, "n")?;
    if n == 0 {
        return Err(FhtwError::invalid("--n must be positive"));
    }
    let seed = a.seed.unwrap_or(0);
    let (samples, spec, mcmc) = match model_choice(a)? {
        ModelChoice::Ou(spec) => (sample_ou(&spec, n, seed)?, to_json(&spec), None),
        ModelChoice::Gl(spec) => {
            let d = McmcConfig::default();
            let config = McmcConfig {
                step_size: a.step_size.unwrap_or(d.step_size),
                burn_in: a.burn_in.unwrap_or(d.burn_in),
                thinning: a.thinning.unwrap_or(d.thinning),
                chains: a.chains.unwrap_or(d.chains),
                seed,
                ..d
            };
            let (s, report) = sample_gl_mcmc(&spec, n, &config)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            (s, to_json(&spec), Some(json!({ "config": config, "report": report })))
        }
    };
    write_samples(&out, ColumnKind::Lattice, &samples)?;
    write_json(
        &sidecar_path(&out),
        &json!({
            "config": a,
            "model": spec,
            "n": n,
            "seed": seed,
            "mcmc": mcmc,
        }),
    )
}

pub fn cmd_transform(a: &TransformArgs) -> Result<()> {
    let input = need(&a.input, "input")?;
    let out = need(&a.out, "out")?;
    let inverse = a.inverse.unwrap_or(false);
    let (kind, rows) = read_samples(&input)?;
    let plan = WaveletPlan::for_dimension(parse_filter(a.filter.as_deref())?, parse_layout(a.layout.as_deref())?, rows.ncols())?;
    let (want, produce) = if inverse {
        (ColumnKind::Wavelet, ColumnKind::Lattice)
    } else {
        (ColumnKind::Lattice, ColumnKind::Wavelet)
    };
    if kind != want {
        return Err(FhtwError::invalid(format!(
            "{} has {} columns; {} expects {} columns",
            input.display(),
            if kind == ColumnKind::Lattice { "x_i" } else { "c[k,l]" },
            if inverse { "the inverse" } else { "the forward transform" },
            if inverse { "c[k,l]" } else { "x_i" },
        )));
    }
    let result = if inverse {
        plan.inverse_samples(rows.view())?
    } else {
        plan.transform_samples(rows.view())?
    };
    write_samples(&out, produce, &result)
}

fn tree_for(plan: &WaveletPlan) -> Result<TreeTopology> {
    match plan.layout {
        Layout::Line1D => build_tree_1d(plan.levels),
        Layout::Grid2D => build_tree_2d(plan.levels),
    }
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let input = need(&a.input, "input")?;
    let model_out = need(&a.model_out, "model_out")?;
    let report_out = a
        .report_out
        .clone()
        .unwrap_or_else(|| model_out.with_extension("report.json"));
    let (kind, rows) = read_samples(&input)?;
    let plan = WaveletPlan::for_dimension(parse_filter(a.filter.as_deref())?, parse_layout(a.layout.as_deref())?, rows.ncols())?;
    let coords = match kind {
        ColumnKind::Lattice => plan.transform_samples(rows.view())?,
        ColumnKind::Wavelet => rows,
    };
    let tree = tree_for(&plan)?;
    let rank = a.rank.unwrap_or(DEFAULT_RANK);
    let q = a.q.unwrap_or(DEFAULT_Q);
    let mut config = FitConfig::for_layout(rank, plan.layout);
    if let Some(s) = a.sketch_size {
        config.sketch.size = s;
    }
    if let Some(v) = a.sketch_degree {
        config.sketch.degree = v;
    }
    if let Some(v) = a.interface_count {
        config.sketch.interface_count = v;
    }
    if let Some(v) = a.seed {
        config.sketch.seed = v;
    }
    if let Some(v) = a.strict {
        config.sketch.strict = v;
    }
    config.sketch.mixing = match a.mixing.as_deref().unwrap_or("orthonormal") {
        "orthonormal" => Mixing::Orthonormal,
        "identity" => Mixing::Identity,
        other => return Err(FhtwError::invalid(format!("unknown mixing '{other}'"))),
    };
    config.eps_trunc = a.eps_trunc.unwrap_or(DEFAULT_EPS_TRUNC);
    config.eps_ls = a.eps_ls.unwrap_or(DEFAULT_EPS_LS);
    let bases = infer_bases(coords.view(), q + 1, a.margin.unwrap_or(crate::basis::DEFAULT_SUPPORT_MARGIN))?;
    let (mut model, report) = fit(SampleSet::new(coords.view()), &tree, &bases, &config)?;
    model.transform = Some(TransformInfo::of(&plan));
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    model.save(&model_out)?;
    let mut report_json = to_json(&report);
    if let Value::Object(obj) = &mut report_json {
        obj.insert("args".into(), to_json(a));
        obj.insert("transform".into(), to_json(&TransformInfo::of(&plan)));
    }
    write_json(&report_out, &report_json)
}

fn parse_site(s: &str) -> Result<(usize, usize)> {
    let bad = || FhtwError::invalid(format!("reference site '{s}' must look like i,j"));
    let (i, j) = s.split_once(',').ok_or_else(bad)?;
    Ok((i.trim().parse().map_err(|_| bad())?, j.trim().parse().map_err(|_| bad())?))
}

fn parse_pair(s: &str) -> Result<(ScaleLabel, ScaleLabel)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| FhtwError::invalid(format!("pair '{s}' must look like c[k,l]:c[k,l]")))?;
    Ok((a.parse()?, b.parse()?))
}

fn default_pairs(layout: Layout) -> Vec<(ScaleLabel, ScaleLabel)> {
    let p = |a: (usize, i32), b: (usize, i32)| (ScaleLabel::new(a.0, a.1), ScaleLabel::new(b.0, b.1));
    match layout {
        Layout::Line1D => vec![p((15, 5), (8, 4)), p((15, 5), (9, 4))],
        Layout::Grid2D => vec![p((15, 5), (8, 4)), p((2, 2), (1, 1)), p((1, 0), (1, -1))],
    }
}

fn label_file(label: ScaleLabel) -> String {
    format!("c{}_{}", label.k, label.l)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model_path = need(&a.model, "model")?;
    let samples_path = need(&a.samples, "samples")?;
    let out_dir = need(&a.out_dir, "out_dir")?;
    if !model_path.exists() {
        return Err(FhtwError::invalid(format!("model file {} not found", model_path.display())));
    }
    let model = FtnModel::load(&model_path)?;
    let info = model
        .transform
        .ok_or_else(|| FhtwError::invalid("model carries no transform description"))?;
    let plan = info.plan()?;
    let (kind, rows) = read_samples(&samples_path)?;
    if rows.ncols() != model.dim() {
        return Err(FhtwError::invalid(format!(
            "samples have {} columns, model has d = {}",
            rows.ncols(),
            model.dim()
        )));
    }
    let (lattice, coords) = match kind {
        ColumnKind::Lattice => {
            let c = plan.transform_samples(rows.view())?;
            (rows, c)
        }
        ColumnKind::Wavelet => (plan.inverse_samples(rows.view())?, rows),
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| FhtwError::io(&out_dir, e))?;
    let d = model.dim();
    let corr_model = correlation_original(&model, &plan)?;
    let corr_emp = empirical_correlation(lattice.view())?;

    let mut table = Array2::zeros((d * d, 5));
    let mut max_err: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let r = i * d + j;
            let diff = corr_model[(i, j)] - corr_emp[(i, j)];
            max_err = max_err.max(diff.abs());
            table.row_mut(r).assign(&ndarray::arr1(&[
                (i + 1) as f64,
                (j + 1) as f64,
                corr_model[(i, j)],
                corr_emp[(i, j)],
                diff,
            ]));
        }
    }
    let cols = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    write_table(&out_dir.join("correlation.csv"), &cols(&["i", "j", "model", "empirical", "difference"]), &table)?;

    let mut summary = Map::new();
    summary.insert("args".into(), to_json(a));
    summary.insert("max_abs_correlation_error".into(), json!(max_err));

    if info.layout == Layout::Grid2D {
        let m = plan.side();
        let (ri, rj) = parse_site(a.reference_site.as_deref().unwrap_or("4,4"))?;
        if ri == 0 || rj == 0 || ri > m || rj > m {
            return Err(FhtwError::invalid(format!("reference site ({ri},{rj}) is off the {m}x{m} grid")));
        }
        // site (i, j) sits at column (j-1)·m + (i-1)
        let reference = (rj - 1) * m + (ri - 1);
        let mut tp = Array2::zeros((d, 5));
        let mut tp_err: f64 = 0.0;
        for j in 1..=m {
            for i in 1..=m {
                let s = (j - 1) * m + (i - 1);
                let diff = corr_model[(s, reference)] - corr_emp[(s, reference)];
                tp_err = tp_err.max(diff.abs());
                tp.row_mut(s).assign(&ndarray::arr1(&[
                    i as f64,
                    j as f64,
                    corr_model[(s, reference)],
                    corr_emp[(s, reference)],
                    diff,
                ]));
            }
        }
        write_table(&out_dir.join("two_point.csv"), &cols(&["i", "j", "model", "empirical", "difference"]), &tp)?;
        summary.insert("reference_site".into(), json!([ri, rj]));
        summary.insert("max_abs_two_point_error".into(), json!(tp_err));
    }

    let explicit = a.pair.as_ref().is_some_and(|p| !p.is_empty());
    let pairs = match &a.pair {
        Some(p) if !p.is_empty() => p.iter().map(|s| parse_pair(s)).collect::<Result<Vec<_>>>()?,
        _ => default_pairs(info.layout),
    };
    let cells = a.grid_cells.unwrap_or(DEFAULT_GRID_CELLS);
    let mut marginals = Vec::new();
    for (la, lb) in pairs {
        let (va, vb) = match (plan.flat_index(la), plan.flat_index(lb)) {
            (Ok(x), Ok(y)) => (x, y),
            // defaults may name scales finer than a small lattice has
            (Err(e), _) | (_, Err(e)) if explicit => return Err(e),
            _ => continue,
        };
        let (ia, ib) = (model.bases()[va].interval, model.bases()[vb].interval);
        let grid = Grid2::new((ia.lo, ia.hi), (ib.lo, ib.hi), cells)?;
        let points = grid.points();
        let dens_model = model.marginal_2d((va, vb), &points)?;
        let dens_emp = kde_2d(coords.index_axis(Axis(1), va), coords.index_axis(Axis(1), vb), &grid)?;
        let l1 = grid_l1(&dens_model, &dens_emp, grid.cell_area())?;
        let mut t = Array2::zeros((points.len(), 5));
        for (r, ((x, y), (pm, pe))) in points.iter().zip(dens_model.iter().zip(&dens_emp)).enumerate() {
            t.row_mut(r).assign(&ndarray::arr1(&[*x, *y, *pm, *pe, pm - pe]));
        }
        let name = format!("marginal_{}_{}.csv", label_file(la), label_file(lb));
        write_table(&out_dir.join(&name), &cols(&["a", "b", "model", "empirical", "difference"]), &t)?;
        marginals.push(json!({ "pair": [la.to_string(), lb.to_string()], "file": name, "l1": l1 }));
    }
    summary.insert("marginals".into(), Value::Array(marginals));
    write_json(&out_dir.join("eval.json"), &Value::Object(summary))
}

pub fn cmd_rankstudy(a: &RankArgs) -> Result<()> {
    let case = need(&a.case, "case")?;
    let out_dir = need(&a.out_dir, "out_dir")?;
    let scale: Scale = a.scale.as_deref().unwrap_or("desk").parse()?;
    let mut config = case_config(case, scale)?;
    if let Some(e) = a.eps {
        config.eps = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
        config.mcmc.seed = s;
    }
    if let Some(n) = a.n {
        if n == 0 {
            return Err(FhtwError::invalid("--n must be positive"));
        }
        config.n = n;
    }
    if let Some(t) = a.thinning {
        config.mcmc.thinning = t;
    }
    let report = case_study(&config)?;
    write_case_outputs(&report, &out_dir)?;
    let (rx, rc) = report.ranks();
    println!("case {case}: rank_x = {rx}, rank_c = {rc}");
    Ok(())
}

pub fn cmd_describe_tree(a: &TreeArgs) -> Result<()> {
    let layout = parse_layout(a.layout.as_deref())?;
    let d = match (layout, a.d, a.m) {
        (Layout::Line1D, Some(d), _) => d,
        (Layout::Grid2D, _, Some(m)) => m * m,
        (Layout::Grid2D, Some(d), None) => d,
        (Layout::Line1D, None, _) => return Err(FhtwError::invalid("missing --d")),
        (Layout::Grid2D, None, None) => return Err(FhtwError::invalid("missing --m")),
    };
    let plan = WaveletPlan::for_dimension(FilterKind::Haar, layout, d)?;
    let tree = tree_for(&plan)?;
    let text = serde_json::to_string_pretty(&tree.to_json()).map_err(|e| FhtwError::Internal(e.to_string()))?;
    match &a.out {
        Some(p) => write_atomic(p, format!("{text}\n").as_bytes()),
        None => {
            use std::io::Write;
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            Ok(())
        }
    }
}
