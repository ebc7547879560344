//! Command implementations and run-directory plumbing.
//!
//! Every command writes into a run directory that is self-describing: the
//! resolved configuration plus the manifest are enough to reproduce the
//! outputs bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use stzip::data::{Observation, PriorConfig, SurveyDataset};
use stzip::io;
use stzip::kernel::{select_knots, KnotSet};
use stzip::math;
use stzip::predict::{
    self, point_predict_holdout, posterior_predictive_loss, validation_errors, PredictOptions,
    PredictionGrid, PredictionPoint,
};
use stzip::sampler::{DrawsMeta, GibbsSampler, ModelKind, PosteriorDraws, SamplerPlan};
use stzip::simulate::{alternate_truth, default_truth, simulate, SimScenario};
use stzip::spline::{assemble_design, SplineSpec};
use stzip::{Result, StzipError};

/// Reproducibility record written at the end of every run.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub model: String,
    pub seed: u64,
    pub software_version: String,
    pub config_sha256: String,
    pub data_sha256: String,
    pub wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stored_draws_per_chain: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_rows: Option<usize>,
    /// Effective sample sizes, pooled over chains, keyed by update block.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess: Option<BTreeMap<String, f64>>,
}

pub fn exit_code(err: &StzipError) -> u8 {
    match err {
        StzipError::Numerical { .. } => 3,
        _ => 2,
    }
}

/// The single structured object printed to stderr on failure.
pub fn error_json(err: &StzipError) -> String {
    let mut body = serde_json::Map::new();
    let kind = match err {
        StzipError::Config(_) | StzipError::Json(_) => "config",
        StzipError::Input { .. } | StzipError::Csv(_) => "input",
        StzipError::Numerical { .. } => "numerical",
        StzipError::Io(_) => "io",
    };
    body.insert("kind".into(), kind.into());
    body.insert("message".into(), err.to_string().into());
    match err {
        StzipError::Input { row: Some(r), .. } => {
            body.insert("row".into(), (*r).into());
        }
        StzipError::Numerical {
            block, iteration, ..
        } => {
            body.insert("block".into(), block.clone().into());
            if let Some(i) = iteration {
                body.insert("iteration".into(), (*i).into());
            }
        }
        _ => {}
    }
    serde_json::json!({ "error": body }).to_string()
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write via a temporary sibling and rename, so partial files never appear
/// under the final name.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        StzipError::input(format!("cannot read {}: {e}", path.display()))
    })
}

fn now() -> Instant {
    Instant::now()
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub struct SimulateArgs {
    pub out_dir: PathBuf,
    pub config: Option<PathBuf>,
    pub truth: String,
    pub seed: Option<u64>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let start = now();
    let mut scenario: SimScenario = match &args.config {
        Some(path) => serde_json::from_slice(&read_file(path)?)?,
        None => match args.truth.as_str() {
            "default" => default_truth(),
            "alternate" => alternate_truth(),
            other => {
                return Err(StzipError::config(format!(
                    "unknown truth preset {other:?}; use default or alternate"
                )))
            }
        },
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let (data, truth) = simulate(&scenario)?;
    fs::create_dir_all(&args.out_dir)?;
    let scenario_json = serde_json::to_string_pretty(&scenario)?;
    let data_csv = io::write_observations(&data);
    write_atomic(&args.out_dir.join("scenario.json"), &scenario_json)?;
    write_atomic(&args.out_dir.join("data.csv"), &data_csv)?;
    write_atomic(
        &args.out_dir.join("truth.json"),
        &serde_json::to_string_pretty(&truth)?,
    )?;
    let manifest = RunManifest {
        command: "simulate".into(),
        model: scenario.name.clone(),
        seed: scenario.seed,
        software_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(scenario_json.as_bytes()),
        data_sha256: sha256_hex(data_csv.as_bytes()),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        chains: None,
        stored_draws_per_chain: None,
        data_rows: Some(data.len()),
        ess: None,
    };
    write_atomic(
        &args.out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

pub struct FitArgs {
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub config: Option<PathBuf>,
    pub model: String,
    pub seed: Option<u64>,
    pub iters: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    pub knots: Option<String>,
    pub delta: Option<f64>,
    pub bandwidth_grid: Option<String>,
    pub chains: usize,
}

fn parse_float_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| StzipError::config(format!("{what} has a non-numeric entry {s:?}")))
        })
        .collect()
}

/// Expand one covariate column into a truncated power basis, replacing the
/// observation design. The intercept comes from the basis, so the original
/// explicit intercept column is dropped along with the expanded column.
fn apply_spline(data: &SurveyDataset, config: &PriorConfig) -> Result<(SurveyDataset, Option<std::ops::Range<usize>>)> {
    let Some(spline_cfg) = &config.spline else {
        return Ok((data.clone(), None));
    };
    let p = data.covariate_dim();
    let col = spline_cfg.input_column + 1;
    if col >= p {
        return Err(StzipError::config(format!(
            "spline input column {} does not exist: data has {} non-intercept covariates",
            spline_cfg.input_column,
            p - 1
        )));
    }
    let raw: Vec<f64> = data.observations().iter().map(|o| o.covariates[col]).collect();
    let extra: Vec<Vec<f64>> = data
        .observations()
        .iter()
        .map(|o| {
            o.covariates
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != 0 && *j != col)
                .map(|(_, v)| *v)
                .collect()
        })
        .collect();
    let (min, max) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let spec = match &spline_cfg.knots {
        Some(knots) => SplineSpec::new(spline_cfg.q, knots.clone(), (min, max))?,
        None => {
            let mut spec = SplineSpec::default_for_range(min, max)?;
            if spline_cfg.q != spec.q {
                spec = SplineSpec::new(spline_cfg.q, spec.knots.clone(), (min, max))?;
            }
            spec
        }
    };
    let design = assemble_design(&spec, &raw, &extra)?;
    let observations = data
        .observations()
        .iter()
        .zip(design.rows)
        .map(|(o, covariates)| Observation {
            period: o.period,
            location: o.location,
            count: o.count,
            covariates,
        })
        .collect();
    Ok((SurveyDataset::new(observations)?, Some(design.shrink_span)))
}

/// Representative columns per update block, keyed by block name.
fn block_columns(names: &[String]) -> BTreeMap<String, Vec<usize>> {
    let mut blocks: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (idx, name) in names.iter().enumerate() {
        if name.starts_with("lambda_") || name.starts_with("g_") {
            continue;
        }
        let block = match name.rsplit_once('_') {
            Some((head, tail)) if tail.chars().all(|c| c.is_ascii_digit()) => head,
            _ => name.as_str(),
        };
        blocks.entry(block.to_string()).or_default().push(idx);
    }
    for cols in blocks.values_mut() {
        if cols.len() > 4 {
            // first, last, and two interior representatives
            let n = cols.len();
            *cols = vec![cols[0], cols[n / 3], cols[2 * n / 3], cols[n - 1]];
        }
    }
    blocks
}

/// Minimum effective sample size per block, summed across chains. Long
/// chains are strided down before the autocorrelation scan and scaled back,
/// which keeps the diagnostic cheap at large draw counts.
fn ess_by_block(chains: &[PosteriorDraws]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    let Some(first) = chains.first() else {
        return out;
    };
    let blocks = block_columns(&first.columns.names);
    for (block, cols) in blocks {
        let mut total = 0.0;
        for chain in chains {
            let mut worst = f64::INFINITY;
            for &c in &cols {
                let col = &chain.columns.columns[c];
                let stride = (col.len() / 8192).max(1);
                let thinned: Vec<f64> = col.iter().step_by(stride).copied().collect();
                let ess = math::effective_sample_size(&thinned) * stride as f64;
                worst = worst.min(ess.min(col.len() as f64));
            }
            total += worst;
        }
        out.insert(block, total);
    }
    out
}

fn pool_chains(chains: &[PosteriorDraws], base_seed: u64) -> Result<PosteriorDraws> {
    let first = &chains[0];
    let mut pooled = first.clone();
    pooled.meta.seed = base_seed;
    for chain in &chains[1..] {
        if chain.columns.names != first.columns.names {
            return Err(StzipError::config(
                "chains disagree on column layout; cannot merge",
            ));
        }
        for (dst, src) in pooled
            .columns
            .columns
            .iter_mut()
            .zip(&chain.columns.columns)
        {
            dst.extend_from_slice(src);
        }
        pooled.meta.draw_count += chain.meta.draw_count;
    }
    Ok(pooled)
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let start = now();
    let data_bytes = read_file(&args.data)?;
    let raw_data = io::read_observations(&data_bytes)?;
    let mut config = match &args.config {
        Some(path) => io::read_config(&read_file(path)?)?,
        None => PriorConfig::default(),
    };
    let model: ModelKind = args.model.parse()?;
    if let Some(seed) = args.seed {
        config.mcmc.seed = seed;
    }
    if let Some(iters) = args.iters {
        config.mcmc.iterations = iters;
    }
    if let Some(burnin) = args.burnin {
        config.mcmc.burn_in = burnin;
    }
    if let Some(thin) = args.thin {
        config.mcmc.thin = thin;
    }
    if let Some(delta) = args.delta {
        config.delta = delta;
    }
    if let Some(grid) = &args.bandwidth_grid {
        config.bandwidth_grid = Some(parse_float_list(grid, "bandwidth grid")?);
    }

    // Knots: an integer selects that many from the data; anything else is a
    // path to a knot CSV. Resolved once here so every chain shares them.
    let mut explicit_knots: Option<KnotSet> = None;
    if let Some(spec) = &args.knots {
        match spec.parse::<usize>() {
            Ok(m) => config.knot_count = m,
            Err(_) => {
                explicit_knots = Some(io::read_knots(&read_file(Path::new(spec))?)?);
            }
        }
    }
    let (data, spline_span) = apply_spline(&raw_data, &config)?;
    let knots = if model.has_random_effects() {
        match explicit_knots {
            Some(k) => Some(k),
            None => Some(select_knots(
                &data.sites(),
                config.knot_count,
                math::derive_stream_seed(config.mcmc.seed, 17),
            )?),
        }
    } else {
        None
    };

    let base_seed = config.mcmc.seed;
    if args.chains == 0 {
        return Err(StzipError::config("chains must be at least 1"));
    }
    let chain_seeds: Vec<u64> = if args.chains == 1 {
        vec![base_seed]
    } else {
        (1..=args.chains)
            .map(|c| math::derive_stream_seed(base_seed, 1000 + c as u64))
            .collect()
    };

    let mut chains: Vec<PosteriorDraws> = Vec::with_capacity(args.chains);
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for &seed in &chain_seeds {
            let data = data.clone();
            let config = config.clone();
            let knots = knots.clone();
            let span = spline_span.clone();
            handles.push(scope.spawn(move || -> Result<PosteriorDraws> {
                let mut plan = SamplerPlan::from_config(model, &config);
                plan.seed = seed;
                let mut sampler = GibbsSampler::new(data, &config, plan, knots, span)?;
                sampler.run()
            }));
        }
        for handle in handles {
            let draws = handle.join().map_err(|_| {
                StzipError::numerical("chain_thread", "a sampling thread panicked")
            })??;
            chains.push(draws);
        }
        Ok(())
    })?;

    fs::create_dir_all(&args.out_dir)?;
    let config_json = serde_json::to_string_pretty(&config)?;
    write_atomic(&args.out_dir.join("config.json"), &config_json)?;
    if let Some(knots) = &knots {
        write_atomic(&args.out_dir.join("knots.csv"), &io::write_knots(knots))?;
    }
    if args.chains == 1 {
        write_atomic(
            &args.out_dir.join("draws.csv"),
            &io::write_named_csv(&chains[0].columns),
        )?;
    } else {
        for (c, chain) in chains.iter().enumerate() {
            write_atomic(
                &args.out_dir.join(format!("draws_{}.csv", c + 1)),
                &io::write_named_csv(&chain.columns),
            )?;
        }
    }
    let pooled = pool_chains(&chains, base_seed)?;
    let mut meta = pooled.meta.clone();
    meta.draw_count = chains[0].meta.draw_count;
    write_atomic(
        &args.out_dir.join("fit_meta.json"),
        &serde_json::to_string_pretty(&meta)?,
    )?;
    write_atomic(
        &args.out_dir.join("summary.json"),
        &io::write_summary(&pooled.summarize())?,
    )?;
    let manifest = RunManifest {
        command: "fit".into(),
        model: model.to_string(),
        seed: base_seed,
        software_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(config_json.as_bytes()),
        data_sha256: sha256_hex(&data_bytes),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        chains: Some(args.chains),
        stored_draws_per_chain: Some(chains[0].meta.draw_count),
        data_rows: Some(data.len()),
        ess: Some(ess_by_block(&chains)),
    };
    write_atomic(
        &args.out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// fit-directory loading shared by predict and validate
// ---------------------------------------------------------------------------

fn load_fit(fit_dir: &Path) -> Result<(PosteriorDraws, Option<KnotSet>)> {
    let meta_bytes = read_file(&fit_dir.join("fit_meta.json"))?;
    let mut meta: DrawsMeta = serde_json::from_slice(&meta_bytes)?;
    let single = fit_dir.join("draws.csv");
    let mut column_sets = Vec::new();
    if single.exists() {
        column_sets.push(io::read_named_csv(&read_file(&single)?)?);
    } else {
        for c in 1.. {
            let path = fit_dir.join(format!("draws_{c}.csv"));
            if !path.exists() {
                break;
            }
            column_sets.push(io::read_named_csv(&read_file(&path)?)?);
        }
    }
    if column_sets.is_empty() {
        return Err(StzipError::input(format!(
            "no draws.csv or draws_1.csv under {}",
            fit_dir.display()
        )));
    }
    let mut columns = column_sets.remove(0);
    for extra in column_sets {
        if extra.names != columns.names {
            return Err(StzipError::input(
                "chain files disagree on column layout",
            ));
        }
        for (dst, src) in columns.columns.iter_mut().zip(extra.columns) {
            dst.extend(src);
        }
    }
    meta.draw_count = columns.rows();
    let knots_path = fit_dir.join("knots.csv");
    let knots = if knots_path.exists() {
        Some(io::read_knots(&read_file(&knots_path)?)?)
    } else {
        None
    };
    Ok((PosteriorDraws { meta, columns }, knots))
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

pub struct PredictArgs {
    pub fit_dir: PathBuf,
    pub grid: String,
    pub out: PathBuf,
    pub period: Option<usize>,
    pub covariates: Option<String>,
    pub sample_future_walk: bool,
    pub stride: usize,
    pub seed: u64,
}

fn build_grid(args: &PredictArgs, meta: &DrawsMeta) -> Result<PredictionGrid> {
    let path = Path::new(&args.grid);
    if path.exists() {
        let rows = io::read_observation_rows(&read_file(path)?)?;
        let points = rows
            .into_iter()
            .map(|o| PredictionPoint {
                location: o.location,
                period: o.period,
                covariates: o.covariates,
            })
            .collect();
        return Ok(PredictionGrid::from_points(points));
    }
    let spec = io::parse_lattice_spec(&args.grid)?;
    let period = args.period.unwrap_or(meta.t_periods);
    let covariates = match &args.covariates {
        Some(text) => parse_float_list(text, "covariate row")?,
        None => {
            let mut row = vec![0.0; meta.covariate_dim];
            if !row.is_empty() {
                row[0] = 1.0;
            }
            row
        }
    };
    Ok(PredictionGrid::from_lattice(&spec, period, covariates))
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let (draws, knots) = load_fit(&args.fit_dir)?;
    let grid = build_grid(args, &draws.meta)?;
    let opts = PredictOptions {
        draw_stride: args.stride,
        sample_future_walk: args.sample_future_walk,
        seed: args.seed,
    };
    let rows = predict::predict_surfaces(&draws, knots.as_ref(), &grid, &opts)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_atomic(&args.out, &io::write_surface(&rows))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

pub struct ValidateArgs {
    pub fit_dir: PathBuf,
    pub test_data: PathBuf,
    pub out: PathBuf,
    pub stride: usize,
    pub plug_in: bool,
    pub seed: u64,
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let (draws, knots) = load_fit(&args.fit_dir)?;
    let test = io::read_observations(&read_file(&args.test_data)?)?;
    let opts = PredictOptions {
        draw_stride: args.stride,
        sample_future_walk: false,
        seed: args.seed,
    };
    let estimates = point_predict_holdout(&draws, knots.as_ref(), &test, &opts, args.plug_in)?;
    let counts: Vec<u64> = test.observations().iter().map(|o| o.count).collect();
    let errors = validation_errors(&estimates, &counts)?;
    let ppl = posterior_predictive_loss(&draws, knots.as_ref(), &test, &opts)?;
    let score = predict::model_score(&draws.meta.model, ppl, &errors);
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_atomic(&args.out, &serde_json::to_string_pretty(&score)?)?;
    Ok(())
}
