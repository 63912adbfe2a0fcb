use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use codi_core::ablation::run_space_ablation;
use codi_core::data::{
    encode, generate_latent_categorical, generate_toy, load_csv, load_csv_with_schema, write_csv,
    SchemaSpec, Table, TableSchema,
};
use codi_core::engine::{architecture_hash, CoDiModel, TrainConfig, TrainProgress};
use codi_core::eval::{evaluate, histograms_csv, CoverageDirection, EvalReport};
use codi_core::rng::{stream_rng, Stream};

use crate::manifest::{sibling, RunManifest};
use crate::{Command, ToyKind};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(PathBuf, std::io::Error),
    Core(codi_core::Error),
    Assertion(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(..) => 2,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(_) => 2,
            CliError::Assertion(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Assertion(m) => write!(f, "assertion failed: {m}"),
        }
    }
}

impl From<codi_core::Error> for CliError {
    fn from(e: codi_core::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn io<T>(path: &Path, r: std::io::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Io(path.to_path_buf(), e))
}

pub fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Toy {
            n,
            seed,
            out,
            schema_out,
            kind,
        } => cmd_toy(n, seed, &out, schema_out, kind),
        Command::Train {
            data,
            schema,
            config,
            out,
            resume,
            epochs,
            seed,
            timesteps,
            beta_start,
            beta_end,
        } => {
            let overrides = Overrides {
                epochs,
                seed,
                timesteps,
                beta_start,
                beta_end,
            };
            cmd_train(
                &data,
                schema.as_deref(),
                config.as_deref(),
                &out,
                resume.as_deref(),
                overrides,
            )
        }
        Command::Sample { ckpt, n, seed, out } => cmd_sample(&ckpt, n, seed, &out),
        Command::Eval {
            real,
            fake,
            schema,
            k,
            coverage_direction,
            asserts,
            out,
            histograms,
        } => {
            let direction: CoverageDirection = coverage_direction.parse()?;
            let checks = asserts
                .iter()
                .map(|a| parse_assert(a))
                .collect::<CliResult<Vec<_>>>()?;
            cmd_eval(
                &real,
                &fake,
                schema.as_deref(),
                k,
                direction,
                &checks,
                out,
                histograms,
            )
        }
        Command::AblateSpace {
            data,
            schema,
            config,
            epochs,
            seed,
            samples,
            k,
            out,
        } => {
            let overrides = Overrides {
                epochs,
                seed,
                ..Default::default()
            };
            cmd_ablate(
                &data,
                schema.as_deref(),
                config.as_deref(),
                overrides,
                samples,
                k,
                out,
            )
        }
    }
}

fn cmd_toy(
    n: usize,
    seed: u64,
    out: &Path,
    schema_out: Option<PathBuf>,
    kind: ToyKind,
) -> CliResult<()> {
    let mut rng = stream_rng(seed, Stream::Toy, 0);
    let (schema, table) = match kind {
        ToyKind::Circles => generate_toy(n, &mut rng)?,
        ToyKind::Latent => generate_latent_categorical(n, &mut rng)?,
    };
    write_csv(out, &table)?;
    let schema_path = schema_out.unwrap_or_else(|| sibling(out, "schema.json"));
    schema.save(&schema_path)?;
    let mut m = RunManifest::new("toy");
    m.seed = Some(seed);
    m.schema_hash = Some(schema.hash());
    m.artifacts = vec![out.display().to_string(), schema_path.display().to_string()];
    m.counters.insert("rows".into(), n as u64);
    io(out, m.write_for(out))?;
    log::info!(
        "rows={n} out={} schema={}",
        out.display(),
        schema_path.display()
    );
    Ok(())
}

#[derive(Default)]
struct Overrides {
    epochs: Option<usize>,
    seed: Option<u64>,
    timesteps: Option<usize>,
    beta_start: Option<f64>,
    beta_end: Option<f64>,
}

fn load_config(path: Option<&Path>, o: &Overrides) -> CliResult<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.timesteps {
        cfg.timesteps = v;
    }
    if let Some(v) = o.beta_start {
        cfg.beta_start = v;
    }
    if let Some(v) = o.beta_end {
        cfg.beta_end = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_table(data: &Path, schema: Option<&Path>) -> CliResult<(TableSchema, Table)> {
    let spec = schema.map(SchemaSpec::load).transpose()?;
    Ok(load_csv(data, spec.as_ref())?)
}

fn cmd_train(
    data: &Path,
    schema_path: Option<&Path>,
    config_path: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    o: Overrides,
) -> CliResult<()> {
    let (schema, table) = load_table(data, schema_path)?;
    let mut model = match resume {
        None => CoDiModel::new(schema.clone(), load_config(config_path, &o)?)?,
        Some(ckpt) => {
            let model = CoDiModel::load_checkpoint(ckpt)?;
            if model.schema() != &schema {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was trained on a different schema",
                    ckpt.display()
                )));
            }
            if config_path.is_some() {
                let cfg = load_config(config_path, &o)?;
                let expected = architecture_hash(&schema, &cfg);
                if expected != model.architecture_hash() {
                    return Err(codi_core::Error::SchemaHash {
                        found: model.architecture_hash(),
                        expected,
                    }
                    .into());
                }
            }
            model
        }
    };
    let target_epochs = o.epochs.unwrap_or(model.config().epochs) as u64;
    let remaining = target_epochs.saturating_sub(model.epoch()) as usize;
    let encoded = encode(&table, model.schema())?;

    let log_path = sibling(out, "loss.log");
    let mut log_file = io(
        &log_path,
        OpenOptions::new()
            .create(true)
            .write(true)
            .append(resume.is_some())
            .truncate(resume.is_none())
            .open(&log_path),
    )?;
    let every = model.config().log_every;
    let start_step = model.step();
    let total_steps =
        start_step + remaining as u64 * encoded.rows().div_ceil(model.config().batch_size) as u64;
    let mut write_err = None;
    let mut emit = |p: &TrainProgress| {
        if p.step.is_multiple_of(every) || p.step == total_steps || p.step == start_step + 1 {
            let line = p.log_line();
            log::info!("{line}");
            if let Err(e) = writeln!(log_file, "{line}") {
                write_err.get_or_insert(e);
            }
        }
    };
    let t0 = Instant::now();
    model.fit(&encoded, remaining, &mut emit)?;
    let train_seconds = t0.elapsed().as_secs_f64();
    if let Some(e) = write_err {
        return Err(CliError::Io(log_path, e));
    }
    model.save_checkpoint(out)?;

    let mut m = RunManifest::new("train");
    m.config = Some(model.config().clone());
    m.seed = Some(model.config().seed);
    m.schema_hash = Some(model.architecture_hash());
    m.inputs.insert("data".into(), data.display().to_string());
    if let Some(r) = resume {
        m.inputs.insert("resume".into(), r.display().to_string());
    }
    m.artifacts = vec![out.display().to_string(), log_path.display().to_string()];
    m.timings.insert("train_seconds".into(), train_seconds);
    m.counters.insert("step".into(), model.step());
    m.counters.insert("epoch".into(), model.epoch());
    io(out, m.write_for(out))?;
    log::info!(
        "done step={} epoch={} train_seconds={train_seconds:.1} checkpoint={}",
        model.step(),
        model.epoch(),
        out.display()
    );
    Ok(())
}

fn cmd_sample(ckpt: &Path, n: usize, seed: u64, out: &Path) -> CliResult<()> {
    let model = CoDiModel::load_checkpoint(ckpt)?;
    let t0 = Instant::now();
    let table = model.generate(n, seed)?;
    let secs = t0.elapsed().as_secs_f64();
    write_csv(out, &table)?;
    let mut m = RunManifest::new("sample");
    m.config = Some(model.config().clone());
    m.seed = Some(seed);
    m.schema_hash = Some(model.architecture_hash());
    m.inputs
        .insert("checkpoint".into(), ckpt.display().to_string());
    m.artifacts = vec![out.display().to_string()];
    m.timings.insert("sample_seconds".into(), secs);
    m.counters.insert("rows".into(), n as u64);
    io(out, m.write_for(out))?;
    log::info!("rows={n} sample_seconds={secs:.3} out={}", out.display());
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    metric: String,
    op: &'static str,
    value: f64,
}

impl Check {
    fn holds(&self, v: f64) -> bool {
        match self.op {
            ">=" => v >= self.value,
            "<=" => v <= self.value,
            ">" => v > self.value,
            "<" => v < self.value,
            _ => unreachable!(),
        }
    }
}

fn parse_assert(s: &str) -> CliResult<Check> {
    for op in [">=", "<=", ">", "<"] {
        if let Some((m, v)) = s.split_once(op) {
            let value = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--assert {s:?}: bad threshold")))?;
            return Ok(Check {
                metric: m.trim().to_string(),
                op,
                value,
            });
        }
    }
    Err(CliError::Usage(format!(
        "--assert {s:?}: expected metric>=value"
    )))
}

fn print_report(r: &EvalReport) {
    println!("{:<28} {:>12}", "metric", "value");
    let row = |k: &str, v: Option<f64>| {
        if let Some(v) = v {
            println!("{k:<28} {v:>12.4}");
        }
    };
    row("coverage", Some(r.coverage));
    row(
        "coverage_real_neighborhoods",
        Some(r.coverage_real_neighborhoods),
    );
    row(
        "coverage_fake_neighborhoods",
        Some(r.coverage_fake_neighborhoods),
    );
    for name in [
        "binary_f1",
        "macro_f1",
        "auroc",
        "r2",
        "rmse",
        "mean_tv",
        "sample_seconds",
    ] {
        row(name, r.metric(name));
    }
    for h in &r.histograms {
        println!(
            "{:<28} {:>12.4}",
            format!("tv[{}]", h.column),
            h.tv_distance
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    real: &Path,
    fake: &Path,
    schema: Option<&Path>,
    k: usize,
    direction: CoverageDirection,
    checks: &[Check],
    out: Option<PathBuf>,
    hist_out: Option<PathBuf>,
) -> CliResult<()> {
    let (schema, real_table) = load_table(real, schema)?;
    let fake_table = load_csv_with_schema(fake, &schema)?;
    let mut report = evaluate(&real_table, &fake_table, &schema, k, direction)?;
    report.sample_seconds =
        RunManifest::read_for(fake).and_then(|m| m.timings.get("sample_seconds").copied());

    let out = out.unwrap_or_else(|| sibling(fake, "report.json"));
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    io(&out, std::fs::write(&out, json + "\n"))?;
    let hist_out = hist_out.unwrap_or_else(|| sibling(fake, "hist.csv"));
    io(
        &hist_out,
        std::fs::write(&hist_out, histograms_csv(&report.histograms)?),
    )?;
    print_report(&report);

    let mut failed = Vec::new();
    for c in checks {
        let v = report.metric(&c.metric).ok_or_else(|| {
            CliError::Usage(format!("unknown or unavailable metric {:?}", c.metric))
        })?;
        if !c.holds(v) {
            failed.push(format!(
                "{} = {v:.4} (wanted {} {})",
                c.metric, c.op, c.value
            ));
        }
    }
    if !failed.is_empty() {
        return Err(CliError::Assertion(failed.join("; ")));
    }
    Ok(())
}

fn cmd_ablate(
    data: &Path,
    schema: Option<&Path>,
    config: Option<&Path>,
    o: Overrides,
    samples: Option<usize>,
    k: usize,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let (schema, table) = load_table(data, schema)?;
    let cfg = load_config(config, &o)?;
    let samples = samples.unwrap_or(table.len());
    let every = cfg.log_every;
    let report = run_space_ablation(&schema, &table, &cfg, samples, k, |space, p| {
        if p.step % every == 0 {
            log::info!("space={space} {}", p.log_line());
        }
    })?;
    let out = out.unwrap_or_else(|| sibling(data, "ablation.json"));
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    io(&out, std::fs::write(&out, json + "\n"))?;
    println!(
        "discrete_space_coverage={:.4}",
        report.discrete_space_coverage
    );
    println!(
        "continuous_space_coverage={:.4}",
        report.continuous_space_coverage
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assertion_parsing() {
        let c = parse_assert("coverage>=0.5").unwrap();
        assert_eq!((c.metric.as_str(), c.op, c.value), ("coverage", ">=", 0.5));
        assert!(c.holds(0.5) && !c.holds(0.49));
        assert_eq!(parse_assert("r2 < 1").unwrap().op, "<");
        assert!(parse_assert("coverage=0.5").is_err());
        assert!(parse_assert("coverage>=x").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage(String::new()).exit_code(), 2);
        assert_eq!(CliError::Assertion(String::new()).exit_code(), 3);
        assert_eq!(
            CliError::Core(codi_core::Error::Numerical("x".into())).exit_code(),
            4
        );
        assert_eq!(
            CliError::Core(codi_core::Error::Config("x".into())).exit_code(),
            2
        );
    }
}
