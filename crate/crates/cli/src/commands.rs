use std::fmt;
use std::path::{Path, PathBuf};

use repsim::moments::Spectrum;
use repsim::{
    classical_mds, cluster_average_linkage, compute, convergence_curve, covariance,
    distance_matrix, encode_csv, encode_repm, generalization_experiment, load_any, synthesize,
    uniform_bound_check, BoundReport, DistanceMatrix, DistanceRecord, ExperimentConfig, MetricId,
    MetricKind, Representation, SynthSpec,
};
use serde::Serialize;

use crate::output::{emit, json, num, write_atomic, Csv};
use crate::{Cli, Command, Format, MetricArgs};

pub const DEFAULT_GRID: [f64; 5] = [0.0, 1e-6, 1e-4, 1e-2, 1.0];

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core {
        context: String,
        source: repsim::Error,
    },
}

impl CliError {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core { source, .. } if source.is_numerical() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core { context, source } => write!(f, "{context}: {source}"),
        }
    }
}

fn core(context: impl Into<String>) -> impl FnOnce(repsim::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Core { context, source }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let out = g.output.as_deref();
    match &cli.command {
        Command::Validate { inputs } => validate(inputs, g.has_header, g.format, out),
        Command::Dist { metric, a, b } => {
            let ids = metric_ids(metric, &[MetricKind::Gulp])?;
            let reps = load_all(&[a.clone(), b.clone()], g.has_header)?;
            dist(&reps[0], &reps[1], &ids, g.format, out)
        }
        Command::Distmat { metric, inputs } => {
            let ids = metric_ids(metric, &[MetricKind::Gulp])?;
            let reps = load_all(inputs, g.has_header)?;
            let dms = ids
                .iter()
                .map(|id| distance_matrix(&reps, *id).map_err(core(format!("metric {id}"))))
                .collect::<Result<Vec<_>>>()?;
            match g.format {
                Format::Json if dms.len() == 1 => emit(out, &json(&dms[0])?),
                Format::Json => emit(out, &json(&dms)?),
                Format::Csv => emit(out, &matrix_csv(single(&dms, "distmat")?)),
            }
        }
        Command::Embed {
            metric,
            dims,
            inputs,
        } => {
            let dm = matrix_input(metric, inputs, g.has_header)?;
            let e = classical_mds(&dm, *dims).map_err(core("embed"))?;
            match g.format {
                Format::Json => emit(out, &json(&e)?),
                Format::Csv => {
                    let mut header = vec!["name".to_string()];
                    header.extend((1..=e.coords.ncols()).map(|d| format!("x{d}")));
                    let header: Vec<&str> = header.iter().map(String::as_str).collect();
                    let mut csv = Csv::new(&header);
                    for (i, name) in e.names.iter().enumerate() {
                        let mut row = vec![name.clone()];
                        row.extend(e.coords.row(i).iter().map(|&x| num(x)));
                        csv.row(row);
                    }
                    emit(out, &csv.into_bytes())
                }
            }
        }
        Command::Cluster { metric, inputs } => {
            let dm = matrix_input(metric, inputs, g.has_header)?;
            let d = cluster_average_linkage(&dm).map_err(core("cluster"))?;
            match g.format {
                Format::Json => emit(out, &json(&d)?),
                Format::Csv => {
                    let mut csv = Csv::new(&["left", "right", "height", "size"]);
                    for m in &d.merges {
                        csv.row([
                            m.left.to_string(),
                            m.right.to_string(),
                            num(m.height),
                            m.size.to_string(),
                        ]);
                    }
                    emit(out, &csv.into_bytes())
                }
            }
        }
        Command::Probe {
            metric,
            task_lambda,
            tasks,
            train_fraction,
            bound,
            inputs,
        } => {
            let reps = load_all(inputs, g.has_header)?;
            if *bound {
                bound_check(&reps, metric, tasks.unwrap_or(1000), g.seed, g.format, out)
            } else {
                let ids = metric_ids(
                    metric,
                    &[
                        MetricKind::Gulp,
                        MetricKind::Cca,
                        MetricKind::Cka,
                        MetricKind::Procrustes,
                    ],
                )?;
                let mut config =
                    ExperimentConfig::new(*task_lambda, tasks.unwrap_or(20), g.seed, ids);
                config.train_fraction = *train_fraction;
                let report = generalization_experiment(&reps, &config).map_err(core("probe"))?;
                match g.format {
                    Format::Json => emit(out, &json(&report)?),
                    Format::Csv => {
                        let mut csv = Csv::new(&["metric", "lambda", "mean_rho", "defined_tasks"]);
                        for c in &report.correlations {
                            csv.row([
                                c.metric.kind.to_string(),
                                num(c.metric.lambda),
                                c.mean_rho.map(num).unwrap_or_else(|| "NA".to_string()),
                                c.defined_tasks.to_string(),
                            ]);
                        }
                        emit(out, &csv.into_bytes())
                    }
                }
            }
        }
        Command::Converge {
            lambda,
            sizes,
            a,
            b,
        } => {
            let reps = load_all(&[a.clone(), b.clone()], g.has_header)?;
            let curve = convergence_curve(&reps[0], &reps[1], *lambda, sizes, g.seed).map_err(
                core(format!(
                    "pair ({}, {}), metric {}",
                    reps[0].name(),
                    reps[1].name(),
                    MetricId::gulp(*lambda)
                )),
            )?;
            match g.format {
                Format::Json => emit(out, &json(&curve)?),
                Format::Csv => {
                    let mut csv = Csv::new(&["size", "rel_error"]);
                    for (s, e) in curve.sizes.iter().zip(&curve.rel_errors) {
                        csv.row([s.to_string(), num(*e)]);
                    }
                    emit(out, &csv.into_bytes())
                }
            }
        }
        Command::Synth {
            family,
            n,
            k,
            noise,
            rank,
            rho,
        } => {
            let mut spec = SynthSpec::new(*family, *n, *k, g.seed)
                .noise(*noise)
                .rho(*rho);
            if let Some(r) = rank {
                spec = spec.rank(*r);
            }
            let reps = synthesize(&spec).map_err(core("synth"))?.into_vec();
            synth_write(&reps, out, g.format)
        }
    }
}

fn load_all(paths: &[PathBuf], has_header: bool) -> Result<Vec<Representation>> {
    paths
        .iter()
        .map(|p| {
            let ctx = || p.display().to_string();
            load_any(p, has_header)
                .map_err(core(ctx()))?
                .normalize()
                .map_err(core(ctx()))
        })
        .collect()
}

fn metric_ids(args: &MetricArgs, default_kinds: &[MetricKind]) -> Result<Vec<MetricId>> {
    let kinds = if args.metrics.is_empty() {
        default_kinds
    } else {
        &args.metrics[..]
    };
    let lambdas = if args.lambdas.is_empty() {
        &DEFAULT_GRID[..]
    } else {
        &args.lambdas[..]
    };
    if args.kernel.is_some() && !kinds.contains(&MetricKind::GulpKernel) {
        return Err(CliError::Usage(
            "--kernel applies only to gulp_kernel".to_string(),
        ));
    }
    let mut ids = Vec::new();
    for &kind in kinds {
        let base = match (kind, args.kernel) {
            (MetricKind::GulpKernel, Some(kernel)) => MetricId::new(kind).with_kernel(kernel),
            _ => MetricId::new(kind),
        };
        if kind.uses_lambda() {
            ids.extend(lambdas.iter().map(|&l| base.with_lambda(l)));
        } else {
            ids.push(base);
        }
    }
    for id in &ids {
        id.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(ids)
}

fn single<'a, T>(items: &'a [T], what: &str) -> Result<&'a T> {
    match items {
        [one] => Ok(one),
        _ => Err(CliError::Usage(format!(
            "{what}: csv output needs exactly one metric, got {}",
            items.len()
        ))),
    }
}

fn validate(
    inputs: &[PathBuf],
    has_header: bool,
    format: Format,
    out: Option<&Path>,
) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        path: String,
        name: String,
        n: usize,
        k: usize,
        rank: usize,
    }
    let mut rows = Vec::new();
    for (p, rep) in inputs.iter().zip(load_all(inputs, has_header)?) {
        let ctx = p.display().to_string();
        let sigma = covariance(&rep).map_err(core(ctx.clone()))?;
        let rank = Spectrum::of(&sigma).map_err(core(ctx.clone()))?.rank();
        rows.push(Row {
            path: ctx,
            name: rep.name().to_string(),
            n: rep.n(),
            k: rep.k(),
            rank,
        });
    }
    match format {
        Format::Json => emit(out, &json(&rows)?),
        Format::Csv => {
            let mut csv = Csv::new(&["path", "name", "n", "k", "rank"]);
            for r in rows {
                csv.row([
                    r.path,
                    r.name,
                    r.n.to_string(),
                    r.k.to_string(),
                    r.rank.to_string(),
                ]);
            }
            emit(out, &csv.into_bytes())
        }
    }
}

fn dist(
    a: &Representation,
    b: &Representation,
    ids: &[MetricId],
    format: Format,
    out: Option<&Path>,
) -> Result<()> {
    let records = ids
        .iter()
        .map(|id| {
            compute(a, b, id).map_err(core(format!(
                "pair ({}, {}), metric {id}",
                a.name(),
                b.name()
            )))
        })
        .collect::<Result<Vec<DistanceRecord>>>()?;
    match format {
        Format::Json if records.len() == 1 => emit(out, &json(&records[0])?),
        Format::Json => emit(out, &json(&records)?),
        Format::Csv => {
            let mut csv = Csv::new(&[
                "name_a",
                "name_b",
                "metric",
                "lambda",
                "value",
                "squared_value",
            ]);
            for r in &records {
                csv.row([
                    r.name_a.clone(),
                    r.name_b.clone(),
                    r.metric.kind.to_string(),
                    num(r.metric.lambda),
                    num(r.value),
                    num(r.squared_value),
                ]);
            }
            emit(out, &csv.into_bytes())
        }
    }
}

fn matrix_csv(dm: &DistanceMatrix) -> Vec<u8> {
    let mut header = vec![String::new()];
    header.extend(dm.names.iter().cloned());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header);
    for (i, name) in dm.names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(dm.values.row(i).iter().map(|&v| num(v)));
        csv.row(row);
    }
    csv.into_bytes()
}

/// A single `.json` input is read as a distance matrix; anything else is a
/// collection of representations measured with exactly one metric.
fn matrix_input(
    metric: &MetricArgs,
    inputs: &[PathBuf],
    has_header: bool,
) -> Result<DistanceMatrix> {
    if let [path] = inputs {
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            let bytes = std::fs::read(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let dm: DistanceMatrix = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            dm.validate().map_err(core(path.display().to_string()))?;
            return Ok(dm);
        }
    }
    let ids = metric_ids(metric, &[MetricKind::Gulp])?;
    let [id] = ids[..] else {
        return Err(CliError::Usage(format!(
            "expected exactly one metric, got {} (pass a single --lambda)",
            ids.len()
        )));
    };
    let reps = load_all(inputs, has_header)?;
    distance_matrix(&reps, id).map_err(core(format!("metric {id}")))
}

fn bound_check(
    reps: &[Representation],
    metric: &MetricArgs,
    tasks: usize,
    seed: u64,
    format: Format,
    out: Option<&Path>,
) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        lambda: f64,
        #[serde(flatten)]
        report: BoundReport,
    }
    let [a, b] = reps else {
        return Err(CliError::Usage(format!(
            "--bound needs exactly two inputs, got {}",
            reps.len()
        )));
    };
    if !metric.metrics.iter().all(|&k| k == MetricKind::Gulp) {
        return Err(CliError::Usage("--bound checks gulp only".to_string()));
    }
    let ids = metric_ids(metric, &[MetricKind::Gulp])?;
    let rows = ids
        .iter()
        .map(|id| {
            uniform_bound_check(a, b, id.lambda, tasks, seed)
                .map(|report| Row {
                    lambda: id.lambda,
                    report,
                })
                .map_err(core(format!(
                    "pair ({}, {}), metric {id}",
                    a.name(),
                    b.name()
                )))
        })
        .collect::<Result<Vec<_>>>()?;
    match format {
        Format::Json => emit(out, &json(&rows)?),
        Format::Csv => {
            let mut csv = Csv::new(&["lambda", "n_tasks", "max_gap", "gulp_sq", "violations"]);
            for r in rows {
                csv.row([
                    num(r.lambda),
                    r.report.n_tasks.to_string(),
                    num(r.report.max_gap),
                    num(r.report.gulp_sq),
                    r.report.violations.to_string(),
                ]);
            }
            emit(out, &csv.into_bytes())
        }
    }
}

/// Writes `<stem>.repm` for one representation or `<stem>.a.repm` and
/// `<stem>.b.repm` for a pair (`.csv` with `--format csv`), then lists the files.
fn synth_write(reps: &[Representation], out: Option<&Path>, format: Format) -> Result<()> {
    let ext = match format {
        Format::Json => "repm",
        Format::Csv => "csv",
    };
    let stem = match out {
        Some(p) => {
            let s = p.to_string_lossy();
            let trimmed = s
                .strip_suffix(".repm")
                .or_else(|| s.strip_suffix(".csv"))
                .unwrap_or(&s);
            trimmed.to_string()
        }
        None => {
            let name = reps[0].name();
            name.strip_suffix("_a").unwrap_or(name).to_string()
        }
    };
    let mut written = Vec::new();
    for (i, rep) in reps.iter().enumerate() {
        let path = if reps.len() == 1 {
            format!("{stem}.{ext}")
        } else {
            format!("{stem}.{}.{ext}", ["a", "b"][i])
        };
        let bytes = match format {
            Format::Json => encode_repm(rep),
            Format::Csv => encode_csv(rep).into_bytes(),
        };
        write_atomic(Path::new(&path), &bytes)?;
        written.push(path);
    }
    emit(None, &json(&written)?)
}
