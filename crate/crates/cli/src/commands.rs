use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use granola_core::graph::{csl, cycle, erdos_renyi, io, path, star};
use granola_core::props::{self, PropsOptions, Suite};
use granola_core::train::{self, benchmark, probe_kink_margin, run_grad_suite, ExperimentConfig, Metrics, TimingRow};
use granola_core::{ParamStore, RnfSource};

use crate::error::CliError;
use crate::GenKind;

/// Parse a TOML or JSON file, picked by extension.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let shown = path.display();
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| CliError::Config(format!("{shown}: {e}"))),
        Some("json") => serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{shown}: {e}"))),
        _ => Err(CliError::Config(format!("{shown}: expected a .toml or .json file"))),
    }
}

fn load_experiment(path: &Path) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = load(path)?;
    cfg.validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

#[derive(Serialize)]
struct Results<'a> {
    config: &'a ExperimentConfig,
    history: &'a [(usize, f64)],
    r#final: &'a Metrics,
    wall_time: f64,
    seed: u64,
}

fn results_path(config: &Path, cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| {
        let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        config.with_file_name(format!("{stem}.results.json"))
    })
}

pub fn run(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load_experiment(config)?;
    let outcome = train::run_experiment(&cfg)?;
    let results = Results {
        config: &cfg,
        history: &outcome.history,
        r#final: &outcome.metrics,
        wall_time: outcome.wall_time_s,
        seed: cfg.seed,
    };
    let path = results_path(config, &cfg, out);
    let mut json = serde_json::to_string_pretty(&results).expect("plain data serializes");
    json.push('\n');
    write_file(&path, json.as_bytes())?;

    let csv_path = path.with_extension("csv");
    let mut w = csv_writer(Vec::new());
    w.write_record(["epoch", "loss"])?;
    for (epoch, loss) in &outcome.history {
        w.write_record([epoch.to_string(), loss.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&csv_path, &bytes)?;

    let m = &outcome.metrics;
    print!("mae {:.6}", m.mae);
    if let Some(acc) = m.accuracy {
        print!("  accuracy {acc:.3}");
    }
    println!("  ({:.1}s)  -> {}", outcome.wall_time_s, path.display());
    Ok(())
}

pub fn props(suite: &str, config: Option<&Path>, eps: Option<f64>, seed: Option<u64>) -> Result<(), CliError> {
    let suite: Suite = suite.parse().map_err(|e: granola_core::Error| CliError::Config(e.to_string()))?;
    let mut opts = match config {
        Some(p) => load::<PropsOptions>(p)?,
        None => PropsOptions::default(),
    };
    if let Some(e) = eps {
        opts.eps = e;
    }
    if let Some(s) = seed {
        opts.seed = s;
    }
    let checks = props::run_suite(suite, &opts);
    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    println!("{} of {} passed", checks.len() - failed.len(), checks.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed properties: {}", failed.join(", "))))
    }
}

pub fn generate(kind: GenKind, out: Option<&Path>) -> Result<(), CliError> {
    let g = match kind {
        GenKind::Csl { n, skip } => csl(n, skip),
        GenKind::Cycle { n } => cycle(n),
        GenKind::Path { n } => path(n),
        GenKind::Star { n } => star(n),
        GenKind::Er { n, p, seed } => erdos_renyi(n, p, seed),
    }?;
    let mut json = io::to_json_string(&g);
    json.push('\n');
    match out {
        Some(p) => write_file(p, json.as_bytes()),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn ratio_cell(r: Option<f64>) -> String {
    r.map(|r| format!("{r:.4}")).unwrap_or_default()
}

/// One row per size: each variant's median time and doubling ratio, and
/// the time of the last variant over the first.
fn bench_table(rows: &[TimingRow], names: &[String], sizes: &[usize]) -> Result<Vec<u8>, CliError> {
    let mut w = csv_writer(Vec::new());
    let mut header = vec!["nodes".to_string(), "edges".to_string()];
    header.extend(names.iter().map(|n| format!("{n}_ms")));
    header.extend(names.iter().map(|n| format!("{n}_ratio")));
    header.push("overhead".into());
    w.write_record(&header)?;
    for &n in sizes {
        let at: Vec<&TimingRow> = names
            .iter()
            .map(|name| rows.iter().find(|r| r.nodes == n && &r.variant == name).expect("every size is timed"))
            .collect();
        let mut record = vec![n.to_string(), at[0].edges.to_string()];
        record.extend(at.iter().map(|r| format!("{:.4}", r.median_ms)));
        record.extend(at.iter().map(|r| ratio_cell(r.ratio)));
        record.push(format!("{:.4}", at[at.len() - 1].median_ms / at[0].median_ms));
        w.write_record(&record)?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

pub fn bench(sizes: &[usize], out: Option<&Path>, reps: usize, seed: u64) -> Result<(), CliError> {
    let variants = props::timing_variants();
    let rows = benchmark(&variants, sizes, reps, seed)?;
    let names: Vec<String> = variants.into_iter().map(|(n, _)| n.replace('+', "_")).collect();
    let rows: Vec<TimingRow> = rows
        .into_iter()
        .map(|r| TimingRow {
            variant: r.variant.replace('+', "_"),
            ..r
        })
        .collect();
    let bytes = bench_table(&rows, &names, sizes)?;
    match out {
        Some(p) => write_file(p, &bytes),
        None => std::io::stdout().write_all(&bytes).map_err(|e| CliError::Config(e.to_string())),
    }
}

pub fn gradcheck(config: &Path, graphs: usize, tol: f64) -> Result<(), CliError> {
    let cfg = load_experiment(config)?;
    let task = cfg.task.build()?;
    let idx: Vec<usize> = (0..graphs.clamp(1, task.len())).collect();
    let batch = task.batch(&idx)?.batch;
    let mut store = ParamStore::new();
    let stack = cfg.model.build(&mut store, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let margin = probe_kink_margin(&stack, &store, &batch, &RnfSource::Seeded { root: cfg.seed, step: 0 })?;
    let entries = run_grad_suite(&stack, &store, &batch, cfg.seed)?;
    println!("{:<32} {:>8} {:>12}", "group", "tensors", "worst");
    for e in &entries {
        println!("{:<32} {:>8} {:>12.3e}", e.group, e.params, e.worst);
    }
    let worst = entries.iter().map(|e| e.worst).fold(0.0, f64::max);
    println!("worst relative error {worst:.3e}, closest relu input {margin:.2e} from its kink");
    let bad: Vec<&str> = entries.iter().filter(|e| !(e.worst < tol)).map(|e| e.group.as_str()).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("gradient error above {tol:e} in: {}", bad.join(", "))))
    }
}
