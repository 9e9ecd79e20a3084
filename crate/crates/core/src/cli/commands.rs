use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::thread;

use serde::Serialize;
use serde_json::json;

use super::config::{RunConfig, Truncation};
use super::{condense_attention, gradcheck_suite, CliError, CondensedAttention, EigArgs};
use crate::graph::{
    grid_graph, load_node_dataset, make_synthetic_task, normalized_laplacian, random_split, EdgeCleanup, FilterSpec,
    SparseGraph,
};
use crate::linalg::{symmetric_eig, truncate_spectrum, DenseMatrix};
use crate::model::{ModelConfig, SpectralInput};
use crate::train::{format_float, table_cell, train_nodecls, train_synthetic, SyntheticOutcome, TrainConfig};

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

/// Evenly spaced indices into `0..len`, at most `max_points` of them, starting at 0.
pub fn downsample_indices(len: usize, max_points: usize) -> Vec<usize> {
    if len == 0 || max_points == 0 {
        return Vec::new();
    }
    let stride = len.div_ceil(max_points);
    (0..len).step_by(stride).collect()
}

/// `smallest:K,largest:K`, either part optional.
pub fn parse_truncate(s: &str) -> Result<Truncation, String> {
    let mut t = Truncation {
        smallest: 0,
        largest: 0,
    };
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once(':')
            .ok_or_else(|| format!("expected key:count, got `{part}`"))?;
        let k: usize = value.trim().parse().map_err(|_| format!("bad count in `{part}`"))?;
        match key.trim() {
            "smallest" => t.smallest = k,
            "largest" => t.largest = k,
            other => return Err(format!("unknown truncation key `{other}`")),
        }
    }
    if t.smallest + t.largest == 0 {
        return Err("truncation keeps no eigenvalues".into());
    }
    Ok(t)
}

/// Half-width of the normal-approximation 95% interval, `1.96·s/√R`
/// with the sample standard deviation `s`.
pub fn ci95(values: &[f64]) -> f64 {
    let r = values.len();
    if r < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / r as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1) as f64;
    1.96 * var.sqrt() / (r as f64).sqrt()
}

/// Trains on a grid task and writes `metrics.json`, `loss.csv`,
/// `learned_filter.csv` and `attention_condensed.csv` into `out`.
pub fn cmd_synth(config: RunConfig, out: &Path) -> Result<SyntheticOutcome, CliError> {
    let filter: FilterSpec = config.synth.filter.parse()?;
    let s = &config.synth;
    if s.max_points == 0 {
        return Err(CliError::Usage("max_points must be positive".into()));
    }
    let model = ModelConfig {
        in_dim: 1,
        out_dim: 1,
        ..config.model.clone()
    };
    model.validate()?;
    config.train.validate()?;
    let task = make_synthetic_task(s.height, s.width, s.images, filter.clone(), config.train.seed)?;
    let outcome = train_synthetic(&task, &model, &config.train)?;

    ensure_dir(out)?;
    let report = &outcome.report;
    let lambdas = task.eigensystem.eigenvalues();
    let mut metrics = serde_json::to_value(report).expect("report serializes");
    let extra = json!({
        "filter": filter.to_string(),
        "grid": [s.height, s.width],
        "images": s.images,
        "seed": config.train.seed,
        "table_cell": table_cell(report.final_sse.unwrap_or(f64::NAN), report.r2.unwrap_or(f64::NAN)),
    });
    for (k, v) in extra.as_object().expect("object") {
        metrics[k] = v.clone();
    }
    write(
        &out.join("metrics.json"),
        &serde_json::to_string_pretty(&metrics).expect("json"),
    )?;
    write(&out.join("loss.csv"), &report.loss_csv())?;

    let mut curve = String::from("lambda,g_true,g_learned\n");
    for i in downsample_indices(lambdas.len(), s.max_points) {
        let l = lambdas[i];
        writeln!(
            curve,
            "{},{},{}",
            format_float(l),
            format_float(filter.evaluate(l)),
            format_float(outcome.learned_filter[i])
        )
        .expect("write to string");
    }
    write(&out.join("learned_filter.csv"), &curve)?;

    let condensed = condense_attention(&outcome.attention, lambdas)?;
    write(&out.join("attention_condensed.csv"), &condensed.to_csv())?;

    println!(
        "{filter}: {} after {} epochs (best {}) in {:.1}s, {} parameters",
        metrics["table_cell"].as_str().unwrap_or(""),
        report.epochs_run,
        report.best_epoch,
        report.seconds,
        report.param_count
    );
    Ok(outcome)
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub test_accuracy: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeClsSummary {
    pub dataset: String,
    pub nodes: usize,
    pub classes: usize,
    pub retained_eigenvalues: usize,
    pub truncate: Option<Truncation>,
    pub param_count: usize,
    pub runs: Vec<RunRecord>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

/// Runs `config.nodecls.runs` seeds and writes `summary.json` plus one
/// loss curve per run.
pub fn cmd_nodecls(config: RunConfig, out: &Path) -> Result<NodeClsSummary, CliError> {
    let nc = &config.nodecls;
    let dir = nc
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("nodecls needs --data <DIR>".into()))?;
    if nc.runs == 0 {
        return Err(CliError::Usage("runs must be positive".into()));
    }
    config.train.validate()?;
    let dataset = load_node_dataset(dir)?;
    let EdgeCleanup { self_loops, duplicates } = dataset.cleanup;
    if self_loops + duplicates > 0 {
        eprintln!("note: dropped {self_loops} self-loops and {duplicates} duplicate edges");
    }
    let graph = dataset.graph;
    let features = graph
        .features()
        .ok_or_else(|| CliError::Usage("dataset has no features".into()))?;
    let model = ModelConfig {
        in_dim: features.cols(),
        out_dim: graph.num_classes(),
        ..config.model.clone()
    };
    model.validate()?;

    let eig = symmetric_eig(&normalized_laplacian(&graph)).map_err(|e| CliError::Runtime(e.to_string()))?;
    let spectral = match nc.truncate {
        Some(t) => {
            let tr = truncate_spectrum(&eig, t.smallest, t.largest).map_err(|e| CliError::Usage(e.to_string()))?;
            SpectralInput::new(&tr, &model)?
        }
        None => SpectralInput::new(&eig, &model)?,
    };

    let one = |run: usize| -> Result<(RunRecord, String, usize), CliError> {
        let seed = config.train.seed.wrapping_add(run as u64);
        let split = random_split(graph.num_nodes(), seed)?;
        let train = TrainConfig {
            seed,
            ..config.train.clone()
        };
        let o = train_nodecls(&graph, &spectral, &split, &model, &train)?;
        let r = &o.report;
        let record = RunRecord {
            run,
            seed,
            test_accuracy: r.test_accuracy.unwrap_or(0.0),
            best_val_loss: o.best_val_loss,
            best_epoch: r.best_epoch,
            epochs_run: r.epochs_run,
            seconds: r.seconds,
        };
        Ok((record, r.loss_csv(), r.param_count))
    };
    let results: Vec<Result<_, CliError>> = if nc.parallel {
        thread::scope(|scope| {
            let handles: Vec<_> = (0..nc.runs).map(|run| scope.spawn(move || one(run))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("run thread panicked"))
                .collect()
        })
    } else {
        (0..nc.runs).map(one).collect()
    };

    ensure_dir(out)?;
    let mut runs = Vec::with_capacity(nc.runs);
    let mut param_count = 0;
    for res in results {
        let (record, csv, count) = res?;
        write(&out.join(format!("run{}_loss.csv", record.run)), &csv)?;
        param_count = count;
        runs.push(record);
    }
    let accuracies: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
    let summary = NodeClsSummary {
        dataset: dir.display().to_string(),
        nodes: graph.num_nodes(),
        classes: graph.num_classes(),
        retained_eigenvalues: spectral.num_retained(),
        truncate: nc.truncate,
        param_count,
        mean: accuracies.iter().sum::<f64>() / accuracies.len() as f64,
        ci95: ci95(&accuracies),
        accuracies,
        runs,
    };
    write(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("json"),
    )?;
    println!(
        "accuracy {:.2}% ± {:.2}% over {} runs (q = {})",
        100.0 * summary.mean,
        100.0 * summary.ci95,
        summary.runs.len(),
        summary.retained_eigenvalues
    );
    Ok(summary)
}

/// Prints the eigenvalues on one line and writes `eigensystem.csv`: the
/// eigenvalues on the first line, then the `n` rows of `U`.
pub fn cmd_eig(args: &EigArgs, out: &Path) -> Result<(), CliError> {
    let graph: SparseGraph = match (&args.grid, &args.data) {
        (Some((h, w)), _) => grid_graph(*h, *w)?,
        (None, Some(dir)) => load_node_dataset(dir)?.graph,
        (None, None) => return Err(CliError::Usage("eig needs --grid or --data".into())),
    };
    let laplacian = normalized_laplacian(&graph);
    let eig = symmetric_eig(&laplacian).map_err(|e| CliError::Runtime(e.to_string()))?;
    let values: Vec<String> = eig.eigenvalues().iter().map(|&v| format_float(v)).collect();
    println!("eigenvalues: {}", values.join(" "));
    println!(
        "orthonormality residual {:.3e}, reconstruction residual {:.3e}",
        eig.orthonormality_residual(),
        eig.reconstruction_residual(&laplacian)
    );
    ensure_dir(out)?;
    let mut csv = values.join(",");
    csv.push('\n');
    let u = eig.eigenvectors();
    for i in 0..u.rows() {
        let row: Vec<String> = u.row(i).iter().map(|&v| format_float(v)).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write(&out.join("eigensystem.csv"), &csv)
}

/// Prints the per-op table, writes `gradcheck.csv`, and fails when any
/// relative error reaches the tolerance.
pub fn cmd_gradcheck(seed: u64, out: &Path) -> Result<(), CliError> {
    let entries = gradcheck_suite(seed)?;
    let mut csv = String::from("op,max_rel_error,passed\n");
    println!("{:<24} {:>12}  status", "op", "max_rel_err");
    for e in &entries {
        let err = e.report.max_rel_error();
        println!(
            "{:<24} {:>12.3e}  {}",
            e.name,
            err,
            if e.report.passed() { "ok" } else { "FAIL" }
        );
        writeln!(csv, "{},{},{}", e.name, format_float(err), e.report.passed()).expect("write to string");
    }
    ensure_dir(out)?;
    write(&out.join("gradcheck.csv"), &csv)?;
    let failed: Vec<&str> = entries.iter().filter(|e| !e.report.passed()).map(|e| e.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        for e in entries.iter().filter(|e| !e.report.passed()) {
            eprintln!("{}:\n{}", e.name, e.report);
        }
        Err(CliError::Runtime(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

fn read_numbers(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(rows)
}

/// Condenses the matrix in `attention` over the eigenvalues in `lambdas`,
/// prints the CSV, and also writes it into `out` when given.
pub fn cmd_attn_condense(attention: &Path, lambdas: &Path, out: Option<&Path>) -> Result<CondensedAttention, CliError> {
    let rows = read_numbers(attention)?;
    let b = DenseMatrix::from_rows(&rows).map_err(|e| CliError::Usage(format!("{}: {e}", attention.display())))?;
    let l: Vec<f64> = read_numbers(lambdas)?.into_iter().flatten().collect();
    let c = condense_attention(&b, &l)?;
    let csv = c.to_csv();
    print!("{csv}");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write(&dir.join("attention_condensed.csv"), &csv)?;
    }
    Ok(c)
}
