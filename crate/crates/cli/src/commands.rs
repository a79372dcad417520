use std::fs;
use std::path::{Path, PathBuf};

use riskmpc::attribution::{evaluate, select_hyper, stratified_split, Attributor, Evaluation};
use riskmpc::bench::{format_summary, generate_dataset, run_benchmark, LabeledSample, BENCH_CSV_HEADER};
use riskmpc::cloud::Concept;
use riskmpc::config::RunConfig;
use riskmpc::error::Error;
use riskmpc::io::{create_jsonl, format_f64, read_json, read_json_lines_file, write_csv, write_json};
use riskmpc::sim::{metrics, run_episode, Mode};

use crate::{Common, Failure};

const RELIABILITY_BINS: usize = 5;

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

pub fn show_config(common: &Common) -> Result<(), Failure> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = RunConfig { seed: common.seed.unwrap_or(cfg.seed), ..cfg };
    println!("{}", serde_json::to_string_pretty(&cfg).map_err(Error::from)?);
    Ok(())
}

pub fn bench_icp(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let report = run_benchmark(&cfg.bench, &cfg.registration, &cfg.pko.adapter, &cfg.cloud, cfg.seed)?;
    let rows: Vec<Vec<String>> = report.rows.iter().map(|r| r.csv_record()).collect();
    write_csv(common.out.join("bench.csv"), &BENCH_CSV_HEADER, &rows)?;
    let summary = format_summary(&report);
    fs::write(common.out.join("bench_summary.txt"), &summary)?;
    print!("{summary}");
    println!("failure rate {:.4}", report.failure_rate);
    if report.failure_rate > cfg.bench.max_failure_rate {
        return Err(Failure::Threshold(format!(
            "registration failure rate {:.4} exceeds {:.4}",
            report.failure_rate, cfg.bench.max_failure_rate
        )));
    }
    Ok(())
}

pub fn gen_data(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let samples = generate_dataset(&cfg.attribution.dataset, &cfg.registration, &cfg.pko.adapter, &cfg.cloud, cfg.seed)?;
    let path = common.out.join("dataset.jsonl");
    let mut w = create_jsonl(&path)?;
    for s in &samples {
        w.write(s)?;
    }
    w.flush()?;
    let per_class = Concept::ALL.map(|c| samples.iter().filter(|s| s.concept == c).count());
    println!(
        "wrote {} samples to {} ({} noise, {} pose, {} overlap)",
        samples.len(),
        path.display(),
        per_class[0],
        per_class[1],
        per_class[2]
    );
    Ok(())
}

fn print_evaluation(e: &Evaluation) {
    println!("held-out samples {}", e.samples);
    println!("held-out accuracy {:.4} (chance 0.3333)", e.accuracy);
    println!("held-out mean log loss {:.4}", e.mean_log_loss);
    println!("held-out OOD fraction {:.4}", e.ood_fraction);
    println!("reliability (peak posterior bins):");
    println!("  bin            count  confidence  accuracy");
    for b in &e.reliability {
        println!("  [{:.3}, {:.3}]  {:>5}  {:>10.4}  {:>8.4}", b.lower, b.upper, b.count, b.mean_confidence, b.accuracy);
    }
    println!("expected calibration error {:.4}", e.calibration_error);
}

pub fn train_gpc(common: &Common, data: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load(common)?;
    let a = &cfg.attribution;
    let data = data.unwrap_or_else(|| common.out.join("dataset.jsonl"));
    let samples: Vec<LabeledSample> = read_json_lines_file(&data).map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("dataset {}: {io}", data.display())),
        other => other,
    })?;
    let labels: Vec<Concept> = samples.iter().map(|s| s.concept).collect();
    for c in Concept::ALL {
        if !labels.contains(&c) {
            return Err(Error::InvalidArgument(format!("dataset has no {} samples", c.name())).into());
        }
    }
    let (train_idx, test_idx) = stratified_split(&labels, a.holdout_fraction, cfg.seed)?;
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<Concept>) {
        idx.iter().map(|&i| (samples[i].features.as_slice().to_vec(), labels[i])).unzip()
    };
    let (train_rows, train_labels) = pick(&train_idx);
    let (test_rows, test_labels) = pick(&test_idx);
    let hyper = if a.select {
        let score = select_hyper(&train_rows, &train_labels, &a.grid, a.folds)?;
        println!(
            "selected length scale {} signal std {} (cv accuracy {:.4}, cv log loss {:.4})",
            score.hyper.length_scale, score.hyper.signal_std, score.accuracy, score.log_loss
        );
        score.hyper
    } else {
        a.hyper
    };
    let attributor = Attributor::train(&train_rows, &train_labels, hyper, a.thresholds)?;
    write_json(&common.out.join("model.json"), &attributor)?;
    let eval = evaluate(&attributor, &test_rows, &test_labels, RELIABILITY_BINS)?;
    write_json(&common.out.join("evaluation.json"), &eval)?;
    let rows: Vec<Vec<String>> = eval
        .reliability
        .iter()
        .map(|b| vec![format_f64(b.lower), format_f64(b.upper), b.count.to_string(), format_f64(b.mean_confidence), format_f64(b.accuracy)])
        .collect();
    write_csv(common.out.join("reliability.csv"), &["lower", "upper", "count", "mean_confidence", "accuracy"], &rows)?;
    println!("trained on {} samples; model written to {}", train_rows.len(), common.out.join("model.json").display());
    print_evaluation(&eval);
    if eval.accuracy <= 1.0 / 3.0 {
        return Err(Failure::Threshold(format!("held-out accuracy {:.4} is not above chance", eval.accuracy)));
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Attributor, Failure> {
    let model: Attributor = read_json(path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("model {}: {io}", path.display())),
        other => other,
    })?;
    model.thresholds.validate()?;
    Ok(model)
}

pub fn run_sim(common: &Common, mode: Option<Mode>, model: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = load(common)?;
    if let Some(m) = mode {
        cfg.sim.mode = m;
    }
    let attributor = model.as_deref().map(load_model).transpose()?;
    let log = run_episode(&cfg.sim, &cfg.sim_setup(), attributor.as_ref(), cfg.seed)?;
    let stem = format!("episode_{}_seed{}", cfg.sim.mode.name(), cfg.seed);
    let jsonl = common.out.join(format!("{stem}.jsonl"));
    log.write_jsonl(std::io::BufWriter::new(fs::File::create(&jsonl)?))?;
    log.write_csv(&common.out.join(format!("{stem}.csv")))?;
    let m = metrics(&log)?;
    println!("wrote {}", jsonl.display());
    println!("mode {} seed {}", m.mode.name(), m.seed);
    match m.min_d_env {
        Some(d) => println!("min d_env {d:.6} m (collision threshold {:.6} m)", log.header.eps_env),
        None => println!("no obstacle"),
    }
    println!("collision ticks {} in {} events", m.collision_ticks, m.collision_events);
    println!("solve ms mean {:.3} p95 {:.3} max {:.3}", m.mean_solve_ms, m.p95_solve_ms, m.max_solve_ms);
    println!("mean rho {:.4}; final path parameter {:.4}", m.mean_rho, m.s_final);
    Ok(())
}
