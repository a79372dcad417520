//! Summaries of episode logs, with a side-by-side comparison whenever a
//! baseline and a guard episode share a seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use riskmpc::cloud::Concept;
use riskmpc::io::{format_f64, write_csv};
use riskmpc::sim::{metrics, EpisodeLog, EpisodeMetrics, Mode};

use crate::Failure;

const TIMELINE_BIN: f64 = 1.0;

const REPORT_HEADER: [&str; 15] = [
    "log",
    "mode",
    "seed",
    "ticks",
    "min_d_env",
    "collided",
    "collision_ticks",
    "collision_events",
    "mean_solve_ms",
    "p95_solve_ms",
    "max_solve_ms",
    "mean_rho",
    "s_final",
    "ood_frames",
    "frozen_frames",
];

const TIMELINE_HEADER: [&str; 12] = [
    "mode",
    "seed",
    "t",
    "occluded",
    "pi_sensor_noise",
    "pi_pose_error",
    "pi_partial_overlap",
    "entropy",
    "ood",
    "dominant",
    "rho",
    "source",
];

struct Entry {
    path: PathBuf,
    log: EpisodeLog,
    metrics: EpisodeMetrics,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), format_f64)
}

fn collided(m: &EpisodeMetrics) -> bool {
    m.collision_ticks > 0
}

fn report_row(e: &Entry) -> Vec<String> {
    let m = &e.metrics;
    vec![
        e.path.display().to_string(),
        m.mode.name().into(),
        m.seed.to_string(),
        m.ticks.to_string(),
        opt(m.min_d_env),
        collided(m).to_string(),
        m.collision_ticks.to_string(),
        m.collision_events.to_string(),
        format_f64(m.mean_solve_ms),
        format_f64(m.p95_solve_ms),
        format_f64(m.max_solve_ms),
        format_f64(m.mean_rho),
        format_f64(m.s_final),
        m.ood_frames.to_string(),
        m.frozen_frames.to_string(),
    ]
}

fn timeline_rows(e: &Entry) -> Vec<Vec<String>> {
    e.log
        .perception
        .iter()
        .map(|p| {
            let r = p.output.report.as_ref();
            let pi = |c: Concept| opt(r.map(|r| r.posteriors[c.index()]));
            vec![
                e.metrics.mode.name().into(),
                e.metrics.seed.to_string(),
                format_f64(p.t),
                p.output.occluded.to_string(),
                pi(Concept::SensorNoise),
                pi(Concept::PoseError),
                pi(Concept::PartialOverlap),
                opt(r.map(|r| r.entropy)),
                r.is_some_and(|r| r.ood).to_string(),
                r.map_or("none", |r| r.dominant.name()).into(),
                format_f64(p.rho),
                format!("{:?}", p.source).to_lowercase(),
            ]
        })
        .collect()
}

fn episode_section(out: &mut String, e: &Entry) {
    let m = &e.metrics;
    let _ = writeln!(out, "== {} (mode {}, seed {})", e.path.display(), m.mode.name(), m.seed);
    match m.min_d_env {
        Some(d) => {
            let verdict = if collided(m) { "COLLISION" } else { "no collision" };
            let _ = writeln!(out, "min d_env {d:.6} m against threshold {:.6} m: {verdict}", e.log.header.eps_env);
        }
        None => {
            let _ = writeln!(out, "no obstacle in this episode");
        }
    }
    let _ = writeln!(out, "collision ticks {} in {} events", m.collision_ticks, m.collision_events);
    let _ = writeln!(
        out,
        "solve ms mean {:.3} p95 {:.3} max {:.3}; overruns {:.2}%",
        m.mean_solve_ms,
        m.p95_solve_ms,
        m.max_solve_ms,
        100.0 * m.overrun_fraction
    );
    let _ = writeln!(out, "mean rho {:.4}; final path parameter {:.4}; fallbacks {}", m.mean_rho, m.s_final, m.fallbacks);
    let _ = writeln!(out, "OOD frames {}; frozen adaptations {}; adapted {}", m.ood_frames, m.frozen_frames, m.adapted_frames);
    if e.log.perception.is_empty() {
        return;
    }
    let _ = writeln!(out, "attribution timeline ({TIMELINE_BIN:.0} s bins):");
    let _ = writeln!(out, "  t0     occl  noise   pose    overlap entropy ood  rho");
    let end = e.log.perception.last().map_or(0.0, |p| p.t);
    let bins = (end / TIMELINE_BIN).floor() as usize + 1;
    for b in 0..bins {
        let lo = b as f64 * TIMELINE_BIN;
        let frames: Vec<_> = e.log.perception.iter().filter(|p| p.t >= lo && p.t < lo + TIMELINE_BIN).collect();
        if frames.is_empty() {
            continue;
        }
        let reports: Vec<_> = frames.iter().filter_map(|p| p.output.report.as_ref()).collect();
        let mean = |f: &dyn Fn(&riskmpc::attribution::ConceptReport) -> f64| {
            if reports.is_empty() {
                f64::NAN
            } else {
                reports.iter().map(|r| f(r)).sum::<f64>() / reports.len() as f64
            }
        };
        let _ = writeln!(
            out,
            "  {:<6.1} {:>4}  {:<7.3} {:<7.3} {:<7.3} {:<7.3} {:>3}  {:.3}",
            lo,
            frames.iter().filter(|p| p.output.occluded).count(),
            mean(&|r| r.posteriors[0]),
            mean(&|r| r.posteriors[1]),
            mean(&|r| r.posteriors[2]),
            mean(&|r| r.entropy),
            reports.iter().filter(|r| r.ood).count(),
            frames.iter().map(|p| p.rho).sum::<f64>() / frames.len() as f64,
        );
    }
}

/// Baseline/guard pairs sharing a seed, in seed order.
fn pairs(entries: &[Entry]) -> Vec<(&Entry, &Entry)> {
    let mut out: Vec<(&Entry, &Entry)> = entries
        .iter()
        .filter(|b| b.metrics.mode == Mode::Baseline)
        .filter_map(|b| {
            entries.iter().find(|g| g.metrics.mode == Mode::Guard && g.metrics.seed == b.metrics.seed).map(|g| (b, g))
        })
        .collect();
    out.sort_by_key(|(b, _)| b.metrics.seed);
    out.dedup_by_key(|(b, _)| b.metrics.seed);
    out
}

fn comparison_section(out: &mut String, pairs: &[(&Entry, &Entry)]) {
    let _ = writeln!(out, "== comparison (baseline vs guard)");
    let _ = writeln!(out, "  seed   baseline_min  baseline     guard_min     guard        guard>=baseline");
    let verdict = |m: &EpisodeMetrics| if collided(m) { "COLLISION" } else { "safe" };
    let fmt = |d: Option<f64>| d.map_or_else(|| "n/a".to_string(), |d| format!("{d:.6}"));
    let (mut base_hits, mut guard_hits, mut dominates) = (0, 0, 0);
    for (b, g) in pairs {
        let (bm, gm) = (&b.metrics, &g.metrics);
        let better = matches!((bm.min_d_env, gm.min_d_env), (Some(x), Some(y)) if y >= x);
        base_hits += usize::from(collided(bm));
        guard_hits += usize::from(collided(gm));
        dominates += usize::from(better);
        let _ = writeln!(
            out,
            "  {:<6} {:<13} {:<12} {:<13} {:<12} {}",
            bm.seed,
            fmt(bm.min_d_env),
            verdict(bm),
            fmt(gm.min_d_env),
            verdict(gm),
            if better { "yes" } else { "no" }
        );
    }
    let n = pairs.len();
    let _ = writeln!(out, "baseline collided in {base_hits}/{n}; guard collided in {guard_hits}/{n}; guard kept at least the baseline clearance in {dominates}/{n}");
}

pub fn run(logs: &[PathBuf], out_dir: &Path) -> Result<(), Failure> {
    let mut entries = Vec::with_capacity(logs.len());
    for path in logs {
        let log = EpisodeLog::read_file(path).map_err(|e| match e {
            riskmpc::error::Error::Parse(m) => riskmpc::error::Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let metrics = metrics(&log)?;
        entries.push(Entry { path: path.clone(), log, metrics });
    }
    fs::create_dir_all(out_dir)?;
    write_csv(out_dir.join("report.csv"), &REPORT_HEADER, &entries.iter().map(report_row).collect::<Vec<_>>())?;
    write_csv(out_dir.join("timeline.csv"), &TIMELINE_HEADER, &entries.iter().flat_map(timeline_rows).collect::<Vec<_>>())?;

    let mut text = String::new();
    for e in &entries {
        episode_section(&mut text, e);
        text.push('\n');
    }
    let pairs = pairs(&entries);
    if !pairs.is_empty() {
        comparison_section(&mut text, &pairs);
    }
    fs::write(out_dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
