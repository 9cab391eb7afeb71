//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use equibus_core::accessibility::{compute_report, AccessibilityReport};
use equibus_core::mdp::{realize_lines, LineAssignment};
use equibus_core::optimizers::{
    genetic_search, random_search, test_policy, train_rl, Budget, OptimizerResult,
};
use equibus_core::qnet::{load_checkpoint, save_checkpoint, QNetworkParams};
use equibus_core::stats::ComparisonReport;
use equibus_core::sub_seed;
use equibus_core::territory::generate_grid_scenario;
use equibus_core::transit_graph::build_router_graph;
use equibus_core::Scenario64;

use crate::config::{load_file_config, resolve_out_dir, FileConfig};
use crate::{BudgetArgs, CliError, Command, CommonArgs, OptimizerKind};

const DEFAULT_Q: f64 = 20.0;
const DEFAULT_SEED: u64 = 0;
const DEFAULT_STALL_LIMIT: u32 = 5;
const DEFAULT_BUDGET_S: f64 = 60.0;

struct Ctx {
    cfg: FileConfig,
    out_dir: PathBuf,
    parallel: bool,
    seed: u64,
}

fn setup(common: &CommonArgs) -> Result<Ctx, CliError> {
    let cfg = load_file_config(common.config.as_deref())?;
    let out_dir = resolve_out_dir(common.out_dir.clone(), &cfg);
    let threads = common.threads.or(cfg.threads).unwrap_or(1);
    if threads == 0 {
        return Err(CliError::validation("--threads must be at least 1"));
    }
    if threads > 1 {
        // Ignore "already initialized" when several commands run in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
        eprintln!(
            "note: running with {threads} threads; parallel reduction may \
             alter low-order floating-point bits"
        );
    }
    let seed = common.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    Ok(Ctx {
        cfg,
        out_dir,
        parallel: threads > 1,
        seed,
    })
}

fn resolve_budget(args: &BudgetArgs, cfg: &FileConfig) -> Result<Budget, CliError> {
    let budget = if let Some(s) = args.budget_s {
        Budget::Seconds(s)
    } else if let Some(n) = args.budget_evals {
        Budget::Evaluations(n)
    } else if let Some(s) = cfg.budget_s {
        Budget::Seconds(s)
    } else if let Some(n) = cfg.budget_evals {
        Budget::Evaluations(n)
    } else {
        Budget::Seconds(DEFAULT_BUDGET_S)
    };
    match budget {
        Budget::Seconds(s) if !(s > 0.0) || !s.is_finite() => Err(CliError::validation(
            format!("budget must be positive, got {s} seconds"),
        )),
        Budget::Evaluations(0) => Err(CliError::validation("budget must be at least 1 evaluation")),
        _ => Ok(budget),
    }
}

fn resolve_q(flag: Option<f64>, cfg: &FileConfig) -> Result<f64, CliError> {
    let q = flag.or(cfg.q).unwrap_or(DEFAULT_Q);
    if !(q > 0.0 && q <= 100.0) {
        return Err(CliError::validation(format!("quantile {q} outside (0, 100]")));
    }
    Ok(q)
}

fn default_path(out_dir: &Path, name: &str, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| out_dir.join(name))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
        }
    }
    fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::internal(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Line assignment as a file: candidate stop ids per line.
#[derive(Debug, Serialize, Deserialize)]
struct AssignmentFile {
    k: usize,
    lines: Vec<Vec<u32>>,
}

fn assignment_to_file(st: &LineAssignment, s: &Scenario64) -> AssignmentFile {
    let candidates = s.candidate_ids();
    let lines = (0..st.k() as u32)
        .map(|line| {
            st.stops_on(line)
                .into_iter()
                .map(|i| candidates[i].0)
                .collect()
        })
        .collect();
    AssignmentFile { k: st.k(), lines }
}

fn assignment_from_file(af: &AssignmentFile, s: &Scenario64) -> Result<LineAssignment, CliError> {
    let candidates = s.candidate_ids();
    let index_of: BTreeMap<u32, usize> = candidates
        .iter()
        .enumerate()
        .map(|(i, id)| (id.0, i))
        .collect();
    let mut line_of = vec![u32::MAX; candidates.len()];
    if af.lines.len() != af.k {
        return Err(CliError::validation(format!(
            "assignment declares k = {} but lists {} lines",
            af.k,
            af.lines.len()
        )));
    }
    for (line, stops) in af.lines.iter().enumerate() {
        for sid in stops {
            let &i = index_of.get(sid).ok_or_else(|| {
                CliError::validation(format!("assignment references unknown candidate stop {sid}"))
            })?;
            if line_of[i] != u32::MAX {
                return Err(CliError::validation(format!(
                    "assignment lists stop {sid} more than once"
                )));
            }
            line_of[i] = line as u32;
        }
    }
    if line_of.iter().any(|&l| l == u32::MAX) {
        return Err(CliError::validation(
            "assignment does not cover every candidate stop",
        ));
    }
    LineAssignment::new(af.k, line_of).map_err(CliError::from)
}

/// Result file for train/optimize runs; wall-clock timing lives only in
/// the trajectory log so this file is reproducible under --budget-evals.
#[derive(Serialize)]
struct RunRecord {
    optimizer: String,
    q: f64,
    seed: u64,
    budget: Budget,
    best_value: f64,
    evaluations: u64,
    best_assignment: AssignmentFile,
}

fn write_run_outputs(
    name: &str,
    s: &Scenario64,
    q: f64,
    seed: u64,
    budget: Budget,
    result: &OptimizerResult<f64>,
    out: &Path,
    trajectory: &Path,
    assignment_out: Option<&Path>,
) -> Result<(), CliError> {
    let record = RunRecord {
        optimizer: name.to_string(),
        q,
        seed,
        budget,
        best_value: result.best_value,
        evaluations: result.evaluations,
        best_assignment: assignment_to_file(&result.best_assignment, s),
    };
    write_json(out, &record)?;
    let mut log = String::new();
    for p in &result.trajectory {
        log.push_str(&serde_json::to_string(p).map_err(|e| CliError::internal(e.to_string()))?);
        log.push('\n');
    }
    write_text(trajectory, &log)?;
    if let Some(path) = assignment_out {
        write_json(path, &record.best_assignment)?;
    }
    println!(
        "{name}: best acc^{q} = {} after {} evaluations",
        result.best_value, result.evaluations
    );
    println!("result: {}", out.display());
    Ok(())
}

fn load_scenario(path: &Path) -> Result<Scenario64, CliError> {
    equibus_core::territory::load_scenario(path).map_err(CliError::from)
}

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Generate {
            common,
            out,
            width,
            height,
            spacing_km,
            poi_density,
            poi_density_map,
            metro_lines,
            num_lines,
            fleet_per_line,
            t_max,
            walk_speed,
            bus_speed,
            metro_headway,
        } => {
            let ctx = setup(&common)?;
            let grid = &ctx.cfg.grid;
            let width = width.or(grid.width).unwrap_or(12);
            let height = height.or(grid.height).unwrap_or(6);
            let spacing = spacing_km.or(grid.spacing_km).unwrap_or(1.0);
            let cells = width * height;
            let densities: Vec<f64> = match poi_density_map {
                Some(path) => read_json(&path)?,
                None => vec![poi_density.or(grid.poi_density).unwrap_or(2.0); cells],
            };
            if densities.len() != cells {
                return Err(CliError::validation(format!(
                    "density map has {} entries for {} cells",
                    densities.len(),
                    cells
                )));
            }
            let metro_spec: Vec<Vec<usize>> = metro_lines
                .iter()
                .map(|spec| {
                    spec.split(',')
                        .map(|tok| {
                            tok.trim().parse::<usize>().map_err(|_| {
                                CliError::validation(format!(
                                    "metro line cell index `{tok}` is not an integer"
                                ))
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut scenario =
                generate_grid_scenario::<f64>(width, height, spacing, &metro_spec, &densities, ctx.seed)?;
            if let Some(k) = num_lines.or(grid.num_lines) {
                scenario.params.num_lines = k;
            }
            if let Some(v) = fleet_per_line.or(grid.fleet_per_line) {
                scenario.params.fleet_per_line = v;
            }
            if let Some(v) = t_max.or(grid.t_max_minutes) {
                scenario.params.t_max_minutes = v;
            }
            if let Some(v) = walk_speed.or(grid.walk_speed_kmh) {
                scenario.params.walk_speed_kmh = v;
            }
            if let Some(v) = bus_speed.or(grid.bus_speed_kmh) {
                scenario.params.bus_speed_kmh = v;
            }
            if let Some(h) = metro_headway.or(grid.metro_headway_minutes) {
                for line in &mut scenario.metro_lines {
                    line.headway_minutes = h;
                }
            }
            scenario.validate()?;
            let path = default_path(&ctx.out_dir, "scenario.json", out);
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)
                        .map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
                }
            }
            scenario.save(&path)?;
            println!(
                "scenario: {} ({} centroids, {} candidate stops, {} pois, {} metro lines)",
                path.display(),
                scenario.centroids.len(),
                scenario.num_candidates(),
                scenario.pois.len(),
                scenario.metro_lines.len()
            );
            Ok(())
        }

        Command::Evaluate {
            common,
            scenario,
            assignment,
            q,
            out,
        } => {
            let ctx = setup(&common)?;
            let s = load_scenario(&scenario)?;
            let lines = match &assignment {
                Some(path) => {
                    let af: AssignmentFile = read_json(path)?;
                    let st = assignment_from_file(&af, &s)?;
                    realize_lines(&s, &st)?
                }
                None => Vec::new(),
            };
            let g = build_router_graph(&s, &lines)?;
            let mut quantiles = vec![20.0, 50.0, 100.0];
            if let Some(extra) = q.or(ctx.cfg.q) {
                if !quantiles.contains(&extra) {
                    quantiles.push(extra);
                    quantiles.sort_by(|a, b| a.partial_cmp(b).unwrap());
                }
            }
            let report = compute_report(&s, &g, &quantiles, ctx.parallel)?;
            let n = report.per_centroid.len() as f64;
            let mean: f64 = report.per_centroid.values().sum::<f64>() / n;
            let (min_id, min_v) = report
                .per_centroid
                .iter()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then_with(|| a.0.cmp(b.0)))
                .unwrap();
            let (max_id, max_v) = report
                .per_centroid
                .iter()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then_with(|| b.0.cmp(a.0)))
                .unwrap();
            println!(
                "acc(c): min {min_v} (centroid {}), mean {mean}, max {max_v} (centroid {})",
                min_id.0, max_id.0
            );
            for entry in &report.quantiles {
                println!("acc^{} = {}", entry.q, entry.value);
            }
            if let Some(path) = out {
                write_json(&path, &report)?;
                println!("report: {}", path.display());
            }
            Ok(())
        }

        Command::Train {
            common,
            budget,
            scenario,
            q,
            stall_limit,
            checkpoint,
            checkpoint_out,
            out,
            trajectory,
        } => {
            let ctx = setup(&common)?;
            let s = load_scenario(&scenario)?;
            let q = resolve_q(q, &ctx.cfg)?;
            let budget = resolve_budget(&budget, &ctx.cfg)?;
            let stall = stall_limit.or(ctx.cfg.stall_limit).unwrap_or(DEFAULT_STALL_LIMIT);
            let k = s.params.num_lines as usize;
            let hyper = ctx.cfg.qnet.to_hyper();
            let params = match &checkpoint {
                Some(path) => {
                    let p = load_checkpoint::<f64>(path)?;
                    p.check_compatible(&hyper, k + 5)?;
                    p
                }
                None => QNetworkParams::init(hyper, k, ctx.seed)?,
            };
            let (result, trained) =
                train_rl(&s, q, budget, stall, params, ctx.seed, ctx.parallel)?;
            let ck_path = default_path(&ctx.out_dir, "checkpoint.json", checkpoint_out);
            if let Some(parent) = ck_path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)
                        .map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
                }
            }
            save_checkpoint(&trained, &ck_path)?;
            println!("checkpoint: {}", ck_path.display());
            write_run_outputs(
                "train-rl",
                &s,
                q,
                ctx.seed,
                budget,
                &result,
                &default_path(&ctx.out_dir, "train_result.json", out),
                &default_path(&ctx.out_dir, "train_trajectory.jsonl", trajectory),
                None,
            )
        }

        Command::Optimize {
            common,
            budget,
            scenario,
            optimizer,
            q,
            checkpoint,
            out,
            trajectory,
            assignment_out,
        } => {
            let ctx = setup(&common)?;
            let s = load_scenario(&scenario)?;
            let q = resolve_q(q, &ctx.cfg)?;
            let budget = resolve_budget(&budget, &ctx.cfg)?;
            let kind = optimizer
                .or_else(|| match ctx.cfg.optimizer.as_deref() {
                    Some("rl") => Some(OptimizerKind::Rl),
                    Some("ga") => Some(OptimizerKind::Ga),
                    Some("random") => Some(OptimizerKind::Random),
                    _ => None,
                })
                .unwrap_or(OptimizerKind::Random);
            let (name, result) = match kind {
                OptimizerKind::Random => (
                    "random",
                    random_search(&s, q, budget, ctx.seed, ctx.parallel)?,
                ),
                OptimizerKind::Ga => {
                    let cfg = ctx.cfg.ga.to_config();
                    ("ga", genetic_search(&s, q, budget, &cfg, ctx.seed, ctx.parallel)?)
                }
                OptimizerKind::Rl => {
                    let path = checkpoint.as_ref().ok_or_else(|| {
                        CliError::validation(
                            "--optimizer rl needs --checkpoint (run `equibus train` first)",
                        )
                    })?;
                    let params = load_checkpoint::<f64>(path)?;
                    let k = s.params.num_lines as usize;
                    if params.feature_dim != k + 5 {
                        return Err(CliError::validation(format!(
                            "checkpoint was trained for {} lines, scenario has {k}",
                            params.feature_dim.saturating_sub(5)
                        )));
                    }
                    (
                        "rl",
                        test_policy(&s, q, budget, &params, ctx.seed, ctx.parallel)?,
                    )
                }
            };
            write_run_outputs(
                name,
                &s,
                q,
                ctx.seed,
                budget,
                &result,
                &default_path(&ctx.out_dir, "optimize_result.json", out),
                &default_path(&ctx.out_dir, "optimize_trajectory.jsonl", trajectory),
                Some(&default_path(&ctx.out_dir, "best_assignment.json", assignment_out)),
            )
        }

        Command::Compare {
            common,
            budget,
            scenario,
            q,
            trials,
            optimizers,
            stall_limit,
            out,
        } => {
            let ctx = setup(&common)?;
            let s = load_scenario(&scenario)?;
            let q = resolve_q(q, &ctx.cfg)?;
            let budget = resolve_budget(&budget, &ctx.cfg)?;
            let trials = trials.unwrap_or(10);
            if trials < 1 {
                return Err(CliError::validation("--trials must be at least 1"));
            }
            let stall = stall_limit.or(ctx.cfg.stall_limit).unwrap_or(DEFAULT_STALL_LIMIT);
            let arms: Vec<String> = if optimizers.is_empty() {
                vec!["rl".into(), "ga".into()]
            } else {
                optimizers
            };
            for arm in &arms {
                if arm != "rl" && arm != "ga" {
                    return Err(CliError::validation(format!(
                        "unknown optimizer `{arm}` (expected rl and/or ga)"
                    )));
                }
            }
            let k = s.params.num_lines as usize;
            let hyper = ctx.cfg.qnet.to_hyper();
            let ga_cfg = ctx.cfg.ga.to_config();

            let mut random_best = Vec::new();
            let mut rl_best = Vec::new();
            let mut ga_best = Vec::new();
            for trial in 0..trials {
                let trial_seed = sub_seed(ctx.seed, &format!("compare-trial-{trial}"));
                let rnd = random_search(&s, q, budget, trial_seed, ctx.parallel)?;
                random_best.push(rnd.best_value);
                if arms.iter().any(|a| a == "rl") {
                    let params = QNetworkParams::init(hyper, k, trial_seed)?;
                    let (res, _) =
                        train_rl(&s, q, budget, stall, params, trial_seed, ctx.parallel)?;
                    rl_best.push(res.best_value);
                }
                if arms.iter().any(|a| a == "ga") {
                    let res = genetic_search(&s, q, budget, &ga_cfg, trial_seed, ctx.parallel)?;
                    ga_best.push(res.best_value);
                }
                eprintln!("trial {trial}: done");
            }

            #[derive(Serialize)]
            struct CompareFile {
                q: f64,
                trials: u32,
                budget: Budget,
                seed: u64,
                random_best: Vec<f64>,
                arms: BTreeMap<String, ComparisonReport>,
            }
            let mut arm_reports = BTreeMap::new();
            if !rl_best.is_empty() {
                arm_reports.insert(
                    "rl".to_string(),
                    ComparisonReport::from_trials("rl", &rl_best, &random_best)?,
                );
            }
            if !ga_best.is_empty() {
                arm_reports.insert(
                    "ga".to_string(),
                    ComparisonReport::from_trials("ga", &ga_best, &random_best)?,
                );
            }
            for (name, report) in &arm_reports {
                match (report.t_statistic, report.p_greater) {
                    (Some(t), Some(p)) => println!(
                        "{name} vs random: mean(R) = {}, t = {t}, one-sided p = {p}",
                        report.mean
                    ),
                    _ => println!(
                        "{name} vs random: mean(R) = {} ({})",
                        report.mean,
                        report.note.as_deref().unwrap_or("degenerate")
                    ),
                }
            }
            let path = default_path(&ctx.out_dir, "compare_report.json", out);
            write_json(
                &path,
                &CompareFile {
                    q,
                    trials,
                    budget,
                    seed: ctx.seed,
                    random_best,
                    arms: arm_reports,
                },
            )?;
            println!("report: {}", path.display());
            Ok(())
        }

        Command::Export {
            common,
            scenario,
            baseline,
            improved,
            q,
            out,
            geojson,
        } => {
            let ctx = setup(&common)?;
            let s = load_scenario(&scenario)?;
            let q = resolve_q(q, &ctx.cfg)?;
            let base: AccessibilityReport<f64> = read_json(&baseline)?;
            let improved_report: AccessibilityReport<f64> = read_json(&improved)?;
            let csv_path = default_path(&ctx.out_dir, "heatmap.csv", out);
            if let Some(parent) = csv_path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)
                        .map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
                }
            }
            equibus_core::heatmap::export_heatmap(&s, &base, &improved_report, q, &csv_path)?;
            println!("heatmap: {}", csv_path.display());
            if let Some(gj) = geojson {
                equibus_core::heatmap::export_heatmap_geojson(&s, &base, &improved_report, q, &gj)?;
                println!("geojson: {}", gj.display());
            }
            Ok(())
        }
    }
}

/// Used by the reproducibility tests: map a stop-id keyed assignment onto
/// a scenario. Exposed for integration testing of the file formats.
#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_file_roundtrip() {
        let s: Scenario64 =
            generate_grid_scenario(3, 2, 1.0, &[], &vec![1.0; 6], 9).unwrap();
        let mut s = s;
        s.params.num_lines = 2;
        let st = LineAssignment::new(2, vec![0, 1, 0, 1, 0, 1]).unwrap();
        let af = assignment_to_file(&st, &s);
        let back = assignment_from_file(&af, &s).unwrap();
        assert_eq!(st, back);
    }

    #[test]
    fn assignment_file_rejects_missing_stop() {
        let mut s: Scenario64 =
            generate_grid_scenario(3, 2, 1.0, &[], &vec![1.0; 6], 9).unwrap();
        s.params.num_lines = 2;
        let af = AssignmentFile {
            k: 2,
            lines: vec![vec![0, 1, 2], vec![3, 4]],
        };
        assert!(assignment_from_file(&af, &s).is_err());
    }
}
