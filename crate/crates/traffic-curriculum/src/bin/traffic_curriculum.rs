//! Training, evaluation, replay, and plot-data command line for the
//! traffic curriculum laboratory. Every subcommand reads one TOML config
//! (empty or missing flag = reference defaults) plus flag overrides, and
//! exits nonzero with a diagnostic on any error.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use traffic_curriculum::baseline::RuleStudentActor;
use traffic_curriculum::checkpoint::CheckpointBundle;
use traffic_curriculum::config::RunConfig;
use traffic_curriculum::curriculum::{log_csv, CurriculumLab, Phase, LAMBDA_SET};
use traffic_curriculum::eval::{evaluate, velocity_profiles, EvalReport};
use traffic_curriculum::lane_graph::LaneGraph;
use traffic_curriculum::ppo::{NpcActor, PolicyStudentActor, StudentActor, TeacherNpcActor};
use traffic_curriculum::rng::stream;
use traffic_curriculum::scenario_log::{record_episode, ScenarioLog};

#[derive(Parser)]
#[command(name = "traffic-curriculum", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Alternating teacher/student curriculum training.
    TrainCurriculum {
        #[command(flatten)]
        common: CommonArgs,
        /// Enable/disable the recalibration phase.
        #[arg(long)]
        recalibrate: Option<bool>,
    },
    /// Student training against rule-based traffic (control arm).
    TrainBaseline {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate students against traffic sources on hold-out maps.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint bundle holding the trained student (and teacher).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Episodes per report cell.
        #[arg(long)]
        episodes: Option<usize>,
        /// Teacher difficulty levels to evaluate at (repeatable).
        #[arg(long = "lambda")]
        lambdas: Vec<f64>,
    },
    /// Re-simulate a scenario log and verify a bit-exact state match.
    Replay {
        /// Scenario JSONL log.
        log: PathBuf,
    },
    /// Emit velocity-profile and curriculum-trace CSVs for plotting.
    PlotData {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint bundle to extract velocity profiles from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Curriculum metrics CSV to split into per-phase traces.
        #[arg(long)]
        curriculum: Option<PathBuf>,
        /// Episodes per profile condition.
        #[arg(long)]
        episodes: Option<usize>,
        /// Teacher difficulty levels to profile at (repeatable).
        #[arg(long = "lambda")]
        lambdas: Vec<f64>,
    },
}

fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.display().to_string();
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One scenario log per requested difficulty, recorded with the final
/// policies and immediately replay-verified.
fn emit_scenarios(lab: &CurriculumLab, maps: &[Arc<LaneGraph>], dir: &Path) -> Result<()> {
    for (i, &lambda) in LAMBDA_SET.iter().enumerate() {
        if !(lambda == 1.0 || lambda == 0.0 || lambda == -1.0) {
            continue;
        }
        let mut rng = stream(lab.seed, &format!("scenario.level{i}"));
        let mut student = PolicyStudentActor {
            policy: &lab.student,
            store: &lab.student_store,
        };
        let mut npcs = TeacherNpcActor {
            policy: &lab.teacher,
            store: &lab.teacher_store,
            lambda,
        };
        let log = record_episode(
            &mut student,
            &mut npcs,
            maps[i % maps.len()].clone(),
            &lab.env,
            lab.seed,
            lambda,
            &mut rng,
        )?;
        log.replay().context("replay verification of emitted log")?;
        let path = dir.join(format!("scenario_lambda_{lambda}.jsonl"));
        write(&path, &log.to_jsonl())?;
    }
    Ok(())
}

fn train_curriculum(common: &CommonArgs, recalibrate: Option<bool>) -> Result<()> {
    let mut cfg = resolve_config(common)?;
    if let Some(r) = recalibrate {
        cfg.curriculum.recalibration_enabled = r;
    }
    cfg.validate()?;
    let dir = out_dir(&cfg)?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    let hash = cfg.hash();

    let (train_maps, _) = cfg.map_pools();
    let mut lab = CurriculumLab::new(&cfg.lab_params(), train_maps.clone());
    let mut phase_no = 0usize;
    let dir_for_cb = dir.clone();
    lab.run_with(|lab| {
        // Checkpoint and refresh the metrics CSV at every phase boundary.
        let bundle = CheckpointBundle::capture(lab, &hash);
        let path = dir_for_cb.join(format!("checkpoint_{phase_no:03}.json"));
        std::fs::write(&path, bundle.to_json()).expect("writing checkpoint");
        std::fs::write(dir_for_cb.join("curriculum.csv"), log_csv(&lab.log))
            .expect("writing metrics");
        phase_no += 1;
        Ok(())
    })?;

    let bundle = CheckpointBundle::capture(&lab, &hash);
    bundle.save(&dir.join("checkpoint_final.json"))?;
    write(&dir.join("curriculum.csv"), &log_csv(&lab.log))?;
    emit_scenarios(&lab, &train_maps, &dir)?;
    println!(
        "trained {} rounds; final level index {} (lambda {})",
        lab.state.round,
        lab.state.current_index,
        lab.state.lambda()
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

fn train_baseline(common: &CommonArgs) -> Result<()> {
    let cfg = resolve_config(common)?;
    cfg.validate()?;
    let dir = out_dir(&cfg)?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    let hash = cfg.hash();

    let (train_maps, _) = cfg.map_pools();
    let mut lab = CurriculumLab::new(&cfg.lab_params(), train_maps);
    lab.run_baseline(&cfg.baseline);

    let bundle = CheckpointBundle::capture(&lab, &hash);
    bundle.save(&dir.join("checkpoint_final.json"))?;
    write(&dir.join("baseline.csv"), &log_csv(&lab.log))?;
    println!(
        "trained {} baseline iterations",
        cfg.curriculum.total_rounds * cfg.curriculum.n_student
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

/// Lab restored from a checkpoint, plus the hold-out maps of its config.
fn restore_lab(cfg: &RunConfig, checkpoint: &Path) -> Result<(CurriculumLab, Vec<Arc<LaneGraph>>)> {
    let bundle = CheckpointBundle::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let (train_maps, holdout) = cfg.map_pools();
    let mut lab = CurriculumLab::new(&cfg.lab_params(), train_maps);
    bundle.restore(&mut lab, &cfg.hash())?;
    Ok((lab, holdout))
}

fn lambda_list(lambdas: &[f64]) -> Result<Vec<f64>> {
    let list = if lambdas.is_empty() {
        vec![1.0, 0.0, -1.0]
    } else {
        lambdas.to_vec()
    };
    for &l in &list {
        if !(-1.0..=1.0).contains(&l) {
            bail!("lambda {l} outside [-1, 1]");
        }
    }
    Ok(list)
}

fn eval_cmd(
    common: &CommonArgs,
    checkpoint: Option<&Path>,
    episodes: Option<usize>,
    lambdas: &[f64],
) -> Result<()> {
    let cfg = resolve_config(common)?;
    cfg.validate()?;
    let dir = out_dir(&cfg)?;
    let episodes = episodes.unwrap_or(cfg.eval_episodes);
    let lambdas = lambda_list(lambdas)?;

    #[derive(serde::Serialize)]
    struct Cell {
        student: String,
        traffic: String,
        report: EvalReport,
    }
    let mut cells: Vec<Cell> = Vec::new();

    let lab_holdout = match checkpoint {
        Some(path) => Some(restore_lab(&cfg, path)?),
        None => None,
    };
    let holdout = match &lab_holdout {
        Some((_, h)) => h.clone(),
        None => cfg.map_pools().1,
    };

    // Student roster: the trained policy when a checkpoint is given, plus
    // the scripted rule driver as a reference row.
    let mut student_names = vec!["rule".to_string()];
    if lab_holdout.is_some() {
        student_names.insert(0, "policy".to_string());
    }

    for student_name in &student_names {
        // Traffic sources: rule-based plus (with a checkpoint) the teacher
        // at each requested level.
        let mut traffic_names = vec!["rule".to_string()];
        if lab_holdout.is_some() {
            traffic_names.extend(lambdas.iter().map(|l| format!("lambda_{l}")));
        }
        for traffic_name in &traffic_names {
            let mut rule_student = RuleStudentActor { params: cfg.baseline };
            let mut policy_student = lab_holdout.as_ref().map(|(lab, _)| PolicyStudentActor {
                policy: &lab.student,
                store: &lab.student_store,
            });
            let student: &mut dyn StudentActor = if student_name == "policy" {
                policy_student.as_mut().unwrap()
            } else {
                &mut rule_student
            };

            let mut rule_traffic = traffic_curriculum::baseline::BaselineNpcActor {
                params: cfg.baseline,
            };
            let mut teacher_traffic = match traffic_name.strip_prefix("lambda_") {
                Some(l) => lab_holdout.as_ref().map(|(lab, _)| TeacherNpcActor {
                    policy: &lab.teacher,
                    store: &lab.teacher_store,
                    lambda: l.parse::<f64>().expect("lambda name"),
                }),
                None => None,
            };
            let traffic: &mut dyn NpcActor = match teacher_traffic.as_mut() {
                Some(t) => t,
                None => &mut rule_traffic,
            };

            let ev = evaluate(
                student,
                traffic,
                &holdout,
                &cfg.env,
                &cfg.rewards,
                episodes,
                cfg.seed,
            )?;
            let r = &ev.report;
            println!(
                "student={student_name} traffic={traffic_name} SR={:.3} CR={:.3} OR={:.3} TR={:.3} RP={:.3} v={:.3} R={:.3}",
                r.success_rate,
                r.collision_rate,
                r.offroad_rate,
                r.timeout_rate,
                r.route_progress.mean,
                r.velocity.mean,
                r.reward.mean,
            );
            cells.push(Cell {
                student: student_name.clone(),
                traffic: traffic_name.clone(),
                report: ev.report,
            });
        }
    }

    let path = dir.join("eval_report.json");
    write(&path, &serde_json::to_string_pretty(&cells)?)?;
    println!("report written to {}", path.display());
    Ok(())
}

fn replay_cmd(log_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(log_path)
        .with_context(|| format!("reading {}", log_path.display()))?;
    let log = ScenarioLog::from_jsonl(&text)?;
    let steps = log.replay()?;
    println!("match ({steps} steps verified bit-exact)");
    Ok(())
}

fn plot_data(
    common: &CommonArgs,
    checkpoint: Option<&Path>,
    curriculum: Option<&Path>,
    episodes: Option<usize>,
    lambdas: &[f64],
) -> Result<()> {
    let cfg = resolve_config(common)?;
    cfg.validate()?;
    let dir = out_dir(&cfg)?;
    let mut wrote_any = false;

    if let Some(csv_path) = curriculum {
        // Split the training trace into one CSV per phase.
        let text = std::fs::read_to_string(csv_path)
            .with_context(|| format!("reading {}", csv_path.display()))?;
        let mut lines = text.lines();
        let header = lines.next().context("empty curriculum CSV")?;
        for phase in [Phase::Teacher, Phase::Recalibrate, Phase::Student] {
            let mut out = format!("{header}\n");
            let tag = format!(",{phase},");
            let mut rows = 0;
            for line in lines.clone() {
                if line.contains(&tag) {
                    out.push_str(line);
                    out.push('\n');
                    rows += 1;
                }
            }
            if rows > 0 {
                let path = dir.join(format!("trace_{phase}.csv"));
                write(&path, &out)?;
                println!("wrote {} ({rows} rows)", path.display());
                wrote_any = true;
            }
        }
    }

    if let Some(ckpt) = checkpoint {
        let (lab, holdout) = restore_lab(&cfg, ckpt)?;
        let episodes = episodes.unwrap_or(cfg.eval_episodes);
        let lambdas = lambda_list(lambdas)?;
        let mut conditions: Vec<(String, Option<f64>)> = vec![("rule".into(), None)];
        conditions.extend(lambdas.iter().map(|&l| (format!("lambda_{l}"), Some(l))));
        for (name, lambda) in conditions {
            let mut student = PolicyStudentActor {
                policy: &lab.student,
                store: &lab.student_store,
            };
            let mut rule_traffic = traffic_curriculum::baseline::BaselineNpcActor {
                params: cfg.baseline,
            };
            let mut teacher_traffic = lambda.map(|l| TeacherNpcActor {
                policy: &lab.teacher,
                store: &lab.teacher_store,
                lambda: l,
            });
            let traffic: &mut dyn NpcActor = match teacher_traffic.as_mut() {
                Some(t) => t,
                None => &mut rule_traffic,
            };
            let ev = evaluate(
                &mut student,
                traffic,
                &holdout,
                &cfg.env,
                &cfg.rewards,
                episodes,
                cfg.seed,
            )?;
            let csv = velocity_profiles(&ev.playbacks)?;
            let path = dir.join(format!("profiles_{name}.csv"));
            write(&path, &csv)?;
            println!("wrote {}", path.display());
            wrote_any = true;
        }
    }

    if !wrote_any {
        bail!("nothing to plot: pass --curriculum and/or --checkpoint");
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::TrainCurriculum { common, recalibrate } => train_curriculum(common, *recalibrate),
        Cmd::TrainBaseline { common } => train_baseline(common),
        Cmd::Eval {
            common,
            checkpoint,
            episodes,
            lambdas,
        } => eval_cmd(common, checkpoint.as_deref(), *episodes, lambdas),
        Cmd::Replay { log } => replay_cmd(log),
        Cmd::PlotData {
            common,
            checkpoint,
            curriculum,
            episodes,
            lambdas,
        } => plot_data(
            common,
            checkpoint.as_deref(),
            curriculum.as_deref(),
            *episodes,
            lambdas,
        ),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
