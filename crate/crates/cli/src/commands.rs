//! Subcommand implementations. Each returns a process exit code:
//! 0 success, 2 config error, 3 training abort, 4 geometric failure,
//! 5 verification failure.

use crate::config::{parse_f64_list, parse_system_arg, RunConfig};
use sepx_core::autodiff::ScalarField;
use sepx_core::dynamics::{classify_basin, find_attractors, Attractor, BasinLabel, SystemSpec};
use sepx_core::error::{Error, Result};
use sepx_core::io::fmt_f64;
use sepx_core::models::{init_model, KefModel, INIT_PREVIEW_CALL};
use sepx_core::oracles::{brute_force_basin_map, brute_force_basin_map_slice, AnalyticKef1d};
use sepx_core::separatrix::{
    crossings_detail_csv, crossings_summary_csv, curve_crossings, curve_r2, find_separatrix_point,
    levelset_csv, make_curves, min_perturbation, random_separatrix_targets, trace_zero_level_2d,
    CurveCrossing, SliceField,
};
use sepx_core::training::{eval_l_ratio, train, TrainOutcome};
use std::path::{Path, PathBuf};

const ATTRACTOR_SEEDS: usize = 24;

/// Output directory: `--out` flag, then config `[output] dir`, then
/// `SEPX_OUT_DIR`, then the working directory. Created if absent.
pub fn resolve_out(flag: Option<&Path>, from_config: Option<&Path>) -> Result<PathBuf> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| from_config.map(Path::to_path_buf))
        .or_else(|| std::env::var_os("SEPX_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A trained checkpoint, or the closed-form 1D reference when the
/// checkpoint argument is the literal `oracle`.
enum FieldHandle {
    Trained(KefModel),
    Oracle(AnalyticKef1d),
}

impl FieldHandle {
    fn open(arg: &str, system: &SystemSpec) -> Result<FieldHandle> {
        if arg == "oracle" {
            if system.n != 1 {
                return Err(Error::InvalidInput(
                    "the analytic oracle is one-dimensional; use a checkpoint".into(),
                ));
            }
            return Ok(FieldHandle::Oracle(AnalyticKef1d));
        }
        let model = KefModel::load(Path::new(arg))?;
        if model.d_in() != system.n {
            return Err(Error::InvalidInput(format!(
                "checkpoint expects {}D inputs but system {} is {}D",
                model.d_in(),
                system.name,
                system.n
            )));
        }
        Ok(FieldHandle::Trained(model))
    }

    fn field(&self) -> &dyn ScalarField {
        match self {
            FieldHandle::Trained(m) => m,
            FieldHandle::Oracle(o) => o,
        }
    }
}

fn attractors_of(s: &SystemSpec, seed: u64) -> Result<Vec<Attractor>> {
    find_attractors(s, ATTRACTOR_SEEDS, seed)
}

fn exactly_two(att: &[Attractor]) -> Result<(&Attractor, &Attractor)> {
    if att.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "need exactly 2 attractors, found {}",
            att.len()
        )));
    }
    Ok((&att[0], &att[1]))
}

fn vec_diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

/// `x0,y0,x1,y1` as (min corner, max corner).
pub fn parse_bbox(s: &str) -> Result<([f64; 2], [f64; 2])> {
    let v = parse_f64_list(s).map_err(Error::InvalidInput)?;
    if v.len() != 4 {
        return Err(Error::InvalidInput("bbox needs x0,y0,x1,y1".into()));
    }
    if v[0] >= v[2] || v[1] >= v[3] {
        return Err(Error::InvalidInput("bbox min corner must be below max corner".into()));
    }
    Ok(([v[0], v[1]], [v[2], v[3]]))
}

fn default_bbox_2d(s: &SystemSpec) -> ([f64; 2], [f64; 2]) {
    ([s.ic_box.0[0], s.ic_box.0[1]], [s.ic_box.1[0], s.ic_box.1[1]])
}

/// Slice frame through the segment joining the first two attractors:
/// origin at the midpoint, u along the segment, v the coordinate axis
/// least aligned with u (orthonormalized). Returns (origin, u, v, scale).
fn attractor_frame(att: &[Attractor]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    let (a, b) = exactly_two(att)?;
    let (ra, rb) = (&a.representative, &b.representative);
    let origin: Vec<f64> = ra.iter().zip(rb).map(|(x, y)| 0.5 * (x + y)).collect();
    let mut u = vec_diff(rb, ra);
    let scale = norm(&u);
    if scale < 1e-12 {
        return Err(Error::Geometry("attractors coincide; no slice direction".into()));
    }
    for x in u.iter_mut() {
        *x /= scale;
    }
    let k = (0..u.len())
        .min_by(|&i, &j| u[i].abs().partial_cmp(&u[j].abs()).unwrap())
        .unwrap();
    let mut v = vec![0.0; u.len()];
    v[k] = 1.0;
    let dot = u[k];
    for i in 0..v.len() {
        v[i] -= dot * u[i];
    }
    let vn = norm(&v);
    for x in v.iter_mut() {
        *x /= vn;
    }
    Ok((origin, u, v, scale))
}

fn train_once(cfg: &RunConfig, checkpoint: &Path) -> Result<TrainOutcome> {
    let preview = cfg.train.distributions[0].sample(cfg.train.batch, INIT_PREVIEW_CALL)?;
    let model = init_model(cfg.shape, cfg.system.n, cfg.seed, &preview)?;
    let mut tc = cfg.train.clone();
    tc.checkpoint = Some(checkpoint.to_path_buf());
    train(model, &cfg.system, &tc)
}

pub fn cmd_train(
    config: &Path,
    seed_override: Option<u64>,
    out_flag: Option<&Path>,
) -> Result<i32> {
    let cfg = RunConfig::load(config, seed_override)?;
    let out = resolve_out(out_flag, cfg.out_dir.as_deref())?;
    let ckpt = out.join("model.ckpt");
    let outcome = train_once(&cfg, &ckpt)?;
    write_text(&out.join("train_record.csv"), &outcome.record.to_csv())?;
    for w in &outcome.record.coverage_warnings {
        eprintln!("coverage warning: {w}");
    }
    eprintln!("checkpoint: {}", ckpt.display());
    if let Some(t) = outcome.record.aborted_at {
        eprintln!("training aborted at iteration {t}; checkpoint keeps the last finite parameters");
        println!("final_L_ratio=nan");
        return Ok(3);
    }
    let v = eval_l_ratio(&outcome.model, &cfg.system, &cfg.train, 4)?;
    println!("final_L_ratio={v}");
    Ok(0)
}

pub fn cmd_sweep(
    config: &Path,
    lambdas: &str,
    seed_override: Option<u64>,
    out_flag: Option<&Path>,
) -> Result<i32> {
    let lambdas = parse_f64_list(lambdas).map_err(Error::InvalidInput)?;
    if lambdas.is_empty() {
        return Err(Error::InvalidInput("empty lambda list".into()));
    }
    for i in 0..lambdas.len() {
        for j in (i + 1)..lambdas.len() {
            if lambdas[i] == lambdas[j] {
                return Err(Error::InvalidInput(format!(
                    "duplicate lambda value {}",
                    lambdas[i]
                )));
            }
        }
    }
    let cfg = RunConfig::load(config, seed_override)?;
    let out = resolve_out(out_flag, cfg.out_dir.as_deref())?;
    let mut csv = String::from("lambda,final_L_ratio\n");
    let mut successes = 0;
    for (i, &lambda) in lambdas.iter().enumerate() {
        let mut run = RunConfig {
            system: cfg.system.clone(),
            shape: cfg.shape,
            train: cfg.train.clone(),
            out_dir: cfg.out_dir.clone(),
            seed: cfg.seed,
        };
        run.train.lambda = lambda;
        let ckpt = out.join(format!("model_lambda_{i}.ckpt"));
        let value = match train_once(&run, &ckpt) {
            Ok(outcome) if outcome.record.aborted_at.is_none() => {
                match eval_l_ratio(&outcome.model, &run.system, &run.train, 4) {
                    Ok(v) => {
                        successes += 1;
                        v
                    }
                    Err(e) => {
                        eprintln!("lambda={lambda}: evaluation failed: {e}");
                        f64::NAN
                    }
                }
            }
            Ok(outcome) => {
                eprintln!(
                    "lambda={lambda}: training aborted at iteration {}",
                    outcome.record.aborted_at.unwrap()
                );
                f64::NAN
            }
            Err(e) => {
                eprintln!("lambda={lambda}: {e}");
                f64::NAN
            }
        };
        println!("lambda={lambda} final_L_ratio={value}");
        csv.push_str(&format!("{},{}\n", fmt_f64(lambda), fmt_f64(value)));
    }
    write_text(&out.join("sweep.csv"), &csv)?;
    Ok(if successes > 0 { 0 } else { 3 })
}

pub enum LocateMode {
    Levelset2d,
    Seedpoint,
}

pub fn cmd_locate(
    checkpoint: &str,
    system: &str,
    mode: LocateMode,
    grid: usize,
    bbox: Option<&str>,
    seed: u64,
    out_flag: Option<&Path>,
) -> Result<i32> {
    let s = parse_system_arg(system)?;
    let handle = FieldHandle::open(checkpoint, &s)?;
    let field = handle.field();
    match mode {
        LocateMode::Seedpoint => {
            let att = attractors_of(&s, seed)?;
            let (a, b) = exactly_two(&att)?;
            let p = find_separatrix_point(&s, &att, &a.representative, &b.representative, 1e-3)?;
            println!("seed_point={}", join_floats(&p));
            Ok(0)
        }
        LocateMode::Levelset2d => {
            let out = resolve_out(out_flag, None)?;
            let bbox = match bbox {
                Some(b) => parse_bbox(b)?,
                None if s.n == 2 => default_bbox_2d(&s),
                None => {
                    let att = attractors_of(&s, seed)?;
                    let (_, _, _, scale) = attractor_frame(&att)?;
                    ([-scale, -scale], [scale, scale])
                }
            };
            let polylines = if s.n == 2 {
                trace_zero_level_2d(field, bbox, grid)?
            } else if s.n > 2 {
                let att = attractors_of(&s, seed)?;
                let (origin, u, v, _) = attractor_frame(&att)?;
                let slice = SliceField::new(field, origin, u, v)?;
                eprintln!("tracing on the 2D slice through the attractor midpoint");
                trace_zero_level_2d(&slice, bbox, grid)?
            } else {
                return Err(Error::InvalidInput(
                    "levelset2d needs a system of dimension >= 2".into(),
                ));
            };
            let path = out.join("levelset.csv");
            write_text(&path, &levelset_csv(&polylines))?;
            let points: usize = polylines.iter().map(Vec::len).sum();
            println!("levelset={} polylines={} points={points}", path.display(), polylines.len());
            Ok(0)
        }
    }
}

pub fn cmd_curves(
    checkpoint: &str,
    system: &str,
    n_curves: usize,
    sigma: f64,
    grid: usize,
    seed: u64,
    out_flag: Option<&Path>,
) -> Result<i32> {
    let s = parse_system_arg(system)?;
    let handle = FieldHandle::open(checkpoint, &s)?;
    let field = handle.field();
    let att = attractors_of(&s, seed)?;
    let (a, b) = exactly_two(&att)?;
    let nonneg = |p: &[f64]| p.iter().all(|v| *v >= 0.0);
    let constraint: Option<&dyn Fn(&[f64]) -> bool> =
        if s.name == "glv" { Some(&nonneg) } else { None };
    let curves = make_curves(
        &a.representative,
        &b.representative,
        sigma,
        n_curves,
        seed,
        constraint,
    )?;
    let out = resolve_out(out_flag, None)?;
    let mut crossings: Vec<CurveCrossing> = Vec::new();
    let mut failed = 0usize;
    for (id, curve) in curves.iter().enumerate() {
        match curve_crossings(&s, &att, field, curve, id, grid) {
            Ok(c) => crossings.push(c),
            Err(e) => {
                eprintln!("curve {id}: {e}");
                failed += 1;
            }
        }
    }
    write_text(&out.join("crossings.csv"), &crossings_detail_csv(&crossings))?;
    write_text(&out.join("crossings_summary.csv"), &crossings_summary_csv(&crossings))?;
    if 2 * failed > n_curves {
        eprintln!("{failed}/{n_curves} curves failed to cross the separatrix");
        return Ok(4);
    }
    let misses = crossings.iter().filter(|c| c.alpha_pred.is_none()).count();
    if misses > 0 {
        eprintln!("{misses}/{} curves have no field sign change (misses)", crossings.len());
    }
    let r2 = curve_r2(&crossings).unwrap_or(f64::NAN);
    println!("curve_r2={r2}");
    Ok(0)
}

pub fn cmd_perturb(
    checkpoint: &str,
    system: &str,
    x_base: &str,
    target: Option<usize>,
    seed: u64,
    out_flag: Option<&Path>,
) -> Result<i32> {
    let s = parse_system_arg(system)?;
    let handle = FieldHandle::open(checkpoint, &s)?;
    let field = handle.field();
    let att = attractors_of(&s, seed)?;
    let x_base = parse_f64_list(x_base).map_err(Error::InvalidInput)?;
    if x_base.len() != s.n {
        return Err(Error::InvalidInput(format!(
            "x_base has {} coordinates but system {} is {}D",
            x_base.len(),
            s.name,
            s.n
        )));
    }
    let base_id = match classify_basin(&s, &x_base, &att) {
        BasinLabel::Attractor(id) => id,
        other => {
            return Err(Error::Geometry(format!("x_base classified as {other:?}")));
        }
    };
    let target = match target {
        Some(t) if t >= att.len() => {
            return Err(Error::InvalidInput(format!("no attractor with id {t}")))
        }
        Some(t) if t == base_id => {
            return Err(Error::InvalidInput("x_base already lies in the target basin".into()))
        }
        Some(t) => t,
        None => {
            let (a, b) = exactly_two(&att)?;
            if base_id == a.id {
                b.id
            } else {
                a.id
            }
        }
    };
    let delta = min_perturbation(field, &s, &att, &x_base, target)?;
    let delta_norm = norm(&delta);
    let p_aim = find_separatrix_point(&s, &att, &x_base, &att[target].representative, 1e-3)?;
    let aim_norm = norm(&vec_diff(&p_aim, &x_base));
    let targets = random_separatrix_targets(&s, &att, &x_base, target, 20, seed)?;
    let baseline_norms: Vec<f64> =
        targets.iter().map(|p| norm(&vec_diff(p, &x_base))).collect();
    let out = resolve_out(out_flag, None)?;
    let report = format!(
        "x_base = {}\ntarget = {target}\ndelta = {}\nnorm = {}\nverified_basin = {target}\n\
         delta_aim_norm = {}\nbaseline_norms = {}\n",
        join_floats(&x_base),
        join_floats(&delta),
        fmt_f64(delta_norm),
        fmt_f64(aim_norm),
        join_floats(&baseline_norms),
    );
    write_text(&out.join("perturbation.txt"), &report)?;
    println!("delta_norm={delta_norm}");
    Ok(0)
}

pub fn cmd_basins(
    system: &str,
    bbox: Option<&str>,
    grid: usize,
    seed: u64,
    out_flag: Option<&Path>,
) -> Result<i32> {
    let s = parse_system_arg(system)?;
    let att = attractors_of(&s, seed)?;
    let map = match s.n {
        2 => {
            let bbox = match bbox {
                Some(b) => parse_bbox(b)?,
                None => default_bbox_2d(&s),
            };
            brute_force_basin_map(&s, &att, bbox, grid)?
        }
        1 => {
            // columns of a degenerate slice: x varies, the second axis is dead
            let bbox = match bbox {
                Some(b) => parse_bbox(b)?,
                None => ([s.ic_box.0[0], 0.0], [s.ic_box.1[0], 1.0]),
            };
            brute_force_basin_map_slice(&s, &att, &[0.0], &[1.0], &[0.0], bbox, grid)?
        }
        _ => {
            let (origin, u, v, scale) = attractor_frame(&att)?;
            let bbox = match bbox {
                Some(b) => parse_bbox(b)?,
                None => ([-scale, -scale], [scale, scale]),
            };
            eprintln!("mapping the 2D slice through the attractor midpoint");
            brute_force_basin_map_slice(&s, &att, &origin, &u, &v, bbox, grid)?
        }
    };
    let out = resolve_out(out_flag, None)?;
    let csv_path = out.join("basins.csv");
    write_text(&csv_path, &map.to_csv())?;
    write_text(&out.join("attractors.json"), &map.attractor_sidecar())?;
    println!("basin_map={} n={grid} attractors={}", csv_path.display(), att.len());
    Ok(0)
}
