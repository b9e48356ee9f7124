//! Acceptance suite. Runs every criterion in sequence (timings would be
//! skewed by concurrent tests) and prints one PASS/FAIL line each. Exits
//! nonzero if any hard criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mgmp::bench::{self, CellKey, ExperimentSpec, RunRecord};
use mgmp::costmodel::{self, DatasetConfig, Featurizer, FeaturizerConfig, GbtParams, Target};
use mgmp::dynamics::{simulate, Action, RobotModel, State};
use mgmp::geom::{normalize_angle, point_in_polygon, polygons_overlap, Point2, Polygon};
use mgmp::planner::{self, CostKind, Guidance, PlanError, PlannerConfig, SingleGoalMp, TrajectoryFile};
use mgmp::scene::{self, RandomInstanceSpec};
use mgmp::stats;
use mgmp::tsp::{self, CostMatrix};

struct Outcome {
    id: &'static str,
    hard: bool,
    pass: bool,
    detail: String,
}

fn report(id: &'static str, hard: bool, pass: bool, started: Instant, detail: String) -> Outcome {
    let verdict = match (pass, hard) {
        (true, _) => "PASS",
        (false, true) => "FAIL",
        (false, false) => "FAIL (soft)",
    };
    println!("[{verdict}] {id}: {detail} [{:.2} s]", started.elapsed().as_secs_f64());
    Outcome { id, hard, pass, detail }
}

// ---------------------------------------------------------------------------
// 1. Dynamics fidelity

fn euler(s: State, a: Action, wheelbase: f64, horizon: f64, h: f64) -> [f64; 5] {
    let steps = (horizon / h).round() as usize;
    let [mut x, mut y, mut th, mut psi, mut v] = [s.x, s.y, s.theta, s.psi, s.v];
    for _ in 0..steps {
        let (dx, dy, dth) = (v * th.cos() * psi.cos(), v * th.sin() * psi.cos(), v * psi.sin() / wheelbase);
        x += h * dx;
        y += h * dy;
        th += h * dth;
        psi += h * a.steer_rate;
        v += h * a.acc;
    }
    [x, y, th, psi, v]
}

fn component_error(s: &State, r: [f64; 5]) -> f64 {
    let d = [s.x - r[0], s.y - r[1], normalize_angle(s.theta - r[2]), s.psi - r[3], s.v - r[4]];
    d.iter().fold(0.0, |m, e| m.max(e.abs()))
}

/// Random state and action that stay inside every limit for `horizon`.
fn unclamped_case(rng: &mut ChaCha8Rng, horizon: f64) -> (State, Action) {
    let (acc, steer) = (0.5 / horizon.max(1.0), 0.2 / horizon.max(1.0));
    let a = Action::new(rng.gen_range(-acc..acc), rng.gen_range(-steer..steer));
    let s = State::new(
        rng.gen_range(0.0..100.0),
        rng.gen_range(0.0..100.0),
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-0.45..0.45),
        rng.gen_range(1.0..2.4),
    );
    (s, a)
}

fn criterion_dynamics() -> Outcome {
    let t0 = Instant::now();
    let model = RobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (s, a) = unclamped_case(&mut rng, model.dt);
        let rk4 = simulate(&s, &a, &model);
        worst = worst.max(component_error(&rk4, euler(s, a, model.wheelbase, model.dt, 1e-5)));
    }

    // global error over a fixed horizon at h and h/2 against a fine reference
    let horizon = 1.0;
    let global_error = |s: State, a: Action, h: f64| {
        let m = RobotModel { dt: h, ..RobotModel::default() };
        let mut cur = s;
        for _ in 0..(horizon / h).round() as usize {
            cur = simulate(&cur, &a, &m);
        }
        let fine = RobotModel { dt: h / 64.0, ..RobotModel::default() };
        let mut reference = s;
        for _ in 0..(64.0 * horizon / h).round() as usize {
            reference = simulate(&reference, &a, &fine);
        }
        component_error(&cur, reference.to_array())
    };
    let mut ratios = Vec::new();
    for _ in 0..20 {
        let (s, a) = unclamped_case(&mut rng, horizon);
        let e1 = global_error(s, a, 0.1);
        let e2 = global_error(s, a, 0.05);
        if e2 > 1e-13 {
            ratios.push(e1 / e2);
        }
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    let elapsed = t0.elapsed().as_secs_f64();
    let pass = worst <= 1e-6 && (12.0..=20.0).contains(&median) && elapsed < 1.0;
    report(
        "1 dynamics fidelity",
        true,
        pass,
        t0,
        format!("max |rk4 - euler(1e-5)| = {worst:.2e} (<= 1e-6), median error ratio on dt halving = {median:.2} (~16), runtime < 1 s"),
    )
}

// ---------------------------------------------------------------------------
// 2. Geometry oracles

fn random_polygon(rng: &mut ChaCha8Rng) -> Polygon {
    let n = rng.gen_range(3..9);
    let c = Point2::new(rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0));
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    angles.sort_by(f64::total_cmp);
    loop {
        let pts: Vec<Point2> = angles
            .iter()
            .map(|&t| {
                let r = rng.gen_range(1.0..6.0);
                Point2::new(c.x + r * t.cos(), c.y + r * t.sin())
            })
            .collect();
        if let Ok(p) = Polygon::new(pts) {
            return p;
        }
    }
}

/// Winding number by summed signed angles.
fn winding_inside(p: Point2, poly: &Polygon) -> bool {
    let v = poly.vertices();
    let mut total = 0.0;
    for i in 0..v.len() {
        let a = v[i] - p;
        let b = v[(i + 1) % v.len()] - p;
        total += (a.x * b.y - a.y * b.x).atan2(a.x * b.x + a.y * b.y);
    }
    total.abs() > PI
}

/// Parametric solve of the two segment lines.
fn segments_cross(p: Point2, q: Point2, r: Point2, s: Point2) -> bool {
    let (d1, d2) = (q - p, s - r);
    let det = d1.x * (-d2.y) - d1.y * (-d2.x);
    if det == 0.0 {
        return false;
    }
    let w = r - p;
    let t = (w.x * (-d2.y) - w.y * (-d2.x)) / det;
    let u = (d1.x * w.y - d1.y * w.x) / det;
    (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)
}

fn overlap_oracle(a: &Polygon, b: &Polygon) -> bool {
    let (va, vb) = (a.vertices(), b.vertices());
    for i in 0..va.len() {
        for j in 0..vb.len() {
            if segments_cross(va[i], va[(i + 1) % va.len()], vb[j], vb[(j + 1) % vb.len()]) {
                return true;
            }
        }
    }
    va.iter().any(|&p| winding_inside(p, b)) || vb.iter().any(|&p| winding_inside(p, a))
}

fn criterion_geometry() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pip_disagree = 0;
    let mut inside_count = 0;
    for _ in 0..1000 {
        let poly = random_polygon(&mut rng);
        let p = Point2::new(rng.gen_range(-2.0..22.0), rng.gen_range(-2.0..22.0));
        let expect = winding_inside(p, &poly);
        inside_count += expect as usize;
        pip_disagree += (point_in_polygon(p, &poly) != expect) as usize;
    }
    let mut overlap_disagree = 0;
    let mut overlapping = 0;
    for _ in 0..1000 {
        let a = random_polygon(&mut rng);
        let b = random_polygon(&mut rng);
        let expect = overlap_oracle(&a, &b);
        overlapping += expect as usize;
        overlap_disagree += (polygons_overlap(&a, &b) != expect) as usize;
    }
    let pass = pip_disagree == 0 && overlap_disagree == 0 && t0.elapsed().as_secs_f64() < 5.0;
    report(
        "2 geometry oracle equivalence",
        true,
        pass,
        t0,
        format!(
            "point_in_polygon {pip_disagree}/1000 disagreements ({inside_count} inside), polygons_overlap {overlap_disagree}/1000 ({overlapping} overlapping), runtime < 5 s"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. TSP quality

fn criterion_tsp() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut gaps = Vec::new();
    let mut heuristic_gaps = Vec::new();
    let mut worse_than_nn = 0;
    for k in 0..100 {
        let size = 4 + k % 6;
        let m = CostMatrix::from_fn(size, |i, j| if i == j { 0.0 } else { rng.gen_range(1.0..100.0) }).unwrap();
        let opt = tsp::brute_force_open_tour(&m).unwrap().cost;
        let got = tsp::solve_open_tour(&m).cost;
        let nn = tsp::nearest_neighbor_tour(&m).cost;
        worse_than_nn += (got > nn + 1e-9) as usize;
        gaps.push(got / opt - 1.0);
        heuristic_gaps.push(tsp::heuristic_open_tour(&m).cost / opt - 1.0);
    }
    let mean = stats::mean(&gaps).unwrap();
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    let h_mean = stats::mean(&heuristic_gaps).unwrap();
    let h_worst = heuristic_gaps.iter().copied().fold(0.0, f64::max);
    let pass = mean <= 0.05 && worst <= 0.15 && worse_than_nn == 0 && t0.elapsed().as_secs_f64() < 10.0;
    report(
        "3 TSP quality",
        true,
        pass,
        t0,
        format!(
            "mean gap {:.3}% (<= 5%), worst gap {:.3}% (<= 15%), worse than nearest neighbor {worse_than_nn}/100, runtime < 10 s; local search alone: mean {:.3}%, worst {:.3}%",
            100.0 * mean,
            100.0 * worst,
            100.0 * h_mean,
            100.0 * h_worst
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. GBT training

fn criterion_gbt() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise_std = 0.5;
    let normal = |rng: &mut ChaCha8Rng| {
        let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    };
    let f = |x: &[f64]| ((x[0] - 4.0).powi(2) + (x[1] - 6.0).powi(2)).sqrt();
    let x: Vec<Vec<f64>> = (0..500).map(|_| vec![rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)]).collect();
    let y: Vec<f64> = x.iter().map(|xi| f(xi) + noise_std * normal(&mut rng)).collect();
    let (train, test) = costmodel::split_instances(500, 0.8, 4);
    let xs: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let params = GbtParams { rounds: 48, learning_rate: 0.5, max_leaves: 16, max_depth: 12, ..GbtParams::default() };
    let (model, rep) = costmodel::fit_gbt(&xs, &ys, &params).unwrap();
    let mse = test.iter().map(|&i| (model.predict_raw(&x[i]) - y[i]).powi(2)).sum::<f64>() / test.len() as f64;
    let rmse = mse.sqrt();
    let monotone = rep.loss_per_round.windows(2).all(|w| w[1] <= w[0]);
    let pass = rmse <= 2.0 * noise_std && monotone && rep.loss_per_round.len() == 49 && t0.elapsed().as_secs_f64() < 30.0;
    report(
        "4 GBT training",
        true,
        pass,
        t0,
        format!(
            "test RMSE {rmse:.3} (<= {:.3}), training loss non-increasing over 48 rounds: {monotone}, runtime < 30 s",
            2.0 * noise_std
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Trimmed mean

fn runtime_record(i: usize, runtime: f64) -> RunRecord {
    RunRecord {
        key: CellKey { method: CostKind::Rm, scene: 0, goals: 5, instance: i },
        solved: true,
        runtime,
        distance: Some(1.0),
        phases: None,
    }
}

fn criterion_trimmed_mean() -> Outcome {
    let t0 = Instant::now();
    let mut records: Vec<RunRecord> = (1..=10).map(|t| runtime_record(t, t as f64)).collect();
    let base = bench::trimmed_stats(&records, 0.2).unwrap().mean_runtime;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut invariant = true;
    for _ in 0..100 {
        records.shuffle(&mut rng);
        let values: Vec<f64> = records.iter().map(|r| r.runtime).collect();
        invariant &= bench::trimmed_stats(&records, 0.2).unwrap().mean_runtime == base;
        invariant &= stats::trimmed_mean(&values, 0.2) == Some(base);
    }
    let pass = base == 5.5 && invariant;
    report(
        "5 trimmed mean",
        true,
        pass,
        t0,
        format!("[1..10] at 20% trim = {base} (exactly 5.5), invariant over 100 shuffles: {invariant}"),
    )
}

// ---------------------------------------------------------------------------
// 6, 9, 10. End-to-end planning, partition audits, phase accounting

struct PlanningRuns {
    solved: usize,
    total: usize,
    invalid: Vec<String>,
    audits: u64,
    violations: usize,
    worst_phase_gap: f64,
}

fn desk_scene(layout: u64, goals: usize, goal_seed: u64) -> scene::Scene {
    scene::generate_scene(&RandomInstanceSpec { seed: layout, goal_seed: Some(goal_seed), goal_count: goals, ..Default::default() })
        .expect("desk-scale scene")
}

fn planning_runs() -> (PlanningRuns, f64) {
    let t0 = Instant::now();
    let mut out = PlanningRuns { solved: 0, total: 0, invalid: Vec::new(), audits: 0, violations: 0, worst_phase_gap: 0.0 };
    for k in 0..20u64 {
        let scene = desk_scene(600 + k, 5, 700 + k);
        let config = PlannerConfig { seed: k, t_max: 30.0, audit_every: Some(100), ..Default::default() };
        out.total += 1;
        let report = match planner::plan_with(&scene, &config, Guidance::Roadmap, None, planner::Profiler::new(true)) {
            Ok(sol) => {
                out.solved += 1;
                if let Err(e) = planner::validate_trajectory(&scene, &sol.trajectory) {
                    out.invalid.push(format!("scene {k}: {e}"));
                }
                sol.report
            }
            Err(PlanError::Timeout(r)) => *r,
            Err(e) => panic!("planning error on scene {k}: {e}"),
        };
        out.audits += report.audits;
        out.violations += report.audit_violations;
        let phases = report.phases.expect("profiling enabled");
        out.worst_phase_gap = out.worst_phase_gap.max((phases.sum() - report.runtime).abs() / report.runtime);
    }
    (out, t0.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------------------
// 7. ML guidance

const ML_LAYOUTS: [u64; 2] = [100, 101];

fn train_models(root: &Path) -> Vec<String> {
    let mut tables = Vec::new();
    for &layout in &ML_LAYOUTS {
        let base = desk_scene(layout, 10, layout);
        let mp = SingleGoalMp::new(&base, PlannerConfig::default()).unwrap();
        let config = DatasetConfig {
            omega_count: 40,
            runs_per_pair: 10,
            time_limit: 2.0,
            max_pairs: Some(150),
            seed: layout,
            parallel: true,
            ..Default::default()
        };
        let ds = costmodel::generate_dataset(&base, &mp, &config).unwrap();
        let featurizer = Featurizer::new(&base, FeaturizerConfig::default()).unwrap();
        let (train, test) = costmodel::split_instances(ds.instances.len(), 0.8, layout);
        let held_out: Vec<_> = test.iter().map(|&i| ds.instances[i]).collect();
        let dir = root.join(format!("scene-{layout}"));
        fs::create_dir_all(&dir).unwrap();
        for target in [Target::Distance, Target::Runtime] {
            let (model, _) = costmodel::train_gbt(&ds, &train, &featurizer, target, &GbtParams::default()).unwrap();
            let row: Vec<String> = costmodel::accuracy_table(&model, &featurizer, &held_out, &[0.1, 0.2, 0.3, 0.4])
                .iter()
                .map(|r| format!("{:.0}%:{:.0}%", 100.0 * r.tolerance, 100.0 * r.within))
                .collect();
            tables.push(format!("      layout {layout} {target:>8} within {}", row.join(" ")));
            // deployed models use every instance
            let all: Vec<usize> = (0..ds.instances.len()).collect();
            let (model, _) = costmodel::train_gbt(&ds, &all, &featurizer, target, &GbtParams::default()).unwrap();
            model.save(dir.join(costmodel::model_file_name(target))).unwrap();
        }
    }
    tables
}

fn trimmed_runtime(records: &[RunRecord], method: CostKind, trim: f64) -> f64 {
    let rs: Vec<RunRecord> = records.iter().filter(|r| r.key.method == method).cloned().collect();
    bench::trimmed_stats(&rs, trim).unwrap().mean_runtime
}

fn criterion_ml(phase_gaps: &mut Vec<f64>) -> Outcome {
    let t0 = Instant::now();
    let work = tempfile::tempdir().unwrap();
    let models = work.path().join("models");
    let tables = train_models(&models);
    let train_time = t0.elapsed().as_secs_f64();

    let spec = ExperimentSpec {
        scene_seeds: ML_LAYOUTS.to_vec(),
        goal_counts: vec![10],
        instances_per_cell: 10,
        methods: vec![CostKind::Ml, CostKind::Rm],
        time_limit: 30.0,
        trim: 0.2,
        seed: 7,
        model_dir: Some(models),
        timing: true,
        sequential: true,
        ..Default::default()
    };
    let base = bench::run_experiment(&spec, &work.path().join("alpha-0.9")).unwrap();
    let mut ml_at = Vec::new();
    for alpha in [0.0, 1.0] {
        let s = ExperimentSpec { methods: vec![CostKind::Ml], planner: PlannerConfig { alpha, ..Default::default() }, ..spec.clone() };
        ml_at.push(trimmed_runtime(&bench::run_experiment(&s, &work.path().join(format!("alpha-{alpha}"))).unwrap(), CostKind::Ml, 0.2));
    }
    for r in &base {
        let p = r.phases.unwrap();
        phase_gaps.push((p.sum() - r.runtime).abs() / r.runtime);
    }
    let ml = trimmed_runtime(&base, CostKind::Ml, 0.2);
    let rm = trimmed_runtime(&base, CostKind::Rm, 0.2);
    let vs_rm = ml / rm;
    let alpha_ok = ml <= 1.2 * ml_at[0] && ml <= 1.2 * ml_at[1];
    let pass = vs_rm <= 1.0 && alpha_ok;
    let mut detail = format!(
        "20 instances x 10 goals; trimmed runtime ML(0.9) {ml:.3} s vs RM {rm:.3} s = {vs_rm:.2}x (<= 1.0x); ML(0) {:.3} s, ML(1) {:.3} s, alpha 0.9 within 20% of both: {alpha_ok}; training {train_time:.0} s",
        ml_at[0], ml_at[1]
    );
    if !pass {
        detail.push_str("\n    held-out accuracy (share of predictions within relative tolerance):\n");
        detail.push_str(&tables.join("\n"));
    }
    report("7 ML guidance benefit", false, pass, t0, detail)
}

// ---------------------------------------------------------------------------
// 8. Determinism

fn criterion_determinism() -> Outcome {
    let t0 = Instant::now();
    let spec = RandomInstanceSpec { seed: 42, goal_count: 6, ..Default::default() };
    let scenes_equal = scene::generate_scene(&spec).unwrap().to_json() == scene::generate_scene(&spec).unwrap().to_json();
    let scene = scene::generate_scene(&spec).unwrap();
    let mut files_equal = true;
    for kind in [CostKind::Rm, CostKind::Ed] {
        let config = PlannerConfig { seed: 9, ..Default::default() };
        let text = || {
            let guidance = if kind == CostKind::Rm { Guidance::Roadmap } else { Guidance::Euclidean };
            let sol = planner::plan(&scene, &config, guidance).unwrap();
            TrajectoryFile { scene_fingerprint: scene.fingerprint(), config: kind.to_string(), trajectory: sol.trajectory }.to_text()
        };
        files_equal &= text() == text();
    }
    let pass = scenes_equal && files_equal && t0.elapsed().as_secs_f64() < 60.0;
    report(
        "8 determinism",
        true,
        pass,
        t0,
        format!("scene files identical: {scenes_equal}, trajectory files identical (rm, ed): {files_equal}, runtime < 1 min"),
    )
}

fn main() {
    let mut outcomes = vec![
        criterion_dynamics(),
        criterion_geometry(),
        criterion_tsp(),
        criterion_gbt(),
        criterion_trimmed_mean(),
    ];

    let t6 = Instant::now();
    let (runs, elapsed) = planning_runs();
    let rate = runs.solved as f64 / runs.total as f64;
    outcomes.push(report(
        "6 end-to-end planning",
        true,
        rate >= 0.9 && runs.invalid.is_empty() && elapsed < 900.0,
        t6,
        format!(
            "RM solved {}/{} 5-goal scenes within 30 s (>= 90%), validator rejections {:?}, runtime < 15 min",
            runs.solved, runs.total, runs.invalid
        ),
    ));

    let mut phase_gaps = vec![runs.worst_phase_gap];
    outcomes.push(criterion_ml(&mut phase_gaps));
    outcomes.push(criterion_determinism());

    let t9 = Instant::now();
    outcomes.push(report(
        "9 partition invariant sweep",
        true,
        runs.audits > 0 && runs.violations == 0,
        t9,
        format!("{} audits every 100 iterations over criterion 6 runs, {} violations", runs.audits, runs.violations),
    ));

    let t10 = Instant::now();
    let worst = phase_gaps.iter().copied().fold(0.0, f64::max);
    outcomes.push(report(
        "10 runtime breakdown",
        true,
        worst <= 0.05,
        t10,
        format!("worst |sum(phases) - runtime| / runtime = {:.3}% over {} sequential runs (<= 5%)", 100.0 * worst, phase_gaps.len() - 1 + runs.total),
    ));

    let hard_failures: Vec<&Outcome> = outcomes.iter().filter(|o| o.hard && !o.pass).collect();
    let soft_failures = outcomes.iter().filter(|o| !o.hard && !o.pass).count();
    println!(
        "acceptance: {}/{} criteria pass ({} hard failures, {} soft failures)",
        outcomes.iter().filter(|o| o.pass).count(),
        outcomes.len(),
        hard_failures.len(),
        soft_failures
    );
    if !hard_failures.is_empty() {
        for o in hard_failures {
            eprintln!("failed: {} ({})", o.id, o.detail);
        }
        std::process::exit(1);
    }
}
