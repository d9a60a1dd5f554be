//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout. Set
//! `ACCEPTANCE_ONLY=1,2,7` to run a subset while iterating. Each criterion
//! writes its measurements to `<target tmp>/acceptance/criterion_<n>.csv`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rismeta_agents::farm::{encoder_separation, farm_train};
use rismeta_agents::gradcheck::{elbo_gradcheck, gaussian_head_gradcheck, mlp_gradcheck, GradCheck};
use rismeta_agents::toy::{ddpg_bandit_config, sac_bandit_config, train_ddpg_bandit, train_sac_bandit, OPTIMUM};
use rismeta_agents::trainer::make_envs;
use rismeta_agents::{Activation, FarmConfig, SacConfig};
use rismeta_core::baselines::{sfp_policy, zf_beamformer, zfr_policy, SfpSettings};
use rismeta_core::env::{decode_action, make_task_batch};
use rismeta_core::link::effective_channel;
use rismeta_core::numerics::matmul;
use rismeta_core::{ActionVector, Beamformer, ChannelModel, PhaseShift, Rng, SystemConfig};
use rismeta_harness::report::results_csv;
use rismeta_harness::{run_sweep, train_agents, ExperimentSpec, Method, Policies, Preset, ResultRow};

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
    csv: String,
}

fn feasible(w: &Beamformer, phase: &PhaseShift, p_max: f64) -> bool {
    w.tx_power() <= p_max + 1e-9 && phase.phasors().iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12)
}

/// Constraint suite.
fn criterion_1(seed: u64) -> Outcome {
    let mut rng = Rng::new(seed);
    let mut csv = String::from("source,decisions,violations\n");
    let mut violations = 0;
    let systems = [SystemConfig::table1(seed), SystemConfig::desk(seed)];
    let mut random = 0;
    for i in 0..10_000 {
        let sys = &systems[i % 2];
        // entries across six orders of magnitude
        let scale = 10f64.powf(rng.uniform_range(-3.0, 3.0));
        let a = ActionVector((0..rismeta_core::env::action_dim(sys)).map(|_| scale * rng.normal()).collect());
        let (w, phase) = decode_action(&a, sys).unwrap();
        random += 1;
        if !feasible(&w, &phase, sys.p_max) {
            violations += 1;
        }
    }
    writeln!(csv, "random_actions,{random},{violations}").unwrap();
    let mut bench = 0;
    let mut bench_bad = 0;
    for sys in [SystemConfig::desk(seed), SystemConfig::desk(seed).with_n_ris(16), SystemConfig::table1(seed).with_n_ris(16)] {
        let model = ChannelModel::new(sys.clone()).unwrap();
        for _ in 0..20 {
            let state = model.draw_state(&mut rng);
            let (w, phase) = zfr_policy(&state, &mut rng, &sys).unwrap();
            let sfp = sfp_policy(&state, &SfpSettings::default(), &sys).unwrap();
            for (w, p) in [(&w, &phase), (&sfp.w, &sfp.phase)] {
                bench += 1;
                if !feasible(w, p, sys.p_max) {
                    bench_bad += 1;
                }
            }
        }
    }
    writeln!(csv, "benchmark_decisions,{bench},{bench_bad}").unwrap();
    // every decision of a classical sweep goes through the environment audit
    let mut spec = ExperimentSpec::preset(Preset::Desk, seed);
    spec.methods = vec![Method::Zfr, Method::Sfp];
    spec.realizations = 5;
    spec.episode_len = 10;
    let sweep_ok = run_sweep(&spec, &Policies::new()).is_ok();
    writeln!(csv, "audited_sweep,{},{}", 3 * 2 * 5 * 10, if sweep_ok { 0 } else { 1 }).unwrap();
    Outcome {
        pass: violations == 0 && bench_bad == 0 && sweep_ok,
        detail: format!("{random} random + {bench} benchmark decisions, {} violations, audited sweep ok = {sweep_ok}", violations + bench_bad),
        csv,
    }
}

/// Zero-forcing suppresses inter-user interference.
fn criterion_2(seed: u64) -> Outcome {
    let sys = SystemConfig::desk(seed);
    let model = ChannelModel::new(sys.clone()).unwrap();
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    let mut csv = String::from("realization,relative_offdiag\n");
    for i in 0..100 {
        let state = model.draw_state(&mut rng);
        let phase = rismeta_core::baselines::random_phases(sys.n_ris, &mut rng);
        let h = effective_channel(&state, &phase).unwrap();
        let w = zf_beamformer(&h, sys.p_max).unwrap();
        let g = matmul(&h, &w.w).unwrap();
        let mut off = 0.0;
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                if r != c {
                    off += g.row(r)[c].norm_sqr();
                }
            }
        }
        let rel = off.sqrt() / g.frobenius();
        worst = worst.max(rel);
        writeln!(csv, "{i},{rel:e}").unwrap();
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("worst relative off-diagonal norm {worst:.2e} over 100 draws"),
        csv,
    }
}

/// AR(1) fidelity.
fn criterion_3(seed: u64) -> Outcome {
    let sys = SystemConfig::table1(seed).with_rho(0.95);
    let model = ChannelModel::new(sys).unwrap();
    let mut rng = Rng::new(seed);
    let steps = 20_000;
    let (mut e1, mut e2) = (0.0, 0.0);
    for _ in 0..steps {
        let s = model.draw_state(&mut rng);
        e1 += s.h1.frobenius_sq();
        e2 += s.h2.frobenius_sq();
    }
    let (e1, e2) = (e1 / steps as f64, e2 / steps as f64);
    let mean = model.h1_mean().clone();
    let scattered = |s: &rismeta_core::ChannelState| {
        let mut v = s.h1.sub(&mean).unwrap().as_slice().to_vec();
        v.extend_from_slice(s.h2.as_slice());
        v
    };
    let mut s = model.draw_state(&mut rng);
    let mut prev = scattered(&s);
    let (mut cross, mut power, mut p1, mut p2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..steps {
        s = model.ar_step(&s, &mut rng).unwrap();
        let cur = scattered(&s);
        for (a, b) in prev.iter().zip(&cur) {
            cross += (a.conj() * b).re;
            power += a.norm_sqr();
        }
        p1 += s.h1.frobenius_sq();
        p2 += s.h2.frobenius_sq();
        prev = cur;
    }
    let lag1 = cross / power;
    let r1 = p1 / steps as f64 / e1;
    let r2 = p2 / steps as f64 / e2;
    let csv = format!("metric,value\nlag1_autocorrelation,{lag1}\nh1_power_ratio,{r1}\nh2_power_ratio,{r2}\n");
    Outcome {
        pass: (lag1 - 0.95).abs() <= 0.02 && (r1 - 1.0).abs() <= 0.05 && (r2 - 1.0).abs() <= 0.05,
        detail: format!("lag-1 {lag1:.4}, trajectory/ensemble power H1 {r1:.4}, H2 {r2:.4}"),
        csv,
    }
}

/// Gradient checks.
fn criterion_4(seed: u64) -> Outcome {
    let checks: Vec<GradCheck> = vec![
        mlp_gradcheck(Activation::Relu, seed).unwrap(),
        mlp_gradcheck(Activation::Tanh, seed + 1).unwrap(),
        gaussian_head_gradcheck(seed + 2),
        elbo_gradcheck(seed + 3).unwrap(),
    ];
    let mut csv = String::from("tensor,max_rel_error,coordinates\n");
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for c in &checks {
        for (name, err, n) in &c.tensors {
            writeln!(csv, "{name},{err:e},{n}").unwrap();
        }
        worst = worst.max(c.max_rel_error());
        coords += c.coordinates();
    }
    Outcome {
        pass: worst <= 1e-4,
        detail: format!("{coords} coordinates, worst relative error {worst:.2e}"),
        csv,
    }
}

/// SFP monotonicity and ordering over ZFR.
fn criterion_5(seed: u64) -> Outcome {
    let sys = SystemConfig::desk(seed).with_n_ris(16);
    let model = ChannelModel::new(sys.clone()).unwrap();
    let mut monotone = 0;
    let (mut sfp_sum, mut zfr_sum) = (0.0, 0.0);
    let mut csv = String::from("seed,sfp,zfr,iterations\n");
    for i in 0..100u64 {
        let state = model.draw_state(&mut Rng::with_stream(seed, i));
        let out = sfp_policy(&state, &SfpSettings::default(), &sys).unwrap();
        if out.trace.windows(2).all(|w| w[1] >= w[0]) {
            monotone += 1;
        }
        let (w, phase) = zfr_policy(&state, &mut Rng::with_stream(seed, 1 << 32 | i), &sys).unwrap();
        let zfr = rismeta_core::env::reward(&state, &w, &phase, sys.noise_power()).unwrap();
        let sfp = *out.trace.last().unwrap();
        sfp_sum += sfp;
        zfr_sum += zfr;
        writeln!(csv, "{i},{sfp},{zfr},{}", out.trace.len() - 1).unwrap();
    }
    Outcome {
        pass: monotone == 100 && sfp_sum > zfr_sum,
        detail: format!("monotone {monotone}/100, mean SFP {:.4} vs ZFR {:.4}", sfp_sum / 100.0, zfr_sum / 100.0),
        csv,
    }
}

/// Classical sum rates grow with the surface size at full scale.
fn criterion_6(seed: u64) -> Outcome {
    let spec = ExperimentSpec::preset(Preset::Table1, seed);
    let rows = run_sweep(&spec, &Policies::new()).unwrap();
    let increasing = |m: Method| {
        let means: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.mean).collect();
        means.len() == 3 && means.windows(2).all(|w| w[1] > w[0])
    };
    let fmt = |m: Method| {
        rows.iter()
            .filter(|r| r.method == m)
            .map(|r| format!("{:.3}", r.mean))
            .collect::<Vec<_>>()
            .join(" < ")
    };
    Outcome {
        pass: increasing(Method::Sfp) && increasing(Method::Zfr),
        detail: format!("N = 16/32/64, 100 realizations: SFP {}; ZFR {}", fmt(Method::Sfp), fmt(Method::Zfr)),
        csv: results_csv(&rows).unwrap(),
    }
}

/// Toy bandit for both actor-critic learners.
fn criterion_7(seed: u64) -> Outcome {
    let sac = train_sac_bandit(seed, 5_000, sac_bandit_config()).unwrap();
    let ddpg = train_ddpg_bandit(seed, 5_000, ddpg_bandit_config()).unwrap();
    let tol = 0.05 * OPTIMUM;
    let mut csv = String::from("learner,updates,action\n");
    for (name, run) in [("SAC", &sac), ("DDPG", &ddpg)] {
        for (i, a) in run.trace.iter().enumerate() {
            writeln!(csv, "{name},{},{a}", 500 * (i + 1)).unwrap();
        }
    }
    Outcome {
        pass: (sac.final_action - OPTIMUM).abs() <= tol && (ddpg.final_action - OPTIMUM).abs() <= tol,
        detail: format!(
            "after 5000 updates SAC a = {:.4}, DDPG a = {:.4} (target {OPTIMUM} ± {tol})",
            sac.final_action, ddpg.final_action
        ),
        csv,
    }
}

struct DeskRun {
    rows: Vec<ResultRow>,
    longest_training: Duration,
}

fn desk_run(seed: u64, epochs: usize) -> DeskRun {
    let mut spec = ExperimentSpec::preset(Preset::Desk, seed);
    spec.values = vec![0.8, 0.99];
    spec.methods = vec![Method::Zfr, Method::Ddpg, Method::Farm];
    spec.training = spec.training.with_epochs(epochs);
    let mut last = Instant::now();
    let mut longest = Duration::ZERO;
    let trained = train_agents(&spec, &mut |_| {
        longest = longest.max(last.elapsed());
        last = Instant::now();
    })
    .unwrap();
    DeskRun {
        rows: run_sweep(&spec, &trained.policies).unwrap(),
        longest_training: longest,
    }
}

fn mean_of(rows: &[ResultRow], m: Method, rho: f64) -> f64 {
    rows.iter().find(|r| r.method == m && r.sweep_value == rho).map(|r| r.mean).unwrap()
}

/// Desk-scale ordering of the meta-agent against DDPG and ZFR.
fn criterion_8(seed: u64, epochs: usize) -> Outcome {
    let mut csv = String::new();
    let mut held = 0;
    let mut notes = Vec::new();
    let mut longest = Duration::ZERO;
    for s in 0..3 {
        let run = desk_run(seed + s, epochs);
        longest = longest.max(run.longest_training);
        let (farm, ddpg, zfr) = (
            mean_of(&run.rows, Method::Farm, 0.8),
            mean_of(&run.rows, Method::Ddpg, 0.8),
            mean_of(&run.rows, Method::Zfr, 0.8),
        );
        let gap_fast = farm - ddpg;
        let gap_slow = mean_of(&run.rows, Method::Farm, 0.99) - mean_of(&run.rows, Method::Ddpg, 0.99);
        let ok = farm >= ddpg && farm >= zfr && farm >= 1.1 * ddpg && gap_fast > gap_slow;
        held += ok as usize;
        notes.push(format!(
            "seed {}: FARM {farm:.4} DDPG {ddpg:.4} ZFR {zfr:.4} gap(0.8) {gap_fast:+.4} gap(0.99) {gap_slow:+.4} {}",
            seed + s,
            if ok { "ok" } else { "no" }
        ));
        csv.push_str(&results_csv(&run.rows).unwrap());
    }
    let budget = Duration::from_secs(30 * 60);
    Outcome {
        pass: held >= 2 && longest <= budget,
        detail: format!(
            "{held}/3 seeds hold, longest training run {:.0}s\n    {}",
            longest.as_secs_f64(),
            notes.join("\n    ")
        ),
        csv,
    }
}

/// Encoder separates two frozen tasks.
fn criterion_9(seed: u64) -> Outcome {
    let system = SystemConfig::desk(seed).with_rho(1.0 - 1e-12);
    let tasks = make_task_batch(seed, 2, &system).unwrap();
    let cfg = FarmConfig {
        components: 4,
        latent_dim: 4,
        encoder_hidden: vec![64],
        embed_dim: 32,
        decoder_hidden: vec![64],
        context_len: 16,
        sac: SacConfig {
            hidden: vec![64, 64],
            gamma: 0.0,
            reward_scale: 10.0,
            batch_size: 64,
            ..SacConfig::default()
        },
        epochs: 10,
        episode_len: 50,
        elbo_steps: 20,
        elbo_tasks: 4,
        sac_steps: 50,
        eval_len: 0,
        seed,
        ..FarmConfig::default()
    };
    let (agent, _) = farm_train(&tasks, &system, &cfg, None).unwrap();
    let envs = make_envs(&system, &tasks, cfg.context_len).unwrap();
    let sep = encoder_separation(&agent, &envs, 20, &mut Rng::new(seed)).unwrap();
    Outcome {
        pass: sep.inter > sep.intra,
        detail: format!("inter-task {:.4} vs intra-task {:.4} (20 contexts per task)", sep.inter, sep.intra),
        csv: format!("metric,value\nintra,{}\ninter,{}\n", sep.intra, sep.inter),
    }
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

type Criterion = fn(u64) -> Outcome;

fn criteria() -> Vec<(usize, Criterion, Duration)> {
    vec![
        (1, criterion_1 as Criterion, Duration::from_secs(10)),
        (2, criterion_2, Duration::from_secs(5)),
        (3, criterion_3, Duration::from_secs(30)),
        (4, criterion_4, Duration::from_secs(60)),
        (5, criterion_5, Duration::from_secs(120)),
        (6, criterion_6, Duration::from_secs(600)),
        (7, criterion_7, Duration::from_secs(240)),
        (8, |s| criterion_8(s, 30), Duration::MAX),
        (9, criterion_9, Duration::from_secs(600)),
    ]
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().map_or(true, |o| o.contains(&n));
    let dir = out_dir();
    let mut failures = 0;
    let mut csvs = Vec::new();
    for (n, run, limit) in criteria() {
        if !wanted(n) {
            continue;
        }
        let clock = Instant::now();
        let out = run(SEED);
        let took = clock.elapsed();
        let in_time = took <= limit;
        let pass = out.pass && in_time;
        failures += !pass as usize;
        std::fs::write(dir.join(format!("criterion_{n}.csv")), &out.csv).unwrap();
        csvs.push((n, out.csv));
        println!(
            "criterion {n}: {} {} [{:.1}s{}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            if in_time { String::new() } else { format!(" exceeds {}s", limit.as_secs()) }
        );
    }
    if wanted(10) {
        // rerun every criterion with the same seed; the expensive training
        // criterion reruns its full pipeline on a two-epoch budget
        let clock = Instant::now();
        let mut mismatched = Vec::new();
        for (n, run, _) in criteria() {
            let first = match csvs.iter().find(|(m, _)| *m == n) {
                Some((_, csv)) if n != 8 => csv.clone(),
                _ if n == 8 => criterion_8(SEED, 2).csv,
                _ => run(SEED).csv,
            };
            let second = if n == 8 { criterion_8(SEED, 2).csv } else { run(SEED).csv };
            if first != second {
                mismatched.push(n);
            }
        }
        let pass = mismatched.is_empty();
        failures += !pass as usize;
        println!(
            "criterion 10: {} byte-identical CSVs on rerun for criteria 1-9{} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            if pass { String::new() } else { format!(", differing: {mismatched:?}") },
            clock.elapsed().as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
