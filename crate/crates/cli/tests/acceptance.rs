//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! `cargo test -p bwsl-cli --test acceptance -- 1 3` runs only criteria 1 and 3.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use bwsl_core::autodiff::{relative_error, Tensor};
use bwsl_core::backtest::{run_csm, run_market, run_policy, run_tsm, BacktestConfig};
use bwsl_core::data::{synth_market, SynthConfig};
use bwsl_core::features::NUM_FEATURES;
use bwsl_core::metrics::{cumulative_wealth, max_drawdown, report, sharpe};
use bwsl_core::policy::{policy_forward, record_forward, PolicyConfig, PolicyInput, PolicyParams};
use bwsl_core::portfolio::{generate, generate_by, realize_return, Mode};
use bwsl_core::rng::{stream, Stream};
use bwsl_core::trainer::{log_likelihood_value, simulate_trajectory, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

const FD_EPS: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;
const FD_CONFIGS: u64 = 3;
const FD_COORDS_PER_CONFIG: usize = 40;

fn small_policy() -> PolicyConfig {
    PolicyConfig { hidden: 8, embed: 4, lookup_cols: 8, ..PolicyConfig::default() }
}

fn random_input(stocks: usize, window: usize, rng: &mut impl Rng) -> PolicyInput {
    let windows: Vec<Tensor> = (0..stocks)
        .map(|_| Tensor::matrix(window, NUM_FEATURES, (0..window * NUM_FEATURES).map(|_| rng.random_range(-2.0..2.0)).collect()))
        .collect();
    let mut ranks: Vec<usize> = (1..=stocks).collect();
    ranks.shuffle(rng);
    PolicyInput::from_stock_windows(&windows, ranks).unwrap()
}

fn sample_coords(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..n)).collect()
}

fn numeric(flat: &[f64], c: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut x = flat.to_vec();
    x[c] += FD_EPS;
    let plus = f(&x);
    x[c] = flat[c] - FD_EPS;
    let minus = f(&x);
    (plus - minus) / (2.0 * FD_EPS)
}

fn gradient_correctness() -> Outcome {
    let cfg = small_policy();
    let (mut worst_s, mut worst_ll, mut n_s, mut n_ll) = (0.0f64, 0.0f64, 0, 0);
    for seed in 0..FD_CONFIGS {
        let params = PolicyParams::init(cfg, &mut stream(100 + seed, Stream::Init)).unwrap();
        let flat = params.flatten();
        let mut rng = stream(100 + seed, Stream::Sampling);

        // (a) winner score of the first stock, I=8, K=4.
        let input = random_input(8, 4, &mut stream(100 + seed, Stream::Data));
        let mut fwd = record_forward(&params, &input).unwrap();
        let s1 = fwd.tape.gather(fwd.scores, vec![0], &[1]).unwrap();
        let grads = fwd.params.gradients(&fwd.tape.backward(s1, 1.0).unwrap(), cfg).flatten();
        for c in sample_coords(flat.len(), FD_COORDS_PER_CONFIG, &mut rng) {
            let num = numeric(&flat, c, |x| policy_forward(&PolicyParams::from_flat(cfg, x).unwrap(), &input).unwrap()[0]);
            worst_s = worst_s.max(relative_error(grads[c], num));
            n_s += 1;
        }

        // (b) the trainer surrogate over a two-month trajectory of an 8-stock panel.
        let panel = synth_market(&SynthConfig { num_stocks: 8, num_periods: 30, seed: 100 + seed, ..Default::default() }).unwrap();
        let tc = TrainConfig { window: 4, horizon: 2, ..TrainConfig::default() };
        let t0 = 10 + seed as usize;
        let traj = simulate_trajectory(&panel, t0, &params, &tc).unwrap();
        let analytic = traj.grad_log_b.flatten();
        for c in sample_coords(flat.len(), FD_COORDS_PER_CONFIG, &mut rng) {
            let num = numeric(&flat, c, |x| log_likelihood_value(&panel, t0, &PolicyParams::from_flat(cfg, x).unwrap(), &tc).unwrap());
            worst_ll = worst_ll.max(relative_error(analytic[c], num));
            n_ll += 1;
        }
    }
    outcome(
        worst_s <= FD_TOL && worst_ll <= FD_TOL && n_s >= 100 && n_ll >= 100,
        format!("score: {n_s} coords, max rel err {worst_s:.2e}; sum log b: {n_ll} coords, max rel err {worst_ll:.2e} (tol {FD_TOL:e})"),
    )
}

// ---------------------------------------------------------------- 2

const PERM_TOL: f64 = 1e-10;

fn permutation_equivariance() -> Outcome {
    let (n, window) = (16, 6);
    let params = PolicyParams::init(PolicyConfig::default(), &mut stream(200, Stream::Init)).unwrap();
    let input = random_input(n, window, &mut stream(200, Stream::Data));
    let keys: Vec<usize> = (0..n).collect();
    let g = n / 4;
    let base = policy_forward(&params, &input).unwrap();
    let base_w = generate_by(&base, &keys, g, Mode::LongShort).unwrap().combined();
    let mut rng = stream(200, Stream::Sampling);
    let (mut worst_s, mut worst_w) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let moved = policy_forward(&params, &input.permuted(&perm)).unwrap();
        let moved_keys: Vec<usize> = perm.iter().map(|&p| keys[p]).collect();
        let moved_w = generate_by(&moved, &moved_keys, g, Mode::LongShort).unwrap().combined();
        for i in 0..n {
            worst_s = worst_s.max((moved[i] - base[perm[i]]).abs());
            worst_w = worst_w.max((moved_w[i] - base_w[perm[i]]).abs());
        }
    }
    outcome(
        worst_s <= PERM_TOL && worst_w <= PERM_TOL,
        format!("50 permutations, I={n}, K={window}: max score diff {worst_s:.2e}, max weight diff {worst_w:.2e}"),
    )
}

// ---------------------------------------------------------------- 3

fn brute_force_mdd(w: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..w.len() {
        for i in 0..=j {
            worst = worst.max((w[i] - w[j]) / w[i]);
        }
    }
    worst
}

fn metric_oracles() -> Outcome {
    let mut rng = stream(300, Stream::Data);
    let mut mdd_mismatch = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..80);
        let mut w = vec![1.0];
        for _ in 0..len {
            let next = w.last().unwrap() * rng.random_range(0.7..1.3);
            w.push(next);
        }
        if max_drawdown(&w) != brute_force_mdd(&w) {
            mdd_mismatch += 1;
        }
    }
    let mut asr_err: f64 = 0.0;
    for _ in 0..200 {
        let r: Vec<f64> = (0..rng.random_range(2..60)).map(|_| rng.random_range(-0.1..0.12)).collect();
        let tc = rng.random_range(0.0..0.005);
        let h = sharpe(&r, 0.0, tc).unwrap();
        let rep = report(&r, 0.0, tc, 12.0).unwrap();
        asr_err = asr_err.max((rep.asr - h * 12f64.sqrt()).abs());
    }
    let cw = cumulative_wealth(&[0.01; 12], 0.001).unwrap();
    let cw_err = (cw[12] - 1.009f64.powi(12)).abs();
    outcome(
        mdd_mismatch == 0 && asr_err <= 1e-12 && cw_err <= 1e-12,
        format!("MDD mismatches {mdd_mismatch}/1000; max |ASR - sharpe*sqrt(12)| {asr_err:.1e}; |CW - 1.009^12| {cw_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 4

fn zero_investment() -> Outcome {
    let mut rng = stream(400, Stream::Data);
    let (mut worst_r, mut worst_leg) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(2..60);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let g = rng.random_range(1..=n / 2);
        let z = rng.random_range(0.5..1.5);
        let pair = generate(&scores, g, Mode::LongShort).unwrap();
        let r = realize_return(&pair, &vec![Some(z); n]).unwrap();
        worst_r = worst_r.max(r.abs());
        for leg in [&pair.long, &pair.short] {
            worst_leg = worst_leg.max((leg.iter().map(|x| x.1).sum::<f64>() - 1.0).abs());
        }
    }
    outcome(
        worst_r <= 1e-12 && worst_leg <= 1e-12,
        format!("100 score vectors: max |R| {worst_r:.1e}, max |leg sum - 1| {worst_leg:.1e}"),
    )
}

// ---------------------------------------------------------------- 5, 6

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const PLANTED_HIDDEN: &str = "32";
const PLANTED_EPOCHS: &str = "150";

fn bwsl(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_bwsl")).args(args).output().expect("bwsl runs");
    assert!(
        out.status.success(),
        "bwsl {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Column `name` of every row of a CSV file, keyed by the first column.
fn csv_column(path: &Path, name: &str) -> BTreeMap<String, String> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let col = rdr.headers().unwrap().iter().position(|h| h == name).unwrap_or_else(|| panic!("{name} in {}", path.display()));
    rdr.records().map(|r| r.unwrap()).map(|r| (r[0].to_string(), r[col].to_string())).collect()
}

struct SeedResult {
    seed: u64,
    policy_asr: f64,
    market_asr: f64,
    adv_1: f64,
    adv_50: f64,
    vol_by_lag: Vec<f64>,
}

fn planted_runs() -> &'static [SeedResult] {
    static RUNS: OnceLock<Vec<SeedResult>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        SEEDS
            .iter()
            .map(|&seed| {
                let dir = tmp.path().join(format!("seed{seed}"));
                let seed_arg = seed.to_string();
                let (synth, train, bt, interp) = (dir.join("synth"), dir.join("train"), dir.join("backtest"), dir.join("interpret"));
                let panel = synth.join("panel.csv");
                let ckpt = train.join("checkpoint.txt");
                bwsl(&["synth", "--seed", &seed_arg, "--out", s(&synth)]);
                bwsl(&[
                    "train", "--seed", &seed_arg, "--panel", s(&panel), "--hidden", PLANTED_HIDDEN, "--epochs", PLANTED_EPOCHS,
                    "--out", s(&train),
                ]);
                bwsl(&["backtest", "--panel", s(&panel), "--checkpoint", s(&ckpt), "--baselines", "market", "--out", s(&bt)]);
                bwsl(&["interpret", "--panel", s(&panel), "--checkpoint", s(&ckpt), "--out", s(&interp)]);

                let asr = csv_column(&bt.join("report.csv"), "asr");
                let adv = csv_column(&train.join("learning_curve.csv"), "mean_advantage");
                let sens: Vec<Vec<String>> = {
                    let mut rdr = csv::Reader::from_path(interp.join("sensitivity.csv")).unwrap();
                    rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
                };
                let vol = sens.iter().find(|r| r[0] == "vol").expect("vol row");
                let f = |x: &str| x.parse::<f64>().unwrap();
                SeedResult {
                    seed,
                    policy_asr: f(&asr["policy"]),
                    market_asr: f(&asr["market"]),
                    adv_1: f(&adv["1"]),
                    adv_50: f(&adv["50"]),
                    // lag_1..lag_K; the trailing column is the mean.
                    vol_by_lag: vol[1..vol.len() - 1].iter().map(|x| f(x)).collect(),
                }
            })
            .collect()
    })
}

fn planted_training() -> Outcome {
    let runs = planted_runs();
    let wins = runs.iter().filter(|r| r.policy_asr >= r.market_asr).count();
    let rises = runs.iter().filter(|r| r.adv_50 > r.adv_1).count();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {} asr {:.2} vs {:.2}, adv {:.2}->{:.2}", r.seed, r.policy_asr, r.market_asr, r.adv_1, r.adv_50))
        .collect();
    outcome(
        wins >= 4 && rises >= 4,
        format!("ASR >= market in {wins}/5, advantage rises in {rises}/5 [{}]", per_seed.join("; ")),
    )
}

fn vol_sign_recovery() -> Outcome {
    let runs = planted_runs();
    let negative = runs.iter().filter(|r| r.vol_by_lag.iter().all(|&d| d < 0.0)).count();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| {
            let pos = r.vol_by_lag.iter().filter(|&&d| d >= 0.0).count();
            format!("seed {} {}/{} lags >= 0", r.seed, pos, r.vol_by_lag.len())
        })
        .collect();
    outcome(negative >= 4, format!("VOL negative at every lag in {negative}/5 [{}]", per_seed.join("; ")))
}

// ---------------------------------------------------------------- 7

fn no_look_ahead() -> Outcome {
    let panel = synth_market(&SynthConfig { num_stocks: 20, num_periods: 40, seed: 700, ..Default::default() }).unwrap();
    let params = PolicyParams::init(small_policy(), &mut stream(700, Stream::Init)).unwrap();
    let cfg = BacktestConfig { window: 6, ..Default::default() };
    let mut rng = stream(700, Stream::Sampling);
    let mut checked = 0;
    let mut diffs = Vec::new();
    for t in [10, 18, 25, 33] {
        let mut bent = panel.clone();
        for st in 0..bent.num_stocks() {
            for u in t + 1..bent.num_periods() {
                let slot = bent.bar_mut(st, u).unwrap();
                if rng.random_bool(0.15) {
                    *slot = None;
                } else if let Some(bar) = slot.as_mut() {
                    bar.close *= rng.random_range(0.85..1.2);
                    bar.vol *= rng.random_range(0.1..10.0);
                    bar.volume *= rng.random_range(0.1..10.0);
                    bar.mcap *= rng.random_range(0.1..10.0);
                    bar.pe = rng.random_range(-50.0..50.0);
                    bar.bm = rng.random_range(0.0..3.0);
                    bar.div = rng.random_range(0.0..0.2);
                }
            }
        }
        let range = cfg.window..t + 1;
        let runs = [
            (run_policy(&panel, &params, range.clone(), &cfg), run_policy(&bent, &params, range.clone(), &cfg)),
            (run_market(&panel, range.clone(), &cfg), run_market(&bent, range.clone(), &cfg)),
            (run_tsm(&panel, range.clone(), &cfg), run_tsm(&bent, range.clone(), &cfg)),
            (run_csm(&panel, range.clone(), &cfg), run_csm(&bent, range.clone(), &cfg)),
        ];
        for (a, b) in runs {
            let (a, b) = (a.unwrap(), b.unwrap());
            checked += a.holdings.len();
            if a.holdings != b.holdings || a.periods != b.periods {
                diffs.push(format!("{} at t={t}", a.strategy));
            }
        }
    }
    outcome(diffs.is_empty(), format!("{checked} portfolios compared; differing: {}", if diffs.is_empty() { "none".into() } else { diffs.join(", ") }))
}

// ---------------------------------------------------------------- 8

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn pipeline_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let (synth, train, bt, interp) = (run.join("synth"), run.join("train"), run.join("backtest"), run.join("interpret"));
    let panel = synth.join("panel.csv");
    let ckpt = train.join("checkpoint.txt");
    bwsl(&["synth", "--stocks", "12", "--periods", "40", "--seed", "8", "--out", s(&synth)]);
    bwsl(&[
        "train", "--panel", s(&panel), "--seed", "8", "--hidden", "4", "--embed", "3", "--lookup-cols", "4", "--window", "4",
        "--horizon", "4", "--batch", "3", "--epochs", "3", "--validation-periods", "4", "--out", s(&train),
    ]);
    bwsl(&["backtest", "--panel", s(&panel), "--checkpoint", s(&ckpt), "--window", "4", "--out", s(&bt)]);
    bwsl(&["interpret", "--panel", s(&panel), "--checkpoint", s(&ckpt), "--window", "4", "--out", s(&interp)]);

    // Move the first run aside and replay every step from its manifest alone.
    let first = tmp.path().join("first");
    fs::rename(&run, &first).unwrap();
    for step in ["synth", "train", "backtest", "interpret"] {
        let manifest = first.join(step).join("manifest.txt");
        bwsl(&[step, "--config", s(&manifest)]);
    }
    let (a, b) = (files_under(&first), files_under(&run));
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    outcome(
        differing.is_empty() && a.len() > 10,
        format!("{} files replayed; differing: {}", a.len(), if differing.is_empty() { "none".into() } else { differing.join(", ") }),
    )
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("gradient correctness", gradient_correctness),
        ("permutation equivariance", permutation_equivariance),
        ("metric oracles", metric_oracles),
        ("zero-investment accounting", zero_investment),
        ("planted-signal training", planted_training),
        ("VOL sensitivity sign", vol_sign_recovery),
        ("no look-ahead", no_look_ahead),
        ("pipeline determinism", pipeline_determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {n}. {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
