//! Acceptance suite: one `PASS`/`FAIL` line per criterion.
//!
//! Dataset locations: `DRBM_MNIST_DIR` (default `/root/data/mnist`, the four
//! uncompressed IDX files) and `DRBM_USPS_DIR` (default `/root/data/usps`,
//! holding `zip.train` and `zip.test`). A criterion whose data is missing is
//! reported as `FAIL [blocked]` and does not change the exit status; every
//! criterion that runs and misses its bound does.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use drbm::model::DrbmParams;
use drbm::training::{simulate_schedule, EpochEvent, TerminationReason, TrainConfig};
use drbm::verify::{conditional_error, gradient_error, instance, instance_seed};
use drbm::{StateSet, UnitKind};
use drbm_cli::{cmd_train, RunConfig, MODEL_FILE};
use ndarray::Axis;
use tempfile::TempDir;

enum Verdict {
    Pass(String),
    Fail(String),
    Blocked(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn finite_variants() -> Vec<StateSet> {
    let mut v = vec![StateSet::bernoulli(), StateSet::bipolar()];
    v.extend([1, 2, 4, 8].map(|n| StateSet::binomial(n).unwrap()));
    v
}

fn all_variants() -> Vec<StateSet> {
    let mut v = finite_variants();
    v.push(StateSet::rectified_linear());
    v
}

const RUN_SEED: u64 = 20_250_101;

fn ac1_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for v in finite_variants() {
        for k in 0..500 {
            let inst = instance(v, instance_seed(RUN_SEED, k));
            worst = worst.max(conditional_error(&v, v, &inst).unwrap());
            count += 1;
        }
    }
    let t = start.elapsed();
    check(
        worst < 1e-10 && t < Duration::from_secs(60),
        format!("max |log P_model - log P_oracle| = {worst:.3e} over {count} instances (< 1e-10) in {:.2}s (< 60s)", t.as_secs_f64()),
    )
}

fn ac2_gradients() -> Verdict {
    let start = Instant::now();
    let mut per_variant = Vec::new();
    let mut worst: f64 = 0.0;
    for v in all_variants() {
        let w = (0..100)
            .map(|k| gradient_error(&v, v, &instance(v, instance_seed(RUN_SEED, k)), 1e-5).unwrap())
            .fold(0.0, f64::max);
        per_variant.push(format!("{v} {w:.2e}"));
        worst = worst.max(w);
    }
    let t = start.elapsed();
    check(
        worst < 1e-5 && t < Duration::from_secs(60),
        format!(
            "max relative gradient error {worst:.3e} (< 1e-5), 100 instances per variant [{}] in {:.2}s",
            per_variant.join(", "),
            t.as_secs_f64()
        ),
    )
}

fn ac3_reductions() -> Verdict {
    let one = StateSet::binomial(1).unwrap();
    let mut binom_gap: f64 = 0.0;
    let mut bip_gap: f64 = 0.0;
    for k in 0..100 {
        let inst = instance(one, instance_seed(RUN_SEED ^ 3, k));
        let p = &inst.params;
        let x = inst.x.row(0);
        let a = p.predict_log_proba(&one, x).unwrap();
        let b = p.predict_log_proba(&StateSet::bernoulli(), x).unwrap();
        for (u, w) in a.log_proba.iter().zip(&b.log_proba) {
            binom_gap = binom_gap.max((u - w).abs());
        }

        let q = DrbmParams::new(
            p.r().to_owned() * 2.0,
            p.u().to_owned() * 2.0,
            p.c().to_owned() * 2.0,
            &p.d() - &p.u().sum_axis(Axis(1)),
        )
        .unwrap();
        let bip = p.predict_log_proba(&StateSet::bipolar(), x).unwrap();
        let ber = q.predict_log_proba(&StateSet::bernoulli(), x).unwrap();
        for (u, w) in bip.log_proba.iter().zip(&ber.log_proba) {
            bip_gap = bip_gap.max((u - w).abs());
        }
    }
    check(
        binom_gap < 1e-12 && bip_gap < 1e-10,
        format!("Binomial(1) vs Bernoulli {binom_gap:.3e} (< 1e-12); bipolar vs rescaled Bernoulli {bip_gap:.3e} (< 1e-10); 100 instances"),
    )
}

fn ac4_schedule() -> Verdict {
    let eta = 0.01;
    let cfg = TrainConfig::new(StateSet::bernoulli(), 1, eta);
    let p = DrbmParams::zeros(drbm::Dims { n_inputs: 1, n_hidden: 1, n_classes: 2 }).unwrap();
    let expected_lr: Vec<f64> = (1..=5).map(|k| eta / k as f64).collect();
    let mut problems = Vec::new();

    // Flat trace: every epoch after the first ties the best.
    let flat = vec![0.3; 80];
    // Improvements at irregular points push each reduction back.
    let mut bumpy = vec![0.9, 0.8];
    bumpy.extend([0.85; 9]);
    bumpy.push(0.7);
    bumpy.extend([0.75; 10]);
    bumpy.extend([0.7; 40]);
    for (name, trace, want) in [
        ("flat", flat, vec![11, 21, 31, 41, 51]),
        ("bumpy", bumpy, vec![22, 32, 42, 52, 62]),
    ] {
        let (recs, term) = simulate_schedule(&trace, &cfg, &p);
        let reductions: Vec<usize> = recs
            .iter()
            .filter(|r| matches!(r.event, EpochEvent::Reduced | EpochEvent::Terminated))
            .map(|r| r.epoch)
            .collect();
        let mut lrs: Vec<f64> = recs.iter().map(|r| r.lr).collect();
        lrs.dedup();
        let ends = recs.last().map(|r| (r.epoch, r.event));
        if reductions != want {
            problems.push(format!("{name}: reductions at {reductions:?}, expected {want:?}"));
        }
        if lrs != expected_lr {
            problems.push(format!("{name}: lr sequence {lrs:?}"));
        }
        if term != Some(TerminationReason::ReductionsExhausted) || ends != Some((want[4], EpochEvent::Terminated)) {
            problems.push(format!("{name}: ended with {ends:?} / {term:?}"));
        }
    }
    if problems.is_empty() {
        Verdict::Pass("reductions on the 10th consecutive non-improving epoch, lr eta/1..eta/5, stop at the 5th".into())
    } else {
        Verdict::Fail(problems.join("; "))
    }
}

fn data_dir(var: &str, default: &str) -> PathBuf {
    std::env::var_os(var).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(default))
}

fn run_config(dir: &Path, toml: &str) -> RunConfig {
    let path = dir.join("run.toml");
    fs::write(&path, toml).unwrap();
    RunConfig::load(&path).unwrap()
}

fn ac5_usps() -> Verdict {
    let dir = data_dir("DRBM_USPS_DIR", "/root/data/usps");
    let (train, test) = (dir.join("zip.train"), dir.join("zip.test"));
    if !train.is_file() || !test.is_file() {
        return Verdict::Blocked(format!(
            "USPS files not found ({} and {}); criterion not evaluated",
            train.display(),
            test.display()
        ));
    }
    let start = Instant::now();
    let tmp = TempDir::new().unwrap();
    let mut losses = Vec::new();
    for seed in 0..3 {
        let cfg = run_config(
            tmp.path(),
            &format!(
                "output_dir = {:?}\n[data]\nkind = \"usps\"\ntrain = {train:?}\ntest = {test:?}\n\
                 [model]\nvariant = \"bernoulli\"\nn_hid = 50\n[train]\neta_init = 0.01\nbatch_size = 1\nseed = {seed}\n",
                tmp.path().join(format!("seed{seed}"))
            ),
        );
        match cmd_train(&cfg, false, &mut std::io::sink()) {
            Ok(s) => losses.push(s.test_loss),
            Err(e) => return Verdict::Fail(format!("seed {seed}: {e}")),
        }
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    check(
        mean <= 0.09,
        format!(
            "mean test loss {:.2}% over seeds 0..3 {:?} (<= 9.0%) in {:.0}s",
            100.0 * mean,
            losses.iter().map(|l| format!("{:.2}%", 100.0 * l)).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn ac6_mnist() -> Verdict {
    let dir = data_dir("DRBM_MNIST_DIR", "/root/data/mnist");
    if !dir.join("train-images-idx3-ubyte").is_file() {
        return Verdict::Blocked(format!("MNIST IDX files not found in {}; criterion not evaluated", dir.display()));
    }
    let start = Instant::now();
    let tmp = TempDir::new().unwrap();
    let cfg = run_config(
        tmp.path(),
        &format!(
            "output_dir = {:?}\n[data]\nkind = \"mnist\"\ndir = {dir:?}\ntrain_limit = 10000\n\
             [model]\nvariant = \"bernoulli\"\nn_hid = 100\n[train]\neta_init = 0.01\nbatch_size = 1\nseed = 0\n",
            tmp.path().join("out")
        ),
    );
    let s = match cmd_train(&cfg, false, &mut std::io::sink()) {
        Ok(s) => s,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let t = start.elapsed();
    check(
        s.test_loss <= 0.06 && t <= Duration::from_secs(15 * 60),
        format!(
            "test loss {:.2}% (<= 6.0%), validation {:.2}%, {} epochs, {}, {:.0}s (<= 900s)",
            100.0 * s.test_loss,
            100.0 * s.val_loss,
            s.epochs,
            s.termination,
            t.as_secs_f64()
        ),
    )
}

fn ac7_determinism() -> Verdict {
    let toy = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy/toy.toml");
    let tmp = TempDir::new().unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let mut cfg = RunConfig::load(&toy).unwrap();
        cfg.apply(&drbm_cli::Overrides {
            output_dir: Some(tmp.path().join(run)),
            ..Default::default()
        });
        let s = cmd_train(&cfg, false, &mut std::io::sink()).unwrap();
        files.push(fs::read(s.model_path).unwrap());
    }
    let path = tmp.path().join("a").join(MODEL_FILE);
    check(
        files[0] == files[1],
        format!("two toy training runs give {} identical model bytes ({})", files[0].len(), path.file_name().unwrap().to_string_lossy()),
    )
}

/// Reference `log sum_k e^{s_k a}` and mean state for a finite state set,
/// summed directly around the dominant state.
fn direct_sum(states: &[f64], a: f64) -> (f64, f64) {
    let top = (0..states.len()).max_by(|&i, &j| (states[i] * a).total_cmp(&(states[j] * a))).unwrap();
    let m = states[top] * a;
    let w: Vec<f64> = states.iter().map(|s| (s * a - m).exp()).collect();
    let rest: f64 = w.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, w)| w).sum();
    let mean = states.iter().zip(&w).map(|(s, w)| s * w).sum::<f64>() / (1.0 + rest);
    (m + rest.ln_1p(), mean)
}

fn close(got: f64, want: f64) -> bool {
    got.is_finite() && (got - want).abs() <= 1e-12 * want.abs().max(f64::MIN_POSITIVE)
}

fn ac8_stability() -> Verdict {
    let mut alphas: Vec<f64> = vec![0.0];
    for mag in [1e-300, 1e-12, 1e-6, 1e-3, 0.5, 1.0, 10.0, 36.0, 100.0, 300.0, 699.0, 700.0] {
        alphas.push(mag);
        alphas.push(-mag);
    }
    let mut bad = Vec::new();
    let mut checked = 0;
    for v in all_variants() {
        for &a in &alphas {
            let (lss, mean) = (v.log_state_sum(a), v.mean_state(a));
            if v.kind() == UnitKind::RectifiedLinear {
                if a >= 0.0 {
                    if lss.is_ok() || mean.is_ok() {
                        bad.push(format!("{v} accepted a={a}"));
                    }
                    continue;
                }
                let want_lss = if a < -std::f64::consts::LN_2 { -(-a.exp()).ln_1p() } else { -(-a.exp_m1()).ln() };
                let want_mean = 1.0 / (-a).exp_m1();
                checked += 1;
                if !close(lss.unwrap(), want_lss) || !close(mean.unwrap(), want_mean) {
                    bad.push(format!("{v} a={a}"));
                }
                continue;
            }
            let (want_lss, want_mean) = direct_sum(&v.enumerate_states().unwrap(), a);
            let (lss, mean) = (lss.unwrap(), mean.unwrap());
            checked += 1;
            // The direct mean cancels for tiny |a|; very small magnitudes are
            // judged against the first-order expansion instead.
            let mean_ok = if a != 0.0 && a.abs() < 1e-6 {
                let states = v.enumerate_states().unwrap();
                let n = states.len() as f64;
                let mu = states.iter().sum::<f64>() / n;
                let var = states.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / n;
                mean.is_finite() && (mean - (mu + var * a)).abs() <= 1e-12 * mu.abs().max(var * a.abs()).max(1e-300)
            } else {
                close(mean, want_mean) || (mean - want_mean).abs() < 1e-15
            };
            if !close(lss, want_lss) || !mean_ok {
                bad.push(format!("{v} a={a}: lss {lss:e} vs {want_lss:e}, mean {mean:e} vs {want_mean:e}"));
            }
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{checked} (variant, alpha) pairs with |alpha| <= 700 finite and within 1e-12 of direct sums; relu rejects alpha >= 0")
        } else {
            bad.join("; ")
        },
    )
}

fn main() {
    let criteria: [(&str, &str, fn() -> Verdict); 8] = [
        ("AC1", "oracle equivalence", ac1_oracle_equivalence),
        ("AC2", "gradient correctness", ac2_gradients),
        ("AC3", "reduction identities", ac3_reductions),
        ("AC4", "early-stopping schedule", ac4_schedule),
        ("AC5", "USPS desk-scale reproduction", ac5_usps),
        ("AC6", "MNIST 10k subset", ac6_mnist),
        ("AC7", "determinism", ac7_determinism),
        ("AC8", "numerical stability", ac8_stability),
    ];
    let only: Option<String> = std::env::args().skip(1).find(|a| a.starts_with("AC"));
    let mut failed = Vec::new();
    let mut blocked = Vec::new();
    for (id, name, run) in criteria {
        if only.as_deref().is_some_and(|o| o != id) {
            continue;
        }
        match run() {
            Verdict::Pass(d) => println!("PASS {id} {name}: {d}"),
            Verdict::Fail(d) => {
                println!("FAIL {id} {name}: {d}");
                failed.push(id);
            }
            Verdict::Blocked(d) => {
                println!("FAIL {id} {name} [blocked]: {d}");
                blocked.push(id);
            }
        }
    }
    println!("acceptance: {} failed {failed:?}, {} blocked {blocked:?}", failed.len(), blocked.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
