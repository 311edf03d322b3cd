//! Acceptance criteria. Each test writes one `criterion N: PASS|FAIL` line
//! straight to stderr so the verdicts survive output capture.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagc::bench::{comm_report, roundtrip, RoundtripSpec, ValueKind};
use tagc::codec::{CountSketch, IndexWidth, Ratio, SketchConfig};
use tagc::collectives::{ExecMode, World};
use tagc::hook::{
    classification_report, exchange_sparse, CompressionConfig, LayerPolicy, SketchExchange,
    OPERATING_POINTS,
};
use tagc::sparsifier::{apply_accumulator, sparsify, ResidualAccumulator};
use tagc::trainer::{RunStatus, TinyModelConfig};
use tagc_cli::{load_run_config, train, Manifest};

fn verdict(id: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {id}: {} {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

#[test]
fn criterion_1_operating_point_round_trips() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst_mean = 1.0f64;
    let mut worst_rel = 0.0f64;
    for (theta, ratio) in OPERATING_POINTS {
        for w in [2, 4, 8] {
            for values in [ValueKind::Integer, ValueKind::Float] {
                let spec = RoundtripSpec {
                    config: CompressionConfig::new(theta, ratio, IndexWidth::Four)
                        .with_seed(1000 + w as u64),
                    n: 10_000,
                    world_size: w,
                    trials: 500,
                    seed: 7,
                    values,
                };
                let r = roundtrip(&spec, ExecMode::Sequential).unwrap();
                worst_mean = worst_mean.min(r.mean_peeled_fraction);
                if values == ValueKind::Float {
                    worst_rel = worst_rel.max(r.max_rel_error_peeled);
                }
                if !r.passed() || r.invariants.len() != 3 {
                    failures.push(format!(
                        "{theta}/{ratio}/W={w}/{values:?}: {:?}",
                        r.invariants
                    ));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs <= 120.0;
    verdict(
        "1",
        pass,
        &format!("worst mean peeled {worst_mean:.5}, worst float rel error {worst_rel:.2e}, {secs:.1}s {failures:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_traffic_model_matches_ledger() {
    let configs = [
        CompressionConfig::new(98.75, Ratio::X10, IndexWidth::One),
        CompressionConfig::new(80.0, Ratio::X2, IndexWidth::Four),
        CompressionConfig::new(90.0, Ratio::X4, IndexWidth::Four),
        CompressionConfig::new(80.0, Ratio::X2, IndexWidth::One),
    ];
    let mut pass = true;
    for w in [2, 4, 8] {
        let rows = comm_report(&configs, w, ExecMode::Sequential).unwrap();
        pass &= rows.iter().all(|r| r.matches);
        pass &= rows[0].model.total_bits == 5.2 && (rows[0].model.factor - 6.15).abs() < 0.005;
        pass &= rows[1].model.total_bits == 24.0 && rows[1].lhc_model.total_bits == 40.0;
        pass &= rows[1].measured == 24.0 && rows[1].lhc_measured == 40.0;
    }
    verdict(
        "2",
        pass,
        "5.2 bits / 6.15x at 1-bit 10x; 24 vs 40 bits at 4-bit 2x; probes equal the model",
    );
    assert!(pass);
}

/// Positions zeroed by the sparsifier must be exactly those at or below the
/// `ceil(k n / 10000)`-th smallest magnitude, found here by full sort.
#[test]
fn criterion_3_sparsifier_conservation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0usize;
    for _ in 0..100_000 {
        let n = rng.random_range(1..=256usize);
        let k: u64 = match rng.random_range(0..10) {
            0 => 0,
            1 => 10_000,
            _ => rng.random_range(0..=10_000),
        };
        let theta = k as f64 / 100.0;
        let ties = rng.random_bool(0.3);
        let draw = |rng: &mut ChaCha8Rng| -> f32 {
            if ties {
                rng.random_range(-3i32..=3) as f32 * 0.25
            } else if rng.random_bool(0.05) {
                0.0
            } else {
                rng.random_range(-1.0f32..1.0) * 10f32.powi(rng.random_range(-6..3))
            }
        };
        let g: Vec<f32> = (0..n).map(|_| draw(&mut rng)).collect();
        let prev: Vec<f32> = (0..n).map(|_| draw(&mut rng)).collect();
        let input = apply_accumulator(&g, &ResidualAccumulator::from_values(prev.clone())).unwrap();
        let s = sparsify(&input, theta).unwrap();

        let expected_input: Vec<f32> = g.iter().zip(&prev).map(|(a, b)| a + b).collect();
        let c = (k as usize * n).div_ceil(10_000);
        let mut mags: Vec<f32> = expected_input.iter().map(|v| v.abs()).collect();
        mags.sort_by(f32::total_cmp);
        let tau = if c == 0 { None } else { Some(mags[c - 1]) };

        let mut ok = input
            .iter()
            .zip(&expected_input)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ok &= s.threshold == tau.unwrap_or(0.0);
        for (p, &x) in expected_input.iter().enumerate() {
            ok &= (s.sparse[p] + s.residual[p]).to_bits() == x.to_bits() || x == 0.0;
            let zeroed = tau.is_some_and(|t| x.abs() <= t);
            ok &= if zeroed {
                s.sparse[p] == 0.0 && s.residual[p].to_bits() == x.to_bits()
            } else {
                s.residual[p] == 0.0 && s.sparse[p].to_bits() == x.to_bits()
            };
        }
        ok &= s.zero_count() >= c;
        bad += usize::from(!ok);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bad == 0 && secs <= 30.0;
    verdict(
        "3",
        pass,
        &format!("100000 trials, {bad} mismatches, {secs:.1}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_sketch_homomorphism() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ratios = [Ratio::X2, Ratio::X4, Ratio::X10];
    let mut int_bad = 0usize;
    let mut worst_float = 0.0f64;
    for trial in 0..10_000 {
        let n = rng.random_range(30..=600usize);
        let config = SketchConfig::new(n, ratios[trial % 3], rng.random()).unwrap();
        let integers = trial % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| -> f32 {
            if rng.random_bool(0.5) {
                0.0
            } else if integers {
                rng.random_range(-1000i32..=1000) as f32
            } else {
                rng.random_range(-1.0f32..1.0)
            }
        };
        let a: Vec<f32> = (0..n).map(|_| draw(&mut rng)).collect();
        let b: Vec<f32> = (0..n).map(|_| draw(&mut rng)).collect();
        let sum: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let merged = CountSketch::compress(&a, config)
            .unwrap()
            .sketch_add(&CountSketch::compress(&b, config).unwrap())
            .unwrap();
        let direct = CountSketch::compress(&sum, config).unwrap();
        if integers {
            int_bad += usize::from(
                !merged
                    .values()
                    .iter()
                    .zip(direct.values())
                    .all(|(x, y)| x.to_bits() == y.to_bits()),
            );
        } else {
            let m = config.buckets_per_row;
            let mut mass = vec![0.0f64; config.total_buckets()];
            for (r, h) in config.row_hashes().iter().enumerate() {
                for p in 0..n {
                    mass[r * m + h.bucket(p, m)] += (a[p].abs() + b[p].abs()) as f64;
                }
            }
            for ((x, y), w) in merged.values().iter().zip(direct.values()).zip(&mass) {
                if *w > 0.0 {
                    worst_float = worst_float.max((*x as f64 - *y as f64).abs() / w);
                }
            }
        }
    }
    let pass = int_bad == 0 && worst_float <= 1e-6;
    verdict(
        "4",
        pass,
        &format!("10000 trials, {int_bad} integer mismatches, worst float error {worst_float:.2e} of bucket mass"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_gradients_match_finite_differences() {
    let (model, batch) = support::gradient::instance(false);
    let result = support::gradient::check(&model, &batch, 200);
    let worst = result.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let pass = result.len() == 6 && worst <= 1e-2;
    verdict(
        "5",
        pass,
        &format!("200 coordinates per block, worst relative error {worst:.2e} {result:?}"),
    );
    assert!(pass);
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn desk_run(name: &str) -> Manifest {
    let run = load_run_config(&configs().join(name)).unwrap();
    assert_eq!(run.steps, 2000);
    let m = train(&run, ExecMode::Sequential).unwrap();
    assert_eq!(m.results.status, RunStatus::Completed, "{name}");
    assert!(m.results.ledger_consistent(), "{name}");
    m
}

#[test]
fn criterion_6_desk_scale_loss_parity() {
    let start = Instant::now();
    let base = desk_run("baseline.toml");
    let bypass = desk_run("bypass.toml");
    let t80 = desk_run("theta80.toml");
    let t98 = desk_run("theta98.toml");
    let secs = start.elapsed().as_secs_f64();
    let loss = |m: &Manifest| m.results.final_val_loss.unwrap();
    let (lb, l80, l98) = (loss(&base), loss(&t80), loss(&t98));

    let a = base.results.loss_csv() == bypass.results.loss_csv() && secs <= 1200.0;
    verdict(
        "6a",
        a,
        &format!("theta 0 trajectory identical to baseline over 2000 steps, 4 runs in {secs:.0}s"),
    );
    let gap = (l80 - lb) / lb;
    let b = gap.abs() <= 0.05;
    verdict(
        "6b",
        b,
        &format!(
            "baseline {lb:.4}, theta 80 {l80:.4}, gap {:+.2}%",
            gap * 100.0
        ),
    );
    let c = lb <= l80 * 1.01 && l80 <= l98 * 1.01;
    verdict(
        "6c",
        c,
        &format!(
            "baseline {lb:.4} <= theta 80 {l80:.4} <= theta 98.75 {l98:.4} with 1% slack; \
             peeled fractions {:.4} / {:.4}",
            t80.results.exchange.peeled_fraction(),
            t98.results.exchange.peeled_fraction()
        ),
    );
    assert!(a && b && c);
}

#[test]
fn criterion_7_one_bit_index_collisions() {
    let world = World::new(2, ExecMode::Sequential).unwrap();
    let mut sparse = vec![vec![0.0f32; 64]; 2];
    sparse[0][0] = 1.0;
    sparse[1][0] = 2.0;
    sparse[1][9] = 3.0;
    let one = CompressionConfig::new(80.0, Ratio::X2, IndexWidth::One);
    let four = CompressionConfig::new(80.0, Ratio::X2, IndexWidth::Four);
    let s1 = exchange_sparse(&world, &sparse, 0, &one, 1, SketchExchange::Reduce)
        .unwrap()
        .stats;
    let s4 = exchange_sparse(&world, &sparse, 0, &four, 1, SketchExchange::Reduce)
        .unwrap()
        .stats;
    let constructed = s1.lost + s1.spurious > 0 && s4.lost + s4.spurious == 0;

    let mut matched = true;
    let mut rates = Vec::new();
    for (w, trials) in [(2, 50), (4, 50), (8, 20), (15, 10)] {
        let run = |c: &CompressionConfig| {
            roundtrip(
                &RoundtripSpec {
                    config: c.clone(),
                    n: 10_000,
                    world_size: w,
                    trials,
                    seed: 77,
                    values: ValueKind::Integer,
                },
                ExecMode::Sequential,
            )
            .unwrap()
            .collision_rate
        };
        let (r1, r4) = (run(&one), run(&four));
        matched &= r1 > r4 && r4 == 0.0;
        rates.push((w, r1, r4));
    }
    let pass = constructed && matched;
    verdict(
        "7",
        pass,
        &format!(
            "constructed case 1-bit lost {} spurious {}; (W, 1-bit rate, 4-bit rate) {rates:.4?}",
            s1.lost, s1.spurious
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_layer_classification_share() {
    let layers = TinyModelConfig::gpt2_small().layer_specs();
    let with = classification_report(&layers, LayerPolicy::NonAttentionLinear, true)
        .unwrap()
        .flagged_share;
    let without = classification_report(&layers, LayerPolicy::NonAttentionLinear, false)
        .unwrap()
        .flagged_share;
    let pass = (0.80..=0.87).contains(&with) && (without - 0.82).abs() <= 0.02;
    verdict(
        "8",
        pass,
        &format!("share {with:.4} with out-projection, {without:.4} without"),
    );
    assert!(pass);
}

type CliOutput = (Option<i32>, Vec<u8>, Vec<(String, Vec<u8>)>);

fn cli(args: &[&str], out: &Path) -> CliOutput {
    let o = Command::new(env!("CARGO_BIN_EXE_tagc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(
        matches!(o.status.code(), Some(0 | 1)),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    (o.status.code(), o.stdout, files)
}

#[test]
fn criterion_9_commands_are_deterministic() {
    let theta80 = configs().join("theta80.toml");
    let theta98 = configs().join("theta98.toml");
    let commands: Vec<Vec<&str>> = vec![
        vec![
            "roundtrip",
            "--ratio",
            "4",
            "--theta",
            "90",
            "--n",
            "4000",
            "--trials",
            "20",
            "--world-size",
            "4",
        ],
        vec![
            "roundtrip",
            "--ratio",
            "2",
            "--theta",
            "80",
            "--width",
            "1",
            "--n",
            "2000",
            "--trials",
            "5",
        ],
        vec!["commreport", "--table", "--world-size", "4"],
        vec!["classify"],
        vec!["classify", "--preset", "tiny", "--policy", "all-layers"],
        vec!["train", theta80.to_str().unwrap(), "--steps", "25"],
        vec!["train", theta98.to_str().unwrap(), "--steps", "25"],
    ];
    let mut identical = 0;
    for args in &commands {
        let takes_mode = args[0] != "classify";
        let mut outputs = Vec::new();
        for mode in ["sequential", "sequential", "parallel"] {
            let dir = tempfile::tempdir().unwrap();
            let mut a = args.clone();
            if takes_mode {
                a.extend(["--mode", mode]);
            }
            outputs.push(cli(&a, dir.path()));
        }
        if outputs.iter().all(|o| *o == outputs[0]) {
            identical += 1;
        }
    }
    let first = tempfile::tempdir().unwrap();
    let (_, _, a) = cli(
        &["train", theta98.to_str().unwrap(), "--steps", "25"],
        first.path(),
    );
    let manifest = first.path().join("manifest.json");
    let second = tempfile::tempdir().unwrap();
    let (_, _, b) = cli(
        &["train", manifest.to_str().unwrap(), "--mode", "parallel"],
        second.path(),
    );
    let rerun = a == b;
    let pass = identical == commands.len() && rerun;
    verdict(
        "9",
        pass,
        &format!(
            "{identical}/{} commands byte-identical across repeats and world modes; manifest re-run identical: {rerun}",
            commands.len()
        ),
    );
    assert!(pass);
}
