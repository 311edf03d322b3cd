use tagc::codec::{IndexWidth, Ratio};
use tagc::collectives::{ExecMode, World};
use tagc::hook::{CompressionConfig, SketchExchange};
use tagc::trainer::{
    run_experiment, GradientPath, OptimizerConfig, RunMetrics, TinyModelConfig, TrainRunConfig,
};

fn config(path: GradientPath, world_size: usize) -> TrainRunConfig {
    TrainRunConfig {
        seed: 21,
        steps: 6,
        batch_size: 4,
        seq_len: 16,
        world_size,
        optimizer: OptimizerConfig::Sgd { lr: 0.2 },
        path,
        sketch_exchange: SketchExchange::Reduce,
        model: TinyModelConfig {
            context: 16,
            ..TinyModelConfig::default()
        },
        eval_every: 3,
        eval_batches: 2,
    }
}

fn run(c: &TrainRunConfig, mode: ExecMode) -> RunMetrics {
    run_experiment(c, &World::new(c.world_size, mode).unwrap()).unwrap()
}

#[test]
fn one_and_two_ranks_follow_the_same_baseline_trajectory() {
    let a = run(&config(GradientPath::Baseline, 1), ExecMode::Sequential);
    let b = run(&config(GradientPath::Baseline, 2), ExecMode::Sequential);
    for (x, y) in a.train_loss.iter().zip(&b.train_loss) {
        assert!((x - y).abs() <= 1e-5 * x.abs(), "{x} vs {y}");
    }
    for (x, y) in a.val_loss.iter().zip(&b.val_loss) {
        assert_eq!(x.step, y.step);
        assert!(
            (x.loss - y.loss).abs() <= 1e-5 * x.loss.abs(),
            "{x:?} vs {y:?}"
        );
    }
}

#[test]
fn bypass_is_bit_identical_to_baseline_at_four_ranks() {
    let base = run(&config(GradientPath::Baseline, 4), ExecMode::Sequential);
    let tagc = run(
        &config(GradientPath::Tagc(CompressionConfig::bypass()), 4),
        ExecMode::Sequential,
    );
    assert_eq!(base.loss_csv(), tagc.loss_csv());
}

#[test]
fn execution_modes_produce_identical_runs() {
    for path in [
        GradientPath::Baseline,
        GradientPath::Tagc(CompressionConfig::new(80.0, Ratio::X2, IndexWidth::Four)),
        GradientPath::Tagc(CompressionConfig::new(98.75, Ratio::X10, IndexWidth::One)),
    ] {
        let c = config(path, 2);
        let a = serde_json::to_string(&run(&c, ExecMode::Sequential)).unwrap();
        let b = serde_json::to_string(&run(&c, ExecMode::Parallel)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn compressed_runs_account_for_every_bit() {
    for exchange in [SketchExchange::Reduce, SketchExchange::AllReduce] {
        let mut c = config(
            GradientPath::Tagc(CompressionConfig::new(90.0, Ratio::X4, IndexWidth::Four)),
            2,
        );
        c.sketch_exchange = exchange;
        let m = run(&c, ExecMode::Sequential);
        assert!(m.ledger_consistent(), "{exchange:?}");
        assert_eq!(m.exchange.lost + m.exchange.spurious, 0);
    }
}
