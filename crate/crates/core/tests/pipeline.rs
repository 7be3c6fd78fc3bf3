use rpbayes::conc::{kl_inv_upper, pac_bayes_kl_bound, ConfidenceBudget};
use rpbayes::data::make_blobs;
use rpbayes::exec::Exec;
use rpbayes::pmodel::{ClassifierArch, TrainConfig};
use rpbayes::rpb::{
    baseline, evaluate_bound_chain, train_chain, BaselineConfig, BaselineMethod, ChainConfig, ChainFile,
    ChainSeeds, DataSource,
};
use rpbayes::templin::{cpe_scan, CpeConfig, Setting};

fn small_chain_config(depth: usize) -> ChainConfig {
    ChainConfig {
        depth,
        train: TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
        seeds: ChainSeeds::from_master(11),
        ..ChainConfig::default()
    }
}

#[test]
fn chain_file_reproduces_the_report() {
    let source = DataSource::Blobs {
        n: 1200,
        classes: 3,
        dim: 4,
        separation: 3.0,
        seed: 5,
    };
    let raw = source.load().unwrap();
    let arch = ClassifierArch::one_hidden(4, 8, 3).unwrap();
    let chain = train_chain(&raw, &arch, &small_chain_config(3), Exec::Parallel).unwrap();
    let budget = ConfidenceBudget::new(0.025, 0.01, 3).unwrap();
    let ordered = chain.ordered_data(&raw).unwrap();
    let direct = evaluate_bound_chain(&chain, &ordered, None, &budget, 2, Exec::Parallel).unwrap();

    let json = serde_json::to_string(&ChainFile::from_chain(&chain, Some(source), None)).unwrap();
    let file: ChainFile = serde_json::from_str(&json).unwrap();
    let reloaded_raw = file.data.as_ref().unwrap().load().unwrap();
    let reloaded = file.into_chain().unwrap();
    let ordered = reloaded.ordered_data(&reloaded_raw).unwrap();
    let again = evaluate_bound_chain(&reloaded, &ordered, None, &budget, 2, Exec::Sequential).unwrap();
    assert_eq!(direct, again);
    assert!(direct.valid);
    assert!(direct.final_bound > 0.0 && direct.final_bound <= 1.0);
}

#[test]
fn training_and_evaluation_ignore_the_strategy() {
    let raw = make_blobs(800, 2, 2, 3.0, 1).unwrap();
    let arch = ClassifierArch::linear(2, 2).unwrap();
    let cfg = small_chain_config(2);
    let budget = ConfidenceBudget::new(0.025, 0.01, 2).unwrap();
    let run = |exec| {
        let chain = train_chain(&raw, &arch, &cfg, exec).unwrap();
        let ordered = chain.ordered_data(&raw).unwrap();
        let report = evaluate_bound_chain(&chain, &ordered, Some(&raw), &budget, 9, exec).unwrap();
        (chain.posteriors, report)
    };
    assert_eq!(run(Exec::Sequential), run(Exec::Parallel));
}

#[test]
fn single_step_bound_matches_its_parts() {
    // the uninformed baseline bound is the kl bound at the Monte Carlo
    // corrected empirical loss
    let raw = make_blobs(600, 2, 2, 3.0, 2).unwrap();
    let arch = ClassifierArch::linear(2, 2).unwrap();
    let cfg = BaselineConfig {
        method: BaselineMethod::Uninformed,
        train: TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
        ..BaselineConfig::default()
    };
    let out = baseline(&raw, &arch, &cfg, None, 0.01, 4, Exec::Parallel).unwrap();
    let step = &out.report.steps[0];
    assert_eq!(step.n_val, 600);
    let corrected = kl_inv_upper(step.emp_loss.unwrap(), (1.0f64 / 0.01).ln() / 600.0).unwrap();
    let bound = pac_bayes_kl_bound(corrected, step.kl, 600, 0.025).unwrap();
    assert!((bound - out.report.final_bound).abs() < 1e-12);
}

#[test]
fn scan_strategy_independent() {
    let cfg = CpeConfig {
        eval_points: 300,
        posterior_samples: 300,
    };
    let setting = Setting::LikelihoodMisspecII.config();
    let a = cpe_scan(setting, &[0.5, 1.0, 2.0], 3, cfg, Exec::Sequential).unwrap();
    let b = cpe_scan(setting, &[0.5, 1.0, 2.0], 3, cfg, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}
