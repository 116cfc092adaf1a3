use super::*;
use crate::corpus::{build_split, generate_language, AbstractGrammar, GrammarConfig, SplitSizes, VocabLayout};
use crate::masks::jaccard;
use crate::model::init_params;

fn outcome(task: TaskKind, metrics: &[f64], steps: &[usize]) -> SeedOutcome {
    let runs = metrics
        .iter()
        .zip(steps)
        .enumerate()
        .map(|(k, (&m, &s))| RunSummary {
            seed: k as u64,
            best_metric: m,
            best_step: s,
            total_steps: 2000,
        })
        .collect();
    SeedOutcome::from_runs(task, runs)
}

fn baseline(task: TaskKind, metrics: &[f64], step: usize) -> FullModelBaseline {
    FullModelBaseline {
        task,
        language: "L0".into(),
        outcome: outcome(task, metrics, &vec![step; metrics.len()]),
    }
}

#[test]
fn baseline_arithmetic() {
    let b = baseline(TaskKind::Cls, &[0.80, 0.82, 0.81], 100);
    assert!((b.mean() - 0.81).abs() < 1e-12);
    assert!((b.epsilon() - 0.01).abs() < 1e-12);
    assert_eq!(baseline(TaskKind::Cls, &[0.5; 3], 1).epsilon(), 0.0);
}

#[test]
fn verdict_clauses() {
    // a = 0.80, eps = 0.01, i = 1200.
    let b = baseline(TaskKind::Cls, &[0.79, 0.80, 0.81], 1200);
    let v = verdict(&outcome(TaskKind::Cls, &[0.795], &[1000]), &b).unwrap();
    assert!(v.is_winning);
    assert!((v.degradation - 0.005).abs() < 1e-12);
    let better = verdict(&outcome(TaskKind::Cls, &[0.9], &[1200]), &b).unwrap();
    assert!(better.is_winning && better.degradation < 0.0);
    let slow = verdict(&outcome(TaskKind::Cls, &[0.8], &[1300]), &b).unwrap();
    assert!(slow.within_epsilon && !slow.no_slower && !slow.is_winning);
    let worse = verdict(&outcome(TaskKind::Cls, &[0.7], &[10]), &b).unwrap();
    assert!(!worse.is_winning);
    // Perplexity: lower is better.
    let pb = baseline(TaskKind::Mlm, &[10.0, 11.0, 12.0], 50);
    let pv = verdict(&outcome(TaskKind::Mlm, &[11.5], &[50]), &pb).unwrap();
    assert!((pv.degradation - 0.5).abs() < 1e-12 && pv.is_winning);
    assert!(verdict(&outcome(TaskKind::Tag, &[0.5], &[1]), &b).is_err());
}

fn grid(task: TaskKind, values: &[&[f64]]) -> TransferMatrix {
    let n = values.len();
    let langs: Vec<String> = (0..n).map(|i| format!("L{i}")).collect();
    let b = |t: usize| baseline(task, &[values[t][t]; 3], 10);
    let cells = (0..n)
        .map(|s| {
            (0..n)
                .map(|t| TransferCell {
                    source: langs[s].clone(),
                    target: langs[t].clone(),
                    outcome: outcome(task, &[values[s][t]], &[10]),
                    degradation: 0.0,
                    within_one_std: true,
                    no_slower: true,
                })
                .collect()
        })
        .collect();
    TransferMatrix {
        task,
        sparsity: 0.5,
        languages: langs,
        cells,
        random_row: Vec::new(),
        full_row: (0..n).map(b).collect(),
    }
}

#[test]
fn relative_drop_examples() {
    let same = grid(TaskKind::Cls, &[&[0.8, 0.7], &[0.7, 0.8]]);
    let eq = grid(
        TaskKind::Cls,
        &[&[80.0, 80.0, 80.0], &[80.0, 80.0, 80.0], &[80.0, 80.0, 80.0]],
    );
    assert_eq!(relative_drop(&eq, 0).unwrap(), 0.0);
    let two = grid(
        TaskKind::Cls,
        &[&[1.0, 78.0, 78.0], &[1.0, 80.0, 1.0], &[1.0, 1.0, 80.0]],
    );
    assert!((relative_drop(&two, 0).unwrap() + 0.025).abs() < 1e-12);
    let scaled = grid(TaskKind::Cls, &[&[8.0, 7.0], &[7.0, 8.0]]);
    assert!((relative_drop(&same, 0).unwrap() - relative_drop(&scaled, 0).unwrap()).abs() < 1e-12);
    assert!(relative_drop(&grid(TaskKind::Cls, &[&[1.0]]), 0).is_err());
    // Higher perplexity off the diagonal is a drop.
    let ppl = grid(TaskKind::Mlm, &[&[10.0, 12.0], &[12.0, 10.0]]);
    assert!((relative_drop(&ppl, 0).unwrap() + 0.2).abs() < 1e-12);
}

#[test]
fn sign_test_values() {
    assert!((sign_test(&[1.0, 1.0, 1.0]) - 0.125).abs() < 1e-12);
    assert!((sign_test(&[1.0, -1.0]) - 0.75).abs() < 1e-12);
    assert_eq!(sign_test(&[0.0, 0.0]), 1.0);
    assert!((sign_test(&[1.0; 10]) - 1.0 / 1024.0).abs() < 1e-15);
}

struct World {
    cfg: ModelConfig,
    theta0: ParamSet,
    splits: Vec<DatasetSplit>,
}

fn world(task: TaskKind, omega: f64) -> World {
    let grammar = AbstractGrammar::new(&GrammarConfig::default()).unwrap();
    let sizes = SplitSizes {
        train: 48,
        valid: 16,
        sentence_len: 8,
        pair_sentence_len: 6,
    };
    let splits = (0..2)
        .map(|i| {
            let l = generate_language(&grammar, i, omega, 4).unwrap();
            build_split(&grammar, &l, task, &sizes, 6).unwrap()
        })
        .collect();
    let cfg = ModelConfig {
        vocab_size: VocabLayout::new(64, omega, 2).size(),
        embed_dim: 8,
        ffn_dim: 12,
        layers: 1,
        ..ModelConfig::default()
    };
    World {
        theta0: init_params(&cfg, 2).unwrap(),
        cfg,
        splits,
    }
}

fn tcfg() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

fn schedule() -> ImpSchedule {
    ImpSchedule {
        rate_percent: 25,
        target_percent: 50,
        ..ImpSchedule::default()
    }
}

#[test]
fn transfer_matrix_diagonal_is_ticket() {
    let w = world(TaskKind::Tag, 0.2);
    let t = tcfg();
    let seeds = [1, 2, 3];
    let setup = Setup {
        model: &w.cfg,
        theta0: &w.theta0,
        train: &t,
        seeds: &seeds,
    };
    let baselines: Vec<_> = w.splits.iter().map(|s| make_baseline(&setup, s).unwrap()).collect();
    let masks: Vec<Vec<Mask>> = w
        .splits
        .iter()
        .map(|s| {
            imp_per_seed(&setup, s, &schedule())
                .unwrap()
                .iter()
                .map(|t| t.masks[1].clone())
                .collect()
        })
        .collect();
    let m = cross_language_transfer(&setup, &w.splits, &masks, &baselines, 0.5).unwrap();
    assert_eq!(m.cells.len(), 2);
    assert_eq!(m.random_row.len(), 2);
    for (t, ms) in masks.iter().enumerate() {
        let ticket = train_subnetwork(&setup, ms, &w.splits[t]).unwrap();
        assert_eq!(m.cells[t][t].outcome, ticket);
        assert_eq!(m.cells[t][t].degradation, 0.0);
    }
    let mut csv = Vec::new();
    write_transfer_csv(&m, &mut csv).unwrap();
    assert_eq!(
        String::from_utf8(csv).unwrap().lines().count(),
        1 + 4 * 3 + 2 * 3 + 2 * 3
    );
    let sweep = sparsity_sweep(&setup, &w.splits[0], &[0.0, 0.5], &schedule(), &baselines[0]).unwrap();
    assert_eq!(sweep[0].outcome, baselines[0].outcome);
    assert!(sweep[0].verdict.is_winning);
    assert_eq!(sweep[1].outcome, m.cells[0][0].outcome);
}

#[test]
fn cross_task_grid_shape() {
    let grammar = AbstractGrammar::new(&GrammarConfig::default()).unwrap();
    let w = world(TaskKind::Tag, 0.2);
    let lang = generate_language(&grammar, 0, 0.2, 4).unwrap();
    let sizes = SplitSizes {
        train: 32,
        valid: 8,
        sentence_len: 8,
        pair_sentence_len: 6,
    };
    let tasks = [TaskKind::Mlm, TaskKind::Tag, TaskKind::Cls];
    let splits: Vec<_> = tasks
        .iter()
        .map(|&t| build_split(&grammar, &lang, t, &sizes, 1).unwrap())
        .collect();
    let t = tcfg();
    let seeds = [5];
    let setup = Setup {
        model: &w.cfg,
        theta0: &w.theta0,
        train: &t,
        seeds: &seeds,
    };
    let masks: Vec<Vec<Mask>> = splits
        .iter()
        .map(|s| vec![imp_per_seed(&setup, s, &schedule()).unwrap().remove(0).masks.remove(1)])
        .collect();
    let g = cross_task_transfer(&[setup; 3], &splits, &masks).unwrap();
    assert_eq!(g.outcomes.len(), 3);
    for i in 0..3 {
        assert_eq!(g.degradation[i][i], 0.0);
    }
    assert!(g.mean_off_diagonal().is_finite());
}

#[test]
fn multilingual_single_language_is_plain_imp() {
    let w = world(TaskKind::Cls, 0.2);
    let t = tcfg();
    let seeds = [1, 2, 3];
    let setup = Setup {
        model: &w.cfg,
        theta0: &w.theta0,
        train: &t,
        seeds: &seeds,
    };
    let one = &w.splits[..1];
    let base = vec![make_baseline(&setup, &one[0]).unwrap()];
    let traces = imp_per_seed(&setup, &one[0], &schedule()).unwrap();
    let masks: Vec<Mask> = traces.iter().map(|t| t.masks[1].clone()).collect();
    let m = cross_language_transfer(&setup, one, std::slice::from_ref(&masks), &base, 0.5).unwrap();
    let multi = multilingual_ticket(&setup, one, 1.0, &schedule(), &m).unwrap();
    assert_eq!(multi.combined_train_size, one[0].train.len());
    for (a, b) in multi.masks.iter().zip(&masks) {
        assert_eq!(jaccard(a, b).unwrap().global_jaccard, 1.0);
    }
    assert_eq!(multi.row[0].outcome, m.cells[0][0].outcome);
}
