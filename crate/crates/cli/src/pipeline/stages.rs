use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ticketlab::corpus::{build_pretraining_mix, build_split, write_jsonl, DatasetSplit, Example, TaskKind};
use ticketlab::masks::{jaccard, random_mask, write_mask, write_overlap_csv, Mask, OverlapReport, Provenance};
use ticketlab::model::{encode, encode_checkpoint, init_params, train, Checkpoint, ModelConfig, ParamSet, TrainConfig};
use ticketlab::numerics::{derive_seed, mean_std};
use ticketlab::pruning::{diff_scores, extend_mask, fisher_mask, write_trace_jsonl, PruneScope};
use ticketlab::similarity::{
    layer_profile, margin_retrieve, parallel_examples, write_profile_csv, write_retrieval_csv,
};
use ticketlab::transfer::{
    cross_language_transfer, imp_per_seed, make_baseline, mask_at, train_subnetwork, verdict, write_transfer_csv,
    write_verdicts_jsonl, FullModelBaseline, Setup, TransferMatrix,
};

use super::{data_path, mask_path, pct, Experiment, Outputs, THETA0};
use crate::config::PruneMethod;
use crate::error::Result;

/// Salt for the random-mask baseline, shared with the transfer matrix.
const RANDOM_MASK_TAG: u64 = 0x7a4d;

fn json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| ticketlab::Error::Format(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| ticketlab::Error::Format(e.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| ticketlab::Error::Format(e.to_string()).into())
}

pub(crate) fn transfer_json(task: TaskKind, s: f64) -> String {
    format!("transfer/{task}/s{}.json", pct(s))
}

pub(crate) fn baselines_json(task: TaskKind) -> String {
    format!("transfer/{task}/baselines.json")
}

pub(crate) fn compare_json(task: TaskKind) -> String {
    format!("compare/{task}.json")
}

pub(crate) fn overlap_json(task: TaskKind) -> String {
    format!("overlap/{task}/summary.json")
}

pub(crate) const PROFILE_CSV: &str = "similarity/profile.csv";
pub(crate) const RETRIEVAL_CSV: &str = "retrieval/retrieval.csv";

pub(super) fn generate(e: &Experiment) -> Result<Outputs> {
    let mut out: Outputs = vec![
        ("data/grammar.json".into(), json(&e.grammar)?),
        ("data/languages.json".into(), json(&e.languages)?),
    ];
    let cfg = &e.config;
    let mix = build_pretraining_mix(&e.grammar, &e.languages, &cfg.pretrain.sizes, cfg.pretrain_data_seed())?;
    let mut bytes = Vec::new();
    write_jsonl(&mix, &mut bytes)?;
    out.push(("data/pretrain.jsonl".into(), bytes));
    for task in e.tasks() {
        let files = (0..e.languages.len())
            .into_par_iter()
            .map(|i| {
                let lang = &e.languages[i];
                let split = build_split(
                    &e.grammar,
                    lang,
                    task,
                    &cfg.tasks.get(task).sizes,
                    cfg.data_seed(task, i),
                )?;
                let mut bytes = Vec::new();
                write_jsonl(&split, &mut bytes)?;
                Ok((data_path(task, &lang.language_id), bytes))
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(files);
    }
    Ok(out)
}

pub(super) fn pretrain(e: &Experiment) -> Result<Outputs> {
    let cfg = &e.config;
    let mix = build_pretraining_mix(&e.grammar, &e.languages, &cfg.pretrain.sizes, cfg.pretrain_data_seed())?;
    let mut bytes = Vec::new();
    write_jsonl(&mix, &mut bytes)?;
    let recorded = e.manifest().stages["generate"]
        .artifacts
        .iter()
        .find(|a| a.path == "data/pretrain.jsonl");
    if recorded.map(|a| &a.sha256) != Some(&crate::manifest::sha256_hex(&bytes)) {
        return Err(
            ticketlab::Error::Format("regenerated pretraining data differs from data/pretrain.jsonl".into()).into(),
        );
    }
    let p0 = init_params(&cfg.model, cfg.init_seed())?;
    let outcome = train(
        &cfg.model,
        &p0,
        None,
        &mix,
        &cfg.pretrain.train.with_seed(cfg.pretrain_seed()),
    )?;
    let seeds = BTreeMap::from([
        ("init".to_string(), cfg.init_seed()),
        ("pretrain".to_string(), cfg.pretrain_seed()),
    ]);
    let ckpt = Checkpoint {
        config: cfg.model.clone(),
        seeds,
        params: outcome.final_params,
    };
    Ok(vec![
        (THETA0.into(), encode_checkpoint(&ckpt)?),
        ("model/pretrain_history.json".into(), json(&outcome.history)?),
    ])
}

pub(super) fn prune(e: &Experiment, method: PruneMethod, task: TaskKind) -> Result<Outputs> {
    let theta0 = e.theta0()?;
    let cfg = &e.config;
    let seeds = cfg.run_seeds();
    let sched = cfg.imp_schedule(task);
    let sparsities = &cfg.pruning.sparsities;
    let per_language = (0..e.languages.len())
        .into_par_iter()
        .map(|i| -> Result<Outputs> {
            let split = e.split(task, i)?;
            let lang = &split.language_id;
            let mut out = Outputs::new();
            let file = |k: usize, s: f64, m: &Mask| -> Result<(String, Vec<u8>)> {
                Ok((mask_path(method, task, lang, s, k), write_mask(m)?))
            };
            match method {
                PruneMethod::Imp => {
                    let setup = Setup {
                        model: &cfg.model,
                        theta0: &theta0,
                        train: &sched.train,
                        seeds: &seeds,
                    };
                    let traces = imp_per_seed(&setup, &split, &sched)?;
                    for (k, trace) in traces.iter().enumerate() {
                        for &s in sparsities {
                            out.push(file(k, s, &mask_at(trace, &theta0, &sched, s)?)?);
                        }
                        let mut bytes = Vec::new();
                        write_trace_jsonl(trace, &mut bytes)?;
                        out.push((format!("masks/imp/{task}/{lang}/trace_run{k}.jsonl"), bytes));
                    }
                }
                PruneMethod::DiffInit => {
                    let masks = seeds
                        .par_iter()
                        .map(|&seed| {
                            diff_masks(
                                &cfg.model,
                                &theta0,
                                &split,
                                &sched.train.with_seed(seed),
                                sparsities,
                                cfg.pruning.scope,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?;
                    for (k, ms) in masks.iter().enumerate() {
                        for (m, &s) in ms.iter().zip(sparsities) {
                            out.push(file(k, s, m)?);
                        }
                    }
                }
                PruneMethod::Fisher => {
                    for (k, &seed) in seeds.iter().enumerate() {
                        for &s in sparsities {
                            let m = fisher_mask(
                                &cfg.model,
                                &theta0,
                                &split,
                                s,
                                cfg.pruning.fisher_samples,
                                seed,
                                cfg.pruning.fisher_mode,
                            )?;
                            out.push(file(k, s, &m)?);
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_language.into_iter().flatten().collect())
}

/// Masks from one fine-tuning run, keeping the coordinates that moved most from θ₀.
fn diff_masks(
    model: &ModelConfig,
    theta0: &ParamSet,
    split: &DatasetSplit,
    tcfg: &TrainConfig,
    sparsities: &[f64],
    scope: PruneScope,
) -> Result<Vec<Mask>> {
    let tuned = train(model, theta0, None, split, tcfg)?;
    let scores = diff_scores(theta0, &tuned.best_params);
    let provenance = Provenance {
        task: Some(split.task_kind),
        languages: vec![split.language_id.clone()],
        seed: tcfg.seed,
        rounds: 1,
        ..Provenance::new("diff_from_init")
    };
    let ones = Mask::ones(theta0);
    Ok(sparsities
        .iter()
        .map(|&s| extend_mask(&ones, &scores, s, scope, provenance.clone()))
        .collect::<ticketlab::Result<Vec<_>>>()?)
}

#[derive(Serialize)]
struct VerdictKey<'a> {
    task: TaskKind,
    language: &'a str,
    sparsity: f64,
}

pub(super) fn transfer(e: &Experiment, task: TaskKind) -> Result<Outputs> {
    let theta0 = e.theta0()?;
    let cfg = &e.config;
    let seeds = cfg.run_seeds();
    let tcfg = &cfg.tasks.get(task).train;
    let setup = Setup {
        model: &cfg.model,
        theta0: &theta0,
        train: tcfg,
        seeds: &seeds,
    };
    let splits = e.splits(task)?;
    let baselines = splits
        .par_iter()
        .map(|s| make_baseline(&setup, s))
        .collect::<ticketlab::Result<Vec<_>>>()?;
    let mut out: Outputs = vec![(baselines_json(task), json(&baselines)?)];
    let mut verdicts = Vec::new();
    for &s in &cfg.pruning.sparsities {
        let masks = e
            .language_ids()
            .iter()
            .map(|l| e.masks(PruneMethod::Imp, task, l, s, &theta0))
            .collect::<Result<Vec<_>>>()?;
        let matrix = cross_language_transfer(&setup, &splits, &masks, &baselines, s)?;
        for (t, lang) in matrix.languages.iter().enumerate() {
            let key = VerdictKey {
                task,
                language: lang,
                sparsity: s,
            };
            verdicts.push((
                serde_json::to_value(key).expect("key serializes"),
                verdict(&matrix.cells[t][t].outcome, &baselines[t])?,
            ));
        }
        let mut bytes = Vec::new();
        write_transfer_csv(&matrix, &mut bytes)?;
        out.push((format!("transfer/{task}/s{}.csv", pct(s)), bytes));
        out.push((transfer_json(task, s), json(&matrix)?));
    }
    let mut bytes = Vec::new();
    write_verdicts_jsonl(&verdicts, &mut bytes)?;
    out.push((format!("transfer/{task}/verdicts.jsonl"), bytes));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task: TaskKind,
    pub sparsity: f64,
    pub language: String,
    pub method: String,
    pub mean_metric: f64,
    pub std_metric: f64,
    pub mean_step: f64,
    pub degradation: f64,
    pub winning: bool,
}

pub(super) fn compare(e: &Experiment, task: TaskKind) -> Result<Outputs> {
    let theta0 = e.theta0()?;
    let cfg = &e.config;
    let seeds = cfg.run_seeds();
    let setup = Setup {
        model: &cfg.model,
        theta0: &theta0,
        train: &cfg.tasks.get(task).train,
        seeds: &seeds,
    };
    let splits = e.splits(task)?;
    let baselines: Vec<FullModelBaseline> = e.read_json(&baselines_json(task))?;
    let mut rows = Vec::new();
    for &s in &cfg.pruning.sparsities {
        let matrix: TransferMatrix = e.read_json(&transfer_json(task, s))?;
        let mut jobs = Vec::new();
        for (i, lang) in e.language_ids().iter().enumerate() {
            for m in e.alternative_methods() {
                jobs.push((i, m, e.masks(m, task, lang, s, &theta0)?));
            }
        }
        let trained = jobs
            .par_iter()
            .map(|(i, m, masks)| Ok((*i, m.name().to_string(), train_subnetwork(&setup, masks, &splits[*i])?)))
            .collect::<Result<Vec<_>>>()?;
        let imp_rows = (0..splits.len()).map(|i| (i, "imp".to_string(), matrix.cells[i][i].outcome.clone()));
        for (i, method, outcome) in imp_rows.chain(trained) {
            let v = verdict(&outcome, &baselines[i])?;
            rows.push(ComparisonRow {
                task,
                sparsity: s,
                language: splits[i].language_id.clone(),
                method,
                mean_metric: outcome.mean_metric,
                std_metric: outcome.std_metric,
                mean_step: outcome.mean_step,
                degradation: v.degradation,
                winning: v.is_winning,
            });
        }
    }
    rows.sort_by(|a, b| {
        (a.sparsity, &a.language, &a.method)
            .partial_cmp(&(b.sparsity, &b.language, &b.method))
            .expect("finite sparsity")
    });
    Ok(vec![
        (format!("compare/{task}.csv"), csv_bytes(&rows)?),
        (compare_json(task), json(&rows)?),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    pub task: TaskKind,
    pub sparsity: f64,
    /// Same language, different run seeds.
    pub within_language: f64,
    /// Different languages, different run seeds.
    pub cross_language: f64,
    /// Different languages, same run seed.
    pub cross_language_same_seed: f64,
    /// Random masks against each other.
    pub random: f64,
    /// `(1 - s) / (1 + s)`, the expected overlap of independent random masks.
    pub random_expected: f64,
}

fn mean(values: &[f64]) -> f64 {
    mean_std(values).0
}

pub(super) fn overlap(e: &Experiment, task: TaskKind) -> Result<Outputs> {
    let theta0 = e.theta0()?;
    let seeds = e.config.run_seeds();
    let langs = e.language_ids();
    let mut out = Outputs::new();
    let mut summaries = Vec::new();
    for &s in &e.config.pruning.sparsities {
        // (language index or None for random, run index, mask)
        let mut masks: Vec<(Option<usize>, usize, Mask)> = Vec::new();
        for (i, l) in langs.iter().enumerate() {
            for (k, m) in e.masks(PruneMethod::Imp, task, l, s, &theta0)?.into_iter().enumerate() {
                masks.push((Some(i), k, m));
            }
        }
        for (k, &seed) in seeds.iter().enumerate() {
            let mut m = random_mask(&theta0, s, derive_seed(seed, &[RANDOM_MASK_TAG]))?;
            m.provenance.seed = seed;
            masks.push((None, k, m));
        }
        let pairs: Vec<(usize, usize)> = (0..masks.len())
            .flat_map(|a| (a + 1..masks.len()).map(move |b| (a, b)))
            .collect();
        let reports = pairs
            .par_iter()
            .map(|&(a, b)| jaccard(&masks[a].2, &masks[b].2))
            .collect::<ticketlab::Result<Vec<OverlapReport>>>()?;
        let (mut within, mut cross, mut same_seed, mut random) = (vec![], vec![], vec![], vec![]);
        for (&(a, b), r) in pairs.iter().zip(&reports) {
            let ((la, ka, _), (lb, kb, _)) = (&masks[a], &masks[b]);
            match (la, lb) {
                (Some(x), Some(y)) if x == y => within.push(r.global_jaccard),
                (Some(_), Some(_)) if ka != kb => cross.push(r.global_jaccard),
                (Some(_), Some(_)) => same_seed.push(r.global_jaccard),
                (None, None) => random.push(r.global_jaccard),
                _ => {}
            }
        }
        let mut bytes = Vec::new();
        write_overlap_csv(&reports, &mut bytes)?;
        out.push((format!("overlap/{task}/s{}.csv", pct(s)), bytes));
        summaries.push(OverlapSummary {
            task,
            sparsity: s,
            within_language: mean(&within),
            cross_language: mean(&cross),
            cross_language_same_seed: mean(&same_seed),
            random: mean(&random),
            random_expected: (1.0 - s) / (1.0 + s),
        });
    }
    out.push((overlap_json(task), json(&summaries)?));
    Ok(out)
}

fn parallel(e: &Experiment) -> Result<Vec<Vec<Example>>> {
    let s = &e.config.similarity;
    let refs: Vec<_> = e.languages.iter().collect();
    Ok(parallel_examples(
        &e.grammar,
        &refs,
        s.sentences,
        s.sentence_len,
        e.config.parallel_seed(),
    )?)
}

fn pair_indices(e: &Experiment) -> Vec<(String, usize, usize)> {
    let ids = e.language_ids();
    let at = |l: &str| ids.iter().position(|x| x == l).expect("validated pair");
    e.config
        .similarity
        .pairs
        .iter()
        .map(|[a, b]| (format!("{a}-{b}"), at(a), at(b)))
        .collect()
}

pub(super) fn similarity(e: &Experiment) -> Result<Outputs> {
    let theta0 = e.theta0()?;
    let s = &e.config.similarity;
    let examples = parallel(e)?;
    let mut rows = Vec::new();
    for (pair, a, b) in pair_indices(e) {
        for &method in &s.methods {
            let points = layer_profile(
                &e.config.model,
                &theta0,
                None,
                &examples[a],
                &examples[b],
                method,
                s.ridge,
            )
            .map_err(|err| err.context(format!("{pair} {}", method.name())))?;
            rows.extend(
                points
                    .into_iter()
                    .filter(|p| s.layers.contains(&p.layer))
                    .map(|p| (pair.clone(), p)),
            );
        }
    }
    let mut bytes = Vec::new();
    write_profile_csv(&rows, &mut bytes)?;
    Ok(vec![(PROFILE_CSV.into(), bytes)])
}

pub(super) fn retrieve(e: &Experiment) -> Result<Outputs> {
    let theta0 = e.theta0()?;
    let r = e.config.similarity.retrieval;
    let examples = parallel(e)?;
    let reps = examples
        .par_iter()
        .map(|ex| encode(&e.config.model, &theta0, None, ex))
        .collect::<ticketlab::Result<Vec<_>>>()?;
    let rows = pair_indices(e)
        .into_iter()
        .map(|(pair, a, b)| {
            let res =
                margin_retrieve(&reps[a][r.layer], &reps[b][r.layer], &r).map_err(|err| err.context(pair.clone()))?;
            Ok((pair, r.k, res.top1, res.top5))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut bytes = Vec::new();
    write_retrieval_csv(&rows, &mut bytes)?;
    Ok(vec![(RETRIEVAL_CSV.into(), bytes)])
}
