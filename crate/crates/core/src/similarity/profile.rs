use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::retrieval::csv_err;
use super::{pwcca, svcca, Ridge};
use crate::corpus::{build_example, AbstractGrammar, Example, LanguageSpec, SplitSizes, TaskKind};
use crate::error::{ensure, Result};
use crate::masks::Mask;
use crate::model::{encode, ModelConfig, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SimilarityMethod {
    Svcca { threshold: f64 },
    Pwcca,
}

impl SimilarityMethod {
    pub fn name(self) -> &'static str {
        match self {
            SimilarityMethod::Svcca { .. } => "svcca",
            SimilarityMethod::Pwcca => "pwcca",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub layer: usize,
    pub method: String,
    pub value: f64,
}

/// Index-aligned renderings of the same abstract sentences, one list per language.
pub fn parallel_examples(
    grammar: &AbstractGrammar,
    languages: &[&LanguageSpec],
    count: usize,
    sentence_len: usize,
    seed: u64,
) -> Result<Vec<Vec<Example>>> {
    let sizes = SplitSizes {
        sentence_len,
        ..SplitSizes::default()
    };
    languages
        .iter()
        .map(|lang| {
            (0..count)
                .map(|i| build_example(grammar, lang, TaskKind::Tag, &sizes, seed, i))
                .collect()
        })
        .collect()
}

/// Similarity of mean-pooled representations of `src[i]` and `tgt[i]`, per captured layer.
pub fn layer_profile(
    cfg: &ModelConfig,
    params: &ParamSet,
    mask: Option<&Mask>,
    src: &[Example],
    tgt: &[Example],
    method: SimilarityMethod,
    ridge: Ridge,
) -> Result<Vec<ProfilePoint>> {
    ensure!(
        src.len() == tgt.len(),
        "parallel sides differ in length: {} vs {}",
        src.len(),
        tgt.len()
    );
    let a = encode(cfg, params, mask, src)?;
    let b = encode(cfg, params, mask, tgt)?;
    a.par_iter()
        .zip(&b)
        .enumerate()
        .map(|(layer, (x, y))| {
            let (x, y) = (x.transpose(), y.transpose());
            let r = match method {
                SimilarityMethod::Svcca { threshold } => svcca(&x, &y, threshold, ridge),
                SimilarityMethod::Pwcca => pwcca(&x, &y, ridge),
            }
            .map_err(|e| e.context(format!("layer {layer}")))?;
            Ok(ProfilePoint {
                layer,
                method: method.name().to_string(),
                value: match method {
                    SimilarityMethod::Svcca { .. } => r.rho_cca,
                    SimilarityMethod::Pwcca => r.rho_pw,
                },
            })
        })
        .collect()
}

pub fn write_profile_csv(rows: &[(String, ProfilePoint)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair", "layer", "method", "value"]).map_err(csv_err)?;
    for (pair, p) in rows {
        w.write_record([pair.clone(), p.layer.to_string(), p.method.clone(), p.value.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
