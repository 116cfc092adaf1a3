//! Stage runner: prerequisite checks, digest-keyed skipping and atomic artifact writes.

mod stages;

pub(crate) use stages::{baselines_json, compare_json, overlap_json, transfer_json, PROFILE_CSV, RETRIEVAL_CSV};
pub use stages::{ComparisonRow, OverlapSummary};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use ticketlab::corpus::{
    build_split, generate_language, write_jsonl, AbstractGrammar, DatasetSplit, LanguageSpec, TaskKind,
};
use ticketlab::masks::{read_mask, Mask};
use ticketlab::model::{decode_checkpoint, ParamSet};

use crate::config::{ExperimentConfig, PruneMethod};
use crate::error::{CliError, Result};
use crate::manifest::{sha256_hex, write_atomic, Artifact, RunManifest, StageRecord};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Files produced by one stage: relative path and contents.
pub type Outputs = Vec<(String, Vec<u8>)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageStatus {
    Ran { secs: f64 },
    Skipped,
}

/// A stage key plus the command that produces it.
#[derive(Debug, Clone)]
pub struct Stage {
    pub key: String,
    pub command: String,
}

impl Stage {
    pub fn generate() -> Stage {
        Stage::new("generate", "ticketlab generate")
    }

    pub fn pretrain() -> Stage {
        Stage::new("pretrain", "ticketlab pretrain")
    }

    pub fn prune(method: PruneMethod, task: TaskKind) -> Stage {
        let cmd = format!("ticketlab prune {} --task {task}", method.name().replace('_', "-"));
        Stage::new(format!("prune/{}/{task}", method.name()), cmd)
    }

    pub fn transfer(task: TaskKind) -> Stage {
        Stage::new(format!("transfer/{task}"), format!("ticketlab transfer --task {task}"))
    }

    pub fn compare(task: TaskKind) -> Stage {
        Stage::new(format!("compare/{task}"), format!("ticketlab compare --task {task}"))
    }

    pub fn overlap(task: TaskKind) -> Stage {
        Stage::new(format!("overlap/{task}"), format!("ticketlab overlap --task {task}"))
    }

    pub fn similarity() -> Stage {
        Stage::new("similarity", "ticketlab similarity")
    }

    pub fn retrieve() -> Stage {
        Stage::new("retrieve", "ticketlab retrieve")
    }

    pub fn report() -> Stage {
        Stage::new("report", "ticketlab report")
    }

    fn new(key: impl Into<String>, command: impl Into<String>) -> Stage {
        Stage {
            key: key.into(),
            command: command.into(),
        }
    }
}

pub fn pct(s: f64) -> u32 {
    (s * 100.0).round() as u32
}

pub fn data_path(task: TaskKind, language: &str) -> String {
    format!("data/{task}/{language}.jsonl")
}

pub fn mask_path(method: PruneMethod, task: TaskKind, language: &str, s: f64, run: usize) -> String {
    format!("masks/{}/{task}/{language}/s{}_run{run}.mask", method.name(), pct(s))
}

pub const THETA0: &str = "model/theta0.ckpt";

/// One experiment bound to an output directory.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub root: PathBuf,
    pub grammar: AbstractGrammar,
    pub languages: Vec<LanguageSpec>,
    manifest: RunManifest,
    /// Re-run stages even when their inputs are unchanged.
    pub force: bool,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl Experiment {
    /// Validate the config, build the language set and persist the resolved config.
    pub fn open(mut config: ExperimentConfig, root: &Path) -> Result<Experiment> {
        config.resolve()?;
        let grammar = AbstractGrammar::new(&config.grammar).map_err(|e| CliError::config(format!("grammar: {e}")))?;
        let languages = (0..config.languages.count)
            .map(|i| generate_language(&grammar, i, config.languages.shared_fraction, config.language_seed()))
            .collect::<ticketlab::Result<Vec<_>>>()
            .map_err(|e| CliError::config(format!("languages: {e}")))?;
        fs::create_dir_all(root).map_err(|e| CliError::io(format!("creating {}", root.display()), e))?;
        let digest = config.digest();
        let manifest = RunManifest::load_or_new(root, &digest)?;
        let mut exp = Experiment {
            config,
            root: root.to_path_buf(),
            grammar,
            languages,
            manifest,
            force: false,
            verbose: false,
        };
        let text = exp.config.to_toml()?;
        exp.record_artifacts(
            "config",
            String::new(),
            vec![(RESOLVED_CONFIG.to_string(), text.into_bytes())],
            0.0,
        )?;
        Ok(exp)
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn language_ids(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.language_id.clone()).collect()
    }

    pub fn tasks(&self) -> Vec<TaskKind> {
        self.config.tasks.enabled.clone()
    }

    /// Alternative pruners listed in the config.
    pub fn alternative_methods(&self) -> Vec<PruneMethod> {
        self.config
            .pruning
            .methods
            .iter()
            .copied()
            .filter(|&m| m != PruneMethod::Imp)
            .collect()
    }

    fn check_task(&self, task: TaskKind) -> Result<()> {
        if self.config.tasks.enabled.contains(&task) {
            Ok(())
        } else {
            Err(CliError::config(format!("task {task} is not in tasks.enabled")))
        }
    }

    fn check_method(&self, method: PruneMethod) -> Result<()> {
        if self.config.pruning.methods.contains(&method) {
            Ok(())
        } else {
            Err(CliError::config(format!(
                "pruning method {} is not in pruning.methods",
                method.name()
            )))
        }
    }

    fn verify_artifacts(&self, record: &StageRecord) -> std::result::Result<(), String> {
        for a in &record.artifacts {
            let bytes = fs::read(self.root.join(&a.path)).map_err(|_| format!("{} is missing", a.path))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(format!("{} was modified", a.path));
            }
        }
        Ok(())
    }

    /// Input key from the config and the prerequisites' artifacts, after checking them on disk.
    fn check_prerequisites(&self, stage: &Stage, prereqs: &[Stage]) -> Result<String> {
        let mut key = format!("{}\n{}\n", self.manifest.config_digest, stage.key);
        for p in prereqs {
            let missing = |detail: String| CliError::Prerequisite {
                stage: stage.key.clone(),
                detail,
                command: p.command.clone(),
            };
            let record = self
                .manifest
                .stages
                .get(&p.key)
                .ok_or_else(|| missing(format!("the output of `{}`", p.command)))?;
            self.verify_artifacts(record)
                .map_err(|d| missing(format!("{d} (produced by `{}`)", p.command)))?;
            for a in &record.artifacts {
                key.push_str(&a.path);
                key.push(' ');
                key.push_str(&a.sha256);
                key.push('\n');
            }
        }
        Ok(sha256_hex(key.as_bytes()))
    }

    fn record_artifacts(&mut self, key: &str, input_key: String, outputs: Outputs, secs: f64) -> Result<()> {
        let mut artifacts = Vec::with_capacity(outputs.len());
        for (path, bytes) in outputs {
            write_atomic(&self.root.join(&path), &bytes)?;
            artifacts.push(Artifact {
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
                path,
            });
        }
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        self.manifest.stages.insert(
            key.to_string(),
            StageRecord {
                input_key,
                artifacts,
                wall_clock_secs: secs,
                deterministic: true,
            },
        );
        self.manifest.save(&self.root)
    }

    /// Run `body` unless an identical earlier run is recorded and intact.
    pub fn run_stage(
        &mut self,
        stage: &Stage,
        prereqs: &[Stage],
        body: impl FnOnce(&Self) -> Result<Outputs>,
    ) -> Result<StageStatus> {
        let input_key = self.check_prerequisites(stage, prereqs)?;
        if !self.force {
            if let Some(r) = self.manifest.stages.get(&stage.key) {
                if r.input_key == input_key && self.verify_artifacts(r).is_ok() {
                    self.log(&format!("{}: up to date", stage.key));
                    return Ok(StageStatus::Skipped);
                }
            }
        }
        self.log(&format!("{}: running", stage.key));
        let start = Instant::now();
        let outputs = body(self).map_err(|e| match e {
            CliError::Core(c) => CliError::Core(c.context(stage.key.clone())),
            other => other,
        })?;
        let secs = start.elapsed().as_secs_f64();
        self.record_artifacts(&stage.key, input_key, outputs, secs)?;
        self.log(&format!("{}: done in {secs:.1}s", stage.key));
        Ok(StageStatus::Ran { secs })
    }

    fn log(&self, line: &str) {
        if self.verbose {
            eprintln!("{line}");
        }
    }

    fn read(&self, path: &str) -> Result<Vec<u8>> {
        fs::read(self.root.join(path)).map_err(|e| CliError::io(format!("reading {path}"), e))
    }

    pub fn read_json<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Core(ticketlab::Error::Format(format!("{path}: {e}"))))
    }

    /// Regenerate a task split and check it against the file `generate` recorded.
    pub fn split(&self, task: TaskKind, language: usize) -> Result<DatasetSplit> {
        let lang = &self.languages[language];
        let sizes = &self.config.tasks.get(task).sizes;
        let split = build_split(&self.grammar, lang, task, sizes, self.config.data_seed(task, language))?;
        let path = data_path(task, &lang.language_id);
        let recorded = self
            .manifest
            .stages
            .get("generate")
            .and_then(|r| r.artifacts.iter().find(|a| a.path == path))
            .ok_or_else(|| CliError::Prerequisite {
                stage: format!("{task} data"),
                detail: path.clone(),
                command: Stage::generate().command,
            })?;
        let mut bytes = Vec::new();
        write_jsonl(&split, &mut bytes)?;
        if sha256_hex(&bytes) != recorded.sha256 {
            return Err(ticketlab::Error::Format(format!("regenerated {path} differs from the recorded file")).into());
        }
        Ok(split)
    }

    pub fn splits(&self, task: TaskKind) -> Result<Vec<DatasetSplit>> {
        (0..self.languages.len()).map(|i| self.split(task, i)).collect()
    }

    pub fn theta0(&self) -> Result<ParamSet> {
        let ckpt = decode_checkpoint(&self.read(THETA0)?)?;
        if ckpt.config != self.config.model {
            return Err(
                ticketlab::Error::Incompatible(format!("{THETA0} was trained with a different model config")).into(),
            );
        }
        Ok(ckpt.params)
    }

    /// One mask per run seed.
    pub fn masks(
        &self,
        method: PruneMethod,
        task: TaskKind,
        language: &str,
        s: f64,
        theta0: &ParamSet,
    ) -> Result<Vec<Mask>> {
        (0..self.config.run_seeds)
            .map(|k| {
                let path = mask_path(method, task, language, s, k);
                Ok(read_mask(&self.read(&path)?, Some(theta0)).map_err(|e| e.context(path))?)
            })
            .collect()
    }

    pub fn generate(&mut self) -> Result<StageStatus> {
        self.run_stage(&Stage::generate(), &[], stages::generate)
    }

    pub fn pretrain(&mut self) -> Result<StageStatus> {
        self.run_stage(&Stage::pretrain(), &[Stage::generate()], stages::pretrain)
    }

    pub fn prune(&mut self, method: PruneMethod, task: TaskKind) -> Result<StageStatus> {
        self.check_task(task)?;
        self.check_method(method)?;
        let prereqs = [Stage::generate(), Stage::pretrain()];
        self.run_stage(&Stage::prune(method, task), &prereqs, |e| {
            stages::prune(e, method, task)
        })
    }

    pub fn transfer(&mut self, task: TaskKind) -> Result<StageStatus> {
        self.check_task(task)?;
        let prereqs = [
            Stage::generate(),
            Stage::pretrain(),
            Stage::prune(PruneMethod::Imp, task),
        ];
        self.run_stage(&Stage::transfer(task), &prereqs, |e| stages::transfer(e, task))
    }

    pub fn compare(&mut self, task: TaskKind) -> Result<StageStatus> {
        self.check_task(task)?;
        let alts = self.alternative_methods();
        if alts.is_empty() {
            return Err(CliError::config("pruning.methods lists no alternative to imp"));
        }
        let mut prereqs = vec![Stage::generate(), Stage::pretrain(), Stage::transfer(task)];
        prereqs.extend(alts.iter().map(|&m| Stage::prune(m, task)));
        self.run_stage(&Stage::compare(task), &prereqs, |e| stages::compare(e, task))
    }

    pub fn overlap(&mut self, task: TaskKind) -> Result<StageStatus> {
        self.check_task(task)?;
        let prereqs = [Stage::pretrain(), Stage::prune(PruneMethod::Imp, task)];
        self.run_stage(&Stage::overlap(task), &prereqs, |e| stages::overlap(e, task))
    }

    pub fn similarity(&mut self) -> Result<StageStatus> {
        self.run_stage(&Stage::similarity(), &[Stage::pretrain()], stages::similarity)
    }

    pub fn retrieve(&mut self) -> Result<StageStatus> {
        self.run_stage(&Stage::retrieve(), &[Stage::pretrain()], stages::retrieve)
    }

    pub fn report(&mut self) -> Result<StageStatus> {
        let mut prereqs = Vec::new();
        for task in self.tasks() {
            prereqs.push(Stage::transfer(task));
            prereqs.push(Stage::overlap(task));
            if !self.alternative_methods().is_empty() {
                prereqs.push(Stage::compare(task));
            }
        }
        prereqs.push(Stage::similarity());
        prereqs.push(Stage::retrieve());
        self.run_stage(&Stage::report(), &prereqs, crate::report::build)
    }

    /// Every stage in dependency order.
    pub fn run_all(&mut self) -> Result<()> {
        self.generate()?;
        self.pretrain()?;
        for task in self.tasks() {
            for &m in &self.config.pruning.methods.clone() {
                self.prune(m, task)?;
            }
            self.transfer(task)?;
            if !self.alternative_methods().is_empty() {
                self.compare(task)?;
            }
            self.overlap(task)?;
        }
        self.similarity()?;
        self.retrieve()?;
        self.report()?;
        Ok(())
    }
}
