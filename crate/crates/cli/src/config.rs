//! Layered run configuration: built-in defaults, then a key/value file,
//! then `--section.key value` flags.
//!
//! The file format is plain text. Keys are dotted (`train.lr = 0.001`) or
//! grouped under `[section]` headers; `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use oog_gen::eval::EvalConfig;
use oog_gen::split::{MetaSetKind, SplitConfig};
use oog_gen::train::HyperParams;

pub struct Key {
    pub name: &'static str,
    pub default: String,
    pub help: &'static str,
}

fn key(name: &'static str, default: impl Display, help: &'static str) -> Key {
    Key {
        name,
        default: default.to_string(),
        help,
    }
}

/// Every configuration key with its default.
pub fn keys() -> Vec<Key> {
    let hp = HyperParams::default();
    vec![
        key("run.seed", 0, "Seed for all randomness"),
        key("run.threads", 1, "Evaluation worker threads"),
        key("run.out", "out", "Output directory"),
        key("data.triplets", "", "Triplet TSV (head, relation, tail) to split"),
        key("data.manifest", "", "Split manifest directory"),
        key("split.min_degree", 1, "Lowest raw triplet count of an unseen entity"),
        key("split.max_degree", 1_000_000, "Highest raw triplet count of an unseen entity"),
        key("split.n_unseen", 3, "Number of unseen entities to sample"),
        key("split.ratios", "1,1,1", "Relative train,valid,test sizes of the meta-sets"),
        key("model.dim", hp.dim, "Embedding dimension"),
        key("model.num_bases", hp.num_bases, "Basis matrices shared by the relation weights"),
        key("model.score", hp.score, "Score function: transe, distmult or linear"),
        key("model.mode", hp.mode, "Embedding layers: inductive, transductive or stochastic"),
        key("model.inverse_relations", hp.inverse_relations, "Give incoming edges their own relation ids"),
        key("model.hidden", hp.hidden, "Hidden width of the linear head (0 = 2 * dim)"),
        key("model.dropout", hp.dropout, "Dropout rate"),
        key("train.lr", hp.lr, "Adam learning rate"),
        key("train.margin", hp.margin, "Hinge loss margin"),
        key("train.num_neg", hp.num_neg, "Negatives per query triplet"),
        key("train.mc_samples", hp.mc_train, "Monte Carlo samples per training episode"),
        key("train.shots", hp.shots, "Support triplets per unseen entity (K)"),
        key("train.task_size", hp.task_size, "Unseen entities per episode (N)"),
        key("train.max_iteration", hp.max_iteration, "Meta-training episodes"),
        key("train.curriculum", hp.curriculum, "Decay the shot count from many to K"),
        key("train.eval_every", hp.eval_every, "Validate every this many episodes (0 = never)"),
        key("train.patience", hp.patience, "Validations without improvement before stopping"),
        key("train.init", "", "Checkpoint to start from (empty = random initialisation)"),
        key("pretrain.steps", hp.pretrain_steps, "Pretraining steps"),
        key("pretrain.batch", hp.pretrain_batch, "Positive triplets per pretraining step"),
        key("eval.checkpoint", "", "Checkpoint to evaluate"),
        key("eval.meta_set", "test", "Meta-set to evaluate: valid or test"),
        key("eval.mc_samples", hp.mc_test, "Monte Carlo samples per score in stochastic mode"),
        key("eval.ranks_csv", false, "Also write per-query ranks as CSV"),
        key("predict.checkpoint", "", "Checkpoint to predict with"),
        key("predict.queries", "", "Partial triplets, one per line, '?' marking the slot to fill"),
        key("predict.support", "", "Support triplets of the entities in the queries"),
        key("predict.top_k", 10, "Completions to print per query"),
    ]
}

#[derive(Debug)]
pub enum ConfigError {
    /// Usage or validation problem (exit code 2).
    Usage(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Usage(m) => f.write_str(m),
        }
    }
}

/// Parses a config file into dotted keys.
pub fn parse_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Usage(format!(
                "{}:{}: expected 'key = value', got '{raw}'",
                path.display(),
                i + 1
            )));
        };
        let k = k.trim();
        let full = if section.is_empty() || k.contains('.') {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        out.insert(full, v.trim().to_string());
    }
    Ok(out)
}

/// Resolved settings plus the errors collected while reading them.
pub struct Settings {
    values: BTreeMap<String, String>,
    errors: Vec<String>,
}

impl Settings {
    /// Defaults, then `file`, then `flags`. Unknown keys are errors.
    pub fn layer(file: BTreeMap<String, String>, flags: BTreeMap<String, String>) -> Self {
        let mut values: BTreeMap<String, String> = keys().into_iter().map(|k| (k.name.to_string(), k.default)).collect();
        let mut errors = Vec::new();
        for (k, v) in file.into_iter().chain(flags) {
            if let Some(slot) = values.get_mut(&k) {
                *slot = v;
            } else {
                errors.push(format!("{k}: unknown key"));
            }
        }
        Settings { values, errors }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key).to_string();
        match raw.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("{key}: cannot parse '{raw}': {e}"));
                None
            }
        }
    }

    pub fn path(&mut self, key: &str, required: bool) -> Option<PathBuf> {
        let raw = self.raw(key).to_string();
        if raw.is_empty() {
            if required {
                self.errors.push(format!("{key}: required"));
            }
            return None;
        }
        Some(PathBuf::from(raw))
    }

    pub fn error(&mut self, msg: String) {
        self.errors.push(msg);
    }

    /// Fails with every collected problem at once.
    pub fn finish(&self) -> Result<(), ConfigError> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Usage(format!("invalid configuration:\n  {}", self.errors.join("\n  "))))
        }
    }

    pub fn split_config(&mut self, seed: u64) -> Option<SplitConfig> {
        let ratios: Vec<f64> = self
            .raw("split.ratios")
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .ok()
            .filter(|v: &Vec<f64>| v.len() == 3)
            .unwrap_or_else(|| {
                self.errors.push(format!("split.ratios: expected three numbers, got '{}'", self.raw("split.ratios")));
                vec![1.0; 3]
            });
        let cfg = SplitConfig {
            min_degree: self.get("split.min_degree")?,
            max_degree: self.get("split.max_degree")?,
            n_unseen: self.get("split.n_unseen")?,
            ratios: [ratios[0], ratios[1], ratios[2]],
            seed,
        };
        if let Err(e) = cfg.validate() {
            self.errors.push(format!("split: {e}"));
        }
        Some(cfg)
    }

    /// Reads every hyperparameter key, collecting all failures.
    pub fn hyperparams(&mut self, seed: u64) -> HyperParams {
        let d = HyperParams::default();
        let mut hp = HyperParams {
            dim: self.get("model.dim").unwrap_or(d.dim),
            num_bases: self.get("model.num_bases").unwrap_or(d.num_bases),
            lr: self.get("train.lr").unwrap_or(d.lr),
            margin: self.get("train.margin").unwrap_or(d.margin),
            num_neg: self.get("train.num_neg").unwrap_or(d.num_neg),
            mc_train: self.get("train.mc_samples").unwrap_or(d.mc_train),
            mc_test: self.get("eval.mc_samples").unwrap_or(d.mc_test),
            shots: self.get("train.shots").unwrap_or(d.shots),
            task_size: self.get("train.task_size").unwrap_or(d.task_size),
            max_iteration: self.get("train.max_iteration").unwrap_or(d.max_iteration),
            curriculum: self.get("train.curriculum").unwrap_or(d.curriculum),
            dropout: self.get("model.dropout").unwrap_or(d.dropout),
            score: self.get("model.score").unwrap_or(d.score),
            mode: self.get("model.mode").unwrap_or(d.mode),
            inverse_relations: self.get("model.inverse_relations").unwrap_or(d.inverse_relations),
            hidden: self.get("model.hidden").unwrap_or(d.hidden),
            eval_every: self.get("train.eval_every").unwrap_or(d.eval_every),
            patience: self.get("train.patience").unwrap_or(d.patience),
            pretrain_steps: self.get("pretrain.steps").unwrap_or(d.pretrain_steps),
            pretrain_batch: self.get("pretrain.batch").unwrap_or(d.pretrain_batch),
            seed,
        };
        if let Err(e) = hp.validate() {
            self.errors.push(format!("hyperparameters: {e}"));
            hp = d;
        }
        hp
    }

    pub fn eval_config(&mut self, hp: &HyperParams, threads: usize) -> EvalConfig {
        EvalConfig {
            mode: hp.mode,
            shots: hp.shots,
            mc_samples: hp.mc_test,
            seed: hp.seed,
            threads,
        }
    }

    pub fn meta_set(&mut self) -> MetaSetKind {
        match self.raw("eval.meta_set") {
            "valid" => MetaSetKind::Valid,
            "test" => MetaSetKind::Test,
            other => {
                self.errors.push(format!("eval.meta_set: expected valid or test, got '{other}'"));
                MetaSetKind::Test
            }
        }
    }

    /// Echo of every resolved key, for reports.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.values).expect("string map")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_dotted_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "# comment\ntrain.lr = 0.01\n[model]\ndim = 8 # inline\nscore=transe\n").unwrap();
        let m = parse_file(&p).unwrap();
        assert_eq!(m["train.lr"], "0.01");
        assert_eq!(m["model.dim"], "8");
        assert_eq!(m["model.score"], "transe");
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = [("model.dim".to_string(), "8".to_string()), ("train.lr".to_string(), "0.5".to_string())].into();
        let flags = [("model.dim".to_string(), "16".to_string())].into();
        let mut s = Settings::layer(file, flags);
        let hp = s.hyperparams(0);
        assert_eq!((hp.dim, hp.lr, hp.margin), (16, 0.5, 1.0));
        s.finish().unwrap();
    }

    #[test]
    fn every_bad_key_is_reported() {
        let flags = [
            ("model.dim".to_string(), "x".to_string()),
            ("train.lr".to_string(), "y".to_string()),
            ("nope.key".to_string(), "1".to_string()),
        ]
        .into();
        let mut s = Settings::layer(BTreeMap::new(), flags);
        s.hyperparams(0);
        let msg = s.finish().unwrap_err().to_string();
        for k in ["model.dim", "train.lr", "nope.key"] {
            assert!(msg.contains(k), "{msg}");
        }
    }
}
