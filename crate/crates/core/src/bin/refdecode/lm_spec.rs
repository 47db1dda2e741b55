//! Compact model specs: `kind[:key=val,...]`, or the same keys in a TOML file.
//!
//! * `hash:seed=7,h=3[,vocab=32000]`
//! * `ngram:order=3[,corpus=path][,vocab=N]` (fits on each sample's references when no corpus is given)
//! * `scripted[:vocab=N]` (replays each sample's target)

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use refdecode::harness::synth::STOP_TOKEN;
use refdecode::harness::DatasetSample;
use refdecode::{HashLm, LanguageModel, NgramLm, ScriptedLm, TokenId};

const DEFAULT_HASH_VOCAB: usize = 32_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LmSpec {
    Hash {
        seed: u64,
        window: usize,
        vocab: Option<usize>,
    },
    Ngram {
        order: usize,
        corpus: Option<PathBuf>,
        vocab: Option<usize>,
    },
    Scripted {
        vocab: Option<usize>,
    },
}

impl LmSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LmSpec::Hash { .. } => "hash",
            LmSpec::Ngram { .. } => "ngram",
            LmSpec::Scripted { .. } => "scripted",
        }
    }

    fn from_pairs(kind: &str, pairs: BTreeMap<String, String>) -> Result<Self, String> {
        let mut pairs = pairs;
        let mut take = |key: &str| pairs.remove(key);
        fn num<T: FromStr>(key: &str, v: Option<String>) -> Result<Option<T>, String> {
            v.map(|s| s.parse::<T>().map_err(|_| format!("bad value {s:?} for {key}")))
                .transpose()
        }
        let spec = match kind {
            "hash" => {
                let window = match take("h") {
                    Some(v) => Some(v),
                    None => take("window"),
                };
                LmSpec::Hash {
                    seed: num("seed", take("seed"))?.unwrap_or(0),
                    window: num("h", window)?.unwrap_or(2),
                    vocab: num("vocab", take("vocab"))?,
                }
            }
            "ngram" => LmSpec::Ngram {
                order: num("order", take("order"))?.unwrap_or(3),
                corpus: take("corpus").map(PathBuf::from),
                vocab: num("vocab", take("vocab"))?,
            },
            "scripted" => LmSpec::Scripted {
                vocab: num("vocab", take("vocab"))?,
            },
            other => return Err(format!("unknown model kind {other:?} (expected hash, ngram or scripted)")),
        };
        if let Some(key) = pairs.keys().next() {
            return Err(format!("unknown key {key:?} for {kind} model"));
        }
        match &spec {
            LmSpec::Hash { window: 0, .. } => Err("h must be >= 1".into()),
            LmSpec::Ngram { order: 0, .. } => Err("order must be >= 1".into()),
            LmSpec::Hash { vocab: Some(0), .. }
            | LmSpec::Ngram { vocab: Some(0), .. }
            | LmSpec::Scripted { vocab: Some(0) } => Err("vocab must be >= 1".into()),
            _ => Ok(spec),
        }
    }

    /// Reads a TOML file with a `kind` key and the same keys as the compact form.
    pub fn from_config_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
        let mut pairs = BTreeMap::new();
        let mut kind = None;
        for (k, v) in table {
            let v = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                other => bail!("{}: unsupported value for {k}: {other}", path.display()),
            };
            if k == "kind" {
                kind = Some(v);
            } else {
                pairs.insert(k, v);
            }
        }
        let kind = kind.with_context(|| format!("{}: missing `kind`", path.display()))?;
        Self::from_pairs(&kind, pairs).map_err(anyhow::Error::msg)
    }

    /// Model for one sample. `stop` is the stop token used by scripted replay.
    pub fn build(&self, sample: &DatasetSample, stop: TokenId) -> anyhow::Result<Box<dyn LanguageModel + Send + Sync>> {
        let bound = sample.max_token_bound();
        Ok(match self {
            LmSpec::Hash { seed, window, vocab } => {
                Box::new(HashLm::new(vocab.unwrap_or(DEFAULT_HASH_VOCAB.max(bound)), *window, *seed))
            }
            LmSpec::Ngram { order, corpus, vocab } => match corpus {
                Some(path) => {
                    let lm = NgramLm::fit_file(path, *order, *vocab)
                        .with_context(|| format!("fitting n-gram model on {}", path.display()))?;
                    if lm.vocab_size() < bound {
                        bail!(
                            "sample {:?} uses token ids up to {} but the model vocabulary is {}",
                            sample.sample_id,
                            bound - 1,
                            lm.vocab_size()
                        );
                    }
                    Box::new(lm)
                }
                None => {
                    let docs: Vec<&[TokenId]> = sample.docs.docs().iter().map(|d| d.tokens.as_slice()).collect();
                    Box::new(NgramLm::fit(&docs, *order, vocab.unwrap_or(bound))?)
                }
            },
            LmSpec::Scripted { vocab } => {
                let target = sample.require_target().map_err(anyhow::Error::msg)?;
                let need = bound.max(stop as usize + 1);
                Box::new(ScriptedLm::new(
                    sample.prompt.len(),
                    target.to_vec(),
                    stop,
                    vocab.unwrap_or(need).max(need),
                ))
            }
        })
    }

    pub fn default_stop(&self) -> Option<TokenId> {
        matches!(self, LmSpec::Scripted { .. }).then_some(STOP_TOKEN)
    }
}

impl FromStr for LmSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut pairs = BTreeMap::new();
        for item in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {item:?}"))?;
            if pairs.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(format!("duplicate key {k:?}"));
            }
        }
        Self::from_pairs(kind.trim(), pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_compact_specs() {
        assert_eq!(
            "hash:seed=7,h=3".parse::<LmSpec>().unwrap(),
            LmSpec::Hash { seed: 7, window: 3, vocab: None }
        );
        assert_eq!("scripted".parse::<LmSpec>().unwrap(), LmSpec::Scripted { vocab: None });
        assert_eq!(
            "ngram:order=2,vocab=50".parse::<LmSpec>().unwrap(),
            LmSpec::Ngram { order: 2, corpus: None, vocab: Some(50) }
        );
        assert!("hash:seed=x".parse::<LmSpec>().is_err());
        assert!("hash:colour=3".parse::<LmSpec>().is_err());
        assert!("gpt".parse::<LmSpec>().is_err());
        assert!("hash:h=0".parse::<LmSpec>().is_err());
    }
}
