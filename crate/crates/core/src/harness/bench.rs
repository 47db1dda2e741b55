//! Live decoding over datasets and wall-clock comparison against the
//! stepwise baseline.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::dataset::DatasetSample;
use super::grid::cell_seed;
use super::HarnessError;
use crate::decoder::{llma_decode_with_index, stepwise_decode, Decoded};
use crate::index::ReferenceIndex;
use crate::lm::LanguageModel;
use crate::types::{DecodeConfig, ReferenceSet};

/// Per-sample decode config: same limits, tie-break seed derived the same
/// way the simulator derives it, so scripted decodes reproduce simulated
/// traces.
pub fn sample_config(cfg: &DecodeConfig, sample: &DatasetSample) -> DecodeConfig {
    DecodeConfig {
        seed: cell_seed(cfg.seed, cfg.match_len, cfg.copy_len, &sample.sample_id),
        ..cfg.clone()
    }
}

/// Decodes one sample with the copy-and-verify loop. `use_refs = false`
/// decodes against an empty reference set.
pub fn decode_sample<M: LanguageModel + ?Sized>(
    lm: &M,
    sample: &DatasetSample,
    cfg: &DecodeConfig,
    use_refs: bool,
) -> Result<Decoded, HarnessError> {
    let empty = ReferenceSet::empty();
    let refs = if use_refs { &sample.docs } else { &empty };
    let scfg = sample_config(cfg, sample);
    let index = ReferenceIndex::build(refs, cfg.match_len).with_prefix_cap(cfg.prefix_cap);
    Ok(llma_decode_with_index(lm, &sample.prompt, &index, &scfg)?)
}

/// Totals over all samples, averaged over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub samples: usize,
    pub repetitions: usize,
    pub tokens: usize,
    pub baseline_secs: f64,
    pub llma_secs: f64,
    /// Index construction, excluded from `llma_secs`.
    pub index_build_secs: f64,
    pub baseline_steps: usize,
    pub llma_steps: usize,
}

impl BenchReport {
    pub fn tokens_per_sec_baseline(&self) -> f64 {
        rate(self.tokens, self.baseline_secs)
    }

    pub fn tokens_per_sec_llma(&self) -> f64 {
        rate(self.tokens, self.llma_secs)
    }

    pub fn speedup(&self) -> f64 {
        if self.llma_secs > 0.0 {
            self.baseline_secs / self.llma_secs
        } else {
            f64::NAN
        }
    }

    pub fn step_compression(&self) -> f64 {
        if self.llma_steps == 0 {
            1.0
        } else {
            self.baseline_steps as f64 / self.llma_steps as f64
        }
    }
}

fn rate(tokens: usize, secs: f64) -> f64 {
    if secs > 0.0 {
        tokens as f64 / secs
    } else {
        f64::NAN
    }
}

/// Times stepwise and copy-and-verify decoding on the same samples.
///
/// `make_lm` builds the model for a sample outside the timed region. Any
/// sample whose two outputs differ aborts the run with
/// [`HarnessError::Mismatch`].
pub fn benchmark<F, M>(
    label: &str,
    make_lm: F,
    samples: &[DatasetSample],
    cfg: &DecodeConfig,
    repetitions: usize,
) -> Result<BenchReport, HarnessError>
where
    F: Fn(&DatasetSample) -> Result<M, HarnessError>,
    M: LanguageModel,
{
    cfg.validate().map_err(crate::decoder::DecodeError::from)?;
    if repetitions == 0 {
        return Err(HarnessError::InvalidParam("repetitions must be >= 1".into()));
    }
    let mut baseline = Duration::ZERO;
    let mut llma = Duration::ZERO;
    let mut build = Duration::ZERO;
    let (mut tokens, mut baseline_steps, mut llma_steps) = (0, 0, 0);
    for rep in 0..repetitions {
        for s in samples {
            let lm = make_lm(s)?;
            let scfg = sample_config(cfg, s);

            let t0 = Instant::now();
            let index = ReferenceIndex::build(&s.docs, cfg.match_len).with_prefix_cap(cfg.prefix_cap);
            build += t0.elapsed();

            let t0 = Instant::now();
            let base = stepwise_decode(&lm, &s.prompt, &scfg)?;
            baseline += t0.elapsed();

            let t0 = Instant::now();
            let fast = llma_decode_with_index(&lm, &s.prompt, &index, &scfg)?;
            llma += t0.elapsed();

            if base.output != fast.output {
                return Err(HarnessError::Mismatch {
                    sample_id: s.sample_id.clone(),
                });
            }
            if rep == 0 {
                tokens += base.output.len();
                baseline_steps += base.trace.num_steps();
                llma_steps += fast.trace.num_steps();
            }
        }
    }
    let reps = repetitions as f64;
    Ok(BenchReport {
        label: label.to_string(),
        samples: samples.len(),
        repetitions,
        tokens,
        baseline_secs: baseline.as_secs_f64() / reps,
        llma_secs: llma.as_secs_f64() / reps,
        index_build_secs: build.as_secs_f64() / reps,
        baseline_steps,
        llma_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::Scenario;
    use crate::harness::grid::simulate_samples;
    use crate::harness::synth::{gen_synthetic, SynthParams, STOP_TOKEN};
    use crate::lm::{HashLm, LmError, ScriptedLm};

    fn samples() -> Vec<DatasetSample> {
        gen_synthetic(&SynthParams {
            num_samples: 6,
            ..SynthParams::for_scenario(Scenario::Cache)
        })
        .unwrap()
    }

    fn scripted(s: &DatasetSample) -> Result<ScriptedLm, HarnessError> {
        Ok(ScriptedLm::new(
            s.prompt.len(),
            s.target.clone().unwrap(),
            STOP_TOKEN,
            s.max_token_bound().max(STOP_TOKEN as usize + 1),
        ))
    }

    #[test]
    fn scripted_steps_match_simulator() {
        let s = samples();
        let cfg = DecodeConfig::new(1, 15, 512).with_stop_token(Some(STOP_TOKEN)).with_seed(4);
        let report = benchmark("scripted", scripted, &s, &cfg, 2).unwrap();
        let sim = simulate_samples(&s, 1, 15, 4).unwrap();
        let predicted: usize = sim.iter().map(|(_, t)| t.num_steps()).sum();
        assert_eq!(report.llma_steps, predicted);
        assert_eq!(report.baseline_steps, report.tokens);
        assert!(report.step_compression() > 1.0);
        assert_eq!(report.repetitions, 2);
    }

    #[test]
    fn hash_model_bench_is_lossless() {
        let s = samples();
        let cfg = DecodeConfig::new(2, 8, 64);
        let report = benchmark("hash", |_| Ok(HashLm::new(32_000, 2, 1)), &s, &cfg, 1).unwrap();
        assert_eq!(report.tokens, 6 * 64);
    }

    // Breaks the consistency law: verify disagrees with next_argmax.
    struct Liar(HashLm);

    impl LanguageModel for Liar {
        fn vocab_size(&self) -> usize {
            self.0.vocab_size()
        }
        fn next_argmax(&self, c: &[u32]) -> Result<u32, LmError> {
            self.0.next_argmax(c)
        }
        fn verify(&self, c: &[u32], d: &[u32]) -> Result<Vec<u32>, LmError> {
            let mut out = self.0.verify(c, d)?;
            out[0] = (out[0] + 1) % self.0.vocab_size() as u32;
            Ok(out)
        }
    }

    #[test]
    fn mismatch_aborts() {
        let mut s0 = samples()[0].clone();
        let cfg = DecodeConfig::new(1, 8, 64);
        // the liar only diverges once a copy triggers, so plant its own output
        let honest = HashLm::new(32_000, 1, 3);
        let out = stepwise_decode(&honest, &s0.prompt, &cfg).unwrap().output;
        s0.docs = ReferenceSet::from_token_lists([out]);
        let res = benchmark("liar", |_| Ok(Liar(honest.clone())), &[s0], &cfg, 1);
        assert!(matches!(res, Err(HarnessError::Mismatch { .. })), "{res:?}");
    }
}
