#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use relsum::convert::verbalize_relation;
use relsum::corpus::{load_instances, DataFormat, REInstance, TemplateSet};
use relsum::scoring::{MockScorer, ScoreMode, ScorerBackend};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn three_instances() -> Vec<REInstance> {
    load_instances(fixture("tacred_three.json"), DataFormat::TacredJson).expect("fixture loads")
}

/// Tokenized, mention-filled templates in template-file order.
pub fn filled_ids(
    backend: &dyn ScorerBackend,
    templates: &TemplateSet,
    inst: &REInstance,
) -> Vec<(String, Vec<u32>)> {
    templates
        .iter()
        .map(|(label, t)| {
            (
                label.to_string(),
                backend.tokenize(&verbalize_relation(t, inst)).unwrap(),
            )
        })
        .collect()
}

/// Walks every EOS-terminated sequence position by position, asking the mock directly at each
/// position where the candidate sequences sharing the prefix disagree on the next token.
pub fn brute_force(
    mock: &MockScorer,
    source: &str,
    seqs: &[(String, Vec<u32>)],
    mode: ScoreMode,
    floor: Option<f64>,
) -> Vec<(String, f64)> {
    let eos = mock.eos_id();
    let full: Vec<Vec<u32>> = seqs
        .iter()
        .map(|(_, ids)| ids.iter().copied().chain([eos]).collect())
        .collect();
    seqs.iter()
        .zip(&full)
        .map(|((label, _), seq)| {
            let mut score = 1.0f64;
            for i in 0..seq.len() {
                let prefix = &seq[..i];
                let options: BTreeSet<u32> = full
                    .iter()
                    .filter(|o| o.len() > i && &o[..i] == prefix)
                    .map(|o| o[i])
                    .collect();
                if options.len() < 2 {
                    continue;
                }
                let mut p = mock.prob(source, prefix, seq[i]);
                if mode == ScoreMode::Renormalized {
                    let z: f64 = options.iter().map(|&t| mock.prob(source, prefix, t)).sum();
                    p /= z;
                }
                if let Some(f) = floor {
                    p = p.max(f);
                }
                score *= p;
            }
            (label.clone(), score)
        })
        .collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
