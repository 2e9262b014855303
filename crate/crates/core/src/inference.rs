//! Type-constrained trie scoring, the NA decision rule and threshold calibration.

use serde::{Deserialize, Serialize};

use crate::convert::{construct_source, verbalize_relation, ConversionScheme};
use crate::corpus::{REInstance, RelationOntology, TemplateSet, TemplateStyle, TypeConstraintMap};
use crate::error::{Error, Result};
use crate::metrics::prf_from_counts;
use crate::num::{extended_float, Real};
use crate::scoring::{trie_score, ScoreMode, ScoreOptions, ScoreVector, ScorerBackend};
use crate::trie::TokenTrie;

/// Calibrated NA threshold. `-inf` means always NA, `+inf` never NA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct CalibrationModel<F> {
    #[serde(with = "extended_float")]
    pub threshold: F,
    pub scale: ScoreMode,
    #[serde(with = "extended_float")]
    pub dev_f1: F,
}

/// On-disk calibration result consumed by `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct CalibrationArtifact<F> {
    #[serde(with = "extended_float")]
    pub threshold: F,
    pub scale: ScoreMode,
    #[serde(with = "extended_float")]
    pub dev_f1: F,
    pub template_style: TemplateStyle,
    pub scheme: ConversionScheme,
}

impl<F: Real> CalibrationArtifact<F> {
    pub fn new(
        model: CalibrationModel<F>,
        template_style: TemplateStyle,
        scheme: ConversionScheme,
    ) -> Self {
        CalibrationArtifact {
            threshold: model.threshold,
            scale: model.scale,
            dev_f1: model.dev_f1,
            template_style,
            scheme,
        }
    }

    pub fn model(&self) -> CalibrationModel<F> {
        CalibrationModel {
            threshold: self.threshold,
            scale: self.scale,
            dev_f1: self.dev_f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<F> {
    pub id: String,
    pub relation: String,
    pub scores: ScoreVector<F>,
}

#[derive(Serialize)]
struct PredictionOut<'a, F: Real> {
    id: &'a str,
    relation: &'a str,
    scores: &'a indexmap::IndexMap<String, F>,
}

impl<F: Real> Serialize for Prediction<F> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PredictionOut {
            id: &self.id,
            relation: &self.relation,
            scores: self.scores.as_map(),
        }
        .serialize(s)
    }
}

/// NA when `p(NA) > threshold`, otherwise the best positive relation (earliest wins ties).
pub fn predict<F: Real>(scores: &ScoreVector<F>, na_label: &str, threshold: F) -> Result<String> {
    let p_na = scores
        .get(na_label)
        .ok_or_else(|| Error::Validation(format!("scores lack the NA label {na_label:?}")))?;
    if p_na > threshold {
        return Ok(na_label.to_string());
    }
    scores
        .argmax_where(|l| l != na_label)
        .map(|(l, _)| l.to_string())
        .ok_or_else(|| Error::Validation("scores contain no positive relation".into()))
}

struct DevPoint {
    p_na: f64,
    predicts_positive: bool,
    positive_correct: bool,
}

/// Picks the threshold maximizing dev micro F1 among `-inf`, every observed `p(NA)` and `+inf`.
/// Ties go to the largest threshold.
pub fn calibrate<F: Real>(
    dev: &[(ScoreVector<F>, String)],
    na_label: &str,
) -> Result<CalibrationModel<F>> {
    if dev.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    let mut gold_positive = 0;
    let mut points = Vec::with_capacity(dev.len());
    for (scores, gold) in dev {
        if scores.mode != ScoreMode::Renormalized {
            return Err(Error::Validation(
                "calibration needs renormalized scores".into(),
            ));
        }
        let p_na = scores
            .get(na_label)
            .ok_or_else(|| Error::Validation(format!("scores lack the NA label {na_label:?}")))?
            .to_f64()
            .unwrap_or(f64::NAN);
        if p_na.is_nan() {
            return Err(Error::Validation("NaN NA score".into()));
        }
        let best = scores.argmax_where(|l| l != na_label).map(|(l, _)| l);
        if gold != na_label {
            gold_positive += 1;
        }
        points.push(DevPoint {
            p_na,
            predicts_positive: best.is_some(),
            positive_correct: best == Some(gold.as_str()) && gold != na_label,
        });
    }
    points.sort_by(|a, b| a.p_na.total_cmp(&b.p_na));

    let mut candidates = vec![f64::NEG_INFINITY];
    for p in &points {
        if candidates.last() != Some(&p.p_na) {
            candidates.push(p.p_na);
        }
    }
    if candidates.last() != Some(&f64::INFINITY) {
        candidates.push(f64::INFINITY);
    }

    // An example predicts a positive relation once p(NA) <= s, so sweep s upward.
    let (mut idx, mut predicted, mut correct) = (0, 0, 0);
    let mut best = (f64::NEG_INFINITY, F::neg_infinity());
    for &s in &candidates {
        while idx < points.len() && points[idx].p_na <= s {
            if points[idx].predicts_positive {
                predicted += 1;
                if points[idx].positive_correct {
                    correct += 1;
                }
            }
            idx += 1;
        }
        let (_, _, f1) = prf_from_counts::<F>(correct, predicted, gold_positive);
        if f1 >= best.1 {
            best = (s, f1);
        }
    }
    Ok(CalibrationModel {
        threshold: F::from_f64_lossy(best.0),
        scale: ScoreMode::Renormalized,
        dev_f1: best.1,
    })
}

/// Everything needed to turn one instance into a prediction.
#[derive(Debug, Clone, Copy)]
pub struct Extractor<'a> {
    pub ontology: &'a RelationOntology,
    pub templates: &'a TemplateSet,
    pub type_map: Option<&'a TypeConstraintMap>,
    pub scheme: ConversionScheme,
    pub score: ScoreOptions,
}

impl<'a> Extractor<'a> {
    pub fn new(
        ontology: &'a RelationOntology,
        templates: &'a TemplateSet,
        scheme: ConversionScheme,
    ) -> Self {
        Extractor {
            ontology,
            templates,
            type_map: None,
            scheme,
            score: ScoreOptions::new(ScoreMode::Renormalized),
        }
    }

    pub fn with_type_map(mut self, map: &'a TypeConstraintMap) -> Self {
        self.type_map = Some(map);
        self
    }

    pub fn with_score_options(mut self, opts: ScoreOptions) -> Self {
        self.score = opts;
        self
    }

    /// Candidate relations in ontology order.
    pub fn allowed(&self, inst: &REInstance) -> Vec<&'a str> {
        match self.type_map {
            Some(map) => map.allowed_for(inst, self.ontology),
            None => self.ontology.labels().collect(),
        }
    }

    /// Tokenizes the mention-filled templates of `allowed` and builds their trie.
    pub fn build_trie<B: ScorerBackend + ?Sized>(
        &self,
        backend: &B,
        inst: &REInstance,
        allowed: &[&str],
    ) -> Result<TokenTrie> {
        if allowed.is_empty() {
            return Err(Error::EmptyAllowedSet);
        }
        let mut filled = Vec::with_capacity(allowed.len());
        for &label in allowed {
            let template = self
                .templates
                .get(label)
                .ok_or_else(|| Error::UnknownRelation(label.to_string()))?;
            filled.push((
                label,
                backend.tokenize(&verbalize_relation(template, inst))?,
            ));
        }
        TokenTrie::build(filled, backend.eos_id())
    }

    /// Scores the allowed relations of one instance.
    pub fn score<F: Real, B: ScorerBackend + ?Sized>(
        &self,
        backend: &B,
        inst: &REInstance,
    ) -> Result<ScoreVector<F>> {
        let run = || {
            let source = construct_source(inst, self.scheme)?;
            let allowed = self.allowed(inst);
            let trie = self.build_trie(backend, inst, &allowed)?;
            trie_score(backend, &source, &trie, self.score)
        };
        run().map_err(|e| e.for_instance(&inst.id))
    }

    /// Scores, then applies the NA rule. Instances whose candidates hold no positive relation get NA.
    pub fn predict<F: Real, B: ScorerBackend + ?Sized>(
        &self,
        backend: &B,
        inst: &REInstance,
        threshold: F,
    ) -> Result<Prediction<F>> {
        let scores = self.score(backend, inst)?;
        let na = self.ontology.na_label();
        let relation = if scores.labels().all(|l| l == na) {
            na.to_string()
        } else {
            predict(&scores, na, threshold).map_err(|e| e.for_instance(&inst.id))?
        };
        Ok(Prediction {
            id: inst.id.clone(),
            relation,
            scores,
        })
    }
}

/// Free-function form of [`Extractor::predict`].
#[allow(clippy::too_many_arguments)]
pub fn constrained_predict<F: Real, B: ScorerBackend + ?Sized>(
    backend: &B,
    inst: &REInstance,
    ontology: &RelationOntology,
    templates: &TemplateSet,
    type_map: Option<&TypeConstraintMap>,
    calibration: &CalibrationModel<F>,
    scheme: ConversionScheme,
    opts: ScoreOptions,
) -> Result<Prediction<F>> {
    let mut ex = Extractor::new(ontology, templates, scheme).with_score_options(opts);
    ex.type_map = type_map;
    ex.predict(backend, inst, calibration.threshold)
}
