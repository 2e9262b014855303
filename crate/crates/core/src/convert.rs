//! Turns instances into summarization sources and relation templates into target summaries.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{REInstance, TemplateSet, OBJ_PLACEHOLDER, SUBJ_PLACEHOLDER};
use crate::error::{Error, Result};

/// How entity information is injected into the source sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionScheme {
    /// Prepend sentences naming both mentions and their types.
    Verbalize,
    /// `<e1> subj </e1>` / `<e2> obj </e2>`.
    Marker,
    /// `<e1-type> subj </e1-type>` / `<e2-type> obj </e2-type>`.
    TypedMarker,
    /// `@ * type * subj @` / `# ^ type ^ obj #`.
    TypedMarkerPunct,
    VerbalizePlusTypedMarker,
    VerbalizePlusTypedMarkerPunct,
}

impl ConversionScheme {
    pub const ALL: [ConversionScheme; 6] = [
        ConversionScheme::Verbalize,
        ConversionScheme::Marker,
        ConversionScheme::TypedMarker,
        ConversionScheme::TypedMarkerPunct,
        ConversionScheme::VerbalizePlusTypedMarker,
        ConversionScheme::VerbalizePlusTypedMarkerPunct,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ConversionScheme::Verbalize => "verbalize",
            ConversionScheme::Marker => "marker",
            ConversionScheme::TypedMarker => "typed_marker",
            ConversionScheme::TypedMarkerPunct => "typed_marker_punct",
            ConversionScheme::VerbalizePlusTypedMarker => "verbalize_plus_typed_marker",
            ConversionScheme::VerbalizePlusTypedMarkerPunct => "verbalize_plus_typed_marker_punct",
        }
    }

    pub fn requires_types(&self) -> bool {
        !matches!(self, ConversionScheme::Verbalize | ConversionScheme::Marker)
    }

    fn verbalizes(&self) -> bool {
        matches!(
            self,
            ConversionScheme::Verbalize
                | ConversionScheme::VerbalizePlusTypedMarker
                | ConversionScheme::VerbalizePlusTypedMarkerPunct
        )
    }

    fn marker_style(&self) -> Option<MarkerStyle> {
        match self {
            ConversionScheme::Verbalize => None,
            ConversionScheme::Marker => Some(MarkerStyle::Plain),
            ConversionScheme::TypedMarker | ConversionScheme::VerbalizePlusTypedMarker => {
                Some(MarkerStyle::Typed)
            }
            ConversionScheme::TypedMarkerPunct
            | ConversionScheme::VerbalizePlusTypedMarkerPunct => Some(MarkerStyle::Punct),
        }
    }
}

impl fmt::Display for ConversionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConversionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown conversion scheme {s:?}")))
    }
}

#[derive(Debug, Clone, Copy)]
enum MarkerStyle {
    Plain,
    Typed,
    Punct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mention {
    Subj,
    Obj,
}

/// Converted (source, target) pair; `target` is present when the gold relation is known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvertedPair {
    pub id: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
}

pub fn mention_text(inst: &REInstance, which: Mention) -> String {
    let span = match which {
        Mention::Subj => inst.subj_span,
        Mention::Obj => inst.obj_span,
    };
    inst.tokens[span.start..span.end].join(" ")
}

/// Natural-language rendering of an entity type: `STATE_OR_PROVINCE` becomes `state or province`.
pub fn type_words(entity_type: &str) -> String {
    entity_type.to_lowercase().replace('_', " ")
}

fn type_tag(entity_type: &str) -> String {
    entity_type.to_lowercase().replace(' ', "_")
}

fn verbalized_context(inst: &REInstance) -> String {
    let subj = mention_text(inst, Mention::Subj);
    let obj = mention_text(inst, Mention::Obj);
    let mut ctx = format!("The subject entity is {subj} . The object entity is {obj} . ");
    if let Some(t) = &inst.subj_type {
        ctx.push_str(&format!("The type of {subj} is {} . ", type_words(t)));
    }
    if let Some(t) = &inst.obj_type {
        ctx.push_str(&format!("The type of {obj} is {} . ", type_words(t)));
    }
    ctx
}

fn markers(style: MarkerStyle, inst: &REInstance, which: Mention) -> (String, String) {
    let ty = match which {
        Mention::Subj => inst.subj_type.as_deref(),
        Mention::Obj => inst.obj_type.as_deref(),
    }
    .unwrap_or_default();
    match (style, which) {
        (MarkerStyle::Plain, Mention::Subj) => ("<e1>".into(), "</e1>".into()),
        (MarkerStyle::Plain, Mention::Obj) => ("<e2>".into(), "</e2>".into()),
        (MarkerStyle::Typed, Mention::Subj) => (
            format!("<e1-{}>", type_tag(ty)),
            format!("</e1-{}>", type_tag(ty)),
        ),
        (MarkerStyle::Typed, Mention::Obj) => (
            format!("<e2-{}>", type_tag(ty)),
            format!("</e2-{}>", type_tag(ty)),
        ),
        (MarkerStyle::Punct, Mention::Subj) => (format!("@ * {} *", type_words(ty)), "@".into()),
        (MarkerStyle::Punct, Mention::Obj) => (format!("# ^ {} ^", type_words(ty)), "#".into()),
    }
}

fn marked_sentence(style: MarkerStyle, inst: &REInstance) -> String {
    let (s_open, s_close) = markers(style, inst, Mention::Subj);
    let (o_open, o_close) = markers(style, inst, Mention::Obj);
    let mut out: Vec<&str> = Vec::with_capacity(inst.tokens.len() + 4);
    for (i, tok) in inst.tokens.iter().enumerate() {
        if i == inst.subj_span.start {
            out.push(&s_open);
        }
        if i == inst.obj_span.start {
            out.push(&o_open);
        }
        out.push(tok);
        if i + 1 == inst.subj_span.end {
            out.push(&s_close);
        }
        if i + 1 == inst.obj_span.end {
            out.push(&o_close);
        }
    }
    out.join(" ")
}

/// Raw tokens that coincide with marker strings the scheme would insert.
pub fn marker_collisions(inst: &REInstance, scheme: ConversionScheme) -> Vec<String> {
    let reserved: &[&str] = match scheme.marker_style() {
        None => return Vec::new(),
        Some(MarkerStyle::Punct) => &["@", "#", "*", "^"],
        Some(_) => &["<e1", "</e1", "<e2", "</e2"],
    };
    inst.tokens
        .iter()
        .filter(|t| {
            reserved
                .iter()
                .any(|r| t.as_str() == *r || (r.starts_with('<') && t.starts_with(r)))
        })
        .cloned()
        .collect()
}

/// Builds the summarization source for an instance. Tokens are joined with single spaces.
pub fn construct_source(inst: &REInstance, scheme: ConversionScheme) -> Result<String> {
    if scheme.requires_types() && !inst.has_types() {
        return Err(Error::SchemeInapplicable {
            scheme: scheme.to_string(),
            id: inst.id.clone(),
        });
    }
    let collisions = marker_collisions(inst, scheme);
    if !collisions.is_empty() {
        log::warn!(
            "instance {:?}: tokens {:?} collide with `{scheme}` markers",
            inst.id,
            collisions
        );
    }
    let sentence = match scheme.marker_style() {
        Some(style) => marked_sentence(style, inst),
        None => inst.tokens.join(" "),
    };
    if scheme.verbalizes() {
        Ok(verbalized_context(inst) + &sentence)
    } else {
        Ok(sentence)
    }
}

/// Fills `{subj}` and `{obj}` with the instance's mentions.
pub fn verbalize_relation(template: &str, inst: &REInstance) -> String {
    template
        .replace(SUBJ_PLACEHOLDER, &mention_text(inst, Mention::Subj))
        .replace(OBJ_PLACEHOLDER, &mention_text(inst, Mention::Obj))
}

/// Converts one instance; the target is filled only when a gold relation is present.
pub fn convert_instance(
    inst: &REInstance,
    templates: &TemplateSet,
    scheme: ConversionScheme,
) -> Result<ConvertedPair> {
    let source = construct_source(inst, scheme)?;
    let target = match &inst.gold_relation {
        Some(rel) => {
            let template = templates
                .get(rel)
                .ok_or_else(|| Error::UnknownRelation(rel.clone()).for_instance(&inst.id))?;
            Some(verbalize_relation(template, inst))
        }
        None => None,
    };
    Ok(ConvertedPair {
        id: inst.id.clone(),
        source,
        target,
        relation: inst.gold_relation.clone(),
    })
}

pub fn build_training_pairs(
    instances: &[REInstance],
    templates: &TemplateSet,
    scheme: ConversionScheme,
) -> Result<Vec<ConvertedPair>> {
    instances
        .iter()
        .map(|inst| {
            if inst.gold_relation.is_none() {
                return Err(Error::Validation(format!(
                    "instance {:?} has no gold relation",
                    inst.id
                )));
            }
            convert_instance(inst, templates, scheme)
        })
        .collect()
}
