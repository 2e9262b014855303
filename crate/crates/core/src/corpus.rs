//! Datasets, relation ontologies, templates and the type-constraint map.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUBJ_PLACEHOLDER: &str = "{subj}";
pub const OBJ_PLACEHOLDER: &str = "{obj}";

/// Labels commonly used for the abstention relation, checked in this order.
pub const KNOWN_NA_LABELS: [&str; 3] = ["no_relation", "Other", "NA"];

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// One sentence with a subject and object mention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct REInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub subj_span: Span,
    pub obj_span: Span,
    pub subj_type: Option<String>,
    pub obj_type: Option<String>,
    pub gold_relation: Option<String>,
}

impl REInstance {
    /// Checks span bounds and overlap.
    pub fn validate(&self) -> Result<()> {
        for (name, span) in [("subj", self.subj_span), ("obj", self.obj_span)] {
            if span.start >= span.end || span.end > self.tokens.len() {
                return Err(Error::Validation(format!(
                    "instance {:?}: {name} span [{}, {}) out of bounds for {} tokens",
                    self.id,
                    span.start,
                    span.end,
                    self.tokens.len()
                )));
            }
        }
        if self.subj_span.overlaps(&self.obj_span) {
            return Err(Error::Validation(format!(
                "instance {:?}: subject and object spans overlap",
                self.id
            )));
        }
        Ok(())
    }

    pub fn has_types(&self) -> bool {
        self.subj_type.is_some() && self.obj_type.is_some()
    }

    pub fn type_pair(&self) -> Option<(&str, &str)> {
        Some((self.subj_type.as_deref()?, self.obj_type.as_deref()?))
    }
}

/// Checks that every gold label belongs to the ontology.
pub fn check_gold_labels(instances: &[REInstance], ontology: &RelationOntology) -> Result<()> {
    for inst in instances {
        if let Some(label) = &inst.gold_relation {
            if !ontology.contains(label) {
                return Err(Error::UnknownRelation(label.clone()).for_instance(&inst.id));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// JSON array of TACRED records with inclusive end indices.
    TacredJson,
    /// One record per line with half-open end indices.
    UnifiedJsonl,
}

impl DataFormat {
    /// Guesses from the file extension: `.json` is TACRED, anything else unified JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => DataFormat::TacredJson,
            _ => DataFormat::UnifiedJsonl,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tacred_json" | "tacred" => Ok(DataFormat::TacredJson),
            "unified_jsonl" | "jsonl" => Ok(DataFormat::UnifiedJsonl),
            other => Err(Error::Validation(format!("unknown data format {other:?}"))),
        }
    }
}

#[derive(Debug, Deserialize)]
struct TacredRecord {
    #[serde(default)]
    id: Option<String>,
    token: Vec<String>,
    subj_start: usize,
    subj_end: usize,
    obj_start: usize,
    obj_end: usize,
    #[serde(default)]
    subj_type: Option<String>,
    #[serde(default)]
    obj_type: Option<String>,
    #[serde(default)]
    relation: Option<String>,
}

/// On-disk unified record; `*_end` fields are exclusive.
#[derive(Debug, Serialize, Deserialize)]
pub struct UnifiedRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub subj_start: usize,
    pub subj_end: usize,
    pub obj_start: usize,
    pub obj_end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subj_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obj_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
}

impl From<&REInstance> for UnifiedRecord {
    fn from(inst: &REInstance) -> Self {
        UnifiedRecord {
            id: inst.id.clone(),
            tokens: inst.tokens.clone(),
            subj_start: inst.subj_span.start,
            subj_end: inst.subj_span.end,
            obj_start: inst.obj_span.start,
            obj_end: inst.obj_span.end,
            subj_type: inst.subj_type.clone(),
            obj_type: inst.obj_type.clone(),
            relation: inst.gold_relation.clone(),
        }
    }
}

impl From<UnifiedRecord> for REInstance {
    fn from(r: UnifiedRecord) -> Self {
        REInstance {
            id: r.id,
            tokens: r.tokens,
            subj_span: Span::new(r.subj_start, r.subj_end),
            obj_span: Span::new(r.obj_start, r.obj_end),
            subj_type: r.subj_type,
            obj_type: r.obj_type,
            gold_relation: r.relation,
        }
    }
}

fn record_error(index: usize, err: &serde_json::Error) -> Error {
    let message = err.to_string();
    // serde reports missing/invalid fields as "... field `name` ..."
    let field = message
        .split('`')
        .nth(1)
        .filter(|_| message.contains("field"))
        .unwrap_or("<record>")
        .to_string();
    Error::Record {
        index,
        field,
        message,
    }
}

fn span_error(index: usize, field: &str, inst: &REInstance, err: Error) -> Error {
    let message = match err {
        Error::Validation(m) => m,
        other => other.to_string(),
    };
    Error::Record {
        index,
        field: field.to_string(),
        message: format!("{message} (instance {:?})", inst.id),
    }
}

fn validate_at(index: usize, inst: &REInstance) -> Result<()> {
    inst.validate().map_err(|e| {
        let field = if inst.subj_span.start >= inst.subj_span.end
            || inst.subj_span.end > inst.tokens.len()
        {
            "subj_end"
        } else {
            "obj_end"
        };
        span_error(index, field, inst, e)
    })
}

/// Parses instances from text in the given format.
pub fn parse_instances(text: &str, format: DataFormat) -> Result<Vec<REInstance>> {
    let mut out = Vec::new();
    match format {
        DataFormat::TacredJson => {
            if text.trim().is_empty() {
                return Ok(out);
            }
            let values: Vec<serde_json::Value> =
                serde_json::from_str(text).map_err(|e| Error::Record {
                    index: 0,
                    field: "<array>".into(),
                    message: e.to_string(),
                })?;
            for (index, value) in values.into_iter().enumerate() {
                let rec: TacredRecord =
                    serde_json::from_value(value).map_err(|e| record_error(index, &e))?;
                let inst = REInstance {
                    id: rec.id.unwrap_or_else(|| index.to_string()),
                    tokens: rec.token,
                    subj_span: Span::new(rec.subj_start, rec.subj_end + 1),
                    obj_span: Span::new(rec.obj_start, rec.obj_end + 1),
                    subj_type: rec.subj_type,
                    obj_type: rec.obj_type,
                    gold_relation: rec.relation,
                };
                validate_at(index, &inst)?;
                out.push(inst);
            }
        }
        DataFormat::UnifiedJsonl => {
            for (index, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
                let rec: UnifiedRecord =
                    serde_json::from_str(line).map_err(|e| record_error(index, &e))?;
                let inst = REInstance::from(rec);
                validate_at(index, &inst)?;
                out.push(inst);
            }
        }
    }
    Ok(out)
}

/// Loads instances from a file, converting TACRED inclusive ends to half-open spans.
pub fn load_instances(path: impl AsRef<Path>, format: DataFormat) -> Result<Vec<REInstance>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_instances(&text, format)
}

pub fn write_unified_jsonl<W: Write>(instances: &[REInstance], mut out: W) -> Result<()> {
    for inst in instances {
        let line = serde_json::to_string(&UnifiedRecord::from(inst))
            .map_err(|e| Error::Validation(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn save_unified_jsonl(instances: &[REInstance], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_unified_jsonl(instances, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ordered relation labels with one designated abstention (NA) label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationOntology {
    labels: IndexSet<String>,
    na_label: String,
}

impl RelationOntology {
    pub fn new<I, S>(labels: I, na_label: &str) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = IndexSet::new();
        for label in labels {
            let label = label.into();
            if !set.insert(label.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate relation label {label:?}"
                )));
            }
        }
        if !set.contains(na_label) {
            return Err(Error::Validation(format!(
                "NA label {na_label:?} is not in the ontology"
            )));
        }
        if set.len() < 2 {
            return Err(Error::Validation(
                "ontology has no positive relations".into(),
            ));
        }
        Ok(RelationOntology {
            labels: set,
            na_label: na_label.to_string(),
        })
    }

    /// The 42 TACRED relations, `no_relation` first.
    pub fn tacred() -> Self {
        let labels = template_entries(TACRED_SEMANTIC2).expect("bundled templates parse");
        Self::new(labels.into_iter().map(|(l, _)| l), "no_relation")
            .expect("bundled ontology is valid")
    }

    /// The 19 directed SemEval-2010 Task 8 relations, `Other` first.
    pub fn semeval() -> Self {
        let labels = template_entries(SEMEVAL).expect("bundled templates parse");
        Self::new(labels.into_iter().map(|(l, _)| l), "Other").expect("bundled ontology is valid")
    }

    pub fn labels(&self) -> impl ExactSizeIterator<Item = &str> + Clone {
        self.labels.iter().map(String::as_str)
    }

    pub fn positive_labels(&self) -> impl Iterator<Item = &str> {
        self.labels().filter(move |l| *l != self.na_label)
    }

    pub fn na_label(&self) -> &str {
        &self.na_label
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.contains(label)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.get_index_of(label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateStyle {
    Semantic1,
    Semantic2,
    Structural,
    Semeval,
    /// A user-supplied file that matches none of the bundled sets.
    Custom,
}

impl TemplateStyle {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateStyle::Semantic1 => "semantic1",
            TemplateStyle::Semantic2 => "semantic2",
            TemplateStyle::Structural => "structural",
            TemplateStyle::Semeval => "semeval",
            TemplateStyle::Custom => "custom",
        }
    }

    fn bundled_text(&self) -> Option<&'static str> {
        match self {
            TemplateStyle::Semantic1 => Some(TACRED_SEMANTIC1),
            TemplateStyle::Semantic2 => Some(TACRED_SEMANTIC2),
            TemplateStyle::Structural => Some(TACRED_STRUCTURAL),
            TemplateStyle::Semeval => Some(SEMEVAL),
            TemplateStyle::Custom => None,
        }
    }
}

impl fmt::Display for TemplateStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic1" => Ok(TemplateStyle::Semantic1),
            "semantic2" => Ok(TemplateStyle::Semantic2),
            "structural" => Ok(TemplateStyle::Structural),
            "semeval" => Ok(TemplateStyle::Semeval),
            "custom" => Ok(TemplateStyle::Custom),
            other => Err(Error::Validation(format!(
                "unknown template style {other:?}"
            ))),
        }
    }
}

pub const TACRED_SEMANTIC1: &str = include_str!("../templates/tacred_semantic1.tsv");
pub const TACRED_SEMANTIC2: &str = include_str!("../templates/tacred_semantic2.tsv");
pub const TACRED_STRUCTURAL: &str = include_str!("../templates/tacred_structural.tsv");
pub const SEMEVAL: &str = include_str!("../templates/semeval.tsv");

/// Relation label to template string, one template per ontology label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub style: TemplateStyle,
    templates: IndexMap<String, String>,
}

impl TemplateSet {
    pub fn bundled(style: TemplateStyle) -> Result<(RelationOntology, TemplateSet)> {
        let text = style
            .bundled_text()
            .ok_or_else(|| Error::Validation("custom templates have no bundled file".into()))?;
        let ontology = match style {
            TemplateStyle::Semeval => RelationOntology::semeval(),
            _ => RelationOntology::tacred(),
        };
        let mut set = parse_templates(text, &ontology)?;
        set.style = style;
        Ok((ontology, set))
    }

    /// Templates in ontology order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.templates.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get(&self, label: &str) -> Option<&str> {
        self.templates.get(label).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

fn template_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (label, template) = line.split_once('\t').ok_or_else(|| {
            Error::Templates(format!(
                "line {}: expected `label<TAB>template`",
                lineno + 1
            ))
        })?;
        entries.push((label.trim().to_string(), template.trim().to_string()));
    }
    Ok(entries)
}

fn check_placeholders(label: &str, template: &str) -> Result<()> {
    for ph in [SUBJ_PLACEHOLDER, OBJ_PLACEHOLDER] {
        let n = template.matches(ph).count();
        if n != 1 {
            return Err(Error::Templates(format!(
                "template for {label:?} must contain {ph} exactly once, found {n}"
            )));
        }
    }
    Ok(())
}

fn detect_style(templates: &IndexMap<String, String>) -> TemplateStyle {
    for style in [
        TemplateStyle::Semantic1,
        TemplateStyle::Semantic2,
        TemplateStyle::Structural,
        TemplateStyle::Semeval,
    ] {
        let Some(text) = style.bundled_text() else {
            continue;
        };
        let Ok(entries) = template_entries(text) else {
            continue;
        };
        if entries.len() == templates.len()
            && entries.iter().all(|(l, t)| templates.get(l) == Some(t))
        {
            return style;
        }
    }
    TemplateStyle::Custom
}

/// Parses template text against an ontology. Missing, extra and duplicate labels are all reported.
pub fn parse_templates(text: &str, ontology: &RelationOntology) -> Result<TemplateSet> {
    let entries = template_entries(text)?;
    let mut by_label: IndexMap<String, String> = IndexMap::new();
    let mut duplicates = Vec::new();
    for (label, template) in entries {
        check_placeholders(&label, &template)?;
        if by_label.insert(label.clone(), template).is_some() {
            duplicates.push(label);
        }
    }
    let extra: Vec<&str> = by_label
        .keys()
        .map(String::as_str)
        .filter(|l| !ontology.contains(l))
        .collect();
    let missing: Vec<&str> = ontology
        .labels()
        .filter(|l| !by_label.contains_key(*l))
        .collect();
    if !extra.is_empty() || !missing.is_empty() || !duplicates.is_empty() {
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing from file: {}", missing.join(", ")));
        }
        if !extra.is_empty() {
            parts.push(format!("not in ontology: {}", extra.join(", ")));
        }
        if !duplicates.is_empty() {
            parts.push(format!("duplicated: {}", duplicates.join(", ")));
        }
        return Err(Error::Templates(parts.join("; ")));
    }
    let templates: IndexMap<String, String> = ontology
        .labels()
        .map(|l| (l.to_string(), by_label[l].clone()))
        .collect();
    Ok(TemplateSet {
        style: detect_style(&templates),
        templates,
    })
}

pub fn load_templates(path: impl AsRef<Path>, ontology: &RelationOntology) -> Result<TemplateSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_templates(&text, ontology)
}

/// Reads a template file and derives the ontology from its labels in file order.
///
/// Without an explicit `na_label` the first of [`KNOWN_NA_LABELS`] present in the file is used.
pub fn load_templates_with_ontology(
    path: impl AsRef<Path>,
    na_label: Option<&str>,
) -> Result<(RelationOntology, TemplateSet)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels: Vec<String> = template_entries(&text)?
        .into_iter()
        .map(|(l, _)| l)
        .collect();
    let na = match na_label {
        Some(na) => na.to_string(),
        None => KNOWN_NA_LABELS
            .iter()
            .find(|na| labels.iter().any(|l| l == *na))
            .map(|s| s.to_string())
            .ok_or_else(|| Error::Templates("no NA label found; pass one explicitly".into()))?,
    };
    let ontology = RelationOntology::new(labels, &na)?;
    let templates = parse_templates(&text, &ontology)?;
    Ok((ontology, templates))
}

/// `(subject type, object type)` to the relations observed with that pair in training, plus NA.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeConstraintMap {
    entries: BTreeMap<(String, String), BTreeSet<String>>,
    /// Training instances skipped for lacking types or a gold label.
    pub skipped: usize,
}

#[derive(Serialize, Deserialize)]
struct TypeConstraintEntry {
    subj_type: String,
    obj_type: String,
    relations: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct TypeConstraintFile {
    entries: Vec<TypeConstraintEntry>,
}

impl TypeConstraintMap {
    pub fn get(&self, subj_type: &str, obj_type: &str) -> Option<&BTreeSet<String>> {
        self.entries
            .get(&(subj_type.to_string(), obj_type.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((&str, &str), &BTreeSet<String>)> {
        self.entries
            .iter()
            .map(|((s, o), v)| ((s.as_str(), o.as_str()), v))
    }

    /// Allowed relations for an instance in ontology order; the full ontology when the
    /// instance is untyped or its type pair was never seen.
    pub fn allowed_for<'o>(
        &self,
        inst: &REInstance,
        ontology: &'o RelationOntology,
    ) -> Vec<&'o str> {
        match inst.type_pair().and_then(|(s, o)| self.get(s, o)) {
            Some(set) => ontology.labels().filter(|l| set.contains(*l)).collect(),
            None => ontology.labels().collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let file = TypeConstraintFile {
            entries: self
                .entries
                .iter()
                .map(|((s, o), r)| TypeConstraintEntry {
                    subj_type: s.clone(),
                    obj_type: o.clone(),
                    relations: r.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("type map serializes")
    }

    pub fn from_json(text: &str, ontology: &RelationOntology) -> Result<Self> {
        let file: TypeConstraintFile =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("type map: {e}")))?;
        let mut entries = BTreeMap::new();
        for e in file.entries {
            let mut relations = e.relations;
            if let Some(bad) = relations.iter().find(|r| !ontology.contains(r)) {
                return Err(Error::UnknownRelation(bad.clone()));
            }
            relations.insert(ontology.na_label().to_string());
            entries.insert((e.subj_type, e.obj_type), relations);
        }
        Ok(TypeConstraintMap {
            entries,
            skipped: 0,
        })
    }
}

/// Tallies gold relations per type pair. Untyped or unlabeled instances are counted in `skipped`.
pub fn build_type_constraint_map(
    train: &[REInstance],
    ontology: &RelationOntology,
) -> Result<TypeConstraintMap> {
    let mut map = TypeConstraintMap::default();
    for inst in train {
        let (Some((s, o)), Some(gold)) = (inst.type_pair(), inst.gold_relation.as_deref()) else {
            map.skipped += 1;
            continue;
        };
        if !ontology.contains(gold) {
            return Err(Error::UnknownRelation(gold.to_string()).for_instance(&inst.id));
        }
        let set = map
            .entries
            .entry((s.to_string(), o.to_string()))
            .or_insert_with(|| BTreeSet::from([ontology.na_label().to_string()]));
        set.insert(gold.to_string());
    }
    if map.skipped > 0 {
        log::warn!(
            "type map: skipped {} instances without types or gold label",
            map.skipped
        );
    }
    Ok(map)
}
