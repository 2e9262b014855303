mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relsum::corpus::{
    build_type_constraint_map, load_instances, parse_instances, save_unified_jsonl, DataFormat,
    REInstance, RelationOntology, Span, TemplateSet, TemplateStyle,
};

use common::{fixture, three_instances};

#[test]
fn tacred_fixture_spans_become_half_open() {
    let insts = three_instances();
    assert_eq!(insts.len(), 3);
    assert_eq!(insts[0].subj_span, Span::new(0, 1));
    assert_eq!(insts[0].obj_span, Span::new(11, 12));
    assert_eq!(insts[1].subj_span, Span::new(3, 5));
    assert_eq!(insts[1].gold_relation.as_deref(), Some("org:founded_by"));
}

#[test]
fn train_sized_tacred_file_loads_every_record() {
    // Same shape and size as the TACRED train split.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.json");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
    write!(f, "[").unwrap();
    for i in 0..68124 {
        if i > 0 {
            write!(f, ",").unwrap();
        }
        write!(
            f,
            r#"{{"id":"r{i}","token":["A","b","C","."],"subj_start":0,"subj_end":0,"obj_start":2,"obj_end":2,"subj_type":"PERSON","obj_type":"CITY","relation":"no_relation"}}"#
        )
        .unwrap();
    }
    write!(f, "]").unwrap();
    drop(f);
    let insts = load_instances(&path, DataFormat::TacredJson).unwrap();
    assert_eq!(insts.len(), 68124);
    assert_eq!(insts[68123].id, "r68123");
}

#[test]
fn bundled_templates() {
    let (_, s1) = TemplateSet::bundled(TemplateStyle::Semantic1).unwrap();
    assert_eq!(s1.get("per:spouse"), Some("{subj} is the spouse of {obj}"));
    let (_, st) = TemplateSet::bundled(TemplateStyle::Structural).unwrap();
    assert_eq!(st.get("no_relation"), Some("{subj} no relation {obj}"));
    let (ont, se) = TemplateSet::bundled(TemplateStyle::Semeval).unwrap();
    assert_eq!(se.get("Other"), Some("{subj} is not related to {obj}"));
    assert_eq!(ont.len(), 19);
}

const TYPES: [&str; 4] = ["PERSON", "ORGANIZATION", "CITY", "COUNTRY"];

fn random_instances(
    rng: &mut ChaCha8Rng,
    n: usize,
    ontology: &RelationOntology,
) -> Vec<REInstance> {
    let labels: Vec<&str> = ontology.labels().collect();
    (0..n)
        .map(|i| {
            let len = rng.gen_range(4..12);
            let tokens: Vec<String> = (0..len).map(|j| format!("w{}", (i * 7 + j) % 23)).collect();
            let s = rng.gen_range(0..len / 2);
            let o = rng.gen_range(len / 2..len);
            REInstance {
                id: format!("x{i}"),
                tokens,
                subj_span: Span::new(s, s + 1),
                obj_span: Span::new(o, o + 1),
                subj_type: Some(TYPES[rng.gen_range(0..TYPES.len())].to_string()),
                obj_type: Some(TYPES[rng.gen_range(0..TYPES.len())].to_string()),
                gold_relation: Some(labels[rng.gen_range(0..labels.len())].to_string()),
            }
        })
        .collect()
}

#[test]
fn type_map_matches_group_by_tally() {
    let ontology = RelationOntology::tacred();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sample = random_instances(&mut rng, 100, &ontology);
    let map = build_type_constraint_map(&sample, &ontology).unwrap();

    let mut tally: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for inst in &sample {
        let key = (
            inst.subj_type.clone().unwrap(),
            inst.obj_type.clone().unwrap(),
        );
        tally
            .entry(key)
            .or_default()
            .insert(inst.gold_relation.clone().unwrap());
    }
    for set in tally.values_mut() {
        set.insert("no_relation".into());
    }
    let got: BTreeMap<(String, String), BTreeSet<String>> = map
        .iter()
        .map(|((s, o), v)| ((s.to_string(), o.to_string()), v.clone()))
        .collect();
    assert_eq!(got, tally);
}

#[test]
fn type_map_json_round_trip() {
    let ontology = RelationOntology::tacred();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let map =
        build_type_constraint_map(&random_instances(&mut rng, 40, &ontology), &ontology).unwrap();
    let back = relsum::corpus::TypeConstraintMap::from_json(&map.to_json(), &ontology).unwrap();
    assert_eq!(back.to_json(), map.to_json());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn type_map_is_order_insensitive(seed in any::<u64>(), n in 0usize..60) {
        let ontology = RelationOntology::tacred();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = random_instances(&mut rng, n, &ontology);
        let a = build_type_constraint_map(&train, &ontology).unwrap();
        train.shuffle(&mut rng);
        let b = build_type_constraint_map(&train, &ontology).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
        for (_, set) in a.iter() {
            prop_assert!(set.contains("no_relation"));
        }
    }

    #[test]
    fn unified_jsonl_round_trip(seed in any::<u64>(), n in 0usize..30, drop_types in any::<bool>()) {
        let ontology = RelationOntology::tacred();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut insts = random_instances(&mut rng, n, &ontology);
        if drop_types {
            for i in insts.iter_mut().step_by(2) {
                i.subj_type = None;
                i.obj_type = None;
                i.gold_relation = None;
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save_unified_jsonl(&insts, &path).unwrap();
        let back = load_instances(&path, DataFormat::UnifiedJsonl).unwrap();
        prop_assert_eq!(back, insts);
    }
}

#[test]
fn empty_and_malformed_input() {
    assert!(parse_instances("", DataFormat::UnifiedJsonl)
        .unwrap()
        .is_empty());
    assert!(parse_instances("[]", DataFormat::TacredJson)
        .unwrap()
        .is_empty());
    let bad =
        r#"{"id":"a","tokens":["x","y"],"subj_start":0,"subj_end":1,"obj_start":1,"obj_end":5}"#;
    let err = parse_instances(bad, DataFormat::UnifiedJsonl)
        .unwrap_err()
        .to_string();
    assert!(err.contains('0'), "{err}");
    let e2e = load_instances(fixture("e2e.jsonl"), DataFormat::UnifiedJsonl).unwrap();
    assert_eq!(e2e.len(), 20);
}
