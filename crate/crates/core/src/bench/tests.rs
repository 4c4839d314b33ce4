use std::path::PathBuf;
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::exec::{Executor, RunConfig, StubRunner};
use crate::llm::{BackendError, FnBackend};
use crate::potentials::{scan_registry, RegistryHandle};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bench").join(name)
}

fn item(kind: ItemKind, gold: Value) -> BenchItem {
    BenchItem {
        id: "i".into(),
        kind,
        question: "q".into(),
        options: Default::default(),
        gold: Some(gold),
        difficulty: Difficulty::Easy,
        category: Category::Knowledge,
    }
}

fn said(answer: Value) -> String {
    format!("<think>t</think><answer>{}</answer>", json!({ "answer": answer }))
}

#[test]
fn single_choice_exact() {
    let it = item(ItemKind::Single, json!("B"));
    assert_eq!(grade_item(&it, &said(json!("B")), MultiMode::Jaccard).score, 1.0);
    assert_eq!(grade_item(&it, &said(json!(" b. ")), MultiMode::Jaccard).score, 1.0);
    assert_eq!(grade_item(&it, &said(json!("C")), MultiMode::Jaccard).score, 0.0);
}

#[test]
fn multiple_choice_jaccard() {
    let it = item(ItemKind::Multiple, json!(["A", "C"]));
    // {A,C} vs {A,B,C}: 2 shared out of 3 distinct
    assert_eq!(grade_item(&it, &said(json!(["A", "B", "C"])), MultiMode::Jaccard).score, 2.0 / 3.0);
    assert_eq!(grade_item(&it, &said(json!("C, A")), MultiMode::Jaccard).score, 1.0);
    assert_eq!(grade_item(&it, &said(json!(["A", "B", "C"])), MultiMode::Strict).score, 0.0);
    assert_eq!(grade_item(&it, &said(json!(["B", "D"])), MultiMode::Jaccard).score, 0.0);
}

#[test]
fn fill_normalizes_case_and_whitespace() {
    let it = item(ItemKind::Fill, json!(["eam/alloy"]));
    assert_eq!(grade_item(&it, &said(json!(" EAM/Alloy ")), MultiMode::Jaccard).score, 1.0);
    let two = item(ItemKind::Fill, json!(["write_data", "write_restart"]));
    assert_eq!(grade_item(&two, &said(json!(["write_data", "restart"])), MultiMode::Jaccard).score, 0.5);
}

#[test]
fn unparseable_scores_zero_with_flag() {
    let it = item(ItemKind::Single, json!("B"));
    let g = grade_item(&it, "B", MultiMode::Jaccard);
    assert_eq!((g.score, g.flag), (0.0, Some(GradeFlag::UnparseableAnswer)));
}

#[test]
fn gold_is_required_for_qa_kinds() {
    let mut it = item(ItemKind::Multiple, json!([]));
    assert!(it.validate().is_err());
    it.kind = ItemKind::Codegen;
    it.gold = None;
    assert!(it.validate().is_ok());
}

fn items() -> Vec<BenchItem> {
    let mut v = load_items(&fixture("knowledge_sample.jsonl")).unwrap();
    v.extend(load_items(&fixture("syntax_sample.jsonl")).unwrap());
    v
}

fn oracle_client(items: Vec<BenchItem>) -> LlmClient {
    LlmClient::new(Arc::new(FnBackend::new(move |req, _| {
        let it = items.iter().find(|i| req.user_text().contains(&i.question)).expect("known question");
        let ans = match it.kind {
            ItemKind::Open => json!("an answer"),
            _ => it.gold.clone().unwrap(),
        };
        Ok::<_, BackendError>(said(ans))
    })))
}

#[test]
fn perfect_and_silent_models() {
    let items = items();
    assert_eq!(items.len(), 20);
    let judge = LlmClient::new(Arc::new(FnBackend::new(|_, _| {
        Ok::<_, BackendError>("<think>x</think><answer>{\"score\": 1.0}</answer>".into())
    })));
    let cfg = QaBenchConfig { repeats: 3, ..QaBenchConfig::default() };
    let r = run_qa_bench(&items, &oracle_client(items.clone()), Some(&judge), &cfg).unwrap();
    assert_eq!(r.overall, Some(100.0));
    assert_eq!(r.per_category[&Category::Knowledge], 100.0);
    assert!(r.items.iter().all(|i| i.scores.len() == 3));

    let silent = LlmClient::new(Arc::new(FnBackend::new(|_, _| Ok::<_, BackendError>("no idea".into()))));
    let r = run_qa_bench(&items, &silent, Some(&judge), &QaBenchConfig::default()).unwrap();
    assert_eq!(r.overall, Some(0.0));
    assert!(r.items.iter().all(|i| i.flags == vec![GradeFlag::UnparseableAnswer]));
}

#[test]
fn backend_errors_score_zero() {
    let items = items();
    let down = LlmClient::new(Arc::new(FnBackend::new(|_, _| Err(BackendError::Fatal("boom".into())))));
    let r = run_qa_bench(&items, &down, None, &QaBenchConfig::default()).unwrap();
    assert_eq!(r.overall, Some(0.0));
    assert!(r.items.iter().all(|i| !i.errors.is_empty()));
}

#[test]
fn knowledge_set_shape_loads() {
    // a file with the published type and difficulty split of the knowledge set
    let kinds = [(ItemKind::Single, 151), (ItemKind::Multiple, 85), (ItemKind::Fill, 63), (ItemKind::Open, 37)];
    let diffs = [(Difficulty::Easy, 83), (Difficulty::Medium, 166), (Difficulty::Hard, 87)];
    let kind_seq: Vec<ItemKind> = kinds.iter().flat_map(|(k, n)| std::iter::repeat_n(*k, *n)).collect();
    let diff_seq: Vec<Difficulty> = diffs.iter().flat_map(|(d, n)| std::iter::repeat_n(*d, *n)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("knowledge.jsonl");
    let mut text = String::new();
    for (i, (k, d)) in kind_seq.iter().zip(&diff_seq).enumerate() {
        let gold = match k {
            ItemKind::Single => json!("A"),
            ItemKind::Multiple => json!(["A", "B"]),
            ItemKind::Fill => json!(["x"]),
            _ => json!("rubric"),
        };
        let it = BenchItem { id: format!("k{i}"), kind: *k, difficulty: *d, gold: Some(gold), ..item(*k, json!(null)) };
        text.push_str(&serde_json::to_string(&it).unwrap());
        text.push('\n');
    }
    std::fs::write(&path, text).unwrap();
    let loaded = load_items(&path).unwrap();
    assert_eq!(loaded.len(), 336);
    for (k, n) in kinds {
        assert_eq!(loaded.iter().filter(|i| i.kind == k).count(), n);
    }
    for (d, n) in diffs {
        assert_eq!(loaded.iter().filter(|i| i.difficulty == d).count(), n);
    }
}

#[test]
fn malformed_line_names_its_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "\n{\"id\":\"a\",\"kind\":\"single\",\"question\":\"q\",\"difficulty\":\"easy\",\"category\":\"knowledge\"}\n").unwrap();
    match load_items(&path) {
        Err(BenchError::BadItem { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn human_scores_ingested() {
    let scores = load_human_scores(&fixture("human_scores.json")).unwrap();
    assert_eq!(scores["c01"], 9.29);
}

const PASSING: &str = "units lj\natom_style atomic\nlattice fcc 0.8442\nregion box block 0 4 0 4 0 4\n\
create_box 1 box\ncreate_atoms 1 box\nmass 1 1.0\npair_style lj/cut 2.5\npair_coeff 1 1 1.0 1.0 2.5\n\
velocity all create 1.0 87287\nfix 1 all nve\nthermo 50\nrun 500\n";

fn codegen_deps(root: &std::path::Path, passing: Vec<(String, usize)>) -> SessionDeps {
    // candidate `idx` of a task passes when (task, idx) is listed
    let llm = LlmClient::new(Arc::new(FnBackend::new(move |req, idx| {
        let ok = passing.iter().any(|(t, i)| req.user_text().contains(t.as_str()) && *i == idx);
        let script = if ok { PASSING.to_string() } else { PASSING.replace("fix 1 all nve", "fixx 1 all nve") };
        Ok::<_, BackendError>(format!("<think>t</think><answer>{}</answer>", json!({ "lammps_code": script })))
    })));
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/potentials");
    let registry = Arc::new(RegistryHandle::new(scan_registry(&dir, &Default::default()).unwrap()));
    let cfg = RunConfig { workdir_root: root.to_path_buf(), ..RunConfig::default() };
    let executor = Executor::new(Arc::new(StubRunner::default()), cfg).unwrap().with_registry(registry.clone());
    SessionDeps::new(llm, Arc::new(executor), registry)
}

#[test]
fn codegen_rate_and_human_mean() {
    let tasks = load_items(&fixture("codegen_sample.jsonl")).unwrap();
    assert_eq!(tasks.len(), 10);
    let root = tempfile::tempdir().unwrap();
    let passing = vec![(tasks[0].question.clone(), 2), (tasks[3].question.clone(), 0)];
    let deps = codegen_deps(root.path(), passing);
    let human = load_human_scores(&fixture("human_scores.json")).unwrap();
    let r3 = run_codegen_bench(&tasks, &deps, 3, &human).unwrap();
    let cg = r3.codegen.as_ref().unwrap();
    assert_eq!(cg.exec_success_rate, 0.2);
    assert_eq!(cg.mean_human_score, Some(9.29));
    assert_eq!(cg.records[0].candidates_succeeded, vec![false, false, true]);
    let r1 = run_codegen_bench(&tasks, &deps, 1, &human).unwrap();
    let rate1 = r1.codegen.unwrap().exec_success_rate;
    assert_eq!(rate1, 0.1);
    assert!(cg.exec_success_rate >= rate1);
    assert!(r3.render_table().contains("exec_success@3"));
}

proptest! {
    #[test]
    fn aggregate_is_mean_of_items(scores in proptest::collection::vec((0u8..5, 0.0f64..=1.0), 1..60)) {
        let items: Vec<ItemRecord> = scores.iter().enumerate().map(|(i, (c, s))| ItemRecord {
            id: i.to_string(),
            kind: ItemKind::Single,
            category: if c % 2 == 0 { Category::Knowledge } else { Category::Syntax },
            difficulty: Difficulty::Easy,
            scores: vec![*s],
            mean: *s,
            flags: vec![],
            errors: vec![],
        }).collect();
        let r = BenchReport::from_items(items, 1);
        let mut total = 0.0;
        for (_, s) in &scores { total += s; }
        prop_assert!((r.overall.unwrap() - 100.0 * total / scores.len() as f64).abs() < 1e-9);
        for o in r.per_category.values().chain(r.per_kind.values()) {
            prop_assert!((0.0..=100.0).contains(o));
        }
    }

    #[test]
    fn rate_monotone_in_k(m in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 5), 1..30)) {
        let mut prev = 0.0;
        for k in 1..=5 {
            let r = success_rate_at_k(&m, k);
            prop_assert!(r >= prev && (0.0..=1.0).contains(&r));
            prev = r;
        }
    }
}
