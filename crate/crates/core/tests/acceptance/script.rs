use std::collections::BTreeMap;

use mdforge_core::script::{parse_script, serialize_commands, static_lint, CommandCatalog};

use crate::common::{fixtures, read_fixture};
use crate::Outcome;

pub fn corpus() -> Outcome {
    let dir = fixtures().join("corpus");
    let labels: BTreeMap<String, Vec<String>> = serde_json::from_str(&read_fixture("corpus/expected.json")).unwrap();
    let catalog = CommandCatalog::bundled();
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "in"))
        .collect();
    paths.sort();
    let mut problems = Vec::new();
    for path in &paths {
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let text = std::fs::read_to_string(path).unwrap();
        let doc = parse_script(&text);

        let again = parse_script(&serialize_commands(&doc.commands));
        let round_trips = doc.commands.len() == again.commands.len()
            && doc.commands.iter().zip(&again.commands).all(|(a, b)| a.same_tokens(b));
        if !round_trips {
            problems.push(format!("{name}: round trip changed the command tokens"));
        }

        let mut got: Vec<String> = static_lint(&doc, &catalog)
            .iter()
            .map(|d| match d.line {
                Some(l) => format!("{}@{l}", d.code.as_str()),
                None => d.code.as_str().to_string(),
            })
            .collect();
        got.sort();
        let mut want = labels.get(&name).cloned().unwrap_or_default();
        want.sort();
        if got != want {
            problems.push(format!("{name}: diagnostics {got:?}, labeled {want:?}"));
        }
    }
    let final_errors = static_lint(&parse_script(&read_fixture("scripts/worked_example_final.in")), &catalog)
        .iter()
        .filter(|d| d.is_error())
        .count();
    if final_errors != 0 {
        problems.push(format!("reference final script has {final_errors} lint errors"));
    }
    if paths.len() == 20 && problems.is_empty() {
        Outcome::Pass("20/20 scripts round-trip with labeled diagnostics; reference final script has 0 errors".into())
    } else {
        Outcome::Fail(format!("{} scripts; {}", paths.len(), problems.join("; ")))
    }
}
