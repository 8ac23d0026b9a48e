use std::collections::HashMap;
use std::sync::Arc;

use nag::metrics::{cider_d, sentence_bleu, sentence_gleu, DocFreqTable};

struct Case {
    hyp: Vec<u32>,
    refs: Vec<Vec<u32>>,
    expected: f64,
}

fn load(name: &str) -> Vec<Case> {
    let path = format!(
        "{}/tests/fixtures/metrics/{name}",
        env!("CARGO_MANIFEST_DIR")
    );
    let text = std::fs::read_to_string(path).unwrap();
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut encode = |s: &str| -> Vec<u32> {
        s.split_whitespace()
            .map(|w| {
                let next = ids.len() as u32 + 4;
                *ids.entry(w.to_string()).or_insert(next)
            })
            .collect()
    };
    text.lines()
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            assert_eq!(cols.len(), 3, "{line}");
            Case {
                hyp: encode(cols[0]),
                refs: cols[1].split('|').map(&mut encode).collect(),
                expected: cols[2].parse().unwrap(),
            }
        })
        .collect()
}

fn check(name: &str, score: impl Fn(&Case) -> f64) {
    let cases = load(name);
    assert!(cases.len() >= 40);
    for (i, c) in cases.iter().enumerate() {
        let v = score(c);
        assert!(
            (v - c.expected).abs() < 5e-7,
            "{name} line {}: {v} vs {}",
            i + 1,
            c.expected
        );
    }
}

#[test]
fn bleu_golden() {
    check("bleu.txt", |c| sentence_bleu(&c.hyp, &c.refs).unwrap());
}

#[test]
fn gleu_golden() {
    check("gleu.txt", |c| sentence_gleu(&c.hyp, &c.refs).unwrap());
}

#[test]
fn cider_golden() {
    // document frequencies come from the references of every line
    let cases = load("cider.txt");
    let docs: Vec<Vec<Vec<u32>>> = cases.iter().map(|c| c.refs.clone()).collect();
    let df = Arc::new(DocFreqTable::from_references(&docs));
    check("cider.txt", |c| cider_d(&c.hyp, &c.refs, &df).unwrap());
}
