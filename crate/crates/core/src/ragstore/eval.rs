use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Chunk;
use crate::error::{Error, Result};
use crate::prompting::{PromptStyle, RenderedPrompt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McQuestion {
    pub question: String,
    pub options: Vec<String>,
    /// 0-based.
    pub gold_index: usize,
    pub category: String,
}

impl McQuestion {
    pub fn new(question: String, options: Vec<String>, gold_index: usize, category: String) -> Result<Self> {
        if options.len() < 2 {
            return Err(Error::invalid("a question needs at least two options"));
        }
        if gold_index >= options.len() {
            return Err(Error::invalid(format!(
                "gold index {gold_index} out of range for {} options",
                options.len()
            )));
        }
        Ok(McQuestion {
            question,
            options,
            gold_index,
            category,
        })
    }
}

/// Reads a JSON array of `{question, options, answer, category,
/// explanation?}` records. `answer` is a 0-based index or the exact text
/// of one option.
pub fn load_questions(path: &Path) -> Result<Vec<McQuestion>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_questions(&text)
}

pub fn parse_questions(text: &str) -> Result<Vec<McQuestion>> {
    let records: Vec<Value> = serde_json::from_str(text).map_err(|e| Error::json("question file", e))?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| parse_record(r).map_err(|message| Error::Dataset { record: i, message }))
        .collect()
}

fn parse_record(r: &Value) -> std::result::Result<McQuestion, String> {
    let obj = r.as_object().ok_or("record is not an object")?;
    let string = |key: &str| -> std::result::Result<String, String> {
        obj.get(key)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("missing string field `{key}`"))
    };
    let question = string("question")?;
    let category = string("category")?;
    let options: Vec<String> = obj
        .get("options")
        .and_then(Value::as_array)
        .ok_or("missing array field `options`")?
        .iter()
        .map(|o| o.as_str().map(str::to_string).ok_or("options must be strings"))
        .collect::<std::result::Result<_, _>>()?;
    if options.len() < 2 {
        return Err("fewer than two options".into());
    }
    let gold_index = match obj.get("answer") {
        Some(Value::Number(n)) => {
            let i = n.as_u64().ok_or("answer index must be a nonnegative integer")? as usize;
            if i >= options.len() {
                return Err(format!("answer index {i} out of range"));
            }
            i
        }
        Some(Value::String(s)) => options
            .iter()
            .position(|o| o == s)
            .ok_or_else(|| format!("answer text `{s}` matches no option"))?,
        _ => return Err("missing field `answer`".into()),
    };
    if let Some(e) = obj.get("explanation") {
        if !e.is_string() && !e.is_null() {
            return Err("explanation must be a string".into());
        }
    }
    Ok(McQuestion {
        question,
        options,
        gold_index,
        category,
    })
}

pub const QA_SYSTEM: &str = "You are an expert in wireless communication protocols and telecom standards.";

fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// Builds the question prompt, preceded by cited context blocks when any
/// are given.
pub fn augment(question: &McQuestion, contexts: &[&Chunk]) -> Result<RenderedPrompt> {
    if question.options.len() > 26 {
        return Err(Error::TooManyOptions(question.options.len()));
    }
    let mut text = String::new();
    if !contexts.is_empty() {
        text.push_str("Use the following excerpts from the protocol knowledge base to answer the question.\n\n");
        for (i, c) in contexts.iter().enumerate() {
            let _ = write!(
                text,
                "[Context {}] source: {}; document: {}; characters {}-{}\n{}\n\n",
                i + 1,
                c.source,
                c.doc_id,
                c.span.0,
                c.span.1,
                c.text
            );
        }
    }
    let _ = writeln!(text, "Question: {}", question.question);
    text.push_str("Options:\n");
    for (i, o) in question.options.iter().enumerate() {
        let _ = writeln!(text, "{}. {}", letter(i), o);
    }
    text.push_str("\nRespond with exactly one letter: the label of the correct option.");
    Ok(RenderedPrompt::new(QA_SYSTEM.to_string(), text, PromptStyle::ZeroShot))
}

/// The last standalone letter naming a valid option, case-insensitive.
pub fn parse_choice(response: &str, n_options: usize) -> Option<usize> {
    let chars: Vec<char> = response.chars().collect();
    let mut last = None;
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_ascii_alphabetic() {
            continue;
        }
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1).copied();
        if before.is_some_and(char::is_alphanumeric) || after.is_some_and(char::is_alphanumeric) {
            continue;
        }
        let idx = (c.to_ascii_uppercase() as u8 - b'A') as usize;
        if idx < n_options {
            last = Some(idx);
        }
    }
    last
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CategoryScore {
    pub correct: u64,
    pub total: u64,
}

impl CategoryScore {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    /// `100·correct/total` rounded half-up to two decimals in integer arithmetic.
    pub fn accuracy_pct(&self) -> String {
        if self.total == 0 {
            return "0.00".into();
        }
        let hundredths = (self.correct * 20_000 + self.total) / (2 * self.total);
        format!("{}.{:02}", hundredths / 100, hundredths % 100)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EvalReport {
    pub categories: BTreeMap<String, CategoryScore>,
    pub overall: CategoryScore,
    pub unparseable: u64,
}

pub fn grade(predictions: &[Option<usize>], questions: &[McQuestion]) -> Result<EvalReport> {
    if predictions.len() != questions.len() {
        return Err(Error::LengthMismatch {
            expected: questions.len(),
            actual: predictions.len(),
        });
    }
    let mut report = EvalReport::default();
    for (pred, q) in predictions.iter().zip(questions) {
        let entry = report.categories.entry(q.category.clone()).or_default();
        entry.total += 1;
        report.overall.total += 1;
        match pred {
            Some(i) if *i == q.gold_index => {
                entry.correct += 1;
                report.overall.correct += 1;
            }
            Some(_) => {}
            None => report.unparseable += 1,
        }
    }
    Ok(report)
}

#[derive(Serialize)]
struct CategoryJson {
    correct: u64,
    total: u64,
    accuracy_pct: String,
}

#[derive(Serialize)]
struct ReportJson {
    categories: BTreeMap<String, CategoryJson>,
    overall_pct: String,
    unparseable: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let json = ReportJson {
            categories: self
                .categories
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        CategoryJson {
                            correct: s.correct,
                            total: s.total,
                            accuracy_pct: s.accuracy_pct(),
                        },
                    )
                })
                .collect(),
            overall_pct: self.overall.accuracy_pct(),
            unparseable: self.unparseable,
        };
        serde_json::to_string_pretty(&json).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let width = self
            .categories
            .keys()
            .map(|k| k.chars().count())
            .chain(["Category".len(), "Overall".len()])
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>5}  {:>9}", "Category", "Correct", "Total", "Accuracy");
        let _ = writeln!(out, "{}", "-".repeat(width + 29));
        let mut row = |name: &str, s: &CategoryScore| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>5}  {:>8}%",
                name,
                s.correct,
                s.total,
                s.accuracy_pct()
            );
        };
        for (k, s) in &self.categories {
            row(k, s);
        }
        row("Overall", &self.overall);
        let _ = writeln!(out, "Unparseable: {}", self.unparseable);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap as Map;

    fn q(category: &str, gold: usize) -> McQuestion {
        McQuestion::new(
            "Which channel?".into(),
            vec!["PRACH".into(), "PUCCH".into(), "PDSCH".into(), "PBCH".into()],
            gold,
            category.into(),
        )
        .unwrap()
    }

    fn chunk(doc: &str, start: usize) -> Chunk {
        Chunk {
            doc_id: doc.into(),
            source: "3GPP TS 38.300".into(),
            span: (start, start + 10),
            text: format!("text of {doc}"),
            token_count: 3,
            tf: Map::new(),
        }
    }

    #[test]
    fn augment_layout() {
        let question = q("Lexicon", 0);
        let bare = augment(&question, &[]).unwrap();
        assert!(!bare.user_text.contains("[Context"));
        for l in ["A. ", "B. ", "C. ", "D. "] {
            assert_eq!(bare.user_text.lines().filter(|x| x.starts_with(l)).count(), 1);
        }
        assert!(!bare.user_text.contains("E. "));

        let (a, b, c) = (chunk("d1", 0), chunk("d2", 40), chunk("d3", 7));
        let rag = augment(&question, &[&a, &b, &c]).unwrap();
        let pos: Vec<usize> = (1..=3).map(|i| rag.user_text.find(&format!("[Context {i}]")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(rag.user_text.contains("document: d2; characters 40-50"));
        assert!(rag.user_text.find("[Context 3]").unwrap() < rag.user_text.find("Question:").unwrap());

        let mut many = q("x", 0);
        many.options = (0..27).map(|i| i.to_string()).collect();
        assert!(matches!(augment(&many, &[]), Err(Error::TooManyOptions(27))));
    }

    #[test]
    fn choice_parsing() {
        assert_eq!(parse_choice("The answer is (B).", 4), Some(1));
        assert_eq!(parse_choice("A... but actually C", 4), Some(2));
        assert_eq!(parse_choice("none of these", 4), None);
        assert_eq!(parse_choice("E", 4), None);
        assert_eq!(parse_choice("d", 4), Some(3));
        assert_eq!(parse_choice("Option B2 or AB", 4), None);
    }

    #[test]
    fn grading_examples() {
        let qs: Vec<McQuestion> = (0..4).map(|i| q("Standards", i % 4)).collect();
        let all: Vec<Option<usize>> = qs.iter().map(|q| Some(q.gold_index)).collect();
        let r = grade(&all, &qs).unwrap();
        assert_eq!(r.overall.accuracy_pct(), "100.00");

        // 5 Lexicon (4 right) and 5 Standards (3 right)
        let mut qs = Vec::new();
        let mut preds = Vec::new();
        for i in 0..5 {
            qs.push(q("Lexicon", 0));
            preds.push(Some(if i < 4 { 0 } else { 1 }));
        }
        for i in 0..5 {
            qs.push(q("Standards", 2));
            preds.push(if i < 3 { Some(2) } else { None });
        }
        let r = grade(&preds, &qs).unwrap();
        assert_eq!(r.categories["Lexicon"].accuracy_pct(), "80.00");
        assert_eq!(r.categories["Standards"].accuracy_pct(), "60.00");
        assert_eq!(r.overall.accuracy_pct(), "70.00");
        assert_eq!(r.unparseable, 2);
        let sum: u64 = r.categories.values().map(|c| c.total).sum();
        assert_eq!(sum, 10);

        let none = vec![None; 10];
        let r = grade(&none, &qs).unwrap();
        assert_eq!(r.overall.accuracy_pct(), "0.00");
        assert_eq!(r.unparseable, 10);

        assert!(grade(&none[..3], &qs).is_err());
    }

    #[test]
    fn pct_rounding() {
        let s = CategoryScore { correct: 2, total: 3 };
        assert_eq!(s.accuracy_pct(), "66.67");
        let s = CategoryScore { correct: 1, total: 3 };
        assert_eq!(s.accuracy_pct(), "33.33");
        let s = CategoryScore { correct: 1, total: 8 };
        assert_eq!(s.accuracy_pct(), "12.50");
    }

    #[test]
    fn report_json_and_table() {
        let qs = vec![q("Lexicon", 0), q("Research overview", 1)];
        let r = grade(&[Some(0), None], &qs).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["categories"]["Lexicon"]["accuracy_pct"], "100.00");
        assert_eq!(v["overall_pct"], "50.00");
        assert_eq!(v["unparseable"], 1);
        let table = r.table();
        assert!(table.contains("Research overview"));
        assert!(table.lines().any(|l| l.starts_with("Overall") && l.ends_with("50.00%")));
    }

    #[test]
    fn question_loader() {
        let text = r#"[
            {"question": "q1", "options": ["a", "b"], "answer": 1, "category": "Lexicon"},
            {"question": "q2", "options": ["x", "y", "z"], "answer": "z", "category": "Standards", "explanation": "because"}
        ]"#;
        let qs = parse_questions(text).unwrap();
        assert_eq!(qs[0].gold_index, 1);
        assert_eq!(qs[1].gold_index, 2);

        let bad = r#"[
            {"question": "q1", "options": ["a", "b"], "answer": 0, "category": "c"},
            {"question": "q2", "options": ["a", "b"], "answer": "c", "category": "c"}
        ]"#;
        match parse_questions(bad) {
            Err(Error::Dataset { record, .. }) => assert_eq!(record, 1),
            other => panic!("{other:?}"),
        }
        let missing = r#"[{"question": "q", "options": ["a", "b"], "answer": 5, "category": "c"}]"#;
        assert!(matches!(parse_questions(missing), Err(Error::Dataset { record: 0, .. })));
    }
}
