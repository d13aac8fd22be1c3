#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use airkit::llm::{BackendConfig, ChatExchange, TranscriptWriter};
use airkit::prompting::RenderedPrompt;
use airkit::ragstore::DocumentRecord;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_replies(name: &str) -> Vec<String> {
    serde_json::from_str(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

const FILLER: &[&str] = &[
    "the", "channel", "signal", "frame", "slot", "carrier", "power", "control", "uplink", "downlink", "beam",
    "report", "measurement", "resource", "block", "symbol", "antenna", "network", "cell", "user", "timing",
    "grant", "buffer", "layer", "mapping", "index", "offset", "pattern", "scheduling", "configuration", "radio",
    "link", "bandwidth", "reference", "sequence", "modulation", "coding", "rate", "feedback", "procedure",
];

const NEEDLE_A: &[&str] = &[
    "amber", "basalt", "cobalt", "dahlia", "ember", "fennel", "garnet", "hazel", "indigo", "jasper", "kelp",
    "lilac", "mango", "nutmeg", "onyx", "pewter", "quartz", "russet", "saffron", "topaz",
];
const NEEDLE_B: &[&str] = &[
    "falcon", "otter", "heron", "lynx", "marten", "osprey", "badger", "ibis", "gecko", "walrus", "jackal",
    "condor", "ferret", "panda", "quokka", "raven", "stoat", "tapir", "vole", "wombat",
];

/// 100 filler documents; documents 0..20 each hide one unique three-word
/// phrase mid-text. Returns the corpus and `(query, doc_id)` pairs.
pub fn needle_corpus() -> (Vec<DocumentRecord>, Vec<(String, String)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut docs = Vec::new();
    let mut needles = Vec::new();
    for d in 0..100 {
        let mut words: Vec<String> = (0..700).map(|_| FILLER.choose(&mut rng).unwrap().to_string()).collect();
        let doc_id = format!("doc-{d:03}");
        if d < 20 {
            let phrase = format!("{} {} {}", NEEDLE_A[d], NEEDLE_B[d], d + 1000);
            words.insert(350, phrase.clone());
            needles.push((phrase, doc_id.clone()));
        }
        docs.push(DocumentRecord {
            doc_id,
            source: format!("Synthetic Rel-{}", d % 4 + 15),
            text: words.join(" "),
            metadata: BTreeMap::new(),
        });
    }
    (docs, needles)
}

pub fn write_docs(path: &Path, docs: &[DocumentRecord]) {
    std::fs::write(path, serde_json::to_string(docs).unwrap()).unwrap();
}

/// Records `replies[i]` as the answer to `prompts[i]` under `config`'s
/// model and temperature.
pub fn write_replay(path: &Path, config: &BackendConfig, prompts: &[RenderedPrompt], replies: &[String]) {
    assert_eq!(prompts.len(), replies.len());
    let w = TranscriptWriter::create(path).unwrap();
    for (p, r) in prompts.iter().zip(replies) {
        w.append(&ChatExchange::new(p, r.clone(), config, 0)).unwrap();
    }
}
