//! Deterministic synthetic prompt corpus.
//!
//! Prompt i is drawn from a fixed word list via the generator seed's
//! child stream for i, so the corpus depends only on (seed, count, vocab).
//! Token ids are stable per word: position in the global list, offset by 1
//! to keep 0 as the pad token.

use sinklab_core::numerics::RngStream;
use sinklab_core::toymodel::{ModelConfig, Prompt};

use crate::config::PromptsSection;
use crate::error::{HarnessError, Result};

const ADJECTIVES: [&str; 12] = [
    "quiet", "crimson", "foggy", "gilded", "hollow", "bright", "ancient", "narrow", "woven",
    "frozen", "amber", "restless",
];
const NOUNS: [&str; 12] = [
    "harbor", "lantern", "orchard", "bridge", "tower", "meadow", "engine", "archway", "garden",
    "canyon", "library", "windmill",
];
const VERBS: [&str; 8] = [
    "beside", "above", "facing", "inside", "beyond", "under", "near", "around",
];
const PLACES: [&str; 12] = [
    "river", "market", "cliffs", "station", "valley", "rooftops", "shore", "plaza", "forest",
    "dunes", "courtyard", "lighthouse",
];

fn word_lists() -> [&'static [&'static str]; 4] {
    [&ADJECTIVES, &NOUNS, &VERBS, &PLACES]
}

/// Stable token id for a word: its position in the concatenated word list,
/// shifted past the pad token, folded into the vocabulary.
fn token_id(word: &str, vocab: usize) -> u32 {
    let mut index = 0usize;
    for list in word_lists() {
        if let Some(pos) = list.iter().position(|w| w == &word) {
            return (1 + (index + pos) % (vocab - 1)) as u32;
        }
        index += list.len();
    }
    // Unknown word (file corpus): fold bytes into [1, vocab).
    let mut h = 0u64;
    for b in word.bytes() {
        h = h.wrapping_mul(31).wrapping_add(u64::from(b));
    }
    (1 + (h as usize) % (vocab - 1)) as u32
}

fn generated_prompt(i: u64, seed: u64, model: &ModelConfig) -> Result<Prompt> {
    let mut stream = RngStream::new(seed).child_indexed("prompt", i);
    let adj = ADJECTIVES[stream.uniform_index(ADJECTIVES.len())?];
    let noun = NOUNS[stream.uniform_index(NOUNS.len())?];
    let verb = VERBS[stream.uniform_index(VERBS.len())?];
    let place = PLACES[stream.uniform_index(PLACES.len())?];
    let text = format!("a {adj} {noun} {verb} the {place}");
    let ids: Vec<u32> = [adj, noun, verb, place]
        .iter()
        .map(|w| token_id(w, model.vocab))
        .collect();
    Ok(Prompt::new(i, text, ids, model.n_txt)?)
}

fn file_prompt(i: u64, line: &str, model: &ModelConfig) -> Result<Prompt> {
    let words: Vec<&str> = line.split_whitespace().collect();
    if words.is_empty() {
        return Err(HarnessError::config(format!("prompt line {i} is empty")));
    }
    if words.len() > model.n_txt {
        return Err(HarnessError::config(format!(
            "prompt line {i} has {} words, model takes {}",
            words.len(),
            model.n_txt
        )));
    }
    let ids: Vec<u32> = words.iter().map(|w| token_id(w, model.vocab)).collect();
    Ok(Prompt::new(i, line.to_string(), ids, model.n_txt)?)
}

/// Materialize the corpus a config describes.
pub fn build_prompts(section: &PromptsSection, model: &ModelConfig) -> Result<Vec<Prompt>> {
    if let Some(path) = &section.path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::config(format!("cannot read prompt file {path}: {e}")))?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.is_empty() {
            return Err(HarnessError::config(format!("prompt file {path} is empty")));
        }
        return lines
            .iter()
            .enumerate()
            .map(|(i, l)| file_prompt(i as u64, l.trim(), model))
            .collect();
    }
    (0..section.count as u64)
        .map(|i| generated_prompt(i, section.seed, model))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelConfig {
        ModelConfig::default()
    }

    #[test]
    fn corpus_is_deterministic() {
        let s = PromptsSection {
            count: 8,
            seed: 7,
            path: None,
        };
        let a = build_prompts(&s, &model()).unwrap();
        let b = build_prompts(&s, &model()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        // Distinct prompts exist (collisions allowed, uniformity not).
        assert!(a.iter().any(|p| p.text != a[0].text));
    }

    #[test]
    fn seeds_move_the_corpus() {
        let a = build_prompts(
            &PromptsSection {
                count: 8,
                seed: 7,
                path: None,
            },
            &model(),
        )
        .unwrap();
        let b = build_prompts(
            &PromptsSection {
                count: 8,
                seed: 8,
                path: None,
            },
            &model(),
        )
        .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn token_ids_are_in_vocab_and_padded() {
        let m = model();
        let prompts = build_prompts(
            &PromptsSection {
                count: 32,
                seed: 1,
                path: None,
            },
            &m,
        )
        .unwrap();
        for p in &prompts {
            assert_eq!(p.token_ids.len(), m.n_txt);
            assert!(p.token_ids.iter().all(|&t| (t as usize) < m.vocab));
            // First four slots are real words, the rest pad.
            assert!(p.token_ids[..4].iter().all(|&t| t != 0));
            assert!(p.token_ids[4..].iter().all(|&t| t == 0));
        }
    }

    #[test]
    fn file_corpus_loads_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompts.txt");
        std::fs::write(&path, "a quiet harbor\nan unknown mystery word here\n\n").unwrap();
        let s = PromptsSection {
            count: 99,
            seed: 0,
            path: Some(path.to_string_lossy().into_owned()),
        };
        let prompts = build_prompts(&s, &model()).unwrap();
        assert_eq!(prompts.len(), 2);
        assert_eq!(prompts[0].text, "a quiet harbor");
        assert!(prompts[1].token_ids[..5].iter().all(|&t| t != 0));
    }
}
