//! JSON-lines dialogue files, one episode per line:
//!
//! ```json
//! {"episode_id": 0, "style": "formal", "turns": [{"user": "...", "domain": "hotel", "response": "..."}]}
//! ```
//!
//! `style` may be omitted (defaults to formal). Domains outside
//! hotel/restaurant/taxi are mapped to the nearest supported one and counted.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::vocab::split_words;
use super::{Corpus, Domain, Episode, Style, Turn, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub user: String,
    pub domain: String,
    pub response: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
    pub turns: Vec<TurnRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub episodes: usize,
    /// Turns whose domain label was not one of the supported three.
    pub remapped_domains: usize,
    pub defaulted_styles: usize,
}

struct Parsed {
    id: u64,
    style: Style,
    turns: Vec<(String, Domain, String)>,
}

fn read_records(path: &Path, report: &mut IngestReport) -> Result<Vec<Parsed>> {
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeRecord =
            serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let style = match rec.style.as_deref() {
            None => {
                report.defaulted_styles += 1;
                Style::Formal
            }
            Some(s) => Style::parse(s).ok_or_else(|| parse_err(lineno, format!("unknown style `{s}`")))?,
        };
        if rec.turns.is_empty() {
            return Err(parse_err(lineno, "episode has no turns".into()));
        }
        let mut turns = Vec::with_capacity(rec.turns.len());
        for (k, t) in rec.turns.into_iter().enumerate() {
            if t.user.trim().is_empty() || t.response.trim().is_empty() {
                return Err(parse_err(lineno, format!("turn {k} has an empty utterance")));
            }
            let (domain, exact) = Domain::nearest(&t.domain);
            if !exact {
                log::warn!(
                    "{}:{lineno}: domain `{}` mapped to `{}`",
                    path.display(),
                    t.domain,
                    domain.label()
                );
                report.remapped_domains += 1;
            }
            turns.push((t.user, domain, t.response));
        }
        out.push(Parsed {
            id: rec.episode_id,
            style,
            turns,
        });
    }
    if out.is_empty() {
        return Err(parse_err(0, "no episodes".into()));
    }
    report.episodes = out.len();
    Ok(out)
}

fn build(parsed: Vec<Parsed>, vocab: Vocab) -> Corpus {
    let episodes = parsed
        .into_iter()
        .map(|p| Episode {
            episode_id: p.id,
            style: p.style,
            turns: p
                .turns
                .into_iter()
                .map(|(user, condition, response)| Turn {
                    user_tokens: vocab.tokenize(&user, false),
                    condition,
                    response_tokens: vocab.tokenize(&response, true),
                    style: p.style,
                })
                .collect(),
        })
        .collect();
    Corpus { episodes, vocab }
}

/// Loads a JSON-lines file, building the vocabulary by frequency: tokens
/// seen at least twice, most frequent first, ties by first appearance.
/// Rarer tokens become UNK.
pub fn load_multiwoz_json(path: &Path) -> Result<(Corpus, IngestReport)> {
    let mut report = IngestReport::default();
    let parsed = read_records(path, &mut report)?;

    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for p in &parsed {
        for (user, _, response) in &p.turns {
            for w in split_words(user).chain(split_words(response)) {
                let next = counts.len();
                counts.entry(w).or_insert((0, next)).0 += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize, usize)> = counts
        .into_iter()
        .filter(|(_, (c, _))| *c >= 2)
        .map(|(w, (c, first))| (w, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut vocab = Vocab::new();
    for (w, _, _) in ranked {
        vocab.insert(&w);
    }
    Ok((build(parsed, vocab), report))
}

/// Loads a JSON-lines file against an existing vocabulary.
pub fn load_multiwoz_json_with_vocab(path: &Path, vocab: &Vocab) -> Result<(Corpus, IngestReport)> {
    let mut report = IngestReport::default();
    let parsed = read_records(path, &mut report)?;
    Ok((build(parsed, vocab.clone()), report))
}

/// Writes a corpus in the JSON-lines schema above.
pub fn write_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for ep in &corpus.episodes {
        let rec = EpisodeRecord {
            episode_id: ep.episode_id,
            style: Some(ep.style.label().to_string()),
            turns: ep
                .turns
                .iter()
                .map(|t| TurnRecord {
                    user: corpus.vocab.detokenize(&t.user_tokens),
                    domain: t.condition.label().to_string(),
                    response: corpus.vocab.detokenize(&t.response_tokens),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
