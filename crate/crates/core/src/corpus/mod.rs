//! Dialogue corpora: synthetic generation, tokenization, splitting, noise
//! injection and JSON-lines ingestion.

pub mod grammar;
mod multiwoz;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{domain, Error, Result};
use crate::rng::Rng;

pub use grammar::{CASUAL_MARKERS, FORMAL_MARKERS};
pub use multiwoz::{
    load_multiwoz_json, load_multiwoz_json_with_vocab, write_jsonl, EpisodeRecord, IngestReport,
    TurnRecord,
};
pub use vocab::{TokenId, Vocab, BOS, EOS, PAD, RESERVED, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Hotel,
    Restaurant,
    Taxi,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Hotel, Domain::Restaurant, Domain::Taxi];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Domain::Hotel => "hotel",
            Domain::Restaurant => "restaurant",
            Domain::Taxi => "taxi",
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::Index {
            what: "domain",
            index: i,
            bound: Self::ALL.len(),
        })
    }

    pub fn parse(label: &str) -> Option<Self> {
        let l = label.trim().to_lowercase();
        Self::ALL.into_iter().find(|d| d.label() == l)
    }

    /// Maps an arbitrary annotation label onto the closest supported domain:
    /// exact label, then keyword families, then smallest edit distance.
    /// The flag is false when the label was not an exact match.
    pub fn nearest(label: &str) -> (Self, bool) {
        if let Some(d) = Self::parse(label) {
            return (d, true);
        }
        let l = label.trim().to_lowercase();
        const FAMILIES: [(Domain, &[&str]); 3] = [
            (
                Domain::Hotel,
                &["hotel", "hostel", "guesthouse", "guest house", "lodg", "accommodation", "stay", "bnb"],
            ),
            (
                Domain::Restaurant,
                &["restaurant", "food", "dining", "cafe", "bar", "pub", "eat"],
            ),
            (
                Domain::Taxi,
                &["taxi", "cab", "train", "bus", "car", "transport", "ride"],
            ),
        ];
        for (d, keys) in FAMILIES {
            if keys.iter().any(|k| l.contains(k)) {
                return (d, false);
            }
        }
        let best = Self::ALL
            .into_iter()
            .min_by_key(|d| levenshtein(&l, d.label()))
            .expect("non-empty");
        (best, false)
    }
}

fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Formal,
    Casual,
}

impl Style {
    pub const ALL: [Style; 2] = [Style::Formal, Style::Casual];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flipped(self) -> Self {
        match self {
            Style::Formal => Style::Casual,
            Style::Casual => Style::Formal,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Style::Formal => "formal",
            Style::Casual => "casual",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        match label.trim().to_lowercase().as_str() {
            "formal" => Some(Style::Formal),
            "casual" => Some(Style::Casual),
            _ => None,
        }
    }

    pub fn markers(self) -> &'static [&'static str] {
        match self {
            Style::Formal => &FORMAL_MARKERS,
            Style::Casual => &CASUAL_MARKERS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub user_tokens: Vec<TokenId>,
    pub condition: Domain,
    /// Reference response, terminated by EOS.
    pub response_tokens: Vec<TokenId>,
    pub style: Style,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: u64,
    pub style: Style,
    pub turns: Vec<Turn>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub episodes: Vec<Episode>,
    pub vocab: Vocab,
}

/// Deterministic synthetic corpus of `n_episodes` dialogues.
///
/// The vocabulary is assigned in first-appearance order over the generated
/// text (user utterance before response, turn by turn).
pub fn generate_corpus(n_episodes: usize, seed: u64) -> Result<Corpus> {
    if n_episodes == 0 {
        return domain("generate_corpus needs at least one episode");
    }
    let mut rng = Rng::new(seed);
    let raw: Vec<grammar::RawEpisode> = (0..n_episodes as u64)
        .map(|id| grammar::episode(&mut rng, id))
        .collect();

    let mut vocab = Vocab::new();
    for ep in &raw {
        for t in &ep.turns {
            for w in vocab::split_words(&t.user).chain(vocab::split_words(&t.response)) {
                vocab.insert(&w);
            }
        }
    }
    let episodes = raw
        .iter()
        .map(|ep| Episode {
            episode_id: ep.id,
            style: ep.style,
            turns: ep
                .turns
                .iter()
                .map(|t| Turn {
                    user_tokens: vocab.tokenize(&t.user, false),
                    condition: t.domain,
                    response_tokens: vocab.tokenize(&t.response, true),
                    style: ep.style,
                })
                .collect(),
        })
        .collect();
    Ok(Corpus { episodes, vocab })
}

/// `embedding + sigma · g` with `g` i.i.d. standard normal drawn from `rng`
/// in entry order. `sigma = 0` returns the input unchanged and draws nothing.
pub fn inject_noise(embedding: &Tensor, sigma: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return domain(format!("noise sigma must be finite and >= 0, got {sigma}"));
    }
    let mut out = embedding.clone();
    if sigma > 0.0 {
        out.data_mut().iter_mut().for_each(|v| *v += sigma * rng.gaussian());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<Episode>,
    pub dev: Vec<Episode>,
    pub test: Vec<Episode>,
}

/// Episode-level shuffle, then partition at `round(n · cumulative ratio)`.
pub fn split(episodes: &[Episode], ratios: SplitRatios, seed: u64) -> Result<Splits> {
    let SplitRatios { train, dev, test } = ratios;
    if [train, dev, test].iter().any(|r| !(*r >= 0.0)) || ((train + dev + test) - 1.0).abs() > 1e-9 {
        return domain(format!(
            "split ratios must be non-negative and sum to 1, got ({train}, {dev}, {test})"
        ));
    }
    let n = episodes.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let cut1 = ((n as f64) * train).round() as usize;
    let cut2 = (((n as f64) * (train + dev)).round() as usize).clamp(cut1, n);
    let take = |r: std::ops::Range<usize>| -> Vec<Episode> {
        order[r].iter().map(|&i| episodes[i].clone()).collect()
    };
    Ok(Splits {
        train: take(0..cut1.min(n)),
        dev: take(cut1.min(n)..cut2),
        test: take(cut2..n),
    })
}

/// Style whose markers appear in `tokens` while the other style's do not.
pub fn classify_style(tokens: &[TokenId], vocab: &Vocab) -> Option<Style> {
    let count = |style: Style| {
        tokens
            .iter()
            .filter(|&&id| {
                vocab
                    .token(id)
                    .is_some_and(|t| style.markers().contains(&t))
            })
            .count()
    };
    let (f, c) = (count(Style::Formal), count(Style::Casual));
    match (f > 0, c > 0) {
        (true, false) => Some(Style::Formal),
        (false, true) => Some(Style::Casual),
        _ => None,
    }
}
