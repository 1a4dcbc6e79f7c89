//! Entity/frame pair extraction from time-aligned transcripts.
//!
//! Each video's tokens are scanned left to right. At every position a
//! two-word vocabulary match is preferred over a one-word match and matched
//! tokens are consumed. A match yields one pair stamped at the end time of
//! its last word. After all videos are scanned, entities with fewer than
//! `min_count` occurrences in the whole corpus are dropped.
//!
//! Matching always compares plural-normalized forms; `merge_plural` only
//! decides whether the emitted label is the merged vocabulary entry or the
//! surface form that was spoken.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{Error, Result};
pub use crate::ingest::EntityFramePair;
use crate::ingest::{CtmToken, EntityVocabulary};

/// Singularizes words with an optional irregular lexicon followed by suffix rules.
#[derive(Clone, Debug, Default)]
pub struct PluralNormalizer {
    irregular: HashMap<String, String>,
}

impl PluralNormalizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_irregular<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        Self {
            irregular: pairs
                .into_iter()
                .map(|(p, s)| (p.into().to_lowercase(), s.into().to_lowercase()))
                .collect(),
        }
    }

    /// Reads `plural singular` lines; blank lines and `#` comments are skipped.
    pub fn parse_lexicon<R: BufRead>(source: R) -> Result<Self> {
        let mut irregular = HashMap::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            match t.split_whitespace().collect::<Vec<_>>().as_slice() {
                [plural, singular] => {
                    irregular.insert(plural.to_lowercase(), singular.to_lowercase());
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "expected \"plural singular\"".into(),
                    })
                }
            }
        }
        Ok(Self { irregular })
    }

    pub fn normalize(&self, word: &str) -> String {
        if let Some(s) = self.irregular.get(word) {
            return s.clone();
        }
        suffix_rules(word)
    }

    /// Normalizes the head (last) word of a one- or two-word entity.
    pub fn normalize_entity(&self, entity: &str) -> String {
        match entity.rsplit_once(' ') {
            Some((head, last)) => format!("{head} {}", self.normalize(last)),
            None => self.normalize(entity),
        }
    }
}

/// Suffix-rule singularization without an irregular lexicon.
pub fn normalize_plural(word: &str) -> String {
    suffix_rules(word)
}

fn suffix_rules(word: &str) -> String {
    let len = word.chars().count();
    if len > 4 {
        if let Some(stem) = word.strip_suffix("ies") {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = word.strip_suffix("es") {
        if ["s", "x", "z", "ch", "sh"]
            .iter()
            .any(|s| stem.ends_with(s))
        {
            return stem.to_string();
        }
    }
    if len > 3 && !word.ends_with("ss") && !word.ends_with("us") {
        if let Some(stem) = word.strip_suffix('s') {
            return stem.to_string();
        }
    }
    word.to_string()
}

#[derive(Clone, Debug)]
pub struct ExtractConfig {
    pub min_count: usize,
    pub merge_plural: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            min_count: 5,
            merge_plural: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSummary {
    pub n_pairs: usize,
    pub n_entities: usize,
    /// Distinct spoken forms among retained pairs, i.e. the class count
    /// when singular and plural are kept apart over the same frames.
    pub n_surface_forms: usize,
    pub n_videos: usize,
    /// Entity frequencies, most frequent first, ties by name.
    pub frequencies: Vec<(String, usize)>,
}

impl DatasetSummary {
    /// Aligned text table: rank, entity, frequency.
    pub fn table(&self) -> String {
        let width = self
            .frequencies
            .iter()
            .map(|(e, _)| e.len())
            .max()
            .unwrap_or(0)
            .max("entity".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>4}  {:<width$}  {:>9}",
            "rank", "entity", "frequency"
        );
        for (i, (e, n)) in self.frequencies.iter().enumerate() {
            let _ = writeln!(out, "{:>4}  {:<width$}  {:>9}", i + 1, e, n);
        }
        let _ = writeln!(
            out,
            "pairs: {}  entities: {}  surface forms: {}  videos: {}",
            self.n_pairs, self.n_entities, self.n_surface_forms, self.n_videos
        );
        out
    }
}

/// Vocabulary keyed by normalized form.
struct MatchIndex<'a> {
    norm: &'a PluralNormalizer,
    canonical: HashMap<String, String>,
}

impl<'a> MatchIndex<'a> {
    fn new(vocab: &EntityVocabulary, norm: &'a PluralNormalizer) -> Self {
        let mut canonical: HashMap<String, String> = HashMap::new();
        for entry in vocab.iter() {
            let key = norm.normalize_entity(entry);
            // Prefer the entry that is already in normal form, then the
            // lexicographically smallest (vocab iterates sorted).
            let is_normal = key == entry;
            match canonical.get(&key) {
                Some(existing) if *existing == key => {}
                Some(_) if !is_normal => {}
                _ => {
                    canonical.insert(key, entry.to_string());
                }
            }
        }
        Self { norm, canonical }
    }

    fn lookup(&self, words: &[&str]) -> Option<&str> {
        let surface = words.join(" ");
        self.canonical
            .get(&self.norm.normalize_entity(&surface))
            .map(String::as_str)
    }
}

fn noun_tag_ok(t: &CtmToken) -> bool {
    t.pos.as_deref().is_none_or(|p| p == "NN" || p == "NNS")
}

struct RawMatch {
    canonical: String,
    surface: String,
    video_id: String,
    timestamp_s: f64,
}

/// Scan tokens and produce pairs plus their summary.
///
/// Tokens are grouped by `utterance_id` (the video id); within a video they
/// must be sorted by start time. Videos are emitted in lexicographic order.
pub fn extract_entity_pairs(
    tokens: &[CtmToken],
    vocab: &EntityVocabulary,
    cfg: &ExtractConfig,
    norm: &PluralNormalizer,
) -> Result<(Vec<EntityFramePair>, DatasetSummary)> {
    let index = MatchIndex::new(vocab, norm);
    let mut videos: BTreeMap<&str, Vec<&CtmToken>> = BTreeMap::new();
    for t in tokens {
        videos.entry(t.utterance_id.as_str()).or_default().push(t);
    }

    let mut matches = Vec::new();
    for (video, toks) in &videos {
        if toks.windows(2).any(|w| w[1].start_s < w[0].start_s) {
            return Err(Error::UnsortedTokens {
                video: video.to_string(),
            });
        }
        scan_video(video, toks, &index, &mut matches);
    }

    let label = |m: &RawMatch| {
        if cfg.merge_plural {
            m.canonical.clone()
        } else {
            m.surface.clone()
        }
    };
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for m in &matches {
        *counts.entry(label(m)).or_default() += 1;
    }

    let mut pairs = Vec::new();
    let mut surface_forms = BTreeSet::new();
    let mut kept_videos = BTreeSet::new();
    for m in &matches {
        let entity = label(m);
        if counts[&entity] < cfg.min_count {
            continue;
        }
        surface_forms.insert(m.surface.clone());
        kept_videos.insert(m.video_id.clone());
        pairs.push(EntityFramePair {
            frame_id: frame_id(&m.video_id, m.timestamp_s),
            entity,
            video_id: m.video_id.clone(),
            timestamp_s: m.timestamp_s,
        });
    }

    let mut frequencies: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, n)| *n >= cfg.min_count)
        .collect();
    frequencies.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let summary = DatasetSummary {
        n_pairs: pairs.len(),
        n_entities: frequencies.len(),
        n_surface_forms: surface_forms.len(),
        n_videos: kept_videos.len(),
        frequencies,
    };
    Ok((pairs, summary))
}

fn scan_video(video: &str, toks: &[&CtmToken], index: &MatchIndex, out: &mut Vec<RawMatch>) {
    let mut i = 0;
    while i < toks.len() {
        let mut matched = None;
        for width in [2usize, 1] {
            if i + width > toks.len() {
                continue;
            }
            let span = &toks[i..i + width];
            if !span.iter().all(|t| noun_tag_ok(t)) {
                continue;
            }
            let words: Vec<&str> = span.iter().map(|t| t.word.as_str()).collect();
            if let Some(canonical) = index.lookup(&words) {
                matched = Some((width, canonical.to_string(), words.join(" ")));
                break;
            }
        }
        match matched {
            Some((width, canonical, surface)) => {
                out.push(RawMatch {
                    canonical,
                    surface,
                    video_id: video.to_string(),
                    timestamp_s: toks[i + width - 1].end_s(),
                });
                i += width;
            }
            None => i += 1,
        }
    }
}

/// `video_id + "_" + milliseconds`.
pub fn frame_id(video_id: &str, timestamp_s: f64) -> String {
    format!("{video_id}_{}", (timestamp_s * 1000.0).round() as i64)
}

/// Label a phrase with the vocabulary entity of its last matching word.
pub fn match_phrase_to_entity(
    phrase_tokens: &[&str],
    vocab: &EntityVocabulary,
    norm: &PluralNormalizer,
) -> Option<String> {
    let index = MatchIndex::new(vocab, norm);
    phrase_tokens
        .iter()
        .rev()
        .find_map(|w| index.lookup(&[w]).map(str::to_string))
}

/// Deduplicated entity set per video.
pub fn video_multilabels(pairs: &[EntityFramePair]) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for p in pairs {
        out.entry(p.video_id.clone())
            .or_default()
            .insert(p.entity.clone());
    }
    out
}
