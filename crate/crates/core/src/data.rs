//! Tweet preprocessing and the dataset TSV format, plus fold assignment
//! and a synthetic fixture generator.
//!
//! Text is NFC-normalized with mentions mapped to `@` and URLs to `^`, capped
//! at 512 characters, then tokenized with each token capped at 64
//! characters. Records that end up with no tokens are dropped and counted.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::vocab::{CharVocab, WordVocab};

pub const MAX_TEXT_CHARS: usize = 512;
pub const MAX_WORD_CHARS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trait {
    Ext,
    Sta,
    Agr,
    Con,
    Opn,
}

impl Trait {
    pub const ALL: [Trait; 5] = [Trait::Ext, Trait::Sta, Trait::Agr, Trait::Con, Trait::Opn];

    pub fn name(self) -> &'static str {
        match self {
            Trait::Ext => "ext",
            Trait::Sta => "sta",
            Trait::Agr => "agr",
            Trait::Con => "con",
            Trait::Opn => "opn",
        }
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Trait {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Trait::ALL
            .into_iter()
            .find(|t| t.name() == lower)
            .ok_or_else(|| Error::Invalid(format!("unknown trait '{s}' (expected ext, sta, agr, con or opn)")))
    }
}

/// Big-5 scores, each in `[-0.5, 0.5]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TraitScores {
    pub ext: f64,
    pub sta: f64,
    pub agr: f64,
    pub con: f64,
    pub opn: f64,
}

impl TraitScores {
    pub fn new(ext: f64, sta: f64, agr: f64, con: f64, opn: f64) -> Result<Self> {
        for v in [ext, sta, agr, con, opn] {
            check_score(v)?;
        }
        Ok(Self { ext, sta, agr, con, opn })
    }

    pub fn get(&self, t: Trait) -> f64 {
        match t {
            Trait::Ext => self.ext,
            Trait::Sta => self.sta,
            Trait::Agr => self.agr,
            Trait::Con => self.con,
            Trait::Opn => self.opn,
        }
    }

    fn as_array(&self) -> [f64; 5] {
        [self.ext, self.sta, self.agr, self.con, self.opn]
    }
}

fn check_score(v: f64) -> Result<f64> {
    if v.is_finite() && (-0.5..=0.5).contains(&v) {
        Ok(v)
    } else {
        Err(Error::ScoreRange { value: v })
    }
}

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user_id: String,
    pub text: String,
    pub traits: TraitScores,
}

/// A preprocessed record ready for the models.
#[derive(Debug, Clone, PartialEq)]
pub struct Tweet {
    pub user_id: String,
    pub raw_text: String,
    /// Normalized and length-capped text; the char baseline reads this.
    pub text: String,
    pub tokens: Vec<String>,
    pub traits: TraitScores,
}

impl Tweet {
    /// `None` when the text has no tokens after preprocessing.
    pub fn from_record(record: &RawRecord) -> Option<Tweet> {
        let (text, tokens) = preprocess(&record.text)?;
        Some(Tweet {
            user_id: record.user_id.clone(),
            raw_text: record.text.clone(),
            text,
            tokens,
            traits: record.traits,
        })
    }

    pub fn to_record(&self) -> RawRecord {
        RawRecord {
            user_id: self.user_id.clone(),
            text: self.raw_text.clone(),
            traits: self.traits,
        }
    }

    pub fn score(&self, t: Trait) -> f64 {
        self.traits.get(t)
    }
}

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap());
// Not preceded by a word character or another `@`, so a replaced mention
// never exposes a new one.
static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(^|[^\w@])@\w+").unwrap());
static EMOTICON: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:[:;=8xX][-o'^]?[)(\]\[dDpPoO/\\|*3]+|[)(\]\[dDpP/\\|][-o'^]?[:;=]|[oO0][._][oO0]|<3+)$").unwrap()
});

/// NFC-normalizes and replaces every URL (`http://`, `https://` or `www.`
/// followed by non-space characters) with `^` and every mention (`@`
/// followed by word characters, not preceded by a word character or `@`)
/// with `@`.
/// Everything else, hashtags included, is kept as is.
pub fn normalize_tweet(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let no_urls = URL.replace_all(&nfc, "^");
    MENTION.replace_all(&no_urls, "${1}@").into_owned()
}

/// [`normalize_tweet`] on raw bytes; invalid UTF-8 is reported with the
/// offset of the first bad byte.
pub fn normalize_bytes(bytes: &[u8]) -> Result<String> {
    let s = std::str::from_utf8(bytes).map_err(|e| Error::Utf8 { offset: e.valid_up_to() })?;
    Ok(normalize_tweet(s))
}

/// Splits normalized text into tokens.
///
/// Rules, applied to each whitespace-separated chunk:
/// 1. a chunk starting with `#` is one token;
/// 2. a leading `@` becomes its own token and the rest is processed again;
/// 3. a chunk with no letters or digits (`^`, `:)`, `!!!`) is one token;
/// 4. a chunk matching a small emoticon pattern (`:D`, `o.O`, `<3`) is one token;
/// 5. otherwise leading and trailing runs of non-alphanumeric characters are
///    split off as one token each, keeping inner punctuation (`ain't`).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        split_chunk(chunk, &mut out);
    }
    out
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    if chunk.is_empty() {
        return;
    }
    if chunk.starts_with('#') {
        out.push(chunk.to_string());
        return;
    }
    if let Some(rest) = chunk.strip_prefix('@') {
        out.push("@".to_string());
        split_chunk(rest, out);
        return;
    }
    if !chunk.chars().any(char::is_alphanumeric) || EMOTICON.is_match(chunk) {
        out.push(chunk.to_string());
        return;
    }
    let start = chunk.find(char::is_alphanumeric).unwrap_or(0);
    let end = chunk
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())
        .map_or(chunk.len(), |(i, c)| i + c.len_utf8());
    for piece in [&chunk[..start], &chunk[start..end], &chunk[end..]] {
        if !piece.is_empty() {
            out.push(piece.to_string());
        }
    }
}

fn truncate_chars(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Full preprocessing: normalize, cap, tokenize, cap tokens. `None` if no
/// tokens remain.
pub fn preprocess(text: &str) -> Option<(String, Vec<String>)> {
    let normalized = normalize_tweet(text);
    let capped = truncate_chars(&normalized, MAX_TEXT_CHARS).to_string();
    let tokens: Vec<String> = tokenize(&capped)
        .into_iter()
        .map(|t| truncate_chars(&t, MAX_WORD_CHARS).to_string())
        .collect();
    if tokens.is_empty() {
        None
    } else {
        Some((capped, tokens))
    }
}

/// Character vocabulary over every token character, ids in order of first
/// appearance.
pub fn build_char_vocab<'a>(tweets: impl IntoIterator<Item = &'a Tweet>) -> Result<CharVocab> {
    let mut vocab = CharVocab::new();
    let mut any = false;
    for t in tweets {
        any = true;
        for tok in &t.tokens {
            for c in tok.chars() {
                vocab.insert(c);
            }
        }
    }
    if !any {
        return Err(Error::EmptyInput("cannot build a vocabulary from an empty corpus"));
    }
    Ok(vocab)
}

/// Character vocabulary for the char baseline, which also sees whitespace.
pub fn build_text_char_vocab<'a>(tweets: impl IntoIterator<Item = &'a Tweet>) -> Result<CharVocab> {
    let mut vocab = CharVocab::new();
    let mut any = false;
    for t in tweets {
        any = true;
        for c in t.text.chars() {
            vocab.insert(c);
        }
    }
    if !any {
        return Err(Error::EmptyInput("cannot build a vocabulary from an empty corpus"));
    }
    Ok(vocab)
}

pub fn build_word_vocab<'a>(tweets: impl IntoIterator<Item = &'a Tweet>) -> Result<WordVocab> {
    let mut vocab = WordVocab::new();
    let mut any = false;
    for t in tweets {
        any = true;
        for tok in &t.tokens {
            vocab.insert(tok.clone());
        }
    }
    if !any {
        return Err(Error::EmptyInput("cannot build a vocabulary from an empty corpus"));
    }
    Ok(vocab)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub parsed: usize,
    pub dropped_empty: usize,
    /// `(line number, reason)` for every rejected line.
    pub rejected: Vec<(usize, String)>,
}

impl LoadReport {
    pub fn to_csv(&self) -> String {
        format!(
            "parsed,dropped_empty,rejected\n{},{},{}\n",
            self.parsed,
            self.dropped_empty,
            self.rejected.len()
        )
    }
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "parsed {} records, dropped {} empty after normalization, rejected {} lines",
            self.parsed,
            self.dropped_empty,
            self.rejected.len()
        )?;
        for (line, why) in &self.rejected {
            write!(f, "\n  line {line}: {why}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub tweets: Vec<Tweet>,
    pub report: LoadReport,
}

impl Dataset {
    pub fn records(&self) -> Vec<RawRecord> {
        self.tweets.iter().map(Tweet::to_record).collect()
    }
}

/// Parses one TSV line: `user_id ext sta agr con opn text`.
pub fn parse_line(line: &str) -> Result<RawRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 7 {
        return Err(format!("expected 7 tab-separated columns, found {}", fields.len()));
    }
    let user_id = fields[0];
    if user_id.is_empty() {
        return Err("empty user id".into());
    }
    let mut scores = [0.0; 5];
    for (slot, (field, t)) in scores.iter_mut().zip(fields[1..6].iter().zip(Trait::ALL)) {
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| format!("{t} score '{field}' is not a number"))?;
        *slot = check_score(v).map_err(|e| format!("{t}: {e}"))?;
    }
    let [ext, sta, agr, con, opn] = scores;
    Ok(RawRecord {
        user_id: user_id.to_string(),
        text: fields[6].to_string(),
        traits: TraitScores { ext, sta, agr, con, opn },
    })
}

/// Parses dataset text. Malformed lines are skipped and listed in the report;
/// records with nothing left after preprocessing are dropped and counted.
pub fn parse_dataset(content: &str) -> Dataset {
    let mut report = LoadReport::default();
    let mut tweets = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        match parse_line(line) {
            Err(why) => report.rejected.push((i + 1, why)),
            Ok(rec) => match Tweet::from_record(&rec) {
                Some(t) => {
                    report.parsed += 1;
                    tweets.push(t);
                }
                None => report.dropped_empty += 1,
            },
        }
    }
    Dataset { tweets, report }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let content = std::str::from_utf8(&bytes).map_err(|e| Error::Utf8 { offset: e.valid_up_to() })?;
    Ok(parse_dataset(content))
}

pub fn format_record(r: &RawRecord) -> Result<String> {
    if r.user_id.is_empty() || r.user_id.contains(['\t', '\n', '\r']) {
        return Err(Error::Invalid(format!("user id {:?} cannot be written to TSV", r.user_id)));
    }
    if r.text.contains(['\t', '\n', '\r']) {
        return Err(Error::Invalid(format!("text {:?} contains a tab or newline", r.text)));
    }
    let s = r.traits.as_array();
    Ok(format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.user_id, s[0], s[1], s[2], s[3], s[4], r.text
    ))
}

pub fn save_dataset(records: &[RawRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&format_record(r)?);
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FoldLevel {
    /// Tweets assigned to folds, stratified by user.
    Tweet,
    /// Whole users assigned to folds.
    User,
}

impl fmt::Display for FoldLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FoldLevel::Tweet => "tweet",
            FoldLevel::User => "user",
        })
    }
}

impl FromStr for FoldLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tweet" => Ok(FoldLevel::Tweet),
            "user" => Ok(FoldLevel::User),
            _ => Err(Error::Invalid(format!("unknown level '{s}' (expected tweet or user)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub level: FoldLevel,
    pub seed: u64,
    /// Fold index of every record.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

/// Distinct user ids in order of first appearance, with their record indices.
fn group_by_user<S: AsRef<str>>(user_ids: &[S]) -> Vec<Vec<usize>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, u) in user_ids.iter().enumerate() {
        let g = *index.entry(u.as_ref()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

/// Assigns each record (given by its user id) to one of `k` folds.
///
/// At user level, users are shuffled and dealt round-robin, so fold sizes in
/// users differ by at most one. At tweet level, each user's tweets are
/// shuffled and dealt round-robin, continuing from the fold where the
/// previous user stopped; each user's per-fold counts and the fold totals
/// then differ by at most one.
pub fn kfold_split<S: AsRef<str>>(user_ids: &[S], k: usize, level: FoldLevel, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Folds { k, reason: "k must be at least 2".into() });
    }
    let groups = group_by_user(user_ids);
    let mut rng = SplitMix64::stream(seed, 0xF01D);
    let mut assignment = vec![0; user_ids.len()];
    match level {
        FoldLevel::User => {
            if groups.len() < k {
                return Err(Error::Folds {
                    k,
                    reason: format!("only {} distinct users", groups.len()),
                });
            }
            let mut order: Vec<usize> = (0..groups.len()).collect();
            rng.shuffle(&mut order);
            for (slot, &g) in order.iter().enumerate() {
                for &i in &groups[g] {
                    assignment[i] = slot % k;
                }
            }
        }
        FoldLevel::Tweet => {
            if user_ids.len() < k {
                return Err(Error::Folds {
                    k,
                    reason: format!("only {} tweets", user_ids.len()),
                });
            }
            let mut next = rng.below(k);
            for group in &groups {
                let mut members = group.clone();
                rng.shuffle(&mut members);
                for i in members {
                    assignment[i] = next;
                    next = (next + 1) % k;
                }
            }
        }
    }
    Ok(FoldPlan { k, level, seed, assignment })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    /// EXT = clamp(0.1·(number of `!`) − 0.3); 0 to 8 `!` per user.
    Exclamation,
    /// EXT = clamp(0.1·(word length) − 0.5); every word a user writes has
    /// the same length, 2 to 8.
    Length,
    /// EXT = 0.3 if the user writes the marker word `yay` in every tweet,
    /// −0.3 otherwise.
    Marker,
}

impl FromStr for Signal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclamation" => Ok(Signal::Exclamation),
            "length" => Ok(Signal::Length),
            "marker" => Ok(Signal::Marker),
            _ => Err(Error::Invalid(format!(
                "unknown signal '{s}' (expected exclamation, length or marker)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub signal: Signal,
    /// Standard deviation of per-user Gaussian noise added to EXT.
    pub noise: f64,
}

pub const MARKER_WORD: &str = "yay";

const FILLER: &[&str] = &[
    "the", "day", "was", "long", "and", "then", "we", "went", "home", "coffee", "is", "good", "today", "feeling",
    "tired", "new", "music", "out", "now", "love", "this", "city", "rain", "again", "work", "late", "tonight", "game",
    "match", "win", "lost", "my", "keys", "friends", "dinner", "ready", "weekend", "plans", "movie", "book",
];

fn clamp_score(x: f64) -> f64 {
    x.clamp(-0.5, 0.5)
}

/// Signal-driven EXT score for the exclamation fixture.
pub fn exclamation_score(count: usize) -> f64 {
    clamp_score(0.1 * count as f64 - 0.3)
}

fn pseudo_word(len: usize, rng: &mut SplitMix64) -> String {
    const LETTERS: &[u8] = b"abcdefghijklmnoprstuvw";
    (0..len).map(|_| LETTERS[rng.below(LETTERS.len())] as char).collect()
}

/// Synthetic corpus whose EXT score is a deterministic function of a surface
/// signal in each user's tweets (plus optional per-user noise). The other
/// four traits are per-user random constants. Every tweet of a user carries
/// the same scores.
pub fn generate_fixture(n_users: usize, tweets_per_user: usize, spec: FixtureSpec, seed: u64) -> Vec<RawRecord> {
    let mut rng = SplitMix64::stream(seed, 0xF1C5);
    let mut out = Vec::with_capacity(n_users * tweets_per_user);
    for u in 0..n_users {
        let user_id = format!("user{u:04}");
        let level = match spec.signal {
            Signal::Exclamation => rng.below(9),
            Signal::Length => 2 + rng.below(7),
            Signal::Marker => rng.below(2),
        };
        let clean = match spec.signal {
            Signal::Exclamation => exclamation_score(level),
            Signal::Length => clamp_score(0.1 * level as f64 - 0.5),
            Signal::Marker => {
                if level == 1 {
                    0.3
                } else {
                    -0.3
                }
            }
        };
        let ext = if spec.noise > 0.0 {
            clamp_score(clean + spec.noise * rng.normal())
        } else {
            clean
        };
        let mut other = || (rng.uniform(-0.5, 0.5) * 100.0).round() / 100.0;
        let traits = TraitScores {
            ext,
            sta: other(),
            agr: other(),
            con: other(),
            opn: other(),
        };

        for _ in 0..tweets_per_user {
            let n_words = 3 + rng.below(6);
            let mut words: Vec<String> = (0..n_words)
                .map(|_| match spec.signal {
                    Signal::Length => pseudo_word(level, &mut rng),
                    _ => FILLER[rng.below(FILLER.len())].to_string(),
                })
                .collect();
            if spec.signal == Signal::Marker && level == 1 {
                let at = rng.below(words.len() + 1);
                words.insert(at, MARKER_WORD.to_string());
            }
            if spec.signal == Signal::Exclamation && level > 0 {
                words.last_mut().unwrap().push_str(&"!".repeat(level));
            }
            if rng.next_f64() < 0.2 {
                words.insert(0, format!("@friend{}", rng.below(50)));
            }
            if rng.next_f64() < 0.15 {
                words.push(format!("#{}", FILLER[rng.below(FILLER.len())]));
            }
            if rng.next_f64() < 0.15 {
                words.push(format!("http://t.co/{}", pseudo_word(6, &mut rng)));
            }
            out.push(RawRecord {
                user_id: user_id.clone(),
                text: words.join(" "),
                traits,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_tweet("@john hi http://t.co/abc"), "@ hi ^");
        assert_eq!(normalize_tweet("no entities here!"), "no entities here!");
        assert_eq!(normalize_tweet("see www.example.com and @a_b #topic"), "see ^ and @ #topic");
        assert_eq!(normalize_tweet("@username: Feeling"), "@: Feeling");
        assert_eq!(normalize_tweet("HTTPS://X.CO/a b"), "^ b");
        assert_eq!(normalize_tweet("mail me: a@b.com"), "mail me: a@b.com");
    }

    #[test]
    fn normalization_applies_nfc() {
        assert_eq!(normalize_tweet("cafe\u{301}"), "caf\u{e9}");
    }

    #[test]
    fn invalid_utf8_reports_offset() {
        match normalize_bytes(b"ab\xffcd") {
            Err(Error::Utf8 { offset }) => assert_eq!(offset, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("hi there"), toks(&["hi", "there"]));
        assert_eq!(tokenize("@ hi ^"), toks(&["@", "hi", "^"]));
        assert_eq!(
            tokenize("Being good ain't enough lately."),
            toks(&["Being", "good", "ain't", "enough", "lately", "."])
        );
        assert_eq!(tokenize("#topic! great!!!! :) o.O :D"), toks(&["#topic!", "great", "!!!!", ":)", "o.O", ":D"]));
        assert_eq!(tokenize("@: Feeling"), toks(&["@", ":", "Feeling"]));
        assert_eq!(tokenize("(soooo) cool"), toks(&["(", "soooo", ")", "cool"]));
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn preprocess_caps_lengths() {
        let long_word = "a".repeat(100);
        let (_, tokens) = preprocess(&long_word).unwrap();
        assert_eq!(tokens[0].chars().count(), MAX_WORD_CHARS);
        let long_text = "ab ".repeat(400);
        let (text, _) = preprocess(&long_text).unwrap();
        assert_eq!(text.chars().count(), MAX_TEXT_CHARS);
        assert!(preprocess(" \t ").is_none());
    }

    #[test]
    fn char_vocab_examples() {
        let corpus: Vec<Tweet> = ["ab", "ba"]
            .iter()
            .map(|t| Tweet::from_record(&RawRecord {
                user_id: "u".into(),
                text: t.to_string(),
                traits: TraitScores::new(0.0, 0.0, 0.0, 0.0, 0.0).unwrap(),
            }).unwrap())
            .collect();
        let v = build_char_vocab(&corpus).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.id(&'ω'), v.unk_id());
        assert_eq!(build_char_vocab(&corpus).unwrap(), v);
        assert!(build_char_vocab(&[]).is_err());
    }

    #[test]
    fn parse_line_examples() {
        let r = parse_line("u1\t0.25\t-0.5\t0\t0.1\t0.5\thello @john").unwrap();
        assert_eq!(r.user_id, "u1");
        assert_eq!(r.traits, TraitScores { ext: 0.25, sta: -0.5, agr: 0.0, con: 0.1, opn: 0.5 });
        assert_eq!(r.text, "hello @john");
        assert!(parse_line("u1\t0.75\t0\t0\t0\t0\thi").unwrap_err().contains("out of range"));
        assert!(parse_line("u1\tabc\t0\t0\t0\t0\thi").unwrap_err().contains("not a number"));
        assert!(parse_line("u1\t0\t0\thi").unwrap_err().contains("columns"));
        assert!(parse_line("\t0\t0\t0\t0\t0\thi").is_err());
    }

    #[test]
    fn parse_dataset_reports() {
        let content = "u1\t0.1\t0\t0\t0\t0\thello\nu2\t0.75\t0\t0\t0\t0\tbad\nu3\t0\t0\t0\t0\t0\t\nu4\t0\t0\t0\t0\t0\t   \n";
        let d = parse_dataset(content);
        assert_eq!(d.tweets.len(), 1);
        assert_eq!(d.report.parsed, 1);
        assert_eq!(d.report.dropped_empty, 2);
        assert_eq!(d.report.rejected.len(), 1);
        assert_eq!(d.report.rejected[0].0, 2);
        assert!(d.report.to_csv().ends_with("1,2,1\n"));
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(matches!(load_dataset("/nonexistent/data.tsv"), Err(Error::Io { .. })));
    }

    #[test]
    fn fixture_round_trips_through_tsv() {
        let recs = generate_fixture(4, 6, FixtureSpec { signal: Signal::Exclamation, noise: 0.05 }, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.tsv");
        save_dataset(&recs, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.report.rejected.len(), 0);
        assert_eq!(loaded.report.dropped_empty, 0);
        assert_eq!(loaded.records(), recs);
    }

    #[test]
    fn fixture_signal_formula() {
        assert!((exclamation_score(5) - 0.2).abs() < 1e-15);
        assert_eq!(exclamation_score(0), -0.3);
        let spec = FixtureSpec { signal: Signal::Exclamation, noise: 0.0 };
        let recs = generate_fixture(10, 5, spec, 42);
        assert_eq!(recs.len(), 50);
        for r in &recs {
            let bangs = r.text.matches('!').count();
            assert_eq!(r.traits.ext, exclamation_score(bangs));
        }
        assert_eq!(recs, generate_fixture(10, 5, spec, 42));
        assert_ne!(recs, generate_fixture(10, 5, spec, 43));
    }

    #[test]
    fn other_signals_follow_their_formulas() {
        let recs = generate_fixture(6, 3, FixtureSpec { signal: Signal::Length, noise: 0.0 }, 1);
        for r in &recs {
            let words: Vec<&str> = r.text.split(' ').filter(|w| !w.starts_with(['@', '#', 'h'])).collect();
            let len = words[0].len();
            assert!((r.traits.ext - (0.1 * len as f64 - 0.5)).abs() < 1e-12, "{r:?}");
        }
        let recs = generate_fixture(6, 3, FixtureSpec { signal: Signal::Marker, noise: 0.0 }, 1);
        for r in &recs {
            let has = r.text.split(' ').any(|w| w == MARKER_WORD);
            assert_eq!(r.traits.ext, if has { 0.3 } else { -0.3 });
        }
    }

    #[test]
    fn fixture_average_rmse_is_population_std() {
        let recs = generate_fixture(10, 20, FixtureSpec { signal: Signal::Exclamation, noise: 0.0 }, 5);
        let ys: Vec<f64> = recs.iter().map(|r| r.traits.ext).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let rmse = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
        // Population std via E[y²] − E[y]².
        let ey2 = ys.iter().map(|y| y * y).sum::<f64>() / ys.len() as f64;
        let std = (ey2 - mean * mean).sqrt();
        assert!((rmse - std).abs() < 1e-12);
    }

    #[test]
    fn fold_examples() {
        let one_user = vec!["u"; 10];
        let plan = kfold_split(&one_user, 5, FoldLevel::Tweet, 1).unwrap();
        for f in 0..5 {
            assert_eq!(plan.test_indices(f).len(), 2);
        }
        let four = ["a", "b", "c", "d"];
        assert!(kfold_split(&four, 5, FoldLevel::User, 1).is_err());
        assert!(kfold_split(&four, 5, FoldLevel::Tweet, 1).is_err());
        assert!(kfold_split(&four, 1, FoldLevel::Tweet, 1).is_err());

        let users: Vec<String> = (0..30).map(|i| format!("u{}", i % 3)).collect();
        let plan = kfold_split(&users, 5, FoldLevel::Tweet, 9).unwrap();
        for f in 0..5 {
            for u in ["u0", "u1", "u2"] {
                let n = plan.test_indices(f).iter().filter(|&&i| users[i] == u).count();
                assert_eq!(n, 2, "fold {f} user {u}");
            }
        }
        assert_eq!(plan, kfold_split(&users, 5, FoldLevel::Tweet, 9).unwrap());
    }

    fn arb_users() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(0usize..12, 10..80).prop_map(|v| v.into_iter().map(|u| format!("u{u}")).collect())
    }

    proptest! {
        #[test]
        fn folds_partition_records(users in arb_users(), k in 2usize..8, seed in any::<u64>()) {
            let plan = kfold_split(&users, k, FoldLevel::Tweet, seed).unwrap();
            let mut seen = vec![0; users.len()];
            for f in 0..k {
                for i in plan.test_indices(f) {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let sizes: Vec<usize> = (0..k).map(|f| plan.test_indices(f).len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for u in users.iter().collect::<std::collections::BTreeSet<_>>() {
                let per: Vec<usize> = (0..k).map(|f| plan.test_indices(f).iter().filter(|&&i| &users[i] == u).count()).collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
        }

        #[test]
        fn user_folds_never_split_users(users in arb_users(), k in 2usize..5, seed in any::<u64>()) {
            let distinct = users.iter().collect::<std::collections::BTreeSet<_>>().len();
            prop_assume!(distinct >= k);
            let plan = kfold_split(&users, k, FoldLevel::User, seed).unwrap();
            let mut fold_of: HashMap<&str, usize> = HashMap::new();
            for (i, u) in users.iter().enumerate() {
                let f = *fold_of.entry(u).or_insert(plan.assignment[i]);
                prop_assert_eq!(f, plan.assignment[i]);
            }
            let mut users_per_fold = vec![0usize; k];
            for f in fold_of.values() {
                users_per_fold[*f] += 1;
            }
            prop_assert!(users_per_fold.iter().max().unwrap() - users_per_fold.iter().min().unwrap() <= 1);
        }

        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_tweet(&s);
            prop_assert_eq!(normalize_tweet(&once), once.clone());
        }

        #[test]
        fn normalization_is_idempotent_on_entity_soup(s in "([@#:/. !a-z_]|http://|www\\.|https://|@ab){0,20}") {
            let once = normalize_tweet(&s);
            prop_assert_eq!(normalize_tweet(&once), once.clone());
        }

        #[test]
        fn tokens_are_nonempty_without_whitespace(s in "\\PC{0,60}") {
            for t in tokenize(&normalize_tweet(&s)) {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
            }
        }
    }
}
