//! Normalization and tokenization against a frozen corpus.
//!
//! `tests/golden/preprocess.tsv` holds 50 generated lines with the expected
//! normalized text and tokens. Regenerate it with
//! `BLESS=1 cargo test -p c2w2s4pt --test preprocess_golden`.

use std::path::PathBuf;

use c2w2s4pt::data::{normalize_tweet, tokenize};
use c2w2s4pt::rng::SplitMix64;

const FRAGMENTS: &[&str] = &[
    "hi", "there", "ain't", "Being", "good", "lately", "#topic", "#MondayMotivation", "@john", "@a_b", "@", "@@x",
    "x@y.com", "http://t.co/abc", "https://example.org/p?q=1", "www.example.com", "HTTP://T.CO/Z", ":)", ":-(",
    ";D", "o.O", "<3", "xD", "!!!", "?!", "...", "soooo", "hahaha", "#", "^", "(yes)", "\"quoted\"", "end.",
    "cafe\u{301}", "caf\u{e9}", "na\u{ef}ve", "\u{65e5}\u{672c}\u{8a9e}", "\u{1F600}", "\u{43f}\u{440}\u{438}\u{432}\u{435}\u{442}",
    "A\u{30a}", "e\u{301}\u{301}", "\u{2014}", "123", "4ever", "-dash-", "'tis", "@user:", "(@mention)", "wow!!",
];

const SEPARATORS: &[&str] = &[" ", " ", " ", "  ", "\t", ""];

fn fuzz_line(rng: &mut SplitMix64) -> String {
    let n = 1 + rng.below(9);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str(SEPARATORS[rng.below(SEPARATORS.len())]);
        }
        s.push_str(FRAGMENTS[rng.below(FRAGMENTS.len())]);
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            other => panic!("bad escape {other:?} in golden file"),
        }
    }
    out
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/preprocess.tsv")
}

fn golden_inputs() -> Vec<String> {
    let mut rng = SplitMix64::new(0x601D);
    (0..50).map(|_| fuzz_line(&mut rng)).collect()
}

/// `input \t normalized \t tokens joined by single spaces`, each escaped.
fn render(inputs: &[String]) -> String {
    let mut out = String::new();
    for input in inputs {
        let norm = normalize_tweet(input);
        let toks = tokenize(&norm).join(" ");
        out.push_str(&format!("{}\t{}\t{}\n", escape(input), escape(&norm), escape(&toks)));
    }
    out
}

#[test]
fn frozen_corpus_matches_bit_exactly() {
    let inputs = golden_inputs();
    if std::env::var_os("BLESS").is_some() {
        std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        std::fs::write(golden_path(), render(&inputs)).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).unwrap();
    let lines: Vec<&str> = golden.lines().collect();
    assert_eq!(lines.len(), 50);
    for (n, (line, input)) in lines.iter().zip(&inputs).enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3, "line {}", n + 1);
        assert_eq!(unescape(cols[0]), *input, "line {}: generator drifted", n + 1);
        let norm = normalize_tweet(input);
        assert_eq!(norm, unescape(cols[1]), "line {}: normalization", n + 1);
        let want: Vec<String> = if cols[2].is_empty() {
            Vec::new()
        } else {
            unescape(cols[2]).split(' ').map(str::to_string).collect()
        };
        assert_eq!(tokenize(&norm), want, "line {}: tokens", n + 1);
    }
}

#[test]
fn entity_mapping_examples() {
    assert_eq!(normalize_tweet("@username"), "@");
    assert_eq!(normalize_tweet("http://t.co/"), "^");
    assert_eq!(normalize_tweet("@john hi http://t.co/abc"), "@ hi ^");
    assert_eq!(tokenize(&normalize_tweet("@john hi http://t.co/abc")), ["@", "hi", "^"]);
    assert_eq!(normalize_tweet("see www.example.com and @a_b #topic"), "see ^ and @ #topic");
    assert_eq!(
        tokenize("Being good ain't enough lately."),
        ["Being", "good", "ain't", "enough", "lately", "."]
    );
}

fn random_string(rng: &mut SplitMix64) -> String {
    const POOL: &[char] = &[
        'a', 'b', 'Z', '0', '_', '@', '@', '#', ':', '/', '.', 'w', 'h', 't', 'p', 's', ' ', ' ', '\t', '!', '^',
        '\u{301}', '\u{308}', '\u{e9}', '\u{3b1}', '\u{1F600}', '\u{200b}', '\u{ff20}', '\u{212b}', '\u{1100}', '\u{1161}',
    ];
    let len = rng.below(24);
    let mut s = String::with_capacity(len);
    for _ in 0..len {
        if rng.below(8) == 0 {
            s.push_str(["http://", "www.", "@x", "https://"][rng.below(4)]);
        } else {
            s.push(POOL[rng.below(POOL.len())]);
        }
    }
    s
}

#[test]
fn normalization_is_idempotent() {
    let mut rng = SplitMix64::new(0x1DE);
    for i in 0..100_000 {
        let s = random_string(&mut rng);
        let once = normalize_tweet(&s);
        assert_eq!(normalize_tweet(&once), once, "case {i}: {s:?}");
    }
}

#[test]
fn tokens_never_contain_whitespace_or_empty_strings() {
    let mut rng = SplitMix64::new(0x70C);
    for _ in 0..20_000 {
        let s = normalize_tweet(&random_string(&mut rng));
        for t in tokenize(&s) {
            assert!(!t.is_empty() && !t.chars().any(char::is_whitespace), "{s:?} -> {t:?}");
        }
    }
}
