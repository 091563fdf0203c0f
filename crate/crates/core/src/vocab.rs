use std::collections::HashMap;
use std::hash::Hash;

/// Dense symbol-to-id mapping with a reserved id for unseen symbols.
///
/// Id 0 is always the unknown symbol; observed symbols follow in order of
/// first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab<K: Eq + Hash> {
    ids: HashMap<K, usize>,
    symbols: Vec<K>,
}

pub type CharVocab = Vocab<char>;
pub type WordVocab = Vocab<String>;

pub const UNK_ID: usize = 0;

impl<K: Eq + Hash + Clone> Vocab<K> {
    pub fn new() -> Self {
        Self {
            ids: HashMap::new(),
            symbols: Vec::new(),
        }
    }

    /// Adds `symbol` if unseen; returns its id either way.
    pub fn insert(&mut self, symbol: K) -> usize {
        if let Some(&id) = self.ids.get(&symbol) {
            return id;
        }
        let id = self.symbols.len() + 1;
        self.ids.insert(symbol.clone(), id);
        self.symbols.push(symbol);
        id
    }

    pub fn id(&self, symbol: &K) -> usize {
        self.ids.get(symbol).copied().unwrap_or(UNK_ID)
    }

    pub fn unk_id(&self) -> usize {
        UNK_ID
    }

    /// Number of ids, including the unknown id.
    pub fn len(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// `(id, symbol)` for every known symbol, ascending by id.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &K)> {
        self.symbols.iter().enumerate().map(|(i, s)| (i + 1, s))
    }

    /// Rebuilds a vocabulary from symbols listed in id order (ids 1..).
    pub fn from_symbols(symbols: impl IntoIterator<Item = K>) -> Option<Self> {
        let mut v = Self::new();
        for s in symbols {
            let before = v.len();
            v.insert(s);
            if v.len() == before {
                return None;
            }
        }
        Some(v)
    }
}

impl<K: Eq + Hash + Clone> Default for Vocab<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl CharVocab {
    pub fn encode(&self, word: &str) -> Vec<usize> {
        word.chars().map(|c| self.id(&c)).collect()
    }
}

impl WordVocab {
    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_first_appearance_ids() {
        let mut v = CharVocab::new();
        for c in "abba".chars() {
            v.insert(c);
        }
        assert_eq!(v.len(), 3);
        assert_eq!(v.id(&'a'), 1);
        assert_eq!(v.id(&'b'), 2);
        assert_eq!(v.id(&'ω'), v.unk_id());
        assert_eq!(v.encode("aωb"), vec![1, 0, 2]);
    }

    #[test]
    fn from_symbols_rejects_duplicates() {
        assert!(CharVocab::from_symbols(['a', 'a']).is_none());
        let v = WordVocab::from_symbols(["x".to_string(), "y".to_string()]).unwrap();
        assert_eq!(v.id(&"y".to_string()), 2);
    }
}
