use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::UserRecord;
use super::tokenize::tokenize;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_WORD_MIN_COUNT: u64 = 10;
pub const DEFAULT_CHAR_MIN_COUNT: u64 = 5;

/// Tokens ordered by `(count desc, token asc)` and kept only when
/// `count > min_count`.
fn ranked<K: Ord + Clone>(counts: &BTreeMap<K, u64>, min_count: u64) -> Vec<(K, u64)> {
    let mut kept: Vec<(K, u64)> = counts
        .iter()
        .filter(|(_, &c)| c > min_count)
        .map(|(k, &c)| (k.clone(), c))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept
}

/// Word and character id tables with reserved `PAD = 0` and `UNK = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "VocabData", try_from = "VocabData")]
pub struct Vocabulary {
    words: Vec<(String, u64)>,
    chars: Vec<(char, u64)>,
    word_to_id: HashMap<String, usize>,
    char_to_id: HashMap<char, usize>,
    pub word_min_count: u64,
    pub char_min_count: u64,
}

#[derive(Serialize, Deserialize)]
struct VocabData {
    word_min_count: u64,
    char_min_count: u64,
    words: Vec<(String, u64)>,
    chars: Vec<(char, u64)>,
}

impl From<Vocabulary> for VocabData {
    fn from(v: Vocabulary) -> Self {
        VocabData {
            word_min_count: v.word_min_count,
            char_min_count: v.char_min_count,
            words: v.words[2..].to_vec(),
            chars: v.chars[2..].to_vec(),
        }
    }
}

impl TryFrom<VocabData> for Vocabulary {
    type Error = Error;

    fn try_from(d: VocabData) -> Result<Self> {
        Vocabulary::from_ranked(d.words, d.chars, d.word_min_count, d.char_min_count)
    }
}

impl Vocabulary {
    /// Counts tokens and characters over every text field of `corpus`.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a UserRecord>, word_min: u64, char_min: u64) -> Self {
        let mut word_counts = BTreeMap::new();
        let mut char_counts = BTreeMap::new();
        for user in corpus {
            for field in user.text_fields() {
                for tok in tokenize(field) {
                    for c in tok.chars() {
                        *char_counts.entry(c).or_insert(0u64) += 1;
                    }
                    *word_counts.entry(tok).or_insert(0u64) += 1;
                }
            }
        }
        Self::from_counts(&word_counts, &char_counts, word_min, char_min)
    }

    pub fn from_counts(
        word_counts: &BTreeMap<String, u64>,
        char_counts: &BTreeMap<char, u64>,
        word_min: u64,
        char_min: u64,
    ) -> Self {
        Self::from_ranked(ranked(word_counts, word_min), ranked(char_counts, char_min), word_min, char_min)
            .expect("ranked tables contain no reserved or duplicate entries")
    }

    fn from_ranked(words: Vec<(String, u64)>, chars: Vec<(char, u64)>, word_min: u64, char_min: u64) -> Result<Self> {
        let mut all_words = vec![(PAD_TOKEN.to_string(), 0), (UNK_TOKEN.to_string(), 0)];
        all_words.extend(words);
        let mut all_chars = vec![('\0', 0), ('\u{1}', 0)];
        all_chars.extend(chars);
        let mut word_to_id = HashMap::with_capacity(all_words.len());
        for (i, (w, _)) in all_words.iter().enumerate() {
            if word_to_id.insert(w.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary word `{w}`")));
            }
        }
        let mut char_to_id = HashMap::with_capacity(all_chars.len());
        for (i, (c, _)) in all_chars.iter().enumerate() {
            if char_to_id.insert(*c, i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary char {c:?}")));
            }
        }
        Ok(Vocabulary {
            words: all_words,
            chars: all_chars,
            word_to_id,
            char_to_id,
            word_min_count: word_min,
            char_min_count: char_min,
        })
    }

    pub fn word_id(&self, token: &str) -> usize {
        self.word_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn char_id(&self, c: char) -> usize {
        match self.char_to_id.get(&c) {
            Some(&id) if id > UNK => id,
            _ => UNK,
        }
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id].0
    }

    pub fn word_count(&self, id: usize) -> u64 {
        self.words[id].1
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    /// Writes `words.tsv` and `chars.tsv` (`token \t id \t count`).
    pub fn write_tsv(&self, dir: &Path) -> Result<()> {
        let mut w = String::new();
        for (i, (tok, c)) in self.words.iter().enumerate() {
            w.push_str(&format!("{tok}\t{i}\t{c}\n"));
        }
        fs::write(dir.join("words.tsv"), w)?;
        let mut c = String::new();
        for (i, (ch, n)) in self.chars.iter().enumerate().skip(2) {
            c.push_str(&format!("{ch}\t{i}\t{n}\n"));
        }
        fs::write(dir.join("chars.tsv"), c)?;
        Ok(())
    }

    /// Reads tables written by [`Vocabulary::write_tsv`]; thresholds are not
    /// persisted and are set from the arguments.
    pub fn read_tsv(dir: &Path, word_min: u64, char_min: u64) -> Result<Self> {
        let words = read_table(&dir.join("words.tsv"), 2, |s| Some(s.to_string()))?;
        let chars = read_table(&dir.join("chars.tsv"), 2, |s| {
            let mut it = s.chars();
            let c = it.next()?;
            it.next().is_none().then_some(c)
        })?;
        Self::from_ranked(words, chars, word_min, char_min)
    }
}

/// Parses `token \t id \t count` rows, dropping the reserved rows and
/// checking that ids are contiguous from `first_id`.
fn read_table<K>(path: &Path, first_id: usize, parse: impl Fn(&str) -> Option<K>) -> Result<Vec<(K, u64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut expected = first_id;
    for (n, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |m: &str| Error::Ingest {
            line: n + 1,
            message: format!("{}: {m}", path.display()),
        };
        if cols.len() != 3 {
            return Err(bad("expected token, id, count"));
        }
        let id: usize = cols[1].parse().map_err(|_| bad("bad id"))?;
        let count: u64 = cols[2].parse().map_err(|_| bad("bad count"))?;
        if id < first_id {
            continue;
        }
        if id != expected {
            return Err(bad("ids are not contiguous"));
        }
        expected += 1;
        out.push((parse(cols[0]).ok_or_else(|| bad("bad token"))?, count));
    }
    Ok(out)
}

/// Id table for a categorical field with `UNK = 0`; the empty value is UNK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<(String, u64)>", from = "Vec<(String, u64)>")]
pub struct CategoryTable {
    values: Vec<(String, u64)>,
    index: HashMap<String, usize>,
}

impl From<Vec<(String, u64)>> for CategoryTable {
    fn from(values: Vec<(String, u64)>) -> Self {
        let mut all = vec![(UNK_TOKEN.to_string(), 0)];
        all.extend(values.into_iter().filter(|(v, _)| !v.is_empty() && v != UNK_TOKEN));
        let index = all.iter().enumerate().skip(1).map(|(i, (v, _))| (v.clone(), i)).collect();
        CategoryTable { values: all, index }
    }
}

impl From<CategoryTable> for Vec<(String, u64)> {
    fn from(t: CategoryTable) -> Self {
        t.values.into_iter().skip(1).collect()
    }
}

impl CategoryTable {
    pub const UNK: usize = 0;

    pub fn build<'a>(values: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts = BTreeMap::new();
        for v in values.into_iter().filter(|v| !v.is_empty()) {
            *counts.entry(v.to_string()).or_insert(0u64) += 1;
        }
        ranked(&counts, 0).into()
    }

    pub fn id(&self, value: &str) -> usize {
        self.index.get(value).copied().unwrap_or(Self::UNK)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (i, (v, c)) in self.values.iter().enumerate() {
            s.push_str(&format!("{v}\t{i}\t{c}\n"));
        }
        fs::write(path, s)?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        Ok(read_table(path, 1, |s| Some(s.to_string()))?.into())
    }
}

/// Everything needed to turn a [`UserRecord`] into model ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub vocab: Vocabulary,
    pub languages: CategoryTable,
    pub time_zones: CategoryTable,
}

impl Lexicon {
    pub fn build(train: &[UserRecord], word_min: u64, char_min: u64) -> Self {
        Lexicon {
            vocab: Vocabulary::build(train, word_min, char_min),
            languages: CategoryTable::build(train.iter().map(|u| u.user_language.as_str())),
            time_zones: CategoryTable::build(train.iter().map(|u| u.time_zone.as_str())),
        }
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.vocab.write_tsv(dir)?;
        let thresholds = serde_json::json!({
            "word_min_count": self.vocab.word_min_count,
            "char_min_count": self.vocab.char_min_count,
        });
        fs::write(dir.join("thresholds.json"), format!("{thresholds}\n"))?;
        self.languages.write_tsv(&dir.join("languages.tsv"))?;
        self.time_zones.write_tsv(&dir.join("timezones.tsv"))?;
        Ok(())
    }

    /// Reads a directory written by [`Lexicon::write_dir`]. Without
    /// `thresholds.json` the default thresholds are assumed.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let (mut word_min, mut char_min) = (DEFAULT_WORD_MIN_COUNT, DEFAULT_CHAR_MIN_COUNT);
        let path = dir.join("thresholds.json");
        if path.exists() {
            let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
            let get = |k: &str| {
                t[k].as_u64()
                    .ok_or_else(|| Error::Config(format!("{}: missing `{k}`", path.display())))
            };
            word_min = get("word_min_count")?;
            char_min = get("char_min_count")?;
        }
        Ok(Lexicon {
            vocab: Vocabulary::read_tsv(dir, word_min, char_min)?,
            languages: CategoryTable::read_tsv(&dir.join("languages.tsv"))?,
            time_zones: CategoryTable::read_tsv(&dir.join("timezones.tsv"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(tweets: &[&str]) -> UserRecord {
        UserRecord {
            user_id: "u".into(),
            tweets: tweets.iter().map(|s| s.to_string()).collect(),
            description: String::new(),
            profile_location: String::new(),
            name: String::new(),
            user_language: "en".into(),
            time_zone: String::new(),
            latitude: 0.0,
            longitude: 0.0,
            gold_city: None,
        }
    }

    fn repeated(word: &str, n: usize) -> String {
        vec![word; n].join(" ")
    }

    #[test]
    fn word_threshold_is_strict() {
        let u = user(&[&repeated("ten", 10), &repeated("eleven", 11)]);
        let v = Vocabulary::build([&u], 10, 5);
        assert_eq!(v.word_id("ten"), UNK);
        assert_eq!(v.word_id("eleven"), 2);
        assert_eq!(v.num_words(), 3);
    }

    #[test]
    fn char_threshold_is_strict() {
        // 'a' appears 5 times, 'b' 6 times
        let u = user(&["aaaaa bbbbbb"]);
        let v = Vocabulary::build([&u], 0, 5);
        assert_eq!(v.char_id('a'), UNK);
        assert_eq!(v.char_id('b'), 2);
    }

    #[test]
    fn ties_break_lexicographically() {
        let u = user(&["zeta alpha zeta alpha mid"]);
        let v = Vocabulary::build([&u], 0, 0);
        assert_eq!(v.word_id("alpha"), 2);
        assert_eq!(v.word_id("zeta"), 3);
        assert_eq!(v.word_id("mid"), 4);
    }

    #[test]
    fn empty_corpus_has_only_reserved_ids() {
        let v = Vocabulary::build(std::iter::empty(), 10, 5);
        assert_eq!(v.num_words(), 2);
        assert_eq!(v.num_chars(), 2);
        assert_eq!(v.word(PAD), PAD_TOKEN);
        assert_eq!(v.word(UNK), UNK_TOKEN);
    }

    #[test]
    fn all_fields_are_counted() {
        let mut u = user(&[]);
        u.description = "d d".into();
        u.profile_location = "l".into();
        u.name = "n".into();
        let v = Vocabulary::build([&u], 0, 0);
        for w in ["d", "l", "n"] {
            assert!(v.word_id(w) > UNK, "{w}");
        }
    }

    #[test]
    fn build_is_deterministic() {
        let users = [user(&["a b c a b a", "x y z"]), user(&["c c c q"])];
        assert_eq!(Vocabulary::build(&users, 0, 0), Vocabulary::build(&users, 0, 0));
    }

    #[test]
    fn tsv_and_json_round_trip() {
        let users = [user(&["a b c a b a", "x y z é"]), user(&["c c c q"])];
        let mut lex = Lexicon::build(&users, 0, 0);
        lex.vocab.word_min_count = DEFAULT_WORD_MIN_COUNT;
        lex.vocab.char_min_count = DEFAULT_CHAR_MIN_COUNT;
        let dir = tempfile::tempdir().unwrap();
        lex.write_dir(dir.path()).unwrap();
        assert_eq!(Lexicon::read_dir(dir.path()).unwrap(), lex);
        let json = serde_json::to_string(&lex).unwrap();
        assert_eq!(serde_json::from_str::<Lexicon>(&json).unwrap(), lex);
    }

    #[test]
    fn categories_map_empty_and_unseen_to_unk() {
        let t = CategoryTable::build(["en", "fr", "en", ""]);
        assert_eq!(t.len(), 3);
        assert_eq!(t.id("en"), 1);
        assert_eq!(t.id("fr"), 2);
        assert_eq!(t.id(""), CategoryTable::UNK);
        assert_eq!(t.id("de"), CategoryTable::UNK);
    }
}
