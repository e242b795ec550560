use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::FunctionalUnit;
use crate::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const VAL_SEP: &str = "<val>";
pub const CAND_SEP: &str = "<cand>";
pub const ECPRED_SEP: &str = "<EC_pred>";
/// Plain-text markers used by the discriminative two-step context.
pub const VALENCE_MARKER: &str = "valence:";
pub const EC_MARKER: &str = "EC:";
pub const EMPTY_EC: &str = "none";
/// Valence label tokens, indexed by valence code.
pub const VALENCE_LABEL_TOKENS: [&str; 3] = ["0", "1", "2"];
/// Carrier label tokens, indexed by carrier code (`no = 0`, `yes = 1`).
pub const CARRIER_LABEL_TOKENS: [&str; 2] = ["n", "y"];

const RESERVED: [&str; 15] = [
    PAD,
    UNK,
    CLS,
    SEP,
    VAL_SEP,
    CAND_SEP,
    ECPRED_SEP,
    "0",
    "1",
    "2",
    "y",
    "n",
    VALENCE_MARKER,
    EC_MARKER,
    EMPTY_EC,
];

/// Closed whitespace-token vocabulary. Ids are dense line numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens first, then every distinct corpus token in sorted order.
    pub fn build<'a>(units: impl IntoIterator<Item = &'a FunctionalUnit>) -> Self {
        let corpus: BTreeSet<&str> = units
            .into_iter()
            .flat_map(|u| u.tokens.iter().map(String::as_str))
            .collect();
        let tokens = RESERVED
            .iter()
            .copied()
            .chain(corpus.into_iter().filter(|t| !RESERVED.contains(t)))
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens).expect("reserved tokens are present")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Encoding(format!("invalid vocabulary token {t:?} at id {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Encoding(format!("duplicate vocabulary token {t:?}")));
            }
        }
        for r in RESERVED {
            if !index.contains_key(r) {
                return Err(Error::Encoding(format!("vocabulary lacks reserved token {r:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or_else(|| self.unk())
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    fn reserved(&self, token: &str) -> usize {
        self.index[token]
    }

    pub fn pad(&self) -> usize {
        self.reserved(PAD)
    }
    pub fn unk(&self) -> usize {
        self.reserved(UNK)
    }
    pub fn cls(&self) -> usize {
        self.reserved(CLS)
    }
    pub fn sep(&self) -> usize {
        self.reserved(SEP)
    }
    pub fn val_sep(&self) -> usize {
        self.reserved(VAL_SEP)
    }
    pub fn cand_sep(&self) -> usize {
        self.reserved(CAND_SEP)
    }
    pub fn ecpred_sep(&self) -> usize {
        self.reserved(ECPRED_SEP)
    }

    /// Ids of the valence label tokens, indexed by valence code.
    pub fn valence_label_ids(&self) -> Vec<usize> {
        VALENCE_LABEL_TOKENS.iter().map(|t| self.reserved(t)).collect()
    }

    /// Ids of the carrier label tokens, indexed by carrier code.
    pub fn carrier_label_ids(&self) -> Vec<usize> {
        CARRIER_LABEL_TOKENS.iter().map(|t| self.reserved(t)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}
