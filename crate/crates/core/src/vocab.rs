//! Byte-level BPE vocabularies and long-token pruning.
//!
//! Pruning never deletes entries: ids stay stable so that the backend's
//! embedding rows and output logits keep their indices. Instead, every merge
//! whose result is a long token is dropped, together with merges that can no
//! longer be reached once those are gone. The pruned tokenizer therefore only
//! produces single characters, non-Chinese pieces, and byte fragments.

use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::bytemap;
use crate::charclass::{CjkRanges, TokenClass};
use crate::par::{self, Execution};

pub type TokenId = u32;

/// Marker opening a chat turn.
pub const SOP: &str = "[SOP]";
/// Marker closing a chat turn or a poem.
pub const EOP: &str = "[EOP]";
/// Mask sign standing in for one Chinese character.
pub const MASK: &str = "[M]";
/// Separator used by the spelling probe.
pub const EXTRA_1: &str = "<|extra_1|>";

/// Special tokens the prompt and probe layouts rely on.
/// A small stand-in for an LLM tokenizer, built by `scripts/build_demo_vocab.py`.
pub const DEMO_VOCAB_JSON: &str = include_str!("../data/demo_vocab.json");

pub const REQUIRED_SPECIALS: [&str; 4] = [SOP, EOP, MASK, EXTRA_1];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("I/O error reading vocabulary: {0}")]
    Io(#[from] std::io::Error),
    #[error("token {token:?} contains {ch:?}, which is not in the byte mapping")]
    BadTokenString { token: String, ch: char },
    #[error("token id {id} is assigned to both {first:?} and {second:?}")]
    DuplicateId { id: TokenId, first: String, second: String },
    #[error("merge #{index} is malformed: {text:?}")]
    MalformedMerge { index: usize, text: String },
    #[error("merge #{index} refers to unknown token {token:?}")]
    DanglingMerge { index: usize, token: String },
    #[error("special token {0:?} has no id in the vocabulary")]
    UnknownSpecial(String),
    #[error("byte {byte:#04x} at offset {offset} has no token in the vocabulary")]
    UnrepresentableByte { offset: usize, byte: u8 },
    #[error("unknown token id {0}")]
    UnknownId(TokenId),
    #[error("detokenized bytes are not valid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Merge {
    pub left: TokenId,
    pub right: TokenId,
    pub result: TokenId,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MergeSpec {
    Joined(String),
    Pair([String; 2]),
}

#[derive(Deserialize)]
struct VocabFile {
    vocab: HashMap<String, TokenId>,
    #[serde(default)]
    merges: Vec<MergeSpec>,
    #[serde(default)]
    special_tokens: Vec<String>,
}

/// A token table with ordered merges and atomic special tokens.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<Option<Vec<u8>>>,
    by_bytes: HashMap<Vec<u8>, TokenId>,
    merges: Vec<Merge>,
    /// Sorted longest first so matching prefers the longest marker.
    specials: Vec<(String, TokenId)>,
    special_ids: HashSet<TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from raw entries, merges given as byte pairs, and
    /// special token strings (which must already be entries).
    pub fn new(
        tokens: impl IntoIterator<Item = (TokenId, Vec<u8>)>,
        merges: impl IntoIterator<Item = (Vec<u8>, Vec<u8>)>,
        specials: impl IntoIterator<Item = String>,
    ) -> Result<Self, VocabError> {
        let mut entries: Vec<Option<Vec<u8>>> = Vec::new();
        let mut by_bytes = HashMap::new();
        for (id, bytes) in tokens {
            let idx = id as usize;
            if entries.len() <= idx {
                entries.resize(idx + 1, None);
            }
            if let Some(prev) = &entries[idx] {
                return Err(VocabError::DuplicateId {
                    id,
                    first: display_bytes(prev),
                    second: display_bytes(&bytes),
                });
            }
            by_bytes.entry(bytes.clone()).or_insert(id);
            entries[idx] = Some(bytes);
        }

        let mut resolved = Vec::new();
        for (index, (left, right)) in merges.into_iter().enumerate() {
            let lookup = |bytes: &[u8]| {
                by_bytes.get(bytes).copied().ok_or_else(|| VocabError::DanglingMerge {
                    index,
                    token: display_bytes(bytes),
                })
            };
            let l = lookup(&left)?;
            let r = lookup(&right)?;
            let mut joined = left;
            joined.extend_from_slice(&right);
            let result = lookup(&joined)?;
            resolved.push(Merge {
                left: l,
                right: r,
                result,
            });
        }

        let mut specials_out = Vec::new();
        let mut special_ids = HashSet::new();
        for s in specials {
            let id = *by_bytes
                .get(s.as_bytes())
                .ok_or_else(|| VocabError::UnknownSpecial(s.clone()))?;
            special_ids.insert(id);
            specials_out.push((s, id));
        }
        specials_out.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        specials_out.dedup();

        Ok(Self {
            entries,
            by_bytes,
            merges: resolved,
            specials: specials_out,
            special_ids,
        })
    }

    /// Parses the JSON vocabulary format: `vocab` (printable-mapped token
    /// string to id), `merges` (`"left right"` strings or pairs), and
    /// `special_tokens` (raw strings).
    pub fn from_reader(mut source: impl Read) -> Result<Self, VocabError> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, VocabError> {
        let file: VocabFile = serde_json::from_str(text).map_err(|e| VocabError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let specials: HashSet<&str> = file.special_tokens.iter().map(String::as_str).collect();

        let mut tokens: Vec<(TokenId, Vec<u8>)> = Vec::with_capacity(file.vocab.len());
        for (token, &id) in &file.vocab {
            tokens.push((id, token_bytes(token, &specials)?));
        }
        tokens.sort_by_key(|(id, _)| *id);

        let mut merges = Vec::with_capacity(file.merges.len());
        for (index, spec) in file.merges.iter().enumerate() {
            let (l, r) = match spec {
                MergeSpec::Joined(s) => {
                    let mut parts = s.split(' ');
                    match (parts.next(), parts.next(), parts.next()) {
                        (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => (l, r),
                        _ => return Err(VocabError::MalformedMerge { index, text: s.clone() }),
                    }
                }
                MergeSpec::Pair([l, r]) => (l.as_str(), r.as_str()),
            };
            merges.push((token_bytes(l, &specials)?, token_bytes(r, &specials)?));
        }
        Self::new(tokens, merges, file.special_tokens)
    }

    /// The bundled demo vocabulary.
    pub fn demo() -> Self {
        Self::from_json_str(DEMO_VOCAB_JSON).expect("bundled vocabulary parses")
    }

    /// Size of the id space (largest id + 1); backends emit logits of this length.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of ids that actually carry an entry.
    pub fn entry_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.entries.get(id as usize)?.as_deref()
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<TokenId> {
        self.by_bytes.get(bytes).copied()
    }

    pub fn special_id(&self, marker: &str) -> Option<TokenId> {
        self.specials.iter().find(|(s, _)| s == marker).map(|&(_, id)| id)
    }

    /// Markers from [`REQUIRED_SPECIALS`] not registered as special tokens.
    pub fn missing_specials(&self) -> Vec<&'static str> {
        REQUIRED_SPECIALS
            .into_iter()
            .filter(|s| self.special_id(s).is_none())
            .collect()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special_ids.contains(&id)
    }

    pub fn specials(&self) -> impl Iterator<Item = (&str, TokenId)> {
        self.specials.iter().map(|(s, id)| (s.as_str(), *id))
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// `(id, bytes)` for every populated id, in id order.
    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &[u8])> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_deref().map(|b| (i as TokenId, b)))
    }

    /// Renders a token as it appears in vocabulary files.
    pub fn token_string(&self, id: TokenId) -> Option<String> {
        let bytes = self.token_bytes(id)?;
        Some(if self.is_special(id) {
            String::from_utf8_lossy(bytes).into_owned()
        } else {
            bytemap::encode(bytes)
        })
    }

    /// Computes the set of long tokens. Special tokens are never included.
    pub fn long_token_set(&self, ranges: &CjkRanges) -> LongTokenSet {
        LongTokenSet::from_ids(
            self.len(),
            self.iter()
                .filter(|&(id, bytes)| !self.is_special(id) && ranges.classify_token(bytes) == TokenClass::Long)
                .map(|(id, _)| id),
        )
    }

    /// Tokenizes with every merge, long or not.
    pub fn tokenize_unpruned(&self, text: &str, ranges: &CjkRanges) -> Result<Vec<TokenId>, VocabError> {
        let table = MergeTable::new(&self.merges);
        encode(self, &table, ranges, text)
    }

    /// Prunes with the default CJK ranges.
    pub fn prune(self) -> PrunedVocabulary {
        PrunedVocabulary::new(Arc::new(self), CjkRanges::default())
    }

    pub fn prune_with(self, ranges: CjkRanges) -> PrunedVocabulary {
        PrunedVocabulary::new(Arc::new(self), ranges)
    }
}

fn token_bytes(token: &str, specials: &HashSet<&str>) -> Result<Vec<u8>, VocabError> {
    if specials.contains(token) {
        return Ok(token.as_bytes().to_vec());
    }
    bytemap::decode(token).map_err(|ch| VocabError::BadTokenString {
        token: token.to_string(),
        ch,
    })
}

pub(crate) fn display_bytes(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytemap::encode(bytes),
    }
}

/// Ids of long tokens, stored as a dense flag vector over the id space.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LongTokenSet {
    flags: Vec<bool>,
    count: usize,
}

impl LongTokenSet {
    pub fn from_ids(len: usize, ids: impl IntoIterator<Item = TokenId>) -> Self {
        let mut flags = vec![false; len];
        let mut count = 0;
        for id in ids {
            let idx = id as usize;
            if idx >= flags.len() {
                flags.resize(idx + 1, false);
            }
            if !flags[idx] {
                flags[idx] = true;
                count += 1;
            }
        }
        Self { flags, count }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    #[inline]
    pub fn contains(&self, id: usize) -> bool {
        self.flags.get(id).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| i as TokenId)
    }
}

#[derive(Debug, Clone, Default)]
struct MergeTable {
    ranks: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

impl MergeTable {
    fn new(merges: &[Merge]) -> Self {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, m) in merges.iter().enumerate() {
            ranks.entry((m.left, m.right)).or_insert((rank, m.result));
        }
        Self { ranks }
    }

    fn apply(&self, symbols: &mut Vec<TokenId>) {
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0], w[1])).map(|&(rank, res)| (rank, i, res)))
                .min();
            let Some((_, at, result)) = best else {
                break;
            };
            let (left, right) = (symbols[at], symbols[at + 1]);
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    out.push(result);
                    i += 2;
                } else {
                    out.push(symbols[i]);
                    i += 1;
                }
            }
            *symbols = out;
        }
    }
}

/// A vocabulary whose tokenizer can no longer produce long tokens.
#[derive(Debug, Clone)]
pub struct PrunedVocabulary {
    base: Arc<Vocabulary>,
    ranges: CjkRanges,
    long_set: LongTokenSet,
    classes: Vec<TokenClass>,
    surviving: Vec<Merge>,
    table: MergeTable,
}

impl PrunedVocabulary {
    pub fn new(base: Arc<Vocabulary>, ranges: CjkRanges) -> Self {
        let long_set = base.long_token_set(&ranges);
        let classes = (0..base.len())
            .map(|i| match base.token_bytes(i as TokenId) {
                Some(b) if !base.is_special(i as TokenId) => ranges.classify_token(b),
                _ => TokenClass::NonChinese,
            })
            .collect();
        let surviving = surviving_merges(&base, &long_set);
        let table = MergeTable::new(&surviving);
        Self {
            base,
            ranges,
            long_set,
            classes,
            surviving,
            table,
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.base
    }

    pub fn ranges(&self) -> &CjkRanges {
        &self.ranges
    }

    pub fn long_set(&self) -> &LongTokenSet {
        &self.long_set
    }

    pub fn surviving_merges(&self) -> &[Merge] {
        &self.surviving
    }

    /// Class of a token id; specials and unassigned ids report `NonChinese`.
    pub fn class_of(&self, id: TokenId) -> TokenClass {
        self.classes.get(id as usize).copied().unwrap_or(TokenClass::NonChinese)
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn special_id(&self, marker: &str) -> Option<TokenId> {
        self.base.special_id(marker)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        encode(&self.base, &self.table, &self.ranges, text)
    }

    /// Tokenizes many texts, preserving order.
    pub fn tokenize_batch<S: AsRef<str> + Sync>(
        &self,
        texts: &[S],
        exec: Execution,
    ) -> Vec<Result<Vec<TokenId>, VocabError>> {
        par::map(texts, exec, |t| self.tokenize(t.as_ref()))
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let bytes = self.detokenize_bytes(ids)?;
        String::from_utf8(bytes).map_err(|e| VocabError::InvalidUtf8 {
            offset: e.utf8_error().valid_up_to(),
        })
    }

    pub fn detokenize_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>, VocabError> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self.base.token_bytes(id).ok_or(VocabError::UnknownId(id))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// The surviving merges in the `"left right"` file form, one per line.
    pub fn merges_text(&self) -> String {
        let mut out = String::new();
        for m in &self.surviving {
            let l = self.base.token_string(m.left).unwrap_or_default();
            let r = self.base.token_string(m.right).unwrap_or_default();
            out.push_str(&l);
            out.push(' ');
            out.push_str(&r);
            out.push('\n');
        }
        out
    }

    /// Long-token ids, one per line, ascending.
    pub fn mask_text(&self) -> String {
        self.long_set.iter().map(|id| format!("{id}\n")).collect()
    }
}

/// Merges whose result is not long and whose operands are themselves base
/// symbols or produced by another surviving merge.
fn surviving_merges(vocab: &Vocabulary, long_set: &LongTokenSet) -> Vec<Merge> {
    let mut available: HashSet<TokenId> = vocab
        .iter()
        .filter(|(id, bytes)| !vocab.is_special(*id) && is_base_symbol(bytes))
        .map(|(id, _)| id)
        .collect();
    let candidates: Vec<&Merge> = vocab
        .merges()
        .iter()
        .filter(|m| !long_set.contains(m.result as usize))
        .collect();
    let mut keep = vec![false; candidates.len()];
    loop {
        let mut changed = false;
        for (i, m) in candidates.iter().enumerate() {
            if !keep[i] && available.contains(&m.left) && available.contains(&m.right) {
                keep[i] = true;
                available.insert(m.result);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(m, k)| k.then_some(*m))
        .collect()
}

/// Single bytes and complete single characters seed the symbol sequence.
fn is_base_symbol(bytes: &[u8]) -> bool {
    if bytes.len() == 1 {
        return true;
    }
    std::str::from_utf8(bytes).is_ok_and(|s| s.chars().count() == 1)
}

fn encode(vocab: &Vocabulary, table: &MergeTable, ranges: &CjkRanges, text: &str) -> Result<Vec<TokenId>, VocabError> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut offset = 0usize;
    while !rest.is_empty() {
        let next_special = vocab
            .specials
            .iter()
            .filter_map(|(s, id)| rest.find(s.as_str()).map(|pos| (pos, std::cmp::Reverse(s.len()), *id)))
            .min();
        let (plain_len, special) = match next_special {
            Some((pos, std::cmp::Reverse(len), id)) => (pos, Some((len, id))),
            None => (rest.len(), None),
        };
        let plain = &rest[..plain_len];
        for (start, piece) in pretokenize(plain, ranges) {
            encode_piece(vocab, table, piece, offset + start, &mut out)?;
        }
        match special {
            Some((len, id)) => {
                out.push(id);
                offset += plain_len + len;
                rest = &rest[plain_len + len..];
            }
            None => break,
        }
    }
    Ok(out)
}

fn encode_piece(
    vocab: &Vocabulary,
    table: &MergeTable,
    piece: &str,
    offset: usize,
    out: &mut Vec<TokenId>,
) -> Result<(), VocabError> {
    let mut symbols = Vec::with_capacity(piece.len());
    for (i, ch) in piece.char_indices() {
        let mut buf = [0u8; 4];
        let bytes = ch.encode_utf8(&mut buf).as_bytes();
        match vocab.by_bytes.get(bytes) {
            Some(&id) if !vocab.is_special(id) => symbols.push(id),
            _ => {
                for (j, &b) in bytes.iter().enumerate() {
                    let id = vocab.by_bytes.get(std::slice::from_ref(&b)).copied().ok_or(
                        VocabError::UnrepresentableByte {
                            offset: offset + i + j,
                            byte: b,
                        },
                    )?;
                    symbols.push(id);
                }
            }
        }
    }
    table.apply(&mut symbols);
    out.extend(symbols);
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Chinese,
    Letter,
    Digit,
    Space,
    Newline,
    Other,
}

/// Splits text into pieces that merges may not cross: maximal runs of
/// Chinese characters, and GPT-style word pieces elsewhere (a single leading
/// space sticks to the following word).
fn pretokenize<'a>(text: &'a str, ranges: &CjkRanges) -> Vec<(usize, &'a str)> {
    let kind = |c: char| {
        if ranges.is_chinese(c) {
            Kind::Chinese
        } else if c == '\n' || c == '\r' {
            Kind::Newline
        } else if c.is_whitespace() {
            Kind::Space
        } else if c.is_alphabetic() {
            Kind::Letter
        } else if c.is_numeric() {
            Kind::Digit
        } else {
            Kind::Other
        }
    };
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = chars[i].0;
        let mut k = kind(chars[i].1);
        let mut j = i + 1;
        if chars[i].1 == ' ' && j < chars.len() {
            let nk = kind(chars[j].1);
            if matches!(nk, Kind::Letter | Kind::Digit | Kind::Other) {
                k = nk;
                j += 1;
            }
        }
        while j < chars.len() && kind(chars[j].1) == k {
            j += 1;
        }
        let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
        pieces.push((start, &text[start..end]));
        i = j;
    }
    pieces
}
