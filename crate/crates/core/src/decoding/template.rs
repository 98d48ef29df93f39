//! Hard template enforcement.
//!
//! A masked template is read as a sequence of slots: each `[M]` is one
//! Chinese character, every other character (punctuation, line break) must be
//! reproduced literally, and after the last slot only `[EOP]` may follow.
//! Characters may arrive as byte fragments, so a cursor tracks the bytes
//! already emitted for the current slot.

use crate::charclass::{CjkRanges, TokenClass};
use crate::forms::MaskedTemplate;
use crate::vocab::{PrunedVocabulary, TokenId, EOP, MASK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// One Chinese character.
    Chinese,
    /// Exactly this character.
    Literal(char),
}

/// What may be emitted at a template position with no pending bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRule {
    Chinese,
    Literal(char),
    /// Past the last slot: only `[EOP]`.
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateConstraint {
    slots: Vec<Slot>,
}

impl TemplateConstraint {
    pub fn new(template: &MaskedTemplate) -> Self {
        let mut slots = Vec::new();
        let mut rest = template.as_str();
        while let Some(c) = rest.chars().next() {
            if let Some(after) = rest.strip_prefix(MASK) {
                slots.push(Slot::Chinese);
                rest = after;
            } else {
                slots.push(Slot::Literal(c));
                rest = &rest[c.len_utf8()..];
            }
        }
        Self { slots }
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Number of slots; position `len()` is the terminal position.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn rule_at(&self, position: usize) -> SlotRule {
        match self.slots.get(position) {
            Some(Slot::Chinese) => SlotRule::Chinese,
            Some(&Slot::Literal(c)) => SlotRule::Literal(c),
            None => SlotRule::End,
        }
    }

    /// Allowed-token predicate at `position`, assuming no pending bytes.
    pub fn predicate<'a>(&'a self, vocab: &'a PrunedVocabulary, position: usize) -> impl Fn(TokenId) -> bool + 'a {
        let cursor = TemplateCursor {
            position,
            pending: Vec::new(),
        };
        move |id| cursor.allows(self, vocab, id)
    }
}

/// Decode-time position within a template.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateCursor {
    pub position: usize,
    pending: Vec<u8>,
}

impl TemplateCursor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending(&self) -> &[u8] {
        &self.pending
    }

    pub fn is_finished(&self, constraint: &TemplateConstraint) -> bool {
        self.position >= constraint.len() && self.pending.is_empty()
    }

    pub fn allows(&self, constraint: &TemplateConstraint, vocab: &PrunedVocabulary, id: TokenId) -> bool {
        let base = vocab.vocabulary();
        let Some(bytes) = base.token_bytes(id) else {
            return false;
        };
        match constraint.rule_at(self.position) {
            SlotRule::End => self.pending.is_empty() && vocab.special_id(EOP) == Some(id),
            _ if base.is_special(id) || vocab.class_of(id) == TokenClass::Long => false,
            SlotRule::Chinese => {
                let joined = self.joined(bytes);
                completes_chinese(&joined, vocab.ranges()) || vocab.ranges().is_chinese_prefix(&joined)
            }
            SlotRule::Literal(c) => {
                let mut buf = [0u8; 4];
                let want = c.encode_utf8(&mut buf).as_bytes();
                let joined = self.joined(bytes);
                !bytes.is_empty() && want.starts_with(&joined)
            }
        }
    }

    /// Records an emitted token. Call only with tokens that [`allows`] accepted.
    ///
    /// [`allows`]: TemplateCursor::allows
    pub fn advance(&mut self, constraint: &TemplateConstraint, bytes: &[u8]) {
        self.pending.extend_from_slice(bytes);
        let done = match constraint.rule_at(self.position) {
            SlotRule::Chinese => std::str::from_utf8(&self.pending).is_ok(),
            SlotRule::Literal(c) => c.len_utf8() == self.pending.len(),
            SlotRule::End => true,
        };
        if done {
            self.position += 1;
            self.pending.clear();
        }
    }

    fn joined(&self, bytes: &[u8]) -> Vec<u8> {
        let mut v = self.pending.clone();
        v.extend_from_slice(bytes);
        v
    }
}

fn completes_chinese(bytes: &[u8], ranges: &CjkRanges) -> bool {
    let Ok(s) = std::str::from_utf8(bytes) else {
        return false;
    };
    let mut chars = s.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if ranges.is_chinese(c))
}

/// Token ids grouped by the rule they can satisfy with no pending bytes,
/// so each step need not scan the whole vocabulary.
#[derive(Debug, Clone)]
pub(crate) struct SlotIndex {
    chinese_start: Vec<TokenId>,
    fragments: Vec<TokenId>,
}

impl SlotIndex {
    pub(crate) fn new(vocab: &PrunedVocabulary) -> Self {
        let mut chinese_start = Vec::new();
        let mut fragments = Vec::new();
        let base = vocab.vocabulary();
        for (id, bytes) in base.iter() {
            if base.is_special(id) {
                continue;
            }
            match vocab.class_of(id) {
                TokenClass::SingleChinese => chinese_start.push(id),
                TokenClass::ByteFragment => {
                    fragments.push(id);
                    if vocab.ranges().is_chinese_prefix(bytes) {
                        chinese_start.push(id);
                    }
                }
                _ => {}
            }
        }
        Self {
            chinese_start,
            fragments,
        }
    }

    /// Every id the cursor accepts.
    pub(crate) fn allowed(
        &self,
        constraint: &TemplateConstraint,
        cursor: &TemplateCursor,
        vocab: &PrunedVocabulary,
    ) -> Vec<TokenId> {
        let candidates: Vec<TokenId> = match (constraint.rule_at(cursor.position), cursor.pending.is_empty()) {
            (SlotRule::End, _) => vocab.special_id(EOP).into_iter().collect(),
            (SlotRule::Chinese, true) => return self.chinese_start.clone(),
            (SlotRule::Literal(c), true) => {
                let mut buf = [0u8; 4];
                let want = c.encode_utf8(&mut buf).as_bytes();
                (1..=want.len())
                    .filter_map(|n| vocab.vocabulary().id_of(&want[..n]))
                    .collect()
            }
            (_, false) => self.fragments.clone(),
        };
        candidates
            .into_iter()
            .filter(|&id| cursor.allows(constraint, vocab, id))
            .collect()
    }
}
