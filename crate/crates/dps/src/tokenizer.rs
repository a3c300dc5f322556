//! Fixed character-level tokenizer.
//!
//! Content vocabulary is the Unicode code points `0..content_size`
//! (one token per character), followed by reserved special tokens and
//! one user token per registered user id. Nothing is learned, so the
//! vocabulary is fully determined by `(content_size, user_ids)`.

use serde::{Deserialize, Serialize};

use crate::error::{DpsError, Result};

/// Position role, used for loss masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// Special tokens: BOS, separators, user markers.
    Marker,
    Profile,
    Input,
    Target,
}

/// A tokenized sequence with optional per-position roles.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub roles: Option<Vec<Role>>,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<u32>) -> Self {
        TokenSequence { ids, roles: None }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A user-conditioned example (x, u, y*).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub user_id: String,
    pub profile_texts: Vec<String>,
    pub input_text: String,
    pub target_text: String,
}

pub const NUM_SPECIALS: usize = 6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    pub content_size: usize,
    /// Sorted user ids; user token k maps to `user_ids[k]`.
    pub user_ids: Vec<String>,
}

impl Tokenizer {
    pub fn new(content_size: usize, mut user_ids: Vec<String>) -> Self {
        user_ids.sort();
        user_ids.dedup();
        Tokenizer {
            content_size,
            user_ids,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.content_size + NUM_SPECIALS + self.user_ids.len()
    }

    pub fn pad(&self) -> u32 {
        self.content_size as u32
    }
    pub fn bos(&self) -> u32 {
        self.content_size as u32 + 1
    }
    pub fn eos(&self) -> u32 {
        self.content_size as u32 + 2
    }
    pub fn sep_profile(&self) -> u32 {
        self.content_size as u32 + 3
    }
    pub fn sep_input(&self) -> u32 {
        self.content_size as u32 + 4
    }
    pub fn sep_target(&self) -> u32 {
        self.content_size as u32 + 5
    }

    pub fn user_token(&self, user_id: &str) -> Result<u32> {
        let idx = self
            .user_ids
            .binary_search_by(|u| u.as_str().cmp(user_id))
            .map_err(|_| DpsError::Input(format!("unknown user id {user_id:?}")))?;
        Ok((self.content_size + NUM_SPECIALS + idx) as u32)
    }

    /// One token per character; code points outside the content range are
    /// rejected.
    pub fn encode_text(&self, text: &str) -> Result<Vec<u32>> {
        text.chars()
            .map(|c| {
                let cp = c as u32;
                if (cp as usize) < self.content_size {
                    Ok(cp)
                } else {
                    Err(DpsError::Input(format!(
                        "character {c:?} (U+{cp:04X}) outside content vocabulary of size {}",
                        self.content_size
                    )))
                }
            })
            .collect()
    }

    pub fn decode_text(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter_map(|&id| {
                if (id as usize) < self.content_size {
                    char::from_u32(id)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Full supervised layout:
    /// `BOS USER_k SEP_PROFILE <profile> SEP_INPUT <input> SEP_TARGET <target> EOS`
    ///
    /// Overlong sequences are shortened by dropping profile history from the
    /// oldest entry first (then truncating the oldest kept entry from the
    /// left); input and target are never cut.
    pub fn encode_example(&self, example: &Example, max_seq_len: usize) -> Result<TokenSequence> {
        if example.target_text.is_empty() {
            return Err(DpsError::Input("example target is empty".into()));
        }
        if example.user_id.is_empty() {
            return Err(DpsError::Input("example user_id is empty".into()));
        }
        let target = self.encode_text(&example.target_text)?;
        let (mut ids, mut roles) = self.encode_prompt_parts(example, max_seq_len, target.len() + 1)?;
        for &t in &target {
            ids.push(t);
            roles.push(Role::Target);
        }
        ids.push(self.eos());
        roles.push(Role::Target);
        Ok(TokenSequence {
            ids,
            roles: Some(roles),
        })
    }

    /// Generation prompt: the supervised layout up to and including
    /// `SEP_TARGET`, with `reserve` positions left free for new tokens.
    pub fn encode_prompt(
        &self,
        example: &Example,
        max_seq_len: usize,
        reserve: usize,
    ) -> Result<TokenSequence> {
        let (ids, roles) = self.encode_prompt_parts(example, max_seq_len, reserve)?;
        Ok(TokenSequence {
            ids,
            roles: Some(roles),
        })
    }

    fn encode_prompt_parts(
        &self,
        example: &Example,
        max_seq_len: usize,
        reserve: usize,
    ) -> Result<(Vec<u32>, Vec<Role>)> {
        let user = self.user_token(&example.user_id)?;
        let input = self.encode_text(&example.input_text)?;
        let mut profile: Vec<Vec<u32>> = example
            .profile_texts
            .iter()
            .map(|t| self.encode_text(t))
            .collect::<Result<_>>()?;

        // fixed overhead: BOS, USER, SEP_PROFILE, SEP_INPUT, SEP_TARGET
        let fixed = 5 + input.len() + reserve;
        if fixed > max_seq_len {
            return Err(DpsError::SequenceTooLong {
                len: fixed,
                max: max_seq_len,
            });
        }
        let mut budget = max_seq_len - fixed;
        let mut total: usize = profile.iter().map(Vec::len).sum();
        // drop oldest snippets first, then left-truncate the oldest kept one
        let mut start = 0;
        while total > budget && start < profile.len() {
            if profile[start].len() <= total - budget {
                total -= profile[start].len();
                profile[start].clear();
                start += 1;
            } else {
                let cut = total - budget;
                profile[start].drain(..cut);
                total = budget;
            }
        }
        budget = budget.min(total);
        let _ = budget;

        let mut ids = vec![self.bos(), user, self.sep_profile()];
        let mut roles = vec![Role::Marker, Role::Marker, Role::Marker];
        for snippet in &profile {
            for &t in snippet {
                ids.push(t);
                roles.push(Role::Profile);
            }
        }
        ids.push(self.sep_input());
        roles.push(Role::Marker);
        for &t in &input {
            ids.push(t);
            roles.push(Role::Input);
        }
        ids.push(self.sep_target());
        roles.push(Role::Marker);
        Ok((ids, roles))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        Tokenizer::new(64, vec!["u1".into(), "u0".into()])
    }

    fn example() -> Example {
        Example {
            user_id: "u0".into(),
            profile_texts: vec!["\u{1}\u{2}".into(), "\u{3}".into()],
            input_text: "\u{4}\u{5}".into(),
            target_text: "\u{6}".into(),
        }
    }

    #[test]
    fn special_token_layout() {
        let t = tok();
        assert_eq!(t.vocab_size(), 64 + NUM_SPECIALS + 2);
        assert_eq!(t.user_token("u0").unwrap(), 70);
        assert_eq!(t.user_token("u1").unwrap(), 71);
        assert!(t.user_token("zz").is_err());
    }

    #[test]
    fn encode_example_roles() {
        let seq = tok().encode_example(&example(), 32).unwrap();
        let roles = seq.roles.as_ref().unwrap();
        assert_eq!(seq.ids.len(), roles.len());
        // BOS USER SEPP p p p SEPI i i SEPT t EOS
        assert_eq!(seq.ids.len(), 12);
        assert_eq!(roles.iter().filter(|r| **r == Role::Target).count(), 2);
        assert_eq!(*roles.last().unwrap(), Role::Target);
    }

    #[test]
    fn profile_truncation_drops_oldest_first() {
        let t = tok();
        let mut ex = example();
        ex.profile_texts = vec!["\u{1}\u{1}\u{1}\u{1}".into(), "\u{2}\u{2}".into()];
        // fixed = 5 + 2 input + 2 reserve(target+eos) = 9; budget 2 of 6 profile tokens
        let seq = t.encode_example(&ex, 11).unwrap();
        let profile_tokens: Vec<u32> = seq
            .ids
            .iter()
            .zip(seq.roles.as_ref().unwrap())
            .filter(|(_, r)| **r == Role::Profile)
            .map(|(id, _)| *id)
            .collect();
        assert_eq!(profile_tokens, vec![2, 2]);
    }

    #[test]
    fn empty_target_rejected() {
        let mut ex = example();
        ex.target_text.clear();
        assert!(matches!(
            tok().encode_example(&ex, 32),
            Err(DpsError::Input(_))
        ));
    }

    #[test]
    fn oversize_input_rejected() {
        let mut ex = example();
        ex.input_text = "\u{4}".repeat(60);
        assert!(matches!(
            tok().encode_example(&ex, 32),
            Err(DpsError::SequenceTooLong { .. })
        ));
    }
}
