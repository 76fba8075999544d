use alloc::vec::Vec;

use crate::error::{usage, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Style {
    Source,
    Target,
}

/// Token-id sequence with a style label.
///
/// A framed sentence starts with exactly one BOS and ends with exactly one
/// EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    tokens: Vec<usize>,
    style: Style,
    framed: bool,
}

impl Sentence {
    /// Wraps content tokens in BOS/EOS.
    pub fn framed(content: &[usize], style: Style) -> Self {
        let mut tokens = Vec::with_capacity(content.len() + 2);
        tokens.push(BOS);
        tokens.extend_from_slice(content);
        tokens.push(EOS);
        Self { tokens, style, framed: true }
    }

    /// Accepts an already framed token sequence.
    pub fn from_framed(tokens: Vec<usize>, style: Style) -> Result<Self> {
        let ok = tokens.len() >= 2
            && tokens[0] == BOS
            && tokens[tokens.len() - 1] == EOS
            && tokens.iter().filter(|&&t| t == BOS).count() == 1
            && tokens.iter().filter(|&&t| t == EOS).count() == 1;
        if !ok {
            return Err(usage!("sequence {tokens:?} is not framed by exactly one BOS and EOS"));
        }
        Ok(Self { tokens, style, framed: true })
    }

    /// Raw token sequence without framing requirements.
    pub fn unframed(tokens: Vec<usize>, style: Style) -> Result<Self> {
        if tokens.is_empty() {
            return Err(usage!("sentence must contain at least one token"));
        }
        Ok(Self { tokens, style, framed: false })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn style(&self) -> Style {
        self.style
    }

    pub fn with_style(mut self, style: Style) -> Self {
        self.style = style;
        self
    }

    pub fn is_framed(&self) -> bool {
        self.framed
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens other than PAD, BOS and EOS.
    pub fn content(&self) -> Vec<usize> {
        self.tokens.iter().copied().filter(|&t| !matches!(t, PAD | BOS | EOS)).collect()
    }

    /// Number of tokens a left-to-right model predicts: everything after
    /// BOS, including EOS.
    pub fn predicted_len(&self) -> usize {
        if self.framed {
            self.tokens.len() - 1
        } else {
            self.tokens.len()
        }
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t >= vocab_size) {
            Some(t) => Err(usage!("token index {t} outside vocabulary of size {vocab_size}")),
            None => Ok(()),
        }
    }

    pub(crate) fn require_framed(&self) -> Result<()> {
        if self.framed {
            Ok(())
        } else {
            Err(usage!("operation needs a BOS/EOS framed sentence"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn framing_rules() {
        let s = Sentence::framed(&[5, 6], Style::Target);
        assert_eq!(s.tokens(), &[BOS, 5, 6, EOS]);
        assert_eq!(s.predicted_len(), 3);
        assert_eq!(s.content(), vec![5, 6]);
        assert!(Sentence::from_framed(vec![BOS, EOS, EOS], Style::Source).is_err());
        assert!(Sentence::from_framed(vec![5, EOS], Style::Source).is_err());
        assert!(Sentence::from_framed(vec![BOS, 4, EOS], Style::Source).is_ok());
        assert!(Sentence::unframed(vec![], Style::Source).is_err());
        assert!(s.check_vocab(7).is_ok());
        assert!(s.check_vocab(6).is_err());
    }
}
