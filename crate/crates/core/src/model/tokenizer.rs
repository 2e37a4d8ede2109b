use crate::error::{Error, Result};

/// Byte-level token ids: token id = byte value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    /// Validates ids against `vocab_size` and length against `max_seq_len`.
    pub fn new(tokens: Vec<u32>, vocab_size: usize, max_seq_len: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Input("token sequence is empty".into()));
        }
        if tokens.len() > max_seq_len {
            return Err(Error::Length {
                len: tokens.len(),
                max: max_seq_len,
            });
        }
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocab_size {vocab_size}"
            )));
        }
        Ok(Self(tokens))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// First `n` tokens (`1 <= n <= len`).
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::Input(format!(
                "prefix length {n} outside 1..={}",
                self.len()
            )));
        }
        Ok(Self(self.0[..n].to_vec()))
    }
}

pub fn tokenize(text: &str, config: &super::ModelConfig) -> Result<TokenSequence> {
    if config.vocab_size < 256 {
        return Err(Error::Config(format!(
            "byte-level tokenizer needs vocab_size >= 256, model has {}",
            config.vocab_size
        )));
    }
    if text.is_empty() {
        return Err(Error::Input("text is empty".into()));
    }
    TokenSequence::new(
        text.bytes().map(u32::from).collect(),
        config.vocab_size,
        config.max_seq_len,
    )
}

/// Inverse of [`tokenize`]. Ids above 255 or byte runs that are not valid
/// UTF-8 are an input error.
pub fn detokenize(tokens: &TokenSequence) -> Result<String> {
    let bytes = tokens
        .ids()
        .iter()
        .map(|&t| u8::try_from(t).map_err(|_| Error::Input(format!("token {t} is not a byte"))))
        .collect::<Result<Vec<u8>>>()?;
    String::from_utf8(bytes).map_err(|e| Error::Input(format!("tokens are not valid UTF-8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn cfg(max_seq_len: usize) -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_mlp: 16,
            vocab_size: 256,
            max_seq_len,
            norm_eps: 1e-5,
            tie_embeddings: false,
        }
    }

    #[test]
    fn bytes_are_ids() {
        assert_eq!(tokenize("AB", &cfg(8)).unwrap().ids(), &[65, 66]);
    }

    #[test]
    fn empty_and_long_inputs() {
        assert!(matches!(tokenize("", &cfg(8)), Err(Error::Input(_))));
        let long = "x".repeat(10_000);
        assert!(matches!(
            tokenize(&long, &cfg(512)),
            Err(Error::Length {
                len: 10_000,
                max: 512
            })
        ));
    }

    #[test]
    fn multibyte_round_trip() {
        let s = "naïve café ünïcödé ✓";
        let t = tokenize(s, &cfg(128)).unwrap();
        assert_eq!(t.len(), s.len());
        assert_eq!(detokenize(&t).unwrap(), s);
    }

    #[test]
    fn small_vocab_rejected() {
        let c = ModelConfig {
            vocab_size: 2,
            ..cfg(8)
        };
        assert!(matches!(tokenize("a", &c), Err(Error::Config(_))));
    }
}
