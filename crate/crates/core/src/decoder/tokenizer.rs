/// Byte-level tokenizer: token `b` is byte `b`. Ids at or above 256 are
/// reserved for specials and decode to nothing. Token 0 (NUL) ends
/// generation since it never appears in text prompts.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const END_TOKEN: u32 = 0;

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    pub fn decode(&self, tokens: &[u32]) -> String {
        let bytes: Vec<u8> = tokens
            .iter()
            .filter(|&&t| t != Self::END_TOKEN && t < 256)
            .map(|&t| t as u8)
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_round_trip() {
        let tok = ByteTokenizer;
        let ids = tok.encode("Is there a car?");
        assert_eq!(ids[0], u32::from(b'I'));
        assert_eq!(tok.decode(&ids), "Is there a car?");
    }

    #[test]
    fn specials_are_dropped() {
        assert_eq!(ByteTokenizer.decode(&[104, 300, 105, 0]), "hi");
    }
}
