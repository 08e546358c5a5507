use serde::{Deserialize, Serialize};

/// Rule splitting a document into pieces before pair counting and
/// tokenisation. Merges never cross a piece boundary, and the pieces of a
/// document always concatenate back to the document.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pretokenizer {
    /// The whole document is a single piece.
    None,
    /// A whitespace run is glued to the front of the word that follows it
    /// (`"the cat"` splits as `"the"`, `" cat"`).
    #[default]
    LeadingSpace,
    /// A whitespace run is glued to the end of the word before it
    /// (`"the cat"` splits as `"the "`, `"cat"`).
    TrailingSpace,
}

impl Pretokenizer {
    pub fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut pieces = Vec::new();
        self.for_each_piece(text, |p| pieces.push(p));
        pieces
    }

    pub fn for_each_piece<'a>(&self, text: &'a str, mut f: impl FnMut(&'a str)) {
        if text.is_empty() {
            return;
        }
        match self {
            Pretokenizer::None => f(text),
            Pretokenizer::LeadingSpace => {
                // boundary wherever a whitespace char follows a non-whitespace char
                let mut start = 0;
                let mut prev_ws = None;
                for (i, c) in text.char_indices() {
                    let ws = c.is_whitespace();
                    if ws && prev_ws == Some(false) {
                        f(&text[start..i]);
                        start = i;
                    }
                    prev_ws = Some(ws);
                }
                f(&text[start..]);
            }
            Pretokenizer::TrailingSpace => {
                // boundary wherever a non-whitespace char follows a whitespace char
                let mut start = 0;
                let mut prev_ws = None;
                for (i, c) in text.char_indices() {
                    let ws = c.is_whitespace();
                    if !ws && prev_ws == Some(true) {
                        f(&text[start..i]);
                        start = i;
                    }
                    prev_ws = Some(ws);
                }
                f(&text[start..]);
            }
        }
    }
}
