use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const START: usize = 0;
pub const END: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<start>", "<end>", "<pad>", "<unk>"];

/// Built-in word list: category names of the synthetic suite and of
/// ModelNet40, caption template words, and common filler words.
const DEFAULT_WORDS: &[&str] = &[
    // synthetic shapes
    "sphere", "cube", "cylinder", "cone", "torus", "plane", "pyramid", "helix",
    // shape aliases used in pre-training captions
    "globe", "column", "funnel", "donut", "sheet", "slab", "tetrahedron", "coil",
    // ModelNet40 categories (multi-word names split into their words)
    "airplane", "bathtub", "bed", "bench", "bookshelf", "bottle", "bowl", "car", "chair",
    "cup", "curtain", "desk", "door", "dresser", "flower", "pot", "glass", "box", "guitar",
    "keyboard", "lamp", "laptop", "mantel", "monitor", "night", "stand", "person", "piano",
    "plant", "radio", "range", "hood", "sink", "sofa", "stairs", "stool", "table", "tent",
    "toilet", "tv", "vase", "wardrobe", "xbox",
    // template words
    "a", "an", "the", "point", "cloud", "of", "3d", "shape", "model", "object", "render",
    "rendering", "depth", "image", "photo", "picture", "scan", "mesh", "surface", "sample",
    "this", "is", "it", "looks", "like", "there", "in", "on", "with", "and", "or", "from",
    // descriptive filler
    "big", "small", "large", "tiny", "round", "flat", "tall", "short", "long", "wide",
    "narrow", "thin", "thick", "smooth", "rough", "sharp", "curved", "straight", "hollow",
    "solid", "twisted", "spiral", "ring", "ball", "block", "tube", "disk", "triangle",
    "square", "circle", "edge", "corner", "face", "side", "top", "bottom", "center", "middle",
    "left", "right", "front", "back", "upper", "lower", "inner", "outer", "simple", "complex",
    "good", "nice", "clean", "noisy", "dense", "sparse", "partial", "whole", "single",
    "many", "one", "two", "three", "four", "some", "each", "every", "other", "new", "old",
    "black", "white", "red", "green", "blue", "gray", "wooden", "metal", "plastic", "stone",
    "indoor", "outdoor", "room", "house", "office", "kitchen", "home", "furniture",
    "vehicle", "instrument", "container", "device", "tool", "toy", "thing", "item", "part",
    "piece", "view", "angle", "camera", "light", "dark", "bright", "color", "geometric",
    "symmetric", "looking", "showing", "type", "kind", "form", "structure", "category",
    "class", "example", "instance", "typical", "real", "synthetic", "virtual", "digital",
    "my", "your", "its", "be", "are", "has", "at", "for", "by", "to",
];

/// Word list with fixed special tokens at indices 0-3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_words(DEFAULT_WORDS.iter().copied()).expect("built-in vocabulary is valid")
    }
}

impl Vocabulary {
    /// Builds from regular words; the specials are prepended.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut all: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> =
            all.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        for w in words {
            let w = w.as_ref().trim();
            if w.is_empty() {
                return Err(Error::Data("empty word in vocabulary".into()));
            }
            if index.contains_key(w) {
                return Err(Error::Data(format!("duplicate vocabulary word `{w}`")));
            }
            index.insert(w.to_string(), all.len());
            all.push(w.to_string());
        }
        Ok(Self { words: all, index })
    }

    /// One word per line; line `n` (0-based) becomes index `n + 4`.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_words(text.lines().filter(|l| !l.trim().is_empty()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for w in &self.words[SPECIAL_TOKENS.len()..] {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK)
    }

    /// Lowercase, strip punctuation, split on whitespace.
    pub fn normalize_words(text: &str) -> Vec<String> {
        let cleaned: String = text
            .chars()
            .filter(|c| c.is_alphanumeric() || c.is_whitespace())
            .flat_map(char::to_lowercase)
            .collect();
        cleaned.split_whitespace().map(str::to_string).collect()
    }

    /// `<start> words… <end> <pad>…`, exactly `length` ids. Content that does
    /// not fit is cut so that `<end>` stays in the last slot.
    pub fn tokenize(&self, text: &str, length: usize) -> Result<Vec<usize>> {
        if length < 2 {
            return Err(Error::Argument(format!(
                "token length {length} leaves no room for <start>/<end>"
            )));
        }
        let mut ids = vec![START];
        ids.extend(
            Self::normalize_words(text)
                .iter()
                .take(length - 2)
                .map(|w| self.id_or_unk(w)),
        );
        ids.push(END);
        ids.resize(length, PAD);
        Ok(ids)
    }
}
