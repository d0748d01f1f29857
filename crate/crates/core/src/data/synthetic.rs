//! A small synthetic world for desk-scale experiments: storybook text,
//! toy code, and instruction/response pairs whose answers come from fixed
//! lookup tables. Responses can be rendered in different house styles so
//! that "original" data and a target's own answers disagree in phrasing.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Document, Tag};

const ANIMALS: [(&str, &str); 8] = [
    ("cat", "meow"),
    ("dog", "woof"),
    ("cow", "moo"),
    ("duck", "quack"),
    ("owl", "hoot"),
    ("frog", "croak"),
    ("sheep", "baa"),
    ("bee", "buzz"),
];

const THINGS: [(&str, &str); 8] = [
    ("sky", "blue"),
    ("grass", "green"),
    ("sun", "yellow"),
    ("snow", "white"),
    ("coal", "black"),
    ("rose", "red"),
    ("plum", "purple"),
    ("carrot", "orange"),
];

const VERBS: [&str; 6] = ["sees", "likes", "finds", "follows", "greets", "helps"];
const ADJS: [&str; 6] = ["small", "big", "happy", "quiet", "old", "quick"];
const PLACES: [&str; 5] = ["farm", "park", "river", "hill", "garden"];

/// How responses are phrased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStyle {
    /// One fixed, chatty phrasing.
    Assistant,
    /// Several terse phrasings chosen at random, like crowd-written answers.
    Varied,
}

/// Deterministic generator of synthetic corpora.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    rng: ChaCha8Rng,
}

impl SyntheticWorld {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn sentence(&mut self) -> String {
        let r = &mut self.rng;
        match r.random_range(0..4) {
            0 => {
                let (a, _) = ANIMALS.choose(r).unwrap();
                let (b, _) = ANIMALS.choose(r).unwrap();
                format!(
                    "the {} {a} {} the {b} at the {}.",
                    ADJS.choose(r).unwrap(),
                    VERBS.choose(r).unwrap(),
                    PLACES.choose(r).unwrap()
                )
            }
            1 => {
                let (a, s) = ANIMALS.choose(r).unwrap();
                format!("the {a} says {s}.")
            }
            2 => {
                let (t, c) = THINGS.choose(r).unwrap();
                format!("the {t} is {c}.")
            }
            _ => {
                let (a, _) = ANIMALS.choose(r).unwrap();
                format!("a {} {a} lives by the {}.", ADJS.choose(r).unwrap(), PLACES.choose(r).unwrap())
            }
        }
    }

    pub fn text_document(&mut self) -> Document {
        let n = self.rng.random_range(2..6);
        let s: Vec<String> = (0..n).map(|_| self.sentence()).collect();
        Document::new(s.join(" "), Tag::Text)
    }

    pub fn code_document(&mut self) -> Document {
        let r = &mut self.rng;
        let n = r.random_range(1..4);
        let mut out = String::new();
        for _ in 0..n {
            let name = format!("f{}", r.random_range(0..20));
            let k = r.random_range(1..10);
            let op = ["+", "-", "*"].choose(r).unwrap();
            out.push_str(&format!("fn {name}(x) {{ return x {op} {k}; }}\n"));
        }
        Document::new(out, Tag::Code)
    }

    /// A random instruction and its bare answer.
    pub fn task(&mut self) -> (String, String) {
        let r = &mut self.rng;
        match r.random_range(0..4) {
            0 => {
                let (a, s) = ANIMALS.choose(r).unwrap();
                (format!("what does the {a} say?"), s.to_string())
            }
            1 => {
                let (t, c) = THINGS.choose(r).unwrap();
                (format!("what color is the {t}?"), c.to_string())
            }
            2 => {
                let (a, _) = ANIMALS.choose(r).unwrap();
                let (b, _) = ANIMALS.choose(r).unwrap();
                (format!("repeat: {a} {b}"), format!("{a} {b}"))
            }
            _ => {
                let (a, _) = ANIMALS.choose(r).unwrap();
                let p = PLACES.choose(r).unwrap();
                (format!("where is the {a}?"), format!("at the {p}"))
            }
        }
    }

    pub fn styled(&mut self, answer: &str, style: ResponseStyle) -> String {
        match style {
            ResponseStyle::Assistant => format!("sure! the answer is {answer}. anything else?"),
            ResponseStyle::Varied => match self.rng.random_range(0..3) {
                0 => format!("{answer}."),
                1 => format!("i think {answer}"),
                _ => format!("it's {answer}!"),
            },
        }
    }

    pub fn text_corpus(&mut self, n_docs: usize) -> Corpus {
        Corpus::new((0..n_docs).map(|_| self.text_document()).collect())
    }

    pub fn code_corpus(&mut self, n_docs: usize) -> Corpus {
        Corpus::new((0..n_docs).map(|_| self.code_document()).collect())
    }

    pub fn instruction_corpus(&mut self, n_docs: usize, style: ResponseStyle) -> Corpus {
        Corpus::new(
            (0..n_docs)
                .map(|_| {
                    let (q, a) = self.task();
                    let resp = self.styled(&a, style);
                    Document::instruction(q, resp)
                })
                .collect(),
        )
    }
}
