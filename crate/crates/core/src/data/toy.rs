use serde::{Deserialize, Serialize};

use super::{LabeledPair, PairSource, CONDITION_PREFIX};
use crate::error::{AenError, Result};
use crate::rng::SplitMix64;

/// Deterministic synthetic statement/condition pairs.
///
/// Each statement is about one topic: a shuffle of 3–8 filler words, the topic
/// name and one or two of its keywords. Conditions read
/// `"When someone mentions <topic>"`. A pair is positive exactly when the
/// condition names the statement's topic, so the task is separable; negatives
/// use a different topic. Exactly `round(n_pairs / (1 + negative_ratio))`
/// pairs are positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataSpec {
    pub seed: u64,
    pub n_pairs: usize,
    #[serde(default = "default_topics")]
    pub n_topics: usize,
    #[serde(default = "default_ratio")]
    pub negative_ratio: f64,
}

fn default_topics() -> usize {
    50
}

fn default_ratio() -> f64 {
    6.0
}

impl ToyDataSpec {
    pub fn new(seed: u64, n_pairs: usize) -> Self {
        ToyDataSpec {
            seed,
            n_pairs,
            n_topics: default_topics(),
            negative_ratio: default_ratio(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(AenError::domain("n_pairs must be positive"));
        }
        if self.n_topics < 2 {
            return Err(AenError::domain("need at least two topics to form negatives"));
        }
        if self.n_topics > TOPICS.len() {
            return Err(AenError::domain(format!(
                "at most {} topics are available, asked for {}",
                TOPICS.len(),
                self.n_topics
            )));
        }
        if !(self.negative_ratio > 0.0 && self.negative_ratio.is_finite()) {
            return Err(AenError::domain("negative_ratio must be positive"));
        }
        Ok(())
    }

    pub fn positive_count(&self) -> usize {
        (self.n_pairs as f64 / (1.0 + self.negative_ratio)).round() as usize
    }
}

/// The condition text for a topic.
pub fn topic_condition(topic: &str) -> String {
    format!("{CONDITION_PREFIX}mentions {topic}")
}

pub fn generate_toy_dataset(spec: &ToyDataSpec) -> Result<Vec<LabeledPair>> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let n_pos = spec.positive_count().min(spec.n_pairs);
    let mut labels: Vec<u8> = (0..spec.n_pairs).map(|i| (i < n_pos) as u8).collect();
    rng.shuffle(&mut labels);

    let mut out = Vec::with_capacity(spec.n_pairs);
    for label in labels {
        let topic = rng.below(spec.n_topics);
        let (name, keywords) = TOPICS[topic];
        let mut words: Vec<&str> = Vec::new();
        let n_fill = 3 + rng.below(6);
        for _ in 0..n_fill {
            words.push(FILLER_WORDS[rng.below(FILLER_WORDS.len())]);
        }
        words.push(name);
        let n_kw = 1 + rng.below(2);
        let first = rng.below(3);
        for k in 0..n_kw {
            words.push(keywords[(first + k) % 3]);
        }
        rng.shuffle(&mut words);

        let condition_topic = if label == 1 {
            topic
        } else {
            // uniform over the other topics
            let other = rng.below(spec.n_topics - 1);
            if other >= topic {
                other + 1
            } else {
                other
            }
        };
        out.push(LabeledPair {
            statement: words.join(" "),
            condition: topic_condition(TOPICS[condition_topic].0),
            label,
            source: Some("toy".to_string()),
        });
    }
    Ok(out)
}

impl PairSource for ToyDataSpec {
    fn pairs(&self) -> Result<Vec<LabeledPair>> {
        generate_toy_dataset(self)
    }
}

pub const TOPICS: &[(&str, [&str; 3])] = &[
    ("gardening", ["tomatoes", "compost", "seedlings"]),
    ("cooking", ["recipe", "simmer", "skillet"]),
    ("hiking", ["trailhead", "backpack", "summit"]),
    ("astronomy", ["telescope", "nebula", "constellation"]),
    ("chess", ["checkmate", "bishop", "gambit"]),
    ("cycling", ["pedals", "derailleur", "peloton"]),
    ("photography", ["aperture", "tripod", "shutter"]),
    ("baking", ["sourdough", "oven", "frosting"]),
    ("fishing", ["tackle", "trout", "lure"]),
    ("painting", ["canvas", "easel", "watercolor"]),
    ("guitar", ["chords", "fretboard", "strings"]),
    ("skiing", ["slopes", "bindings", "powder"]),
    ("surfing", ["waves", "wetsuit", "longboard"]),
    ("camping", ["tent", "campfire", "lantern"]),
    ("knitting", ["yarn", "needles", "scarf"]),
    ("pottery", ["kiln", "clay", "glaze"]),
    ("running", ["marathon", "sneakers", "stride"]),
    ("swimming", ["freestyle", "goggles", "laps"]),
    ("yoga", ["mat", "pose", "breathing"]),
    ("travel", ["passport", "itinerary", "luggage"]),
    ("investing", ["dividends", "portfolio", "stocks"]),
    ("taxes", ["deductions", "refund", "filing"]),
    ("mortgage", ["lender", "escrow", "refinance"]),
    ("insurance", ["premium", "deductible", "claim"]),
    ("vacation", ["resort", "beach", "sunscreen"]),
    ("movies", ["cinema", "trailer", "director"]),
    ("music", ["playlist", "album", "concert"]),
    ("podcasts", ["episode", "host", "listeners"]),
    ("gaming", ["console", "controller", "multiplayer"]),
    ("programming", ["compiler", "debugging", "repository"]),
    ("robotics", ["servo", "actuator", "sensors"]),
    ("birdwatching", ["binoculars", "warbler", "migration"]),
    ("weather", ["forecast", "humidity", "thunderstorm"]),
    ("recycling", ["bins", "plastic", "landfill"]),
    ("parenting", ["toddler", "bedtime", "daycare"]),
    ("pets", ["puppy", "leash", "veterinarian"]),
    ("fitness", ["dumbbells", "workout", "treadmill"]),
    ("nutrition", ["protein", "vitamins", "calories"]),
    ("dentistry", ["cavity", "braces", "floss"]),
    ("pharmacy", ["prescription", "pills", "dosage"]),
    ("carpentry", ["lumber", "chisel", "sawdust"]),
    ("plumbing", ["faucet", "pipes", "leak"]),
    ("electricity", ["wiring", "breaker", "outlet"]),
    ("cars", ["engine", "tires", "mechanic"]),
    ("aviation", ["cockpit", "runway", "turbulence"]),
    ("sailing", ["mast", "harbor", "regatta"]),
    ("archery", ["arrows", "fletching", "bullseye"]),
    ("tennis", ["racket", "serve", "volley"]),
    ("basketball", ["dribble", "hoop", "rebound"]),
    ("soccer", ["goalkeeper", "penalty", "midfield"]),
    ("baseball", ["pitcher", "inning", "shortstop"]),
    ("golf", ["putter", "caddie", "bogey"]),
    ("poetry", ["stanza", "rhyme", "sonnet"]),
    ("history", ["archives", "empire", "century"]),
    ("languages", ["grammar", "vocabulary", "accent"]),
    ("weddings", ["bride", "vows", "reception"]),
    ("shopping", ["checkout", "discount", "cart"]),
    ("coffee", ["espresso", "barista", "latte"]),
    ("tea", ["teapot", "oolong", "steeping"]),
    ("wine", ["vineyard", "sommelier", "vintage"]),
];

pub const FILLER_WORDS: &[&str] = &[
    "i", "you", "we", "they", "really", "think", "that", "the",
    "a", "was", "is", "so", "just", "about", "yesterday", "today",
    "honestly", "maybe", "my", "our", "friend", "sister", "brother", "again",
    "actually", "quite", "some", "bunch", "new", "old", "week", "weekend",
    "morning", "evening", "pretty", "kind", "of", "and", "then", "still",
    "love", "like", "talked", "said", "with", "been", "good", "nice",
];
