//! Shared domain types and closed-form expectations for complete b-ary trees.
//!
//! A complete tree of breadth `b` and depth `h` has `b^d` nodes at level `d`
//! for `d = 0..=h`. Both parameters are real valued. A fractional depth is
//! resolved by linear interpolation between the trees of depth `floor(h)` and
//! `ceil(h)`, which keeps integer cases exact and makes every statistic
//! continuous in `h`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("identifier must be non-empty")]
    EmptyId,
    #[error("invalid tree parameters b={b}, h={h}: need finite b >= 1 and h >= 0")]
    InvalidParams { b: f64, h: f64 },
    #[error("unknown {kind} label {value:?}")]
    UnknownLabel { kind: &'static str, value: String },
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
                let id = id.into();
                if id.is_empty() {
                    return Err(ModelError::EmptyId);
                }
                Ok(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = ModelError;
            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> String {
                value.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(
    /// Opaque identifier of a chat group.
    GroupId
);
string_id!(
    /// Opaque identifier of a (deduplicated) message.
    MessageId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentType {
    Misinformation,
    Hateful,
    Propaganda,
    ViralNormal,
    Unlabeled,
}

impl ContentType {
    pub const ALL: [ContentType; 5] = [
        ContentType::Hateful,
        ContentType::Misinformation,
        ContentType::Propaganda,
        ContentType::ViralNormal,
        ContentType::Unlabeled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContentType::Misinformation => "misinformation",
            ContentType::Hateful => "hateful",
            ContentType::Propaganda => "propaganda",
            ContentType::ViralNormal => "viral_normal",
            ContentType::Unlabeled => "unlabeled",
        }
    }

    pub fn is_harmful(self) -> bool {
        matches!(
            self,
            ContentType::Misinformation | ContentType::Hateful | ContentType::Propaganda
        )
    }
}

impl FromStr for ContentType {
    type Err = ModelError;

    /// Case-insensitive; `-`, `_` and spaces are interchangeable.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .map(|c| match c {
                '-' | ' ' => '_',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        match norm.as_str() {
            "misinformation" | "misinfo" => Ok(ContentType::Misinformation),
            "hateful" | "hate" | "hate_speech" => Ok(ContentType::Hateful),
            "propaganda" | "propa" => Ok(ContentType::Propaganda),
            "viral_normal" | "viralnormal" | "normal" => Ok(ContentType::ViralNormal),
            "unlabeled" | "unlabelled" | "none" => Ok(ContentType::Unlabeled),
            _ => Err(ModelError::UnknownLabel {
                kind: "content type",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for ContentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Image, Modality::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Video => "video",
        }
    }
}

impl FromStr for Modality {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" | "chat" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            "video" => Ok(Modality::Video),
            _ => Err(ModelError::UnknownLabel {
                kind: "modality",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Forwarding-score buckets `0, 1, 2, 3, 4, >=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ForwardingBucket {
    Zero,
    One,
    Two,
    Three,
    Four,
    FivePlus,
}

impl ForwardingBucket {
    pub const ALL: [ForwardingBucket; 6] = [
        ForwardingBucket::Zero,
        ForwardingBucket::One,
        ForwardingBucket::Two,
        ForwardingBucket::Three,
        ForwardingBucket::Four,
        ForwardingBucket::FivePlus,
    ];

    pub fn from_score(score: u32) -> Self {
        match score {
            0 => ForwardingBucket::Zero,
            1 => ForwardingBucket::One,
            2 => ForwardingBucket::Two,
            3 => ForwardingBucket::Three,
            4 => ForwardingBucket::Four,
            _ => ForwardingBucket::FivePlus,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ForwardingBucket::Zero => "0",
            ForwardingBucket::One => "1",
            ForwardingBucket::Two => "2",
            ForwardingBucket::Three => "3",
            ForwardingBucket::Four => "4",
            ForwardingBucket::FivePlus => "5+",
        }
    }
}

impl fmt::Display for ForwardingBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One observation: `message` appeared in `group` at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdoptionEvent {
    pub message: MessageId,
    pub group: GroupId,
    /// Seconds since epoch.
    pub time: f64,
    pub modality: Modality,
    pub content: ContentType,
    pub forwarding_score: u32,
}

/// Breadth and depth of the complete-cascade tree model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTreeParams")]
pub struct TreeParams {
    b: f64,
    h: f64,
}

#[derive(Deserialize)]
struct RawTreeParams {
    b: f64,
    h: f64,
}

impl TryFrom<RawTreeParams> for TreeParams {
    type Error = ModelError;

    fn try_from(raw: RawTreeParams) -> Result<Self, Self::Error> {
        TreeParams::new(raw.b, raw.h)
    }
}

impl TreeParams {
    pub fn new(b: f64, h: f64) -> Result<Self, ModelError> {
        if !(b.is_finite() && h.is_finite() && b >= 1.0 && h >= 0.0) {
            return Err(ModelError::InvalidParams { b, h });
        }
        Ok(Self { b, h })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Integer levels bracketing `h` and the weight of the upper one.
    pub fn depth_bracket(&self) -> (u32, u32, f64) {
        let lo = self.h.floor();
        let w = self.h - lo;
        let lo = lo as u32;
        if w == 0.0 {
            (lo, lo, 0.0)
        } else {
            (lo, lo + 1, w)
        }
    }
}

/// `sum_{i=0}^{depth} b^i`, with the `b -> 1` limit taken explicitly.
pub fn geometric_sum(b: f64, depth: u32) -> f64 {
    if (b - 1.0).abs() < 1e-9 {
        f64::from(depth) + 1.0
    } else {
        (b.powi(depth as i32 + 1) - 1.0) / (b - 1.0)
    }
}

/// Evaluates `f` at the integer depths bracketing `params.h()` and
/// interpolates linearly.
pub fn interpolate_depth(params: TreeParams, f: impl Fn(u32) -> f64) -> f64 {
    let (lo, hi, w) = params.depth_bracket();
    if w == 0.0 {
        f(lo)
    } else {
        (1.0 - w) * f(lo) + w * f(hi)
    }
}

/// Expected node count of the complete tree.
pub fn tree_size(params: TreeParams) -> f64 {
    interpolate_depth(params, |d| geometric_sum(params.b, d))
}

/// Expected node count at `level`. The partial top level `ceil(h)` carries
/// weight `h - floor(h)`.
pub fn level_count(params: TreeParams, level: u32) -> f64 {
    let (lo, hi, w) = params.depth_bracket();
    if level <= lo {
        params.b.powi(level as i32)
    } else if level == hi && w > 0.0 {
        w * params.b.powi(level as i32)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tp(b: f64, h: f64) -> TreeParams {
        TreeParams::new(b, h).unwrap()
    }

    /// Builds the tree explicitly, level by level, and counts nodes.
    fn enumerate_tree(b: usize, h: usize) -> (usize, Vec<usize>) {
        let mut levels = vec![vec![0usize]];
        let mut next_id = 1;
        for _ in 0..h {
            let mut children = Vec::new();
            for _parent in levels.last().unwrap() {
                for _ in 0..b {
                    children.push(next_id);
                    next_id += 1;
                }
            }
            levels.push(children);
        }
        (next_id, levels.iter().map(Vec::len).collect())
    }

    #[test]
    fn tree_size_examples() {
        assert_relative_eq!(tree_size(tp(2.0, 2.0)), 7.0);
        assert_relative_eq!(tree_size(tp(1.0, 4.0)), 5.0);
        // floor/ceil interpolation: N(3.78,4) + 0.89 * 3.78^5
        let b: f64 = 3.78;
        let n4 = 1.0 + b + b * b + b * b * b + b * b * b * b;
        let expected = n4 + 0.89 * b * b * b * b * b;
        assert_relative_eq!(tree_size(tp(3.78, 4.89)), expected, max_relative = 1e-12);
        assert!((tree_size(tp(3.78, 4.89)) - 964.07).abs() < 0.01);
    }

    #[test]
    fn level_count_examples() {
        assert_eq!(level_count(tp(2.0, 2.0), 2), 4.0);
        assert_eq!(level_count(tp(2.0, 2.0), 3), 0.0);
        assert_relative_eq!(level_count(tp(2.0, 2.5), 3), 4.0);
        let total: f64 = (0..6).map(|l| level_count(tp(2.0, 2.5), l)).sum();
        assert_relative_eq!(total, tree_size(tp(2.0, 2.5)), max_relative = 1e-12);
    }

    #[test]
    fn near_one_breadth_is_continuous() {
        let at_one = tree_size(tp(1.0, 6.0));
        let near = tree_size(tp(1.0 + 1e-7, 6.0));
        assert_relative_eq!(at_one, near, max_relative = 1e-5);
    }

    #[test]
    fn integer_cases_match_enumeration() {
        for b in 1..=5usize {
            for h in 0..=6usize {
                let (n, levels) = enumerate_tree(b, h);
                let params = tp(b as f64, h as f64);
                assert_relative_eq!(tree_size(params), n as f64, max_relative = 1e-12);
                for (l, &count) in levels.iter().enumerate() {
                    assert_relative_eq!(level_count(params, l as u32), count as f64);
                }
                assert_eq!(level_count(params, h as u32 + 1), 0.0);
            }
        }
    }

    #[test]
    fn monotone_on_grid() {
        let bs: Vec<f64> = (0..=76).map(|i| 1.0 + 0.25 * i as f64).collect();
        let hs: Vec<f64> = (0..=60).map(|i| 0.5 * i as f64).collect();
        for &h in &hs {
            for pair in bs.windows(2) {
                let (lo, hi) = (tree_size(tp(pair[0], h)), tree_size(tp(pair[1], h)));
                if h >= 1.0 {
                    assert!(hi > lo, "b {} -> {} at h {h}", pair[0], pair[1]);
                } else {
                    assert!(hi >= lo);
                }
            }
        }
        for &b in &bs {
            for pair in hs.windows(2) {
                assert!(tree_size(tp(b, pair[1])) > tree_size(tp(b, pair[0])));
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(TreeParams::new(0.9, 1.0).is_err());
        assert!(TreeParams::new(2.0, -0.1).is_err());
        assert!(TreeParams::new(f64::NAN, 1.0).is_err());
        assert!(TreeParams::new(2.0, f64::INFINITY).is_err());
        assert!(serde_json::from_str::<TreeParams>(r#"{"b":0.5,"h":2}"#).is_err());
        let ok: TreeParams = serde_json::from_str(r#"{"b":1.5,"h":2}"#).unwrap();
        assert_eq!(ok, TreeParams::new(1.5, 2.0).unwrap());
    }

    #[test]
    fn label_parsing() {
        assert_eq!("MisInformation".parse::<ContentType>().unwrap(), ContentType::Misinformation);
        assert_eq!("viral-normal".parse::<ContentType>().unwrap(), ContentType::ViralNormal);
        assert_eq!("chat".parse::<Modality>().unwrap(), Modality::Text);
        assert!("audio".parse::<Modality>().is_err());
        assert_eq!(ForwardingBucket::from_score(17), ForwardingBucket::FivePlus);
        assert!(GroupId::new("").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn level_counts_sum_to_size(b in 1.0f64..20.0, h in 0.0f64..30.0) {
            let params = tp(b, h);
            let total: f64 = (0..=31).map(|l| level_count(params, l)).sum();
            let size = tree_size(params);
            prop_assert!(((total - size) / size).abs() < 1e-9);
        }
    }
}
