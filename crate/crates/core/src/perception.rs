//! Prompt registry and reply parsing.
//!
//! The registered prompt texts are fixed byte-for-byte; their SHA-256 digests
//! are pinned in the tests. Reply parsing is tolerant: coordinates are picked
//! out of surrounding prose, and replies that carry no usable box are sorted
//! into three failure kinds.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{canonicalize_bbox, CanonicalBBox};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown prompt id `{0}`")]
    UnknownPromptId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptId {
    #[serde(rename = "BIN")]
    Bin,
    #[serde(rename = "BIN_REFINED")]
    BinRefined,
    P1,
    P2,
    P3,
}

impl PromptId {
    pub const ALL: [PromptId; 5] = [
        PromptId::Bin,
        PromptId::BinRefined,
        PromptId::P1,
        PromptId::P2,
        PromptId::P3,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptId::Bin => "BIN",
            PromptId::BinRefined => "BIN_REFINED",
            PromptId::P1 => "P1",
            PromptId::P2 => "P2",
            PromptId::P3 => "P3",
        }
    }

    pub fn spec(&self) -> &'static PromptSpec {
        &REGISTRY[*self as usize]
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| PromptError::UnknownPromptId(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedFormat {
    YesNo,
    CoordinateTemplate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub prompt_id: PromptId,
    pub text: &'static str,
    pub expected_format: ExpectedFormat,
}

const BIN_TEXT: &str =
    r#"Is there a human pedestrian in this image? Answer only either "yes" or "no"."#;

const BIN_REFINED_TEXT: &str = r#"Is there a human pedestrian in this image? Answer only either "yes" or "no". It is very important for you to say 'no' if there is no pedestrian close by."#;

const P1_TEXT: &str = "Given the reference system where (0,0) is the top-left corner and (1,1) is the bottom-right corner of the image, provide the coordinates (X,Y), (X',Y') representing the precise location of a person in the image. Ensure the coordinates accurately delineate the complete area occupied by the person. Return coordinates ONLY using this template: (X,Y), (X',Y')";

const P2_TEXT: &str = "In the image, identify the person's location using a coordinate system where (0,0) is the top-left corner and (1,1) is the bottom-right corner. Provide the coordinates (X,Y), (X',Y') that encapsulate the entire area occupied by the person. Use this format only: (X,Y), (X',Y')";

const P3_TEXT: &str = "Using (0,0) is the top-left corner and (1,1) is the bottom-right corner, provide the coordinates (X,Y), (X',Y') of the location of a person in the image. The coordinates should contain the complete area occupied by the person. Return coordinates ONLY using the template: (X,Y), (X',Y')";

static REGISTRY: [PromptSpec; 5] = [
    PromptSpec {
        prompt_id: PromptId::Bin,
        text: BIN_TEXT,
        expected_format: ExpectedFormat::YesNo,
    },
    PromptSpec {
        prompt_id: PromptId::BinRefined,
        text: BIN_REFINED_TEXT,
        expected_format: ExpectedFormat::YesNo,
    },
    PromptSpec {
        prompt_id: PromptId::P1,
        text: P1_TEXT,
        expected_format: ExpectedFormat::CoordinateTemplate,
    },
    PromptSpec {
        prompt_id: PromptId::P2,
        text: P2_TEXT,
        expected_format: ExpectedFormat::CoordinateTemplate,
    },
    PromptSpec {
        prompt_id: PromptId::P3,
        text: P3_TEXT,
        expected_format: ExpectedFormat::CoordinateTemplate,
    },
];

/// Looks up a registered prompt by its id string.
pub fn get_prompt(prompt_id: &str) -> Result<&'static PromptSpec, PromptError> {
    Ok(prompt_id.parse::<PromptId>()?.spec())
}

/// Why a reply could not be turned into a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureKind {
    NoPedestrianDetected,
    PartialCoordinates,
    AmbiguousDescription,
}

impl FailureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureKind::NoPedestrianDetected => "NoPedestrianDetected",
            FailureKind::PartialCoordinates => "PartialCoordinates",
            FailureKind::AmbiguousDescription => "AmbiguousDescription",
        }
    }

    /// Category letter used in failure breakdowns (A, B, C).
    pub fn letter(&self) -> char {
        match self {
            FailureKind::NoPedestrianDetected => 'A',
            FailureKind::PartialCoordinates => 'B',
            FailureKind::AmbiguousDescription => 'C',
        }
    }
}

impl FromStr for FailureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            FailureKind::NoPedestrianDetected,
            FailureKind::PartialCoordinates,
            FailureKind::AmbiguousDescription,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| format!("unknown failure kind `{s}`"))
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionOutcome {
    Verdict(bool),
    Located(CanonicalBBox),
    Failure(FailureKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDetection {
    pub outcome: DetectionOutcome,
    pub raw_excerpt: String,
}

const EXCERPT_CHARS: usize = 160;

pub fn excerpt(text: &str) -> String {
    text.chars().take(EXCERPT_CHARS).collect()
}

impl ParsedDetection {
    pub fn new(outcome: DetectionOutcome, raw: &str) -> Self {
        Self {
            outcome,
            raw_excerpt: excerpt(raw),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.outcome {
            DetectionOutcome::Verdict(_) => "verdict",
            DetectionOutcome::Located(_) => "located",
            DetectionOutcome::Failure(_) => "failure",
        }
    }

    pub fn verdict(&self) -> Option<bool> {
        match self.outcome {
            DetectionOutcome::Verdict(v) => Some(v),
            _ => None,
        }
    }

    pub fn bbox(&self) -> Option<&CanonicalBBox> {
        match &self.outcome {
            DetectionOutcome::Located(b) => Some(b),
            _ => None,
        }
    }

    pub fn failure_kind(&self) -> Option<FailureKind> {
        match self.outcome {
            DetectionOutcome::Failure(k) => Some(k),
            _ => None,
        }
    }
}

/// A yes/no reply whose first word was neither.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure {
    pub raw: String,
}

/// Reads the first alphabetic word of the reply, case-insensitively.
pub fn parse_binary_response(text: &str) -> Result<bool, ParseFailure> {
    let first = text
        .split(|c: char| !c.is_alphabetic())
        .find(|w| !w.is_empty())
        .map(str::to_lowercase);
    match first.as_deref() {
        Some("yes") => Ok(true),
        Some("no") => Ok(false),
        _ => Err(ParseFailure {
            raw: text.to_string(),
        }),
    }
}

const NUM: &str = r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)";

static PAIR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"\(\s*({NUM})\s*,\s*({NUM})\s*\)")).expect("pair pattern")
});

/// An opening parenthesis followed by at least one number: a pair that may
/// have been cut short.
static OPEN_PAIR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\(\s*{NUM}")).expect("open pair pattern"));

const PERSON: &str =
    r"(?:human\s+)?(?:pedestrians?|persons?|people|humans?|individuals?|one|anyone|anybody)";

/// Phrases that mark a reply as "no pedestrian detected". Matched
/// case-insensitively against the whole reply.
pub static NEGATION_PATTERNS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    [
        // "no pedestrian", "no visible person", "no human pedestrians"
        format!(r"\bno\s+(?:visible\s+|discernible\s+|clear\s+)?{PERSON}\b"),
        r"\bnobody\b".to_string(),
        // "cannot identify any pedestrian", "unable to detect a person"
        format!(
            r"\b(?:cannot|can't|can not|could not|couldn't|unable to|do not|don't|did not|didn't|does not|doesn't)\s+(?:identify|detect|see|find|locate|spot|contain|show|depict)\s+(?:any|a|the)?\s*(?:visible\s+)?{PERSON}\b"
        ),
        // "the pedestrian is not visible", "people aren't present"
        format!(r"\b{PERSON}\s+(?:is|are)(?:\s+not|n't)\s+(?:visible|present|detected|shown)\b"),
        // "not any pedestrians"
        format!(r"\bnot\s+any\s+{PERSON}\b"),
        // "a person, if any, is not visible"
        format!(r"\b{PERSON}\b[^.;!?]{{0,30}}\bnot\s+visible\b"),
    ]
    .iter()
    .map(|p| Regex::new(&format!("(?i){p}")).expect("negation pattern"))
    .collect()
});

/// Sorts a reply without a usable box into a failure kind. Checks run in a
/// fixed order: negation first, then any coordinate fragment, then the
/// catch-all.
pub fn classify_failure(text: &str) -> FailureKind {
    if NEGATION_PATTERNS.iter().any(|re| re.is_match(text)) {
        FailureKind::NoPedestrianDetected
    } else if PAIR.is_match(text) || OPEN_PAIR.is_match(text) {
        FailureKind::PartialCoordinates
    } else {
        FailureKind::AmbiguousDescription
    }
}

/// Pulls the first two `(x, y)` pairs out of a reply and canonicalizes them
/// into a box. Replies with fewer than two complete pairs are classified.
pub fn parse_bbox_response(text: &str) -> ParsedDetection {
    let pairs: Vec<(f64, f64)> = PAIR
        .captures_iter(text)
        .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
        .take(2)
        .collect();
    let outcome = match pairs.as_slice() {
        [a, b] => match canonicalize_bbox(*a, *b) {
            Ok(bbox) => DetectionOutcome::Located(bbox),
            Err(_) => DetectionOutcome::Failure(classify_failure(text)),
        },
        _ => DetectionOutcome::Failure(classify_failure(text)),
    };
    ParsedDetection::new(outcome, text)
}

/// Parses a reply according to the prompt's expected format. Yes/no replies
/// that cannot be read come back as a classified failure.
pub fn parse_response(format: ExpectedFormat, text: &str) -> ParsedDetection {
    match format {
        ExpectedFormat::YesNo => {
            let outcome = match parse_binary_response(text) {
                Ok(v) => DetectionOutcome::Verdict(v),
                Err(_) => DetectionOutcome::Failure(classify_failure(text)),
            };
            ParsedDetection::new(outcome, text)
        }
        ExpectedFormat::CoordinateTemplate => parse_bbox_response(text),
    }
}
