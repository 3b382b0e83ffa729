use std::fmt;
use std::str::FromStr;

use super::TransportError;

/// One of the three topic families of a federation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Topic {
    /// `fl/<fed>/global`: server → clients model broadcast.
    Global { fed: String },
    /// `fl/<fed>/updates/<client>`: client → server.
    Update { fed: String, client: String },
    /// `fl/<fed>/control`: round-done and stop signals.
    Control { fed: String },
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

fn topic_error(topic: &str, reason: &str) -> TransportError {
    TransportError::Topic {
        topic: topic.to_string(),
        reason: reason.to_string(),
    }
}

impl Topic {
    pub fn global(fed: &str) -> Self {
        Topic::Global { fed: fed.into() }
    }

    pub fn update(fed: &str, client: &str) -> Self {
        Topic::Update {
            fed: fed.into(),
            client: client.into(),
        }
    }

    pub fn control(fed: &str) -> Self {
        Topic::Control { fed: fed.into() }
    }

    /// Wildcard pattern covering every client's update topic.
    pub fn all_updates(fed: &str) -> String {
        format!("fl/{fed}/updates/+")
    }

    pub fn fed(&self) -> &str {
        match self {
            Topic::Global { fed } | Topic::Update { fed, .. } | Topic::Control { fed } => fed,
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topic::Global { fed } => write!(f, "fl/{fed}/global"),
            Topic::Update { fed, client } => write!(f, "fl/{fed}/updates/{client}"),
            Topic::Control { fed } => write!(f, "fl/{fed}/control"),
        }
    }
}

impl FromStr for Topic {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').collect();
        let topic = match parts.as_slice() {
            ["fl", fed, "global"] => Topic::global(fed),
            ["fl", fed, "control"] => Topic::control(fed),
            ["fl", fed, "updates", client] => {
                if !is_token(client) {
                    return Err(topic_error(s, "client id must be a lowercase alphanumeric token"));
                }
                Topic::update(fed, client)
            }
            _ => return Err(topic_error(s, "expected fl/<fed>/global, fl/<fed>/updates/<client> or fl/<fed>/control")),
        };
        if !is_token(topic.fed()) {
            return Err(topic_error(s, "federation id must be a lowercase alphanumeric token"));
        }
        Ok(topic)
    }
}

/// Validates a subscription pattern: a concrete topic, optionally with its
/// last segment replaced by `+`.
pub fn validate_pattern(pattern: &str) -> Result<(), TransportError> {
    match pattern.strip_suffix("/+") {
        Some(prefix) => {
            // The prefix plus any concrete final token must be a valid topic.
            Topic::from_str(&format!("{prefix}/x0"))
                .or_else(|_| Topic::from_str(&format!("{prefix}/global")))
                .map(|_| ())
                .map_err(|_| topic_error(pattern, "wildcard prefix does not name a topic family"))
        }
        None if pattern.contains('+') => Err(topic_error(pattern, "only a single trailing + segment is supported")),
        None => Topic::from_str(pattern).map(|_| ()),
    }
}

/// Whether `topic` matches `pattern` (segment-wise, trailing `+` matches
/// exactly one non-empty segment).
pub fn topic_matches(pattern: &str, topic: &str) -> bool {
    let mut p = pattern.split('/');
    let mut t = topic.split('/');
    loop {
        match (p.next(), t.next()) {
            (None, None) => return true,
            (Some("+"), Some(seg)) => {
                if seg.is_empty() {
                    return false;
                }
            }
            (Some(a), Some(b)) if a == b => {}
            _ => return false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        for s in ["fl/a/global", "fl/fed1/updates/c3", "fl/x9/control"] {
            assert_eq!(s.parse::<Topic>().unwrap().to_string(), s);
        }
        for bad in ["fl/A/global", "fl//global", "fl/a/updates/C3", "fl/a/updates", "mq/a/global", "fl/a/global/x", "fl/a-b/control"] {
            assert!(bad.parse::<Topic>().is_err(), "{bad}");
        }
    }

    #[test]
    fn wildcard_matching() {
        assert!(topic_matches("fl/a/updates/+", "fl/a/updates/c3"));
        assert!(!topic_matches("fl/a/updates/+", "fl/b/updates/c3"));
        assert!(!topic_matches("fl/a/updates/+", "fl/a/updates"));
        assert!(!topic_matches("fl/a/updates/+", "fl/a/updates/c3/x"));
        assert!(!topic_matches("fl/a/updates/+", "fl/a/updates/"));
        assert!(topic_matches("fl/a/global", "fl/a/global"));
        assert!(!topic_matches("fl/a/global", "fl/ab/global"));
    }

    #[test]
    fn pattern_validation() {
        assert!(validate_pattern("fl/a/updates/+").is_ok());
        assert!(validate_pattern("fl/a/global").is_ok());
        assert!(validate_pattern("fl/a/+").is_ok());
        assert!(validate_pattern("fl/+/global").is_err());
        assert!(validate_pattern("fl/a/up+").is_err());
        assert!(validate_pattern("x/a/updates/+").is_err());
    }
}
