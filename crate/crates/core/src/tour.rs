//! Read-only guided tour content.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

static BUNDLED_TOUR: &str = include_str!("../data/tour.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TourError {
    #[error("unknown tour topic `{0}`")]
    UnknownTopic(String),
    #[error("invalid tour content: {0}")]
    Invalid(String),
}

/// Declaration order is presentation order; the overview comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TourTopic {
    Overview,
    Location,
    Rpp,
    Guest,
    Backup,
}

impl TourTopic {
    pub const ALL: [TourTopic; 5] =
        [TourTopic::Overview, TourTopic::Location, TourTopic::Rpp, TourTopic::Guest, TourTopic::Backup];

    pub fn as_str(self) -> &'static str {
        match self {
            TourTopic::Overview => "overview",
            TourTopic::Location => "location",
            TourTopic::Rpp => "rpp",
            TourTopic::Guest => "guest",
            TourTopic::Backup => "backup",
        }
    }
}

impl fmt::Display for TourTopic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TourTopic {
    type Err = TourError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TourTopic::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| TourError::UnknownTopic(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TourPanel {
    pub panel_id: String,
    pub topic: TourTopic,
    pub title: String,
    pub body: String,
    pub illustration_ref: String,
    pub order: u32,
}

#[derive(Debug, Clone)]
pub struct Tour {
    panels: Vec<TourPanel>,
}

impl Tour {
    pub fn bundled() -> Self {
        Tour::from_json(BUNDLED_TOUR).expect("bundled tour content is valid")
    }

    /// Parses and validates tour content: unique ids, unique order within a
    /// topic, 3 to 6 panels per topic, no empty text.
    pub fn from_json(text: &str) -> Result<Self, TourError> {
        let mut panels: Vec<TourPanel> = serde_json::from_str(text).map_err(|e| TourError::Invalid(e.to_string()))?;
        let mut ids = BTreeSet::new();
        let mut orders = BTreeSet::new();
        for p in &panels {
            if !ids.insert(p.panel_id.as_str()) {
                return Err(TourError::Invalid(format!("duplicate panel id {}", p.panel_id)));
            }
            if !orders.insert((p.topic, p.order)) {
                return Err(TourError::Invalid(format!("duplicate order {} in topic {}", p.order, p.topic)));
            }
            if p.title.trim().is_empty() || p.body.trim().is_empty() || p.illustration_ref.trim().is_empty() {
                return Err(TourError::Invalid(format!("panel {} has empty fields", p.panel_id)));
            }
        }
        for topic in TourTopic::ALL {
            let n = panels.iter().filter(|p| p.topic == topic).count();
            if !(3..=6).contains(&n) {
                return Err(TourError::Invalid(format!("topic {topic} has {n} panels, expected 3 to 6")));
            }
        }
        panels.sort_by_key(|p| (p.topic, p.order));
        Ok(Tour { panels })
    }

    pub fn panels(&self) -> &[TourPanel] {
        &self.panels
    }

    /// Panels of one topic (or all, when `topic` is `None`) ordered by (topic, order).
    pub fn get(&self, topic: Option<&str>) -> Result<Vec<TourPanel>, TourError> {
        let filter = topic.map(TourTopic::from_str).transpose()?;
        Ok(self.panels.iter().filter(|p| filter.is_none_or(|t| p.topic == t)).cloned().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_topic_panels_in_order() {
        let tour = Tour::bundled();
        let rpp = tour.get(Some("rpp")).unwrap();
        assert!(!rpp.is_empty());
        assert!(rpp.iter().all(|p| p.topic == TourTopic::Rpp));
        assert!(rpp.windows(2).all(|w| w[0].order < w[1].order));
    }

    #[test]
    fn all_panels_stable_and_overview_first() {
        let tour = Tour::bundled();
        let all = tour.get(None).unwrap();
        assert_eq!(all, tour.get(None).unwrap());
        assert_eq!(all[0].topic, TourTopic::Overview);
        assert!(all.windows(2).all(|w| (w[0].topic, w[0].order) < (w[1].topic, w[1].order)));
        let topics: BTreeSet<_> = all.iter().map(|p| p.topic).collect();
        assert_eq!(topics.len(), 5);
    }

    #[test]
    fn unknown_topic_rejected() {
        assert_eq!(Tour::bundled().get(Some("bogus")), Err(TourError::UnknownTopic("bogus".into())));
    }

    #[test]
    fn content_validation() {
        let dup = r#"[{"panel_id":"a","topic":"rpp","title":"t","body":"b","illustration_ref":"i","order":1},
                      {"panel_id":"b","topic":"rpp","title":"t","body":"b","illustration_ref":"i","order":1}]"#;
        assert!(matches!(Tour::from_json(dup), Err(TourError::Invalid(_))));
        assert!(matches!(Tour::from_json("[]"), Err(TourError::Invalid(_))));
    }
}
