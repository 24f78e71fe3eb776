use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The five rubric dimensions, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Understandability,
    Coherence,
    Relevance,
    Conciseness,
    ClinicalUtility,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Understandability,
        Metric::Coherence,
        Metric::Relevance,
        Metric::Conciseness,
        Metric::ClinicalUtility,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Understandability => "understandability",
            Metric::Coherence => "coherence",
            Metric::Relevance => "relevance",
            Metric::Conciseness => "conciseness",
            Metric::ClinicalUtility => "clinical_utility",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 5;

/// One integer score in 1..=5 per metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scores([u8; 5]);

impl Scores {
    pub fn new(values: [u8; 5]) -> Result<Self, String> {
        for (metric, v) in Metric::ALL.iter().zip(values) {
            if !(MIN_SCORE..=MAX_SCORE).contains(&v) {
                return Err(format!("{metric} must be an integer from 1 to 5, got {v}"));
            }
        }
        Ok(Self(values))
    }

    pub fn uniform(value: u8) -> Result<Self, String> {
        Self::new([value; 5])
    }

    pub fn get(&self, metric: Metric) -> u8 {
        self.0[metric.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Metric, u8)> + '_ {
        Metric::ALL.into_iter().map(|m| (m, self.get(m)))
    }

    /// Validates a wire map: exactly the five metric keys, each an integer 1..=5.
    pub fn from_map(map: &BTreeMap<String, serde_json::Value>) -> Result<Self, String> {
        if let Some(unknown) = map.keys().find(|k| k.parse::<Metric>().is_err()) {
            return Err(format!("unknown metric {unknown:?}"));
        }
        let mut values = [0u8; 5];
        for metric in Metric::ALL {
            let raw = map
                .get(metric.as_str())
                .ok_or_else(|| format!("missing metric {metric}"))?;
            let v = raw
                .as_i64()
                .filter(|v| (MIN_SCORE as i64..=MAX_SCORE as i64).contains(v))
                .ok_or_else(|| format!("{metric} must be an integer from 1 to 5, got {raw}"))?;
            values[metric.index()] = v as u8;
        }
        Self::new(values)
    }
}

impl Serialize for Scores {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(5))?;
        for (metric, value) in self.iter() {
            map.serialize_entry(metric.as_str(), &value)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Scores {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, serde_json::Value>::deserialize(deserializer)?;
        Scores::from_map(&map).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn map(v: serde_json::Value) -> BTreeMap<String, serde_json::Value> {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn canonical_order() {
        let names: Vec<_> = Metric::ALL.iter().map(|m| m.as_str()).collect();
        assert_eq!(names, ["understandability", "coherence", "relevance", "conciseness", "clinical_utility"]);
    }

    #[test]
    fn all_fives_payload() {
        let s = Scores::uniform(5).unwrap();
        assert_eq!(
            serde_json::to_value(s).unwrap(),
            json!({"understandability":5,"coherence":5,"relevance":5,"conciseness":5,"clinical_utility":5})
        );
    }

    #[test]
    fn validation() {
        let ok = json!({"understandability":4,"coherence":3,"relevance":5,"conciseness":1,"clinical_utility":2});
        assert!(Scores::from_map(&map(ok)).is_ok());
        let six = json!({"understandability":4,"coherence":6,"relevance":5,"conciseness":1,"clinical_utility":2});
        assert!(Scores::from_map(&map(six)).unwrap_err().contains("coherence"));
        let missing = json!({"understandability":4,"coherence":3,"relevance":5,"conciseness":1});
        assert!(Scores::from_map(&map(missing)).unwrap_err().contains("clinical_utility"));
        let frac = json!({"understandability":4.5,"coherence":3,"relevance":5,"conciseness":1,"clinical_utility":2});
        assert!(Scores::from_map(&map(frac)).is_err());
        let extra = json!({"understandability":4,"coherence":3,"relevance":5,"conciseness":1,"clinical_utility":2,"style":3});
        assert!(Scores::from_map(&map(extra)).is_err());
        assert!(Scores::uniform(0).is_err());
    }
}
