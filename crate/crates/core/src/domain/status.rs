use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The finite set of statuses an agent can carry, addressed by index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct StatusSpace {
    labels: Vec<String>,
}

impl StatusSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Config("status space needs at least one status".into()));
        }
        for (a, la) in labels.iter().enumerate() {
            if labels[..a].contains(la) {
                return Err(Error::Config(format!("duplicate status label {la:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// Statuses labelled `"1"`, `"2"`, ... `"n"`.
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

impl TryFrom<Vec<String>> for StatusSpace {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<StatusSpace> for Vec<String> {
    fn from(s: StatusSpace) -> Self {
        s.labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(StatusSpace::new(["S", "E", "S"]).is_err());
        assert!(StatusSpace::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn lookup() {
        let s = StatusSpace::new(["S", "E", "I", "R", "D"]).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.index_of("I"), Some(2));
        assert_eq!(s.index_of("X"), None);
        assert_eq!(StatusSpace::numbered(2).unwrap().labels(), ["1", "2"]);
    }
}
