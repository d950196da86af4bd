use std::collections::HashSet;

use super::{MsdbError, Result};

/// Two-layer keyword grid: subject counts crossed with scenario verbs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordGrid {
    subject_counts: Vec<u32>,
    verbs: Vec<String>,
}

impl KeywordGrid {
    pub fn new(subject_counts: Vec<u32>, verbs: Vec<String>) -> Result<Self> {
        if subject_counts.contains(&0) {
            return Err(MsdbError::InvalidGrid("subject counts must be positive".into()));
        }
        let mut seen = HashSet::new();
        for v in &verbs {
            if !seen.insert(v.as_str()) {
                return Err(MsdbError::DuplicateVerb(v.clone()));
            }
        }
        Ok(Self {
            subject_counts,
            verbs,
        })
    }

    pub fn subject_counts(&self) -> &[u32] {
        &self.subject_counts
    }

    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }
}

/// Full cross product, subject-major and verb-minor.
pub fn enumerate_pairs(grid: &KeywordGrid) -> Result<Vec<(u32, &str)>> {
    if grid.subject_counts.is_empty() {
        return Err(MsdbError::EmptyKeywordLayer("subject counts"));
    }
    if grid.verbs.is_empty() {
        return Err(MsdbError::EmptyKeywordLayer("verbs"));
    }
    Ok(grid
        .subject_counts
        .iter()
        .flat_map(|&n| grid.verbs.iter().map(move |v| (n, v.as_str())))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verbs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cross_product_order() {
        let g = KeywordGrid::new(vec![1, 2], verbs(&["walk", "hug", "argue"])).unwrap();
        let pairs = enumerate_pairs(&g).unwrap();
        assert_eq!(pairs.len(), 6);
        assert_eq!(pairs[0], (1, "walk"));
        assert_eq!(pairs[3], (2, "walk"));
        assert_eq!(pairs[5], (2, "argue"));

        let single = KeywordGrid::new(vec![1], verbs(&["x"])).unwrap();
        assert_eq!(enumerate_pairs(&single).unwrap(), vec![(1, "x")]);
    }

    #[test]
    fn eighteen_hundred_pairs() {
        let vs: Vec<String> = (0..900).map(|i| format!("verb-{i}")).collect();
        let g = KeywordGrid::new(vec![1, 2], vs).unwrap();
        assert_eq!(enumerate_pairs(&g).unwrap().len(), 1800);
    }

    #[test]
    fn rejects_empty_layers_and_duplicates() {
        let g = KeywordGrid::new(vec![], verbs(&["a"])).unwrap();
        let err = enumerate_pairs(&g).unwrap_err();
        assert!(err.to_string().starts_with("empty keyword layer"));
        let g = KeywordGrid::new(vec![1], vec![]).unwrap();
        assert!(matches!(enumerate_pairs(&g), Err(MsdbError::EmptyKeywordLayer("verbs"))));
        assert!(matches!(
            KeywordGrid::new(vec![1], verbs(&["a", "a"])),
            Err(MsdbError::DuplicateVerb(_))
        ));
        assert!(KeywordGrid::new(vec![0], verbs(&["a"])).is_err());
    }
}
