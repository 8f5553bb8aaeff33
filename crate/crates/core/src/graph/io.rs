//! Graph JSON files:
//! `{"num_nodes": 3, "edges": [[0,1],[1,2]], "features": [[1],[1],[1]], "labels": [1,2,1]}`.
//!
//! `features` defaults to the all-ones column and `labels` is optional.

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<f64>>,
}

pub fn from_json_str(text: &str) -> Result<Graph> {
    let raw: GraphFile = serde_json::from_str(text).map_err(|e| {
        Error::Format(format!("line {} column {}: {e}", e.line(), e.column()))
    })?;
    let n = raw.num_nodes;
    let features = match raw.features {
        None => Tensor::ones(vec![n, 1]),
        Some(rows) => {
            if rows.len() != n {
                return Err(Error::Format(format!(
                    "field `features`: {} rows for num_nodes = {n}",
                    rows.len()
                )));
            }
            let width = rows.first().map_or(1, Vec::len);
            if let Some(i) = rows.iter().position(|r| r.len() != width || r.is_empty()) {
                return Err(Error::Format(format!(
                    "field `features[{i}]`: width {} differs from {width}",
                    rows[i].len()
                )));
            }
            Tensor::new(vec![n, width], rows.concat())?
        }
    };
    let edges = raw.edges.iter().map(|e| (e[0], e[1])).collect();
    let g = Graph::with_features(n, edges, features)
        .map_err(|e| Error::Format(format!("field `edges`: {e}")))?;
    match raw.labels {
        None => Ok(g),
        Some(l) => g
            .with_labels(l)
            .map_err(|e| Error::Format(format!("field `labels`: {e}"))),
    }
}

pub fn to_json_string(g: &Graph) -> String {
    let c = g.feature_width();
    let raw = GraphFile {
        num_nodes: g.num_nodes(),
        edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
        features: Some(g.features().data().chunks(c).map(<[f64]>::to_vec).collect()),
        labels: g.labels().map(<[f64]>::to_vec),
    };
    serde_json::to_string_pretty(&raw).expect("plain data serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::csl;

    #[test]
    fn round_trip() {
        let g = csl(8, 2).unwrap().with_labels(vec![4.0; 8]).unwrap();
        let text = to_json_string(&g);
        assert_eq!(from_json_str(&text).unwrap(), g);
    }

    #[test]
    fn features_default_to_ones() {
        let g = from_json_str(r#"{"num_nodes": 2, "edges": [[0, 1]]}"#).unwrap();
        assert_eq!(g.features().data(), &[1.0, 1.0]);
    }

    #[test]
    fn diagnostics_name_line_or_field() {
        let err = from_json_str("{\n\"num_nodes\": 2,\n\"edges\": [[0, 1],]\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = from_json_str(r#"{"num_nodes": 2, "edges": [[0, 5]]}"#).unwrap_err();
        assert!(err.to_string().contains("edges"), "{err}");
        let err =
            from_json_str(r#"{"num_nodes": 2, "edges": [], "features": [[1], [1, 2]]}"#).unwrap_err();
        assert!(err.to_string().contains("features[1]"), "{err}");
        let err = from_json_str(r#"{"num_nodes": 2, "edges": [], "labels": [1]}"#).unwrap_err();
        assert!(err.to_string().contains("labels"), "{err}");
    }
}
