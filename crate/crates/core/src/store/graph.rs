//! Patient -> test graph export. Patients are source nodes, tests are target
//! nodes, and each result is one edge carrying its day, value and category.

use std::io::{self, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::model::ResultCategory;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Patient,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge<T = f64> {
    pub source: String,
    pub target: String,
    pub day: NaiveDate,
    pub value: T,
    pub category: ResultCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph<T = f64> {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge<T>>,
}

pub fn patient_node_id(patient_id: &str) -> String {
    format!("patient:{patient_id}")
}

pub fn test_node_id(test: &str) -> String {
    format!("test:{test}")
}

pub fn export_graph<T: Scalar>(dataset: &Dataset<T>) -> Graph<T> {
    let mut nodes: Vec<GraphNode> = dataset
        .patients()
        .keys()
        .map(|id| GraphNode {
            id: patient_node_id(id),
            kind: NodeKind::Patient,
            label: id.clone(),
        })
        .collect();
    nodes.extend(dataset.distinct_tests().into_iter().map(|t| GraphNode {
        id: test_node_id(t),
        kind: NodeKind::Test,
        label: t.to_owned(),
    }));
    let edges = dataset
        .results()
        .iter()
        .map(|r| GraphEdge {
            source: patient_node_id(&r.patient_id),
            target: test_node_id(&r.test),
            day: r.day,
            value: r.value,
            category: dataset.category_of(r),
        })
        .collect();
    Graph { nodes, edges }
}

pub fn write_graph<T: Scalar, W: Write>(dataset: &Dataset<T>, out: W) -> io::Result<Graph<T>> {
    let graph = export_graph(dataset);
    serde_json::to_writer(out, &graph).map_err(io::Error::other)?;
    Ok(graph)
}
