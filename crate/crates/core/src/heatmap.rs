//! Cosine-similarity heatmaps of one region against all others.

use std::fmt::Write as _;

use rgnet_tensor::{BnMode, Graph, Scalar, Tensor, TensorError};

use crate::config::Task;
use crate::dataset::encode_pgm;
use crate::error::{config_err, Result};
use crate::model::RgNet;

/// Feature map the similarities are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Fcn,
    Aspp,
    Graph,
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fcn" => Ok(Stage::Fcn),
            "aspp" => Ok(Stage::Aspp),
            "graph" => Ok(Stage::Graph),
            _ => Err(format!("unknown stage '{s}' (fcn, aspp, graph)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Query {
    Cell { row: usize, col: usize },
    /// The region with the highest high-aesthetics score.
    Auto,
}

impl std::str::FromStr for Query {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Query::Auto);
        }
        let (r, c) = s
            .split_once(',')
            .ok_or_else(|| format!("query '{s}' is neither 'auto' nor 'row,col'"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("query '{s}': {e}"));
        Ok(Query::Cell {
            row: parse(r)?,
            col: parse(c)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub query: (usize, usize),
    /// Row-major similarities to the query cell, in `[-1, 1]`.
    pub values: Vec<f64>,
}

impl Heatmap {
    /// Linear map of `[-1, 1]` onto `[0, 255]`.
    pub fn gray_levels(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(&self.gray_levels(), self.cols, self.rows)
    }

    /// One CSV line per grid row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = self.values[r * self.cols..(r + 1) * self.cols]
                .iter()
                .map(|v| v.to_string())
                .collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    /// Cells whose similarity exceeds `threshold`.
    pub fn area_above(&self, threshold: f64) -> usize {
        self.values.iter().filter(|&&v| v > threshold).count()
    }
}

/// Node rows `[H*W, C]` of batch item 0 of a `[1, C, H, W]` map.
fn node_matrix<T: Scalar>(map: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(map.clone());
    let n = g.to_nodes(x, 0)?;
    Ok(g.value(n).clone())
}

/// Similarities of every region to the query region at `stage` for one
/// `[3, S, S]` image.
pub fn heatmap<T: Scalar>(model: &RgNet<T>, image: &Tensor<T>, stage: Stage, query: Query) -> Result<Heatmap> {
    let mut g = Graph::new();
    let vars = model.store().bind(&mut g);
    let x = g.constant(Tensor::stack(std::slice::from_ref(image))?);
    let out = model.forward(&mut g, &vars, x, BnMode::Eval)?;
    let feature = match stage {
        Stage::Fcn => Some(out.fcn),
        Stage::Aspp => out.aspp,
        Stage::Graph => out.graph,
    }
    .ok_or_else(|| config_err(format!("variant {} has no {stage:?} stage", model.config().variant)))?;
    let map = g.value(feature);
    let (_, _, rows, cols) = map.dims4().expect("feature maps are 4-d");
    let query = match query {
        Query::Cell { row, col } => {
            if row >= rows || col >= cols {
                return Err(TensorError::InvalidArgument {
                    op: "heatmap",
                    detail: format!("query ({row}, {col}) outside the {rows}x{cols} grid"),
                }
                .into());
            }
            (row, col)
        }
        Query::Auto => {
            let scores = out
                .head
                .region_scores
                .ok_or_else(|| config_err("automatic query needs per-region scores"))?;
            let y = g.value(scores);
            let channel = match model.task() {
                Task::Classify => 1,
                Task::Regress => 0,
            };
            let plane = &y.data()[channel * rows * cols..(channel + 1) * rows * cols];
            let mut best = 0;
            for (i, v) in plane.iter().enumerate() {
                if *v > plane[best] {
                    best = i;
                }
            }
            (best / cols, best % cols)
        }
    };
    let nodes = node_matrix(map)?;
    let values = query_cosines(&nodes, query.0 * cols + query.1)?;
    Ok(Heatmap {
        rows,
        cols,
        query,
        values,
    })
}

/// Cosine similarity of node `q` to every node. Regions whose features are
/// all zero get similarity 0; a zero query is an error.
fn query_cosines<T: Scalar>(nodes: &Tensor<T>, q: usize) -> Result<Vec<f64>> {
    let (n, d) = nodes.dims2().expect("node matrices are 2-d");
    let row = |i: usize| nodes.data()[i * d..(i + 1) * d].iter().map(|v| v.to_f64());
    let norm = |i: usize| row(i).map(|v| v * v).sum::<f64>().sqrt();
    let qn = norm(q);
    if qn == 0.0 {
        return Err(TensorError::InvalidArgument {
            op: "heatmap",
            detail: "query region has all-zero features".into(),
        }
        .into());
    }
    Ok((0..n)
        .map(|j| {
            let jn = norm(j);
            if j == q {
                1.0
            } else if jn == 0.0 {
                0.0
            } else {
                row(q).zip(row(j)).map(|(a, b)| a * b).sum::<f64>() / (qn * jn)
            }
        })
        .collect())
}
